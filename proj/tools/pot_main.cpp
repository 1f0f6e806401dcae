// Command-line front end: synth | train | eval | ablate | inspect.

#include <cstdint>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "pot/cli.hpp"
#include "pot/runconfig.hpp"

namespace {

struct CommonFlags {
    std::string config_path;
    std::string preset = "desk";
    std::string out_dir;
    std::int64_t seed = -1;
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
    cmd->add_option("--config", flags.config_path, "JSON run config (overrides the preset)");
    cmd->add_option("--preset", flags.preset, "base preset: desk or full")
        ->check(CLI::IsMember({"desk", "full"}));
    cmd->add_option("--out", flags.out_dir, "run directory under the output root");
    cmd->add_option("--seed", flags.seed, "master seed (overrides config)");
}

// flag > file > preset default
pot::RunConfig resolve(const CommonFlags& flags) {
    pot::RunConfig rc = flags.preset == "full" ? pot::RunConfig::full() : pot::RunConfig::desk();
    if (!flags.config_path.empty()) rc = pot::load_run_config(flags.config_path, rc);
    if (!flags.out_dir.empty()) rc.out_dir = flags.out_dir;
    if (flags.seed >= 0) {
        rc.train.seed = static_cast<std::uint64_t>(flags.seed);
        rc.synth.seed = static_cast<std::uint64_t>(flags.seed);
    }
    return rc;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Two-stage 2D-to-3D pose lifting: skeleton-aware transformer with an "
                 "uncertainty-guided refiner"};
    app.require_subcommand(1);

    CommonFlags synth_flags, train_flags, eval_flags, ablate_flags, inspect_flags;
    int synth_count = -1, synth_test_count = -1;
    std::string synth_name;
    auto* synth = app.add_subcommand("synth", "generate a synthetic JSONL dataset");
    add_common(synth, synth_flags);
    synth->add_option("--count", synth_count, "training samples");
    synth->add_option("--test-count", synth_test_count, "held-out samples");
    synth->add_option("--name", synth_name, "dataset file stem");

    int train_stage = -1, train_epochs = -1;
    std::string train_data, train_resume;
    auto* train = app.add_subcommand("train", "run two-stage training");
    add_common(train, train_flags);
    train->add_option("--stage", train_stage, "1 or 2 to run a single stage")
        ->check(CLI::Range(1, 2));
    train->add_option("--epochs", train_epochs, "epochs per stage");
    train->add_option("--data", train_data, "training JSONL path");
    train->add_option("--resume", train_resume, "checkpoint base path to continue from");

    std::string eval_checkpoint, eval_data;
    bool eval_first_stage = false;
    auto* eval = app.add_subcommand("eval", "score a checkpoint on a dataset");
    add_common(eval, eval_flags);
    eval->add_option("--checkpoint", eval_checkpoint, "checkpoint base path (no extension)");
    eval->add_option("--dataset", eval_data, "JSONL path to evaluate on");
    eval->add_flag("--first-stage-only", eval_first_stage, "score the stage-one prediction");

    int ablate_epochs = -1;
    auto* ablate = app.add_subcommand("ablate", "train and score the ablation grid");
    add_common(ablate, ablate_flags);
    ablate->add_option("--epochs", ablate_epochs, "epochs per stage for each cell");

    auto* inspect = app.add_subcommand("inspect", "print parameter counts per submodule");
    add_common(inspect, inspect_flags);

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) {
            pot::RunConfig rc = resolve(synth_flags);
            if (synth_count >= 0) rc.synth.count = synth_count;
            if (synth_test_count >= 0) rc.synth.test_count = synth_test_count;
            if (!synth_name.empty()) rc.dataset_name = synth_name;
            pot::cmd_synth(rc);
        } else if (train->parsed()) {
            pot::RunConfig rc = resolve(train_flags);
            if (train_stage > 0) rc.stage = train_stage;
            if (train_epochs > 0) rc.train.epochs_per_stage = train_epochs;
            if (!train_data.empty()) rc.train_path = train_data;
            if (!train_resume.empty()) rc.checkpoint = train_resume;
            pot::cmd_train(rc);
        } else if (eval->parsed()) {
            pot::RunConfig rc = resolve(eval_flags);
            if (!eval_checkpoint.empty()) rc.checkpoint = eval_checkpoint;
            if (!eval_data.empty()) rc.test_path = eval_data;
            rc.first_stage_only = eval_first_stage;
            pot::cmd_eval(rc);
        } else if (ablate->parsed()) {
            pot::RunConfig rc = resolve(ablate_flags);
            if (ablate_epochs > 0) rc.train.epochs_per_stage = ablate_epochs;
            pot::cmd_ablate(rc);
        } else if (inspect->parsed()) {
            pot::cmd_inspect(resolve(inspect_flags));
        }
    } catch (const pot::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
