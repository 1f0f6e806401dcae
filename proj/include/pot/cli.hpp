#pragma once

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "pot/checkpoint.hpp"
#include "pot/data.hpp"
#include "pot/errors.hpp"
#include "pot/metrics.hpp"
#include "pot/model.hpp"
#include "pot/runconfig.hpp"
#include "pot/skeleton.hpp"
#include "pot/training.hpp"

namespace pot {

// Output root for all commands; run directories are created beneath it.
inline constexpr const char* kOutRootEnv = "POT_OUT_ROOT";

inline std::filesystem::path output_dir(const RunConfig& rc) {
    const char* root = std::getenv(kOutRootEnv);
    std::filesystem::path dir = root && *root ? std::filesystem::path(root) : ".";
    return dir / rc.out_dir;
}

namespace detail {

inline std::filesystem::path prepare_run_dir(const RunConfig& rc) {
    rc.validate();
    auto dir = output_dir(rc);
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string());
    std::ofstream f(dir / "resolved_config.json");
    if (!f) throw IoError("cannot write resolved config in " + dir.string());
    f << nlohmann::json(rc).dump(2) << "\n";
    return dir;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write " + path.string());
    f << text;
}

inline Skeleton cli_skeleton(const ModelConfig& mc) {
    if (mc.joints != 17)
        throw ConfigError("the command-line pipeline ships the 17-joint skeleton; got joints=" +
                          std::to_string(mc.joints));
    return canonical_skeleton();
}

// Training data for a run: an explicit JSONL file wins, otherwise the
// synthetic generator fills in deterministically.
inline std::vector<PoseSample> run_train_data(const RunConfig& rc) {
    if (!rc.train_path.empty()) {
        auto data = load_dataset(rc.train_path);
        if (data.empty()) throw EmptyDataset(rc.train_path);
        if (data.front().joints() != rc.model.joints)
            throw JointCountMismatch("dataset has " + std::to_string(data.front().joints()) +
                                     " joints, model expects " + std::to_string(rc.model.joints));
        return data;
    }
    SynthConfig sc = rc.synth;
    return synth_generate(sc);
}

}  // namespace detail

struct SynthResult {
    std::string train_path;
    std::string test_path;
    int train_count = 0;
    int test_count = 0;
};

// Generates one corpus and splits it, so the train and test files come from
// a single seed. Byte-identical across reruns with the same config.
inline SynthResult cmd_synth(const RunConfig& rc) {
    auto dir = detail::prepare_run_dir(rc);
    SynthConfig all = rc.synth;
    all.count = rc.synth.count + rc.synth.test_count;
    std::vector<PoseSample> samples = synth_generate(all);
    std::vector<PoseSample> train(samples.begin(), samples.begin() + rc.synth.count);
    std::vector<PoseSample> test(samples.begin() + rc.synth.count, samples.end());

    SynthResult r;
    r.train_path = (dir / (rc.dataset_name + ".train.jsonl")).string();
    r.test_path = (dir / (rc.dataset_name + ".test.jsonl")).string();
    r.train_count = rc.synth.count;
    r.test_count = rc.synth.test_count;
    save_dataset(r.train_path, train);
    save_dataset(r.test_path, test);
    std::cout << "synth: wrote " << r.train_count << " train / " << r.test_count << " test -> "
              << dir.string() << "\n";
    return r;
}

struct TrainResult {
    TrainLog log;
    std::string final_checkpoint;  // base path without extension
    PotModel pot;
    UgrnModel ugrn;
};

// Stage I, then stage II with the first-stage network frozen, unless a
// single stage was requested. Emits the CSV log and periodic checkpoints.
inline TrainResult cmd_train(const RunConfig& rc) {
    auto dir = detail::prepare_run_dir(rc);
    std::vector<PoseSample> data = detail::run_train_data(rc);

    Skeleton skel = detail::cli_skeleton(rc.model);
    Rng master(rc.train.seed);
    Rng init_pot = master.split(kStreamInitPot);
    Rng init_ugrn = master.split(kStreamInitUgrn);
    PotModel pot = PotModel::init(rc.model, skel, init_pot);
    UgrnModel ugrn = UgrnModel::init(rc.model, skel, init_ugrn);

    int resume_stage = 0, resume_epoch = -1;
    if (!rc.checkpoint.empty()) {
        CheckpointMeta meta = load_checkpoint(rc.checkpoint, pot, ugrn);
        resume_stage = meta.stage;
        resume_epoch = meta.epoch;
        std::cout << "train: resumed from " << rc.checkpoint << " (stage " << meta.stage
                  << ", epoch " << meta.epoch << ")\n";
    }

    auto save = [&](int stage, int epoch, const std::string& tag) {
        CheckpointMeta meta{stage, epoch, master.state(), rc.model, rc.train, skel};
        save_checkpoint((dir / tag).string(), pot, ugrn, meta);
    };

    TrainResult result;
    // resuming a stage-two checkpoint never re-runs the finished first stage
    const bool run_stage1 = rc.stage == 1 || (rc.stage == 0 && resume_stage != 2);
    const bool run_stage2 = rc.stage == 0 || rc.stage == 2;

    if (run_stage1) {
        const int start = resume_stage == 1 ? resume_epoch + 1 : 0;
        auto cb = [&](int stage, int epoch) {
            if ((epoch + 1) % rc.checkpoint_every == 0)
                save(stage, epoch, "ckpt_stage1_epoch" + std::to_string(epoch));
        };
        TrainLog l1 = train_stage1(pot, data, rc.train, cb, start);
        result.log.insert(result.log.end(), l1.begin(), l1.end());
        save(1, rc.train.epochs_per_stage - 1, "ckpt_stage1_final");
    }
    if (run_stage2) {
        const int start = resume_stage == 2 ? resume_epoch + 1 : 0;
        auto cb = [&](int stage, int epoch) {
            if ((epoch + 1) % rc.checkpoint_every == 0)
                save(stage, epoch, "ckpt_stage2_epoch" + std::to_string(epoch));
        };
        TrainLog l2 = train_stage2(pot, ugrn, data, rc.train, cb, start);
        result.log.insert(result.log.end(), l2.begin(), l2.end());
        save(2, rc.train.epochs_per_stage - 1, "ckpt_stage2_final");
    }

    detail::write_text(dir / "train_log.csv", train_log_csv(result.log));
    result.final_checkpoint =
        (dir / (run_stage2 ? "ckpt_stage2_final" : "ckpt_stage1_final")).string();
    result.pot = std::move(pot);
    result.ugrn = std::move(ugrn);
    if (!result.log.empty())
        std::cout << "train: " << result.log.size() << " steps, final loss "
                  << result.log.back().loss << ", final mpjpe " << result.log.back().mpjpe
                  << " -> " << dir.string() << "\n";
    return result;
}

// Scores a checkpoint on a dataset; refined poses by default, the stage-one
// prediction with `first_stage_only`.
inline EvalReport cmd_eval(const RunConfig& rc) {
    if (rc.checkpoint.empty()) throw ConfigError("eval needs a checkpoint");
    auto dir = detail::prepare_run_dir(rc);
    LoadedCheckpoint lc = load_checkpoint_models(rc.checkpoint);

    const std::string data_path = !rc.test_path.empty() ? rc.test_path : rc.train_path;
    if (data_path.empty()) throw ConfigError("eval needs a dataset path");
    std::vector<PoseSample> data = load_dataset(data_path);
    if (data.empty()) throw EmptyDataset(data_path);
    if (data.front().joints() != lc.meta.model.joints)
        throw CheckpointMismatch("dataset joints " + std::to_string(data.front().joints()) +
                                 " vs checkpoint " + std::to_string(lc.meta.model.joints));

    std::vector<Tensor> pred, gt;
    pred.reserve(data.size());
    gt.reserve(data.size());
    for (const PoseSample& s : data) {
        InferResult r = infer(lc.pot, lc.ugrn, s.joints_2d);
        pred.push_back(rc.first_stage_only ? r.pose_stage1 : r.pose_refined);
        gt.push_back(s.joints_3d);
    }
    EvalReport report = evaluate(pred, gt, lc.pot.groups, lc.meta.skeleton.root);

    detail::write_text(dir / "eval_report.json", report_to_json(report).dump(2) + "\n");
    detail::write_text(dir / "per_group.csv", per_group_csv(report));
    std::printf("eval: mpjpe %.3f mm, pck %.2f%%, auc %.4f (%s)\n",
                static_cast<double>(report.mpjpe_mm), static_cast<double>(report.pck),
                static_cast<double>(report.auc), rc.first_stage_only ? "stage1" : "refined");
    return report;
}

struct AblationRow {
    std::string table;
    std::string label;
    real mpjpe_mm = 0;
    std::size_t params = 0;
};

namespace detail {

struct AblationData {
    std::vector<PoseSample> train;
    std::vector<PoseSample> test;
};

inline AblationData ablation_data(const RunConfig& rc) {
    AblationData d;
    if (!rc.train_path.empty()) {
        d.train = load_dataset(rc.train_path);
        d.test = rc.test_path.empty() ? d.train : load_dataset(rc.test_path);
        return d;
    }
    SynthConfig all = rc.synth;
    all.count = rc.synth.count + rc.synth.test_count;
    auto samples = synth_generate(all);
    d.train.assign(samples.begin(), samples.begin() + rc.synth.count);
    d.test.assign(samples.begin() + rc.synth.count, samples.end());
    if (d.test.empty()) d.test = d.train;
    return d;
}

// Trains one grid cell from scratch and scores it on the held-out split.
inline AblationRow ablation_cell(const RunConfig& rc, const AblationData& data,
                                 const std::string& table, const std::string& label,
                                 bool with_stage2, bool pot_only_params) {
    Skeleton skel = cli_skeleton(rc.model);
    Rng master(rc.train.seed);
    Rng init_pot = master.split(kStreamInitPot);
    Rng init_ugrn = master.split(kStreamInitUgrn);
    PotModel pot = PotModel::init(rc.model, skel, init_pot);
    UgrnModel ugrn = UgrnModel::init(rc.model, skel, init_ugrn);

    train_stage1(pot, data.train, rc.train);
    if (with_stage2) train_stage2(pot, ugrn, data.train, rc.train);

    std::vector<Tensor> pred, gt;
    for (const PoseSample& s : data.test) {
        InferResult r = infer(pot, ugrn, s.joints_2d);
        pred.push_back(with_stage2 ? r.pose_refined : r.pose_stage1);
        gt.push_back(s.joints_3d);
    }
    AblationRow row;
    row.table = table;
    row.label = label;
    row.mpjpe_mm = mpjpe(pred, gt, skel.root);
    ParamCount pc = param_count(pot, ugrn);
    if (pot_only_params) {
        row.params = 0;
        for (const auto& [name, n] : pc.by_submodule)
            if (name.rfind("pot.", 0) == 0) row.params += n;
    } else {
        row.params = pc.total;
    }
    return row;
}

}  // namespace detail

// Three desk-scale grids: position-embedding/attention variants of the
// first-stage encoder, the refinement pipeline, and the refiner's attention
// kind. One CSV row per cell.
inline std::vector<AblationRow> cmd_ablate(const RunConfig& rc) {
    auto dir = detail::prepare_run_dir(rc);
    detail::AblationData data = detail::ablation_data(rc);
    std::vector<AblationRow> rows;

    struct PoseDesign {
        const char* label;
        bool group;
        AttentionMode::Kind kind;
    };
    const PoseDesign designs[] = {
        {"keypoint", false, AttentionMode::Kind::standard},
        {"keypoint+group", true, AttentionMode::Kind::standard},
        {"keypoint+posa", false, AttentionMode::Kind::pose_oriented},
        {"keypoint+group+posa", true, AttentionMode::Kind::pose_oriented},
    };
    for (const auto& d : designs) {
        RunConfig cell = rc;
        cell.model.use_group_embed = d.group;
        cell.model.pot_attention = d.kind;
        rows.push_back(detail::ablation_cell(cell, data, "pose_design", d.label, false, false));
    }

    {
        RunConfig cell = rc;
        rows.push_back(detail::ablation_cell(cell, data, "refinement", "pot", false, true));
        cell.train.use_ug_sampling = false;
        rows.push_back(detail::ablation_cell(cell, data, "refinement", "pot+ugrn", true, false));
        cell.train.use_ug_sampling = true;
        rows.push_back(
            detail::ablation_cell(cell, data, "refinement", "pot+ugrn+ugsample", true, false));
    }

    const std::pair<const char*, AttentionMode::Kind> ugrn_kinds[] = {
        {"mhsa", AttentionMode::Kind::standard},
        {"posa", AttentionMode::Kind::pose_oriented},
        {"ugsa", AttentionMode::Kind::uncertainty_guided},
    };
    for (const auto& [label, kind] : ugrn_kinds) {
        RunConfig cell = rc;
        cell.model.ugrn_attention = kind;
        cell.train.use_ug_sampling = false;
        rows.push_back(detail::ablation_cell(cell, data, "ugrn_attention", label, true, false));
    }

    std::string csv = "table,row,mpjpe_mm,params\n";
    char buf[160];
    for (const AblationRow& r : rows) {
        std::snprintf(buf, sizeof(buf), "%s,%s,%.6g,%zu\n", r.table.c_str(), r.label.c_str(),
                      static_cast<double>(r.mpjpe_mm), r.params);
        csv += buf;
        std::fputs(buf, stdout);
    }
    detail::write_text(dir / "ablate.csv", csv);
    return rows;
}

// Prints trainable-scalar counts per submodule.
inline ParamCount cmd_inspect(const RunConfig& rc) {
    rc.model.validate();
    Skeleton skel = detail::cli_skeleton(rc.model);
    Rng init_pot = Rng(rc.train.seed).split(kStreamInitPot);
    Rng init_ugrn = Rng(rc.train.seed).split(kStreamInitUgrn);
    PotModel pot = PotModel::init(rc.model, skel, init_pot);
    UgrnModel ugrn = UgrnModel::init(rc.model, skel, init_ugrn);
    ParamCount pc = param_count(pot, ugrn);
    for (const auto& [name, n] : pc.by_submodule)
        std::printf("%-18s %10zu\n", name.c_str(), n);
    std::printf("%-18s %10zu (%.2fM)\n", "total", pc.total,
                static_cast<double>(pc.total) / 1e6);
    return pc;
}

}  // namespace pot
