#pragma once

#include <cstdint>
#include <fstream>
#include <string>

#include <json.hpp>

#include "pot/data.hpp"
#include "pot/errors.hpp"
#include "pot/model.hpp"
#include "pot/training.hpp"

namespace pot {

// Everything a run needs, merged from defaults, an optional config file and
// command-line overrides (flag > file > default). The resolved value is
// echoed verbatim next to the outputs of every command.
struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    SynthConfig synth;
    std::string train_path;
    std::string test_path;
    std::string out_dir = "run";
    std::string dataset_name = "synth";
    std::string checkpoint;     // eval input / training resume source
    int stage = 0;              // 0 = both stages
    bool first_stage_only = false;  // evaluate the stage-one prediction
    int checkpoint_every = 100;     // epochs between checkpoint writes (full preset: 1)

    // Tiny two-stage setup that trains in minutes. The synthetic scene is a
    // tenth-scale figure with mild articulation; wide depth-plane rotations
    // make per-joint depth unrecoverable from 2D at this model size.
    static RunConfig desk() {
        RunConfig rc;
        rc.model = ModelConfig::desk();
        rc.train = TrainConfig::desk();
        rc.synth.count = 128;
        for (real& b : rc.synth.bone_lengths_mm) b *= real(0.1);
        rc.synth.max_azimuth = real(0.3);
        rc.synth.max_tilt = real(0.12);
        rc.synth.noise_px = real(0.5);
        return rc;
    }

    // Full-size configuration with the standard hyperparameters.
    static RunConfig full() {
        RunConfig rc;
        rc.model = ModelConfig::large();
        rc.train = TrainConfig{};
        rc.checkpoint_every = 1;
        return rc;
    }

    void validate() const {
        model.validate();
        train.validate();
        synth.validate();
        if (stage < 0 || stage > 2) throw ConfigError("stage must be 0, 1 or 2");
        if (checkpoint_every < 1) throw ConfigError("checkpoint_every");
        if (out_dir.empty()) throw ConfigError("out_dir");
    }
};

inline void to_json(nlohmann::json& j, const RunConfig& rc) {
    j = nlohmann::json{{"model", rc.model},
                       {"train", rc.train},
                       {"synth", rc.synth},
                       {"train_path", rc.train_path},
                       {"test_path", rc.test_path},
                       {"out_dir", rc.out_dir},
                       {"dataset_name", rc.dataset_name},
                       {"checkpoint", rc.checkpoint},
                       {"stage", rc.stage},
                       {"first_stage_only", rc.first_stage_only},
                       {"checkpoint_every", rc.checkpoint_every}};
}

inline void from_json(const nlohmann::json& j, RunConfig& rc) {
    if (j.contains("model")) j.at("model").get_to(rc.model);
    if (j.contains("train")) j.at("train").get_to(rc.train);
    if (j.contains("synth")) j.at("synth").get_to(rc.synth);
    rc.train_path = j.value("train_path", rc.train_path);
    rc.test_path = j.value("test_path", rc.test_path);
    rc.out_dir = j.value("out_dir", rc.out_dir);
    rc.dataset_name = j.value("dataset_name", rc.dataset_name);
    rc.checkpoint = j.value("checkpoint", rc.checkpoint);
    rc.stage = j.value("stage", rc.stage);
    rc.first_stage_only = j.value("first_stage_only", rc.first_stage_only);
    rc.checkpoint_every = j.value("checkpoint_every", rc.checkpoint_every);
}

// Overlays a config file onto `base` (typically a preset).
inline RunConfig load_run_config(const std::string& path, RunConfig base = RunConfig::desk()) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot read config " + path);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw SchemaViolation(std::string("run config: ") + e.what());
    }
    j.get_to(base);
    return base;
}

}  // namespace pot
