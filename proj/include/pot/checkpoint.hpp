#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pot/data.hpp"
#include "pot/errors.hpp"
#include "pot/model.hpp"
#include "pot/skeleton.hpp"
#include "pot/training.hpp"

namespace pot {

inline constexpr const char* kCheckpointFormat = "pot-checkpoint-v1";

struct CheckpointMeta {
    int stage = 1;
    int epoch = 0;
    std::uint64_t rng_state = 0;
    ModelConfig model;
    TrainConfig train;
    Skeleton skeleton;
};

namespace detail {

inline void append_le_f64(std::vector<std::uint8_t>& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    for (int b = 0; b < 8; ++b) out.push_back(static_cast<std::uint8_t>(bits >> (8 * b)));
}

inline double read_le_f64(const std::uint8_t* p) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(p[b]) << (8 * b);
    double v;
    std::memcpy(&v, &bits, sizeof(v));
    return v;
}

}  // namespace detail

// Writes <base>.json (manifest: config, stage, epoch, rng state, parameter
// order) and <base>.bin (flat little-endian f64 scalars in declared order).
inline void save_checkpoint(const std::string& base, const PotModel& pot, const UgrnModel& ugrn,
                            const CheckpointMeta& meta) {
    std::vector<ParamRef> params = pot.parameters();
    auto up = ugrn.parameters();
    params.insert(params.end(), up.begin(), up.end());

    nlohmann::json manifest;
    manifest["format"] = kCheckpointFormat;
    manifest["scalar"] = "f64";
    manifest["byte_order"] = "little";
    manifest["stage"] = meta.stage;
    manifest["epoch"] = meta.epoch;
    manifest["rng_state"] = meta.rng_state;
    manifest["model"] = meta.model;
    manifest["train"] = meta.train;
    manifest["skeleton"] = skeleton_to_json(meta.skeleton);
    auto& plist = manifest["params"] = nlohmann::json::array();
    std::vector<std::uint8_t> blob;
    for (const ParamRef& p : params) {
        plist.push_back({{"name", p.name}, {"shape", p.tensor.shape()}});
        for (real v : p.tensor.raw()) detail::append_le_f64(blob, static_cast<double>(v));
    }

    std::ofstream jf(base + ".json", std::ios::binary);
    if (!jf) throw IoError("cannot write " + base + ".json");
    jf << manifest.dump(2) << "\n";
    std::ofstream bf(base + ".bin", std::ios::binary);
    if (!bf) throw IoError("cannot write " + base + ".bin");
    bf.write(reinterpret_cast<const char*>(blob.data()), static_cast<std::streamsize>(blob.size()));
    if (!jf.good() || !bf.good()) throw IoError("short checkpoint write to " + base);
}

inline nlohmann::json load_checkpoint_manifest(const std::string& base) {
    std::ifstream jf(base + ".json", std::ios::binary);
    if (!jf) throw IoError("cannot read " + base + ".json");
    nlohmann::json manifest;
    try {
        jf >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw SchemaViolation(std::string("checkpoint manifest: ") + e.what());
    }
    if (manifest.value("format", "") != kCheckpointFormat)
        throw CheckpointMismatch("unknown format '" + manifest.value("format", "") + "'");
    return manifest;
}

// Restores parameters into freshly constructed models; shapes and names must
// match the manifest exactly.
inline CheckpointMeta load_checkpoint(const std::string& base, PotModel& pot, UgrnModel& ugrn) {
    nlohmann::json manifest = load_checkpoint_manifest(base);
    CheckpointMeta meta;
    meta.stage = manifest.at("stage").get<int>();
    meta.epoch = manifest.at("epoch").get<int>();
    meta.rng_state = manifest.at("rng_state").get<std::uint64_t>();
    meta.model = manifest.at("model").get<ModelConfig>();
    meta.train = manifest.at("train").get<TrainConfig>();
    meta.skeleton = skeleton_from_json(manifest.at("skeleton"));

    std::vector<ParamRef> params = pot.parameters();
    auto up = ugrn.parameters();
    params.insert(params.end(), up.begin(), up.end());

    const auto& plist = manifest.at("params");
    if (plist.size() != params.size())
        throw CheckpointMismatch("parameter count " + std::to_string(plist.size()) + " vs model " +
                                 std::to_string(params.size()));

    std::ifstream bf(base + ".bin", std::ios::binary);
    if (!bf) throw IoError("cannot read " + base + ".bin");
    std::vector<std::uint8_t> blob((std::istreambuf_iterator<char>(bf)),
                                   std::istreambuf_iterator<char>());
    std::size_t offset = 0;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& entry = plist[i];
        if (entry.at("name").get<std::string>() != params[i].name)
            throw CheckpointMismatch("param order: " + entry.at("name").get<std::string>() +
                                     " vs " + params[i].name);
        const Shape shape = entry.at("shape").get<Shape>();
        if (shape != params[i].tensor.shape())
            throw CheckpointMismatch("shape of " + params[i].name);
        auto& w = params[i].tensor.raw();
        if (offset + 8 * w.size() > blob.size()) throw CheckpointMismatch("blob too short");
        for (std::size_t k = 0; k < w.size(); ++k, offset += 8)
            w[k] = static_cast<real>(detail::read_le_f64(blob.data() + offset));
    }
    if (offset != blob.size()) throw CheckpointMismatch("blob has trailing bytes");
    return meta;
}

// Builds models exactly as the manifest describes them, then loads weights.
struct LoadedCheckpoint {
    PotModel pot;
    UgrnModel ugrn;
    CheckpointMeta meta;
};

inline LoadedCheckpoint load_checkpoint_models(const std::string& base) {
    nlohmann::json manifest = load_checkpoint_manifest(base);
    ModelConfig mc = manifest.at("model").get<ModelConfig>();
    Skeleton skel = skeleton_from_json(manifest.at("skeleton"));
    Rng init_pot = Rng(0);
    Rng init_ugrn = Rng(0);
    LoadedCheckpoint lc{PotModel::init(mc, skel, init_pot), UgrnModel::init(mc, skel, init_ugrn), {}};
    lc.meta = load_checkpoint(base, lc.pot, lc.ugrn);
    return lc;
}

}  // namespace pot
