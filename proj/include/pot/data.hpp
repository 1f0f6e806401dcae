#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "pot/errors.hpp"
#include "pot/rng.hpp"
#include "pot/skeleton.hpp"
#include "pot/tensor.hpp"

namespace pot {

// One training record: 2D joints (normalized image coordinates once
// `normalized` is set) and the 3D target in root-relative millimeters.
struct PoseSample {
    Tensor joints_2d;  // J x 2
    Tensor joints_3d;  // J x 3
    std::string subject;
    std::string action;
    bool normalized = false;  // in-memory only; files always store normalized data

    int joints() const { return joints_2d.dim(0); }
};

struct CameraModel {
    real fx = real(1100);
    real fy = real(1100);
    real cx = real(500);
    real cy = real(500);
    // where the generated figure's root lands in camera space (mm)
    std::array<real, 3> translation = {real(0), real(0), real(4500)};
};

inline void to_json(nlohmann::json& j, const CameraModel& c) {
    j = nlohmann::json{{"fx", c.fx}, {"fy", c.fy}, {"cx", c.cx}, {"cy", c.cy},
                       {"translation", c.translation}};
}

inline void from_json(const nlohmann::json& j, CameraModel& c) {
    c.fx = j.value("fx", c.fx);
    c.fy = j.value("fy", c.fy);
    c.cx = j.value("cx", c.cx);
    c.cy = j.value("cy", c.cy);
    if (j.contains("translation")) j.at("translation").get_to(c.translation);
}

// Synthetic scene: the canonical tree posed by bounded random rotations of
// each bone away from its rest direction, placed in front of a pinhole
// camera. Angle bounds keep all depths positive and limbs unfolded.
struct SynthConfig {
    std::vector<real> bone_lengths_mm;  // aligned with human17_edges()
    real max_azimuth = real(0.45);      // radians, rotation about the vertical axis
    real max_tilt = real(0.35);         // radians, rotation in the depth plane
    real noise_px = real(1.0);          // detector noise std, pixels
    std::vector<real> noise_px_per_joint;  // optional per-joint override
    int count = 128;
    int test_count = 32;
    std::uint64_t seed = 0;
    CameraModel camera;
    int image_width = 1000;
    int image_height = 1000;

    static std::vector<real> default_bones() {
        return {130, 450, 440,   // right leg
                130, 450, 440,   // left leg
                230, 250,        // spine chain
                120, 115,        // neck, head
                150, 280, 250,   // left arm
                150, 280, 250};  // right arm
    }

    SynthConfig() : bone_lengths_mm(default_bones()) {}

    void validate() const {
        if (bone_lengths_mm.size() != human17_edges().size())
            throw ConfigError("need one bone length per canonical edge");
        for (real b : bone_lengths_mm)
            if (!(b > real(0))) throw ConfigError("bone lengths must be positive");
        if (noise_px < real(0)) throw ConfigError("noise std must be non-negative");
        if (!noise_px_per_joint.empty() && noise_px_per_joint.size() != 17)
            throw ConfigError("per-joint noise needs 17 entries");
        if (count < 0 || test_count < 0) throw ConfigError("count");
        if (image_width <= 0 || image_height <= 0) throw ConfigError("image size");
        if (!(camera.fx > real(0)) || !(camera.fy > real(0))) throw ConfigError("focal lengths");
    }
};

inline void to_json(nlohmann::json& j, const SynthConfig& c) {
    j = nlohmann::json{{"bone_lengths_mm", c.bone_lengths_mm},
                       {"max_azimuth", c.max_azimuth},
                       {"max_tilt", c.max_tilt},
                       {"noise_px", c.noise_px},
                       {"noise_px_per_joint", c.noise_px_per_joint},
                       {"count", c.count},
                       {"test_count", c.test_count},
                       {"seed", c.seed},
                       {"camera", c.camera},
                       {"image_width", c.image_width},
                       {"image_height", c.image_height}};
}

inline void from_json(const nlohmann::json& j, SynthConfig& c) {
    if (j.contains("bone_lengths_mm")) j.at("bone_lengths_mm").get_to(c.bone_lengths_mm);
    c.max_azimuth = j.value("max_azimuth", c.max_azimuth);
    c.max_tilt = j.value("max_tilt", c.max_tilt);
    c.noise_px = j.value("noise_px", c.noise_px);
    if (j.contains("noise_px_per_joint")) j.at("noise_px_per_joint").get_to(c.noise_px_per_joint);
    c.count = j.value("count", c.count);
    c.test_count = j.value("test_count", c.test_count);
    c.seed = j.value("seed", c.seed);
    if (j.contains("camera")) j.at("camera").get_to(c.camera);
    c.image_width = j.value("image_width", c.image_width);
    c.image_height = j.value("image_height", c.image_height);
}

// Pinhole projection of camera-space points (mm) to pixel coordinates.
inline Tensor project(const Tensor& p3d, const CameraModel& cam) {
    if (p3d.rank() != 2 || p3d.dim(1) != 3)
        throw ShapeMismatch("project input " + shape_str(p3d.shape()));
    const int j = p3d.dim(0);
    Tensor out = Tensor::zeros({j, 2});
    for (int i = 0; i < j; ++i) {
        const real z = p3d.at(i, 2);
        if (!(z > real(0))) throw NonPositiveDepth("joint " + std::to_string(i));
        out.at(i, 0) = cam.fx * p3d.at(i, 0) / z + cam.cx;
        out.at(i, 1) = cam.fy * p3d.at(i, 1) / z + cam.cy;
    }
    return out;
}

// Maps 2D to [-1,1] by the image dimensions and re-centers 3D on the root.
// Applying it to an already-normalized sample is a no-op.
inline PoseSample normalize(PoseSample sample, const CameraModel&, int image_width,
                            int image_height, int root = 0) {
    const int j = sample.joints();
    if (!sample.normalized) {
        for (int i = 0; i < j; ++i) {
            sample.joints_2d.at(i, 0) =
                (real(2) * sample.joints_2d.at(i, 0) - image_width) / image_width;
            sample.joints_2d.at(i, 1) =
                (real(2) * sample.joints_2d.at(i, 1) - image_height) / image_height;
        }
    }
    const real rx = sample.joints_3d.at(root, 0);
    const real ry = sample.joints_3d.at(root, 1);
    const real rz = sample.joints_3d.at(root, 2);
    for (int i = 0; i < j; ++i) {
        sample.joints_3d.at(i, 0) -= rx;
        sample.joints_3d.at(i, 1) -= ry;
        sample.joints_3d.at(i, 2) -= rz;
    }
    sample.normalized = true;
    return sample;
}

namespace detail {

// Rest directions of each canonical bone (unit vectors; x right, y down,
// z away from the camera). Roughly a T-pose.
inline const std::vector<std::array<real, 3>>& rest_directions() {
    static const std::vector<std::array<real, 3>> dirs = {
        {-1, 0, 0}, {0, 1, 0}, {0, 1, 0},   // pelvis->r_hip->r_knee->r_ankle
        {1, 0, 0},  {0, 1, 0}, {0, 1, 0},   // left leg
        {0, -1, 0}, {0, -1, 0},             // pelvis->spine->thorax
        {0, -1, 0}, {0, -1, 0},             // thorax->neck->head
        {1, 0, 0},  {1, 0, 0},  {1, 0, 0},  // left arm
        {-1, 0, 0}, {-1, 0, 0}, {-1, 0, 0}};// right arm
    return dirs;
}

inline std::array<real, 3> rotate_azimuth_tilt(const std::array<real, 3>& v, real azimuth,
                                               real tilt) {
    // about y (vertical), then about x (depth plane)
    const real ca = std::cos(azimuth), sa = std::sin(azimuth);
    const real cx_ = std::cos(tilt), sx_ = std::sin(tilt);
    const std::array<real, 3> r1 = {ca * v[0] + sa * v[2], v[1], -sa * v[0] + ca * v[2]};
    return {r1[0], cx_ * r1[1] - sx_ * r1[2], sx_ * r1[1] + cx_ * r1[2]};
}

// One posed figure in camera space via forward kinematics over the tree.
inline Tensor forward_kinematics(const SynthConfig& cfg, Rng& rng) {
    const auto& edges = human17_edges();
    const auto& rest = rest_directions();
    Tensor pose = Tensor::zeros({17, 3});
    for (int c = 0; c < 3; ++c)
        pose.at(0, c) = cfg.camera.translation[static_cast<std::size_t>(c)];
    // edges are ordered parent-first, so one pass suffices
    for (std::size_t e = 0; e < edges.size(); ++e) {
        const auto [parent, child] = edges[e];
        const real az = (real(2) * static_cast<real>(rng.uniform()) - real(1)) * cfg.max_azimuth;
        const real tl = (real(2) * static_cast<real>(rng.uniform()) - real(1)) * cfg.max_tilt;
        const auto dir = rotate_azimuth_tilt(rest[e], az, tl);
        const real len = cfg.bone_lengths_mm[e];
        for (int c = 0; c < 3; ++c) pose.at(child, c) = pose.at(parent, c) + len * dir[static_cast<std::size_t>(c)];
    }
    return pose;
}

}  // namespace detail

inline constexpr std::uint64_t kStreamSynth = 5;

// Deterministic per seed: poses via forward kinematics, pinhole projection,
// Gaussian detector noise on 2D, then normalization.
inline std::vector<PoseSample> synth_generate(const SynthConfig& cfg) {
    cfg.validate();
    Rng rng = Rng(cfg.seed).split(kStreamSynth);
    std::vector<PoseSample> out;
    out.reserve(static_cast<std::size_t>(cfg.count));
    for (int n = 0; n < cfg.count; ++n) {
        Tensor p3d_cam = detail::forward_kinematics(cfg, rng);
        Tensor p2d = project(p3d_cam, cfg.camera);
        for (int i = 0; i < 17; ++i) {
            const real std_px = cfg.noise_px_per_joint.empty()
                                    ? cfg.noise_px
                                    : cfg.noise_px_per_joint[static_cast<std::size_t>(i)];
            p2d.at(i, 0) += static_cast<real>(rng.gaussian()) * std_px;
            p2d.at(i, 1) += static_cast<real>(rng.gaussian()) * std_px;
        }
        PoseSample s;
        s.joints_2d = p2d;
        s.joints_3d = p3d_cam;
        s.subject = "synth";
        s.action = "pose" + std::to_string(n % 8);
        out.push_back(normalize(std::move(s), cfg.camera, cfg.image_width, cfg.image_height));
    }
    return out;
}

inline nlohmann::json sample_to_json(const PoseSample& s) {
    nlohmann::json j2d = nlohmann::json::array();
    nlohmann::json j3d = nlohmann::json::array();
    for (int i = 0; i < s.joints(); ++i) {
        j2d.push_back({s.joints_2d.at(i, 0), s.joints_2d.at(i, 1)});
        j3d.push_back({s.joints_3d.at(i, 0), s.joints_3d.at(i, 1), s.joints_3d.at(i, 2)});
    }
    return nlohmann::json{{"j2d", j2d}, {"j3d", j3d}, {"subject", s.subject}, {"action", s.action}};
}

inline PoseSample sample_from_json(const nlohmann::json& j) {
    try {
        const auto& j2d = j.at("j2d");
        const auto& j3d = j.at("j3d");
        if (!j2d.is_array() || !j3d.is_array() || j2d.empty())
            throw SchemaViolation("j2d/j3d must be non-empty arrays");
        if (j2d.size() != j3d.size())
            throw JointCountMismatch("j2d has " + std::to_string(j2d.size()) + ", j3d has " +
                                     std::to_string(j3d.size()));
        const int joints = static_cast<int>(j2d.size());
        PoseSample s;
        s.joints_2d = Tensor::zeros({joints, 2});
        s.joints_3d = Tensor::zeros({joints, 3});
        for (int i = 0; i < joints; ++i) {
            const auto& p2 = j2d[static_cast<std::size_t>(i)];
            const auto& p3 = j3d[static_cast<std::size_t>(i)];
            if (!p2.is_array() || p2.size() != 2 || !p3.is_array() || p3.size() != 3)
                throw SchemaViolation("joint entries must be [u,v] and [x,y,z]");
            s.joints_2d.at(i, 0) = p2[0].get<real>();
            s.joints_2d.at(i, 1) = p2[1].get<real>();
            for (int c = 0; c < 3; ++c) s.joints_3d.at(i, c) = p3[static_cast<std::size_t>(c)].get<real>();
        }
        s.subject = j.value("subject", std::string());
        s.action = j.value("action", std::string());
        s.normalized = true;  // files store normalized samples
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw SchemaViolation(std::string("pose sample: ") + e.what());
    }
}

inline void save_dataset(const std::string& path, const std::vector<PoseSample>& samples) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write " + path);
    for (const PoseSample& s : samples) f << sample_to_json(s).dump() << "\n";
    if (!f.good()) throw IoError("short write to " + path);
}

// Loads one sample per JSONL line. `expected_joints` < 0 infers the joint
// count from the first record; every record must then agree.
inline std::vector<PoseSample> load_dataset(const std::string& path, int expected_joints = -1) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot read " + path);
    std::vector<PoseSample> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw SchemaViolation(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
        PoseSample s = sample_from_json(j);
        if (expected_joints < 0) expected_joints = s.joints();
        if (s.joints() != expected_joints)
            throw JointCountMismatch(path + ":" + std::to_string(lineno) + ": got " +
                                     std::to_string(s.joints()) + ", want " +
                                     std::to_string(expected_joints));
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace pot
