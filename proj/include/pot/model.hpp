#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "pot/attention.hpp"
#include "pot/errors.hpp"
#include "pot/params.hpp"
#include "pot/skeleton.hpp"
#include "pot/tensor.hpp"

namespace pot {

struct ModelConfig {
    int joints = 17;
    int channels = 96;
    int heads = 6;
    int pot_layers = 12;
    int ugrn_layers = 3;
    int groups = 5;
    real dropout = real(0.25);
    real ffn_ratio = real(1.5);

    // ablation switches
    bool use_group_embed = true;
    AttentionMode::Kind pot_attention = AttentionMode::Kind::pose_oriented;
    AttentionMode::Kind ugrn_attention = AttentionMode::Kind::uncertainty_guided;

    int ffn_hidden() const { return static_cast<int>(std::floor(ffn_ratio * channels)); }

    void validate() const {
        if (joints < 2) throw ConfigError("joints " + std::to_string(joints));
        if (heads < 1 || channels % heads != 0)
            throw ConfigError("channels " + std::to_string(channels) + " vs heads " +
                              std::to_string(heads));
        if (pot_layers < 1 || ugrn_layers < 1) throw ConfigError("layer counts must be positive");
        if (groups < 1) throw ConfigError("groups " + std::to_string(groups));
        if (pot_attention == AttentionMode::Kind::uncertainty_guided)
            throw ConfigError("first-stage encoder cannot run uncertainty-guided attention");
    }

    static ModelConfig large() { return {}; }  // C=96, L1=12, L2=3

    static ModelConfig small() {
        ModelConfig c;
        c.channels = 48;
        return c;
    }

    // Shrunk preset so a full two-stage run finishes in minutes.
    static ModelConfig desk() {
        ModelConfig c;
        c.channels = 32;
        c.heads = 4;
        c.pot_layers = 4;
        c.ugrn_layers = 2;
        c.dropout = real(0);
        return c;
    }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = nlohmann::json{{"joints", c.joints},
                       {"channels", c.channels},
                       {"heads", c.heads},
                       {"pot_layers", c.pot_layers},
                       {"ugrn_layers", c.ugrn_layers},
                       {"groups", c.groups},
                       {"dropout", c.dropout},
                       {"ffn_ratio", c.ffn_ratio},
                       {"use_group_embed", c.use_group_embed},
                       {"pot_attention", to_string(c.pot_attention)},
                       {"ugrn_attention", to_string(c.ugrn_attention)}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
    c.joints = j.value("joints", c.joints);
    c.channels = j.value("channels", c.channels);
    c.heads = j.value("heads", c.heads);
    c.pot_layers = j.value("pot_layers", c.pot_layers);
    c.ugrn_layers = j.value("ugrn_layers", c.ugrn_layers);
    c.groups = j.value("groups", c.groups);
    c.dropout = j.value("dropout", c.dropout);
    c.ffn_ratio = j.value("ffn_ratio", c.ffn_ratio);
    c.use_group_embed = j.value("use_group_embed", c.use_group_embed);
    if (j.contains("pot_attention"))
        c.pot_attention = attention_kind_from_string(j.at("pot_attention").get<std::string>());
    if (j.contains("ugrn_attention"))
        c.ugrn_attention = attention_kind_from_string(j.at("ugrn_attention").get<std::string>());
}

// LN followed by a single linear projection to 3 coordinates.
struct RegressionHead {
    Tensor ln_gamma, ln_beta, w, b;

    static RegressionHead init(int channels, Rng& rng) {
        RegressionHead h;
        h.ln_gamma = ones_param({channels});
        h.ln_beta = zeros_param({channels});
        h.w = glorot_uniform(channels, 3, rng);
        h.b = zeros_param({3});
        return h;
    }

    Tensor forward(const Tensor& z) const {
        return add(matmul(layernorm(z, ln_gamma, ln_beta), w), b);
    }

    void collect(std::vector<ParamRef>& out, const std::string& prefix) const {
        out.push_back({prefix + ".ln.gamma", ln_gamma, false});
        out.push_back({prefix + ".ln.beta", ln_beta, false});
        out.push_back({prefix + ".w", w, true});
        out.push_back({prefix + ".b", b, false});
    }
};

namespace detail {

// One-hot (J x G) selector so group-embedding rows are gathered by a matmul
// and gradients scatter back into the table.
inline Tensor group_selector(const GroupAssignment& ga) {
    const int j = static_cast<int>(ga.group.size());
    Tensor sel = Tensor::zeros({j, ga.num_groups});
    for (int i = 0; i < j; ++i) sel.at(i, ga.group[static_cast<std::size_t>(i)]) = real(1);
    return sel;
}

}  // namespace detail

// Per-joint projected feature plus keypoint embedding plus (optionally) the
// embedding of the joint's distance group.
inline Tensor embed(const Tensor& x, const Tensor& proj_w, const Tensor& proj_b,
                    const Tensor& keypoint_embed, const Tensor& group_embed,
                    const GroupAssignment& groups, bool use_group_embed = true) {
    if (x.rank() != 2 || x.dim(1) != proj_w.dim(0))
        throw ShapeMismatch("embed input " + shape_str(x.shape()));
    if (x.dim(0) != keypoint_embed.dim(0))
        throw ShapeMismatch("embed joints vs keypoint table");
    Tensor z = add(add(matmul(x, proj_w), proj_b), keypoint_embed);
    if (use_group_embed)
        z = add(z, matmul(detail::group_selector(groups), group_embed));
    return z;
}

// First-stage network: embeddings, L1 encoder layers, regression head and
// uncertainty head. The uncertainty head exists from construction but only
// trains in the second stage.
struct PotModel {
    ModelConfig cfg;
    DistMatrix dist;
    GroupAssignment groups;

    Tensor proj_w, proj_b;
    Tensor keypoint_embed, group_embed;
    std::vector<EncoderLayer> layers;
    RegressionHead reg_head;
    RegressionHead unc_head;  // emits s = log sigma^2

    static PotModel init(const ModelConfig& cfg, const Skeleton& skeleton, Rng& rng) {
        cfg.validate();
        if (skeleton.num_joints != cfg.joints)
            throw ConfigError("skeleton joints " + std::to_string(skeleton.num_joints) +
                              " vs config " + std::to_string(cfg.joints));
        PotModel m;
        m.cfg = cfg;
        m.dist = distance_matrix(skeleton);
        m.groups = assign_groups(m.dist, skeleton.root, cfg.groups);
        m.proj_w = glorot_uniform(2, cfg.channels, rng);
        m.proj_b = zeros_param({cfg.channels});
        m.keypoint_embed = normal_init({cfg.joints, cfg.channels}, real(0.02), rng);
        m.group_embed = normal_init({cfg.groups, cfg.channels}, real(0.02), rng);
        const bool with_phi = cfg.pot_attention == AttentionMode::Kind::pose_oriented;
        m.layers.reserve(static_cast<std::size_t>(cfg.pot_layers));
        for (int l = 0; l < cfg.pot_layers; ++l)
            m.layers.push_back(
                EncoderLayer::init(cfg.channels, cfg.heads, cfg.ffn_hidden(), with_phi, rng));
        m.reg_head = RegressionHead::init(cfg.channels, rng);
        m.unc_head = RegressionHead::init(cfg.channels, rng);
        return m;
    }

    AttentionMode layer_mode(const EncoderLayer& layer) const {
        if (cfg.pot_attention == AttentionMode::Kind::pose_oriented)
            return AttentionMode::PoseOriented(dist, *layer.phi);
        return AttentionMode::Standard();
    }

    // Parameters trained by the first stage (everything except the
    // uncertainty head).
    std::vector<ParamRef> stage1_parameters() const {
        std::vector<ParamRef> out;
        out.push_back({"pot.proj.w", proj_w, true});
        out.push_back({"pot.proj.b", proj_b, false});
        out.push_back({"pot.embed.keypoint", keypoint_embed, false});
        out.push_back({"pot.embed.group", group_embed, false});
        for (std::size_t l = 0; l < layers.size(); ++l)
            layers[l].collect(out, "pot.layer" + std::to_string(l));
        reg_head.collect(out, "pot.reg_head");
        return out;
    }

    std::vector<ParamRef> uncertainty_parameters() const {
        std::vector<ParamRef> out;
        unc_head.collect(out, "pot.unc_head");
        return out;
    }

    std::vector<ParamRef> parameters() const {
        std::vector<ParamRef> out = stage1_parameters();
        auto unc = uncertainty_parameters();
        out.insert(out.end(), unc.begin(), unc.end());
        return out;
    }
};

struct PotOutput {
    Tensor features;  // J x C, encoder output
    Tensor pose;      // J x 3, first-stage prediction
};

inline PotOutput pot_forward(const PotModel& m, const Tensor& x, Rng& rng, bool training) {
    if (x.rank() != 2 || x.dim(0) != m.cfg.joints || x.dim(1) != 2)
        throw ShapeMismatch("pot_forward input " + shape_str(x.shape()));
    if (!x.all_finite()) throw NonFiniteInput("pot_forward input");
    Tensor z = embed(x, m.proj_w, m.proj_b, m.keypoint_embed, m.group_embed, m.groups,
                     m.cfg.use_group_embed);
    for (const EncoderLayer& layer : m.layers)
        z = encoder_layer(z, layer, m.layer_mode(layer), rng, training, m.cfg.dropout);
    return {z, m.reg_head.forward(z)};
}

// sigma = exp(s/2) from the head's raw log-variance output; positive by
// construction.
inline Tensor uncertainty(const PotModel& m, const Tensor& features) {
    return exp_op(mul_scalar(m.unc_head.forward(features), real(0.5)));
}

// Second-stage refiner: consumes a 3D pose sample concatenated with the 2D
// input, runs L2 encoder layers (uncertainty-guided by default), and emits
// the refined pose.
struct UgrnModel {
    ModelConfig cfg;
    DistMatrix dist;
    GroupAssignment groups;

    Tensor proj_w, proj_b;  // 5 -> C
    Tensor keypoint_embed, group_embed;
    std::vector<EncoderLayer> layers;
    RegressionHead refine_head;

    static UgrnModel init(const ModelConfig& cfg, const Skeleton& skeleton, Rng& rng) {
        cfg.validate();
        UgrnModel u;
        u.cfg = cfg;
        u.dist = distance_matrix(skeleton);
        u.groups = assign_groups(u.dist, skeleton.root, cfg.groups);
        u.proj_w = glorot_uniform(5, cfg.channels, rng);
        u.proj_b = zeros_param({cfg.channels});
        u.keypoint_embed = normal_init({cfg.joints, cfg.channels}, real(0.02), rng);
        u.group_embed = normal_init({cfg.groups, cfg.channels}, real(0.02), rng);
        const bool with_phi = cfg.ugrn_attention == AttentionMode::Kind::pose_oriented;
        u.layers.reserve(static_cast<std::size_t>(cfg.ugrn_layers));
        for (int l = 0; l < cfg.ugrn_layers; ++l)
            u.layers.push_back(
                EncoderLayer::init(cfg.channels, cfg.heads, cfg.ffn_hidden(), with_phi, rng));
        u.refine_head = RegressionHead::init(cfg.channels, rng);
        return u;
    }

    AttentionMode layer_mode(const EncoderLayer& layer, const Tensor& sigma) const {
        switch (cfg.ugrn_attention) {
            case AttentionMode::Kind::pose_oriented:
                return AttentionMode::PoseOriented(dist, *layer.phi);
            case AttentionMode::Kind::uncertainty_guided:
                return AttentionMode::UncertaintyGuided(sigma);
            case AttentionMode::Kind::standard:
                break;
        }
        return AttentionMode::Standard();
    }

    std::vector<ParamRef> parameters() const {
        std::vector<ParamRef> out;
        out.push_back({"ugrn.proj.w", proj_w, true});
        out.push_back({"ugrn.proj.b", proj_b, false});
        out.push_back({"ugrn.embed.keypoint", keypoint_embed, false});
        out.push_back({"ugrn.embed.group", group_embed, false});
        for (std::size_t l = 0; l < layers.size(); ++l)
            layers[l].collect(out, "ugrn.layer" + std::to_string(l));
        refine_head.collect(out, "ugrn.refine_head");
        return out;
    }
};

// One fixed sigma steers every layer of the stack.
inline Tensor ugrn_forward(const UgrnModel& u, const Tensor& x2d, const Tensor& y_sample,
                           const Tensor& sigma, Rng& rng, bool training) {
    if (x2d.rank() != 2 || x2d.dim(0) != u.cfg.joints || x2d.dim(1) != 2)
        throw ShapeMismatch("ugrn_forward 2d input " + shape_str(x2d.shape()));
    if (y_sample.rank() != 2 || y_sample.dim(0) != u.cfg.joints || y_sample.dim(1) != 3)
        throw ShapeMismatch("ugrn_forward 3d sample " + shape_str(y_sample.shape()));
    Tensor xt = concat_last_dim({y_sample, x2d});  // per joint: 3D then 2D
    Tensor z = embed(xt, u.proj_w, u.proj_b, u.keypoint_embed, u.group_embed, u.groups,
                     u.cfg.use_group_embed);
    for (const EncoderLayer& layer : u.layers)
        z = encoder_layer(z, layer, u.layer_mode(layer, sigma), rng, training, u.cfg.dropout);
    return u.refine_head.forward(z);
}

struct InferResult {
    Tensor pose_stage1;  // J x 3
    Tensor sigma;        // J x 3
    Tensor pose_refined; // J x 3
};

// Deterministic full-pipeline inference: the refiner consumes the stage-one
// prediction directly, with no sampling.
inline InferResult infer(const PotModel& pot, const UgrnModel& ugrn, const Tensor& x) {
    Rng unused(0);
    PotOutput out = pot_forward(pot, x, unused, false);
    Tensor sigma = uncertainty(pot, out.features);
    Tensor refined = ugrn_forward(ugrn, x, out.pose, sigma, unused, false);
    return {out.pose, sigma, refined};
}

struct ParamCount {
    std::vector<std::pair<std::string, std::size_t>> by_submodule;
    std::size_t total = 0;
};

namespace detail {

inline void count_group(ParamCount& pc, const std::string& label,
                        const std::vector<ParamRef>& params) {
    std::size_t n = total_scalars(params);
    pc.by_submodule.emplace_back(label, n);
    pc.total += n;
}

}  // namespace detail

inline ParamCount param_count(const PotModel& pot, const UgrnModel& ugrn) {
    ParamCount pc;
    std::vector<ParamRef> embed_params = {{"", pot.proj_w}, {"", pot.proj_b},
                                          {"", pot.keypoint_embed}, {"", pot.group_embed}};
    detail::count_group(pc, "pot.embed", embed_params);
    std::vector<ParamRef> enc;
    for (std::size_t l = 0; l < pot.layers.size(); ++l)
        pot.layers[l].collect(enc, "layer" + std::to_string(l));
    detail::count_group(pc, "pot.encoder", enc);
    std::vector<ParamRef> rh;
    pot.reg_head.collect(rh, "reg");
    detail::count_group(pc, "pot.reg_head", rh);
    std::vector<ParamRef> uh;
    pot.unc_head.collect(uh, "unc");
    detail::count_group(pc, "pot.unc_head", uh);

    std::vector<ParamRef> uembed = {{"", ugrn.proj_w}, {"", ugrn.proj_b},
                                    {"", ugrn.keypoint_embed}, {"", ugrn.group_embed}};
    detail::count_group(pc, "ugrn.embed", uembed);
    std::vector<ParamRef> uenc;
    for (std::size_t l = 0; l < ugrn.layers.size(); ++l)
        ugrn.layers[l].collect(uenc, "layer" + std::to_string(l));
    detail::count_group(pc, "ugrn.encoder", uenc);
    std::vector<ParamRef> rfh;
    ugrn.refine_head.collect(rfh, "refine");
    detail::count_group(pc, "ugrn.refine_head", rfh);
    return pc;
}

}  // namespace pot
