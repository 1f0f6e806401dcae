#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "pot/errors.hpp"
#include "pot/params.hpp"
#include "pot/rng.hpp"
#include "pot/skeleton.hpp"
#include "pot/tensor.hpp"

namespace pot {

// Floor on the per-joint uncertainty sum used as an attention divisor.
inline constexpr real kAttnSigmaFloor = real(1e-3);

// Hidden width of the distance-to-bias MLP.
inline constexpr int kDistBiasHidden = 16;

struct AttentionParams {
    Tensor pq, bq, pk, bk, pv, bv, po, bo;
    int num_heads = 1;

    int channels() const { return pq.dim(0); }
    int head_dim() const { return channels() / num_heads; }

    static AttentionParams init(int channels, int num_heads, Rng& rng) {
        if (num_heads < 1 || channels % num_heads != 0)
            throw ConfigError("channels " + std::to_string(channels) +
                              " not divisible by heads " + std::to_string(num_heads));
        AttentionParams p;
        p.num_heads = num_heads;
        p.pq = glorot_uniform(channels, channels, rng);
        p.pk = glorot_uniform(channels, channels, rng);
        p.pv = glorot_uniform(channels, channels, rng);
        p.po = glorot_uniform(channels, channels, rng);
        p.bq = zeros_param({channels});
        p.bk = zeros_param({channels});
        p.bv = zeros_param({channels});
        p.bo = zeros_param({channels});
        return p;
    }

    void collect(std::vector<ParamRef>& out, const std::string& prefix) const {
        out.push_back({prefix + ".pq", pq, true});
        out.push_back({prefix + ".bq", bq, false});
        out.push_back({prefix + ".pk", pk, true});
        out.push_back({prefix + ".bk", bk, false});
        out.push_back({prefix + ".pv", pv, true});
        out.push_back({prefix + ".bv", bv, false});
        out.push_back({prefix + ".po", po, true});
        out.push_back({prefix + ".bo", bo, false});
    }
};

// Small MLP mapping a hop distance (one scalar) to one additive logit bias
// per head.
struct DistanceBiasNet {
    Tensor w1, b1, w2, b2;

    int num_heads() const { return w2.dim(1); }

    static DistanceBiasNet init(int num_heads, Rng& rng) {
        DistanceBiasNet n;
        n.w1 = glorot_uniform(1, kDistBiasHidden, rng);
        n.b1 = zeros_param({kDistBiasHidden});
        n.w2 = glorot_uniform(kDistBiasHidden, num_heads, rng);
        n.b2 = zeros_param({num_heads});
        return n;
    }

    // (N,1) distances -> (N,H) biases
    Tensor forward(const Tensor& distances) const {
        Tensor h = gelu(add(matmul(distances, w1), b1));
        return add(matmul(h, w2), b2);
    }

    void collect(std::vector<ParamRef>& out, const std::string& prefix) const {
        out.push_back({prefix + ".w1", w1, true});
        out.push_back({prefix + ".b1", b1, false});
        out.push_back({prefix + ".w2", w2, true});
        out.push_back({prefix + ".b2", b2, false});
    }
};

struct FfnParams {
    Tensor w1, b1, w2, b2;

    static FfnParams init(int channels, int hidden, Rng& rng) {
        FfnParams f;
        f.w1 = glorot_uniform(channels, hidden, rng);
        f.b1 = zeros_param({hidden});
        f.w2 = glorot_uniform(hidden, channels, rng);
        f.b2 = zeros_param({channels});
        return f;
    }

    void collect(std::vector<ParamRef>& out, const std::string& prefix) const {
        out.push_back({prefix + ".w1", w1, true});
        out.push_back({prefix + ".b1", b1, false});
        out.push_back({prefix + ".w2", w2, true});
        out.push_back({prefix + ".b2", b2, false});
    }
};

// Selects how attention logits are shaped. Exactly one variant is active for
// a given layer stack.
struct AttentionMode {
    enum class Kind { standard, pose_oriented, uncertainty_guided };

    Kind kind = Kind::standard;
    const DistMatrix* dist = nullptr;       // pose_oriented
    const DistanceBiasNet* phi = nullptr;   // pose_oriented
    Tensor sigma;                           // uncertainty_guided, J x 3

    static AttentionMode Standard() { return {}; }
    static AttentionMode PoseOriented(const DistMatrix& d, const DistanceBiasNet& net) {
        AttentionMode m;
        m.kind = Kind::pose_oriented;
        m.dist = &d;
        m.phi = &net;
        return m;
    }
    static AttentionMode UncertaintyGuided(Tensor sigma) {
        AttentionMode m;
        m.kind = Kind::uncertainty_guided;
        m.sigma = std::move(sigma);
        return m;
    }
};

inline const char* to_string(AttentionMode::Kind k) {
    switch (k) {
        case AttentionMode::Kind::standard: return "standard";
        case AttentionMode::Kind::pose_oriented: return "pose_oriented";
        case AttentionMode::Kind::uncertainty_guided: return "uncertainty_guided";
    }
    return "?";
}

inline AttentionMode::Kind attention_kind_from_string(const std::string& s) {
    if (s == "standard") return AttentionMode::Kind::standard;
    if (s == "pose_oriented") return AttentionMode::Kind::pose_oriented;
    if (s == "uncertainty_guided") return AttentionMode::Kind::uncertainty_guided;
    throw ConfigError("unknown attention kind '" + s + "'");
}

namespace detail {

// Hop counts as a (J*J, 1) constant, row-major over (i, j).
inline Tensor distances_column(const DistMatrix& d) {
    const int j = d.num_joints;
    Tensor t = Tensor::zeros({j * j, 1});
    for (std::size_t i = 0; i < d.d.size(); ++i) t.raw()[i] = static_cast<real>(d.d[i]);
    return t;
}

// (J*J, H) bias matrix; recomputed per forward so the net trains by gradient.
inline Tensor dist_bias_flat(const DistMatrix& d, const DistanceBiasNet& net) {
    return net.forward(distances_column(d));
}

}  // namespace detail

// Per-head additive logit bias table, laid out (H, J, J).
inline Tensor po_bias_table(const DistMatrix& d, const DistanceBiasNet& net) {
    const int j = d.num_joints;
    Tensor flat = detail::dist_bias_flat(d, net);        // (J*J, H)
    return reshape(transpose(flat), {net.num_heads(), j, j});
}

// Multi-head self-attention over per-joint features Z (J x C).
//
// standard:            A = Q K^T / sqrt(d)
// pose_oriented:       A += Phi(dist(i,j)) per head, before softmax
// uncertainty_guided:  column j of A divided by max(sum(sigma_j), floor)
//
// Dropout is applied to the attention probabilities in training mode.
inline Tensor attend(const Tensor& z, const AttentionParams& p, const AttentionMode& mode,
                     Rng& rng, bool training, real dropout_rate = real(0)) {
    if (!z.all_finite()) throw NonFiniteInput("attend input");
    if (z.rank() != 2 || z.dim(1) != p.channels())
        throw ShapeMismatch("attend input " + shape_str(z.shape()));
    const int j = z.dim(0);
    const int heads = p.num_heads;
    const int hd = p.head_dim();

    Tensor q = add(matmul(z, p.pq), p.bq);
    Tensor k = add(matmul(z, p.pk), p.bk);
    Tensor v = add(matmul(z, p.pv), p.bv);

    Tensor bias_flat;  // (J*J, H) in pose-oriented mode
    if (mode.kind == AttentionMode::Kind::pose_oriented) {
        if (!mode.dist || !mode.phi) throw ConfigError("pose_oriented mode without tables");
        if (mode.dist->num_joints != j) throw ShapeMismatch("distance matrix vs joints");
        if (mode.phi->num_heads() != heads) throw ShapeMismatch("bias net heads");
        bias_flat = detail::dist_bias_flat(*mode.dist, *mode.phi);
    }

    Tensor divisor_row;  // (1, J) in uncertainty-guided mode
    if (mode.kind == AttentionMode::Kind::uncertainty_guided) {
        if (mode.sigma.rank() != 2 || mode.sigma.dim(0) != j)
            throw ShapeMismatch("sigma " + shape_str(mode.sigma.shape()));
        for (real s : mode.sigma.raw())
            if (!(s >= real(0)) || !std::isfinite(s)) throw NonPositiveSigma("attend sigma");
        divisor_row = transpose(clamp_min(sum_lastdim(mode.sigma), kAttnSigmaFloor));
    }

    std::vector<Tensor> head_outputs;
    head_outputs.reserve(static_cast<std::size_t>(heads));
    const real scale = real(1) / std::sqrt(static_cast<real>(hd));
    for (int h = 0; h < heads; ++h) {
        Tensor qh = slice_last_dim(q, h * hd, hd);
        Tensor kh = slice_last_dim(k, h * hd, hd);
        Tensor vh = slice_last_dim(v, h * hd, hd);
        Tensor logits = mul_scalar(matmul(qh, transpose(kh)), scale);
        if (mode.kind == AttentionMode::Kind::pose_oriented) {
            Tensor bias_h = reshape(slice_last_dim(bias_flat, h, 1), {j, j});
            logits = add(logits, bias_h);
        } else if (mode.kind == AttentionMode::Kind::uncertainty_guided) {
            logits = div(logits, divisor_row);
        }
        Tensor probs = dropout(softmax_lastdim(logits), dropout_rate, rng, training);
        head_outputs.push_back(matmul(probs, vh));
    }
    Tensor concat = heads == 1 ? head_outputs.front() : concat_last_dim(head_outputs);
    return add(matmul(concat, p.po), p.bo);
}

namespace detail {

// Two-layer position-wise MLP without the residual.
inline Tensor ffn_core(const Tensor& z, const FfnParams& p) {
    return add(matmul(gelu(add(matmul(z, p.w1), p.b1)), p.w2), p.b2);
}

}  // namespace detail

// Position-wise feed-forward block: MLP2(GELU(MLP1(z))) + z.
inline Tensor ffn(const Tensor& z, const FfnParams& p) {
    return add(detail::ffn_core(z, p), z);
}

// One pre-LN encoder layer. The distance-bias net lives with the layer so
// each layer learns its own receptive-field shaping.
struct EncoderLayer {
    Tensor ln1_gamma, ln1_beta, ln2_gamma, ln2_beta;
    AttentionParams attn;
    FfnParams ffn;
    std::optional<DistanceBiasNet> phi;  // only when the layer runs pose-oriented

    static EncoderLayer init(int channels, int heads, int ffn_hidden, bool with_phi, Rng& rng) {
        EncoderLayer l;
        l.ln1_gamma = ones_param({channels});
        l.ln1_beta = zeros_param({channels});
        l.ln2_gamma = ones_param({channels});
        l.ln2_beta = zeros_param({channels});
        l.attn = AttentionParams::init(channels, heads, rng);
        l.ffn = FfnParams::init(channels, ffn_hidden, rng);
        if (with_phi) l.phi = DistanceBiasNet::init(heads, rng);
        return l;
    }

    void collect(std::vector<ParamRef>& out, const std::string& prefix) const {
        out.push_back({prefix + ".ln1.gamma", ln1_gamma, false});
        out.push_back({prefix + ".ln1.beta", ln1_beta, false});
        attn.collect(out, prefix + ".attn");
        if (phi) phi->collect(out, prefix + ".phi");
        out.push_back({prefix + ".ln2.gamma", ln2_gamma, false});
        out.push_back({prefix + ".ln2.beta", ln2_beta, false});
        ffn.collect(out, prefix + ".ffn");
    }
};

// z' = attend(LN(z)) + z;  out = mlp(LN(z')) + z'.
// Sublayer outputs are dropped out before each residual add.
inline Tensor encoder_layer(const Tensor& z, const EncoderLayer& layer, const AttentionMode& mode,
                            Rng& rng, bool training, real dropout_rate = real(0)) {
    Tensor a = attend(layernorm(z, layer.ln1_gamma, layer.ln1_beta), layer.attn, mode, rng,
                      training, dropout_rate);
    Tensor z1 = add(dropout(a, dropout_rate, rng, training), z);
    Tensor f = detail::ffn_core(layernorm(z1, layer.ln2_gamma, layer.ln2_beta), layer.ffn);
    return add(dropout(f, dropout_rate, rng, training), z1);
}

}  // namespace pot
