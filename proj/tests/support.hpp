#pragma once

// Shared test utilities: finite-difference gradient checks, an all-pairs
// shortest-path oracle, random connected graphs, and a straight-line scalar
// re-implementation of the network used as an independent oracle. Nothing
// here may call back into the library's tensor ops.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "pot/pot.hpp"

namespace support {

inline double rel_err(double a, double b, double floor = 1e-6) {
    return std::fabs(a - b) / std::max({std::fabs(a), std::fabs(b), floor});
}

// Central finite differences of `eval` w.r.t. every scalar of every param,
// compared against the tape gradients in `grads`. Returns the worst relative
// error and its location.
struct GradCheckResult {
    double worst = 0;
    std::string where;
    std::size_t checked = 0;
};

inline GradCheckResult check_gradients(const std::vector<pot::ParamRef>& params,
                                       const pot::GradMap& grads,
                                       const std::function<double()>& eval, double h = 1e-5) {
    GradCheckResult res;
    for (const pot::ParamRef& p : params) {
        auto it = grads.find(p.tensor.node().get());
        auto& w = const_cast<pot::Tensor&>(p.tensor).raw();
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double w0 = w[i];
            w[i] = w0 + h;
            const double fp = eval();
            w[i] = w0 - h;
            const double fm = eval();
            w[i] = w0;
            const double fd = (fp - fm) / (2 * h);
            const double tg = it != grads.end() ? static_cast<double>(it->second.raw()[i]) : 0.0;
            const double re = rel_err(fd, tg);
            if (re > res.worst) {
                res.worst = re;
                res.where = p.name + "[" + std::to_string(i) + "]";
            }
            ++res.checked;
        }
    }
    return res;
}

// Finite differences w.r.t. the entries of one tensor (for input gradients).
inline double fd_entry(pot::Tensor& t, std::size_t i, const std::function<double()>& eval,
                       double h = 1e-5) {
    const double w0 = t.raw()[i];
    t.raw()[i] = w0 + h;
    const double fp = eval();
    t.raw()[i] = w0 - h;
    const double fm = eval();
    t.raw()[i] = w0;
    return (fp - fm) / (2 * h);
}

// ---------------------------------------------------------------------------
// graph oracles

inline std::vector<std::vector<int>> floyd_warshall(int n,
                                                    const std::vector<std::pair<int, int>>& edges) {
    const int inf = 1 << 20;
    std::vector<std::vector<int>> d(n, std::vector<int>(n, inf));
    for (int i = 0; i < n; ++i) d[i][i] = 0;
    for (auto [a, b] : edges) d[a][b] = d[b][a] = 1;
    for (int k = 0; k < n; ++k)
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) d[i][j] = std::min(d[i][j], d[i][k] + d[k][j]);
    return d;
}

// Random connected graph: a random attachment tree plus a few extra edges.
inline std::vector<std::pair<int, int>> random_connected_edges(int n, pot::Rng& rng) {
    std::vector<std::pair<int, int>> edges;
    for (int i = 1; i < n; ++i)
        edges.emplace_back(static_cast<int>(rng.next_u64() % static_cast<std::uint64_t>(i)), i);
    const int extra = static_cast<int>(rng.next_u64() % 3);
    for (int e = 0; e < extra && n > 2; ++e) {
        int a = static_cast<int>(rng.next_u64() % static_cast<std::uint64_t>(n));
        int b = static_cast<int>(rng.next_u64() % static_cast<std::uint64_t>(n));
        if (a == b) continue;
        auto key = std::minmax(a, b);
        bool dup = false;
        for (auto [x, y] : edges)
            if (std::minmax(x, y) == key) dup = true;
        if (!dup) edges.emplace_back(a, b);
    }
    return edges;
}

// ---------------------------------------------------------------------------
// straight-line scalar re-implementation of the network (the oracle side of
// the duplicate-implementation checks)

namespace ref {

using Mat = std::vector<std::vector<double>>;

inline Mat from_tensor(const pot::Tensor& t) {
    Mat m(static_cast<std::size_t>(t.dim(0)), std::vector<double>(static_cast<std::size_t>(t.dim(1))));
    for (int i = 0; i < t.dim(0); ++i)
        for (int j = 0; j < t.dim(1); ++j) m[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = t.at(i, j);
    return m;
}

inline std::vector<double> vec_from_tensor(const pot::Tensor& t) {
    std::vector<double> v(t.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = t.raw()[i];
    return v;
}

inline Mat matmul(const Mat& a, const Mat& b) {
    Mat c(a.size(), std::vector<double>(b[0].size(), 0.0));
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t k = 0; k < b.size(); ++k)
            for (std::size_t j = 0; j < b[0].size(); ++j) c[i][j] += a[i][k] * b[k][j];
    return c;
}

inline Mat add_bias(Mat m, const std::vector<double>& bias) {
    for (auto& row : m)
        for (std::size_t j = 0; j < row.size(); ++j) row[j] += bias[j];
    return m;
}

inline Mat add(const Mat& a, const Mat& b) {
    Mat c = a;
    for (std::size_t i = 0; i < c.size(); ++i)
        for (std::size_t j = 0; j < c[0].size(); ++j) c[i][j] += b[i][j];
    return c;
}

inline double gelu1(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

inline Mat gelu(Mat m) {
    for (auto& row : m)
        for (double& v : row) v = gelu1(v);
    return m;
}

inline Mat layernorm(const Mat& m, const std::vector<double>& gamma,
                     const std::vector<double>& beta, double eps = 1e-5) {
    Mat out = m;
    const std::size_t w = m[0].size();
    for (std::size_t r = 0; r < m.size(); ++r) {
        double mean = 0;
        for (double v : m[r]) mean += v;
        mean /= static_cast<double>(w);
        double var = 0;
        for (double v : m[r]) var += (v - mean) * (v - mean);
        var /= static_cast<double>(w);
        const double inv = 1.0 / std::sqrt(var + eps);
        for (std::size_t c = 0; c < w; ++c) out[r][c] = gamma[c] * (m[r][c] - mean) * inv + beta[c];
    }
    return out;
}

inline std::vector<double> softmax_row(std::vector<double> row) {
    double mx = row[0];
    for (double v : row) mx = std::max(mx, v);
    double sum = 0;
    for (double& v : row) {
        v = std::exp(v - mx);
        sum += v;
    }
    for (double& v : row) v /= sum;
    return row;
}

// Scalar distance-bias net evaluation for one hop count.
inline std::vector<double> dist_bias(const pot::DistanceBiasNet& net, double hops) {
    const auto w1 = from_tensor(net.w1);
    const auto b1 = vec_from_tensor(net.b1);
    const auto w2 = from_tensor(net.w2);
    const auto b2 = vec_from_tensor(net.b2);
    std::vector<double> hidden(w1[0].size());
    for (std::size_t h = 0; h < hidden.size(); ++h) hidden[h] = gelu1(hops * w1[0][h] + b1[h]);
    std::vector<double> out = b2;
    for (std::size_t h = 0; h < hidden.size(); ++h)
        for (std::size_t o = 0; o < out.size(); ++o) out[o] += hidden[h] * w2[h][o];
    return out;
}

struct ModeInfo {
    pot::AttentionMode::Kind kind = pot::AttentionMode::Kind::standard;
    const pot::DistMatrix* dist = nullptr;
    const pot::DistanceBiasNet* phi = nullptr;
    Mat sigma;  // J x 3
};

inline Mat attend(const Mat& z, const pot::AttentionParams& p, const ModeInfo& mode) {
    const std::size_t joints = z.size();
    const int heads = p.num_heads;
    const int hd = p.head_dim();
    const Mat q = add_bias(matmul(z, from_tensor(p.pq)), vec_from_tensor(p.bq));
    const Mat k = add_bias(matmul(z, from_tensor(p.pk)), vec_from_tensor(p.bk));
    const Mat v = add_bias(matmul(z, from_tensor(p.pv)), vec_from_tensor(p.bv));

    std::vector<double> divisor(joints, 1.0);
    if (mode.kind == pot::AttentionMode::Kind::uncertainty_guided)
        for (std::size_t j = 0; j < joints; ++j) {
            double s = mode.sigma[j][0] + mode.sigma[j][1] + mode.sigma[j][2];
            divisor[j] = std::max(s, static_cast<double>(pot::kAttnSigmaFloor));
        }

    Mat concat(joints, std::vector<double>(static_cast<std::size_t>(heads * hd), 0.0));
    for (int h = 0; h < heads; ++h) {
        for (std::size_t i = 0; i < joints; ++i) {
            std::vector<double> logits(joints, 0.0);
            for (std::size_t j = 0; j < joints; ++j) {
                double dot = 0;
                for (int c = 0; c < hd; ++c)
                    dot += q[i][static_cast<std::size_t>(h * hd + c)] * k[j][static_cast<std::size_t>(h * hd + c)];
                double a = dot / std::sqrt(static_cast<double>(hd));
                if (mode.kind == pot::AttentionMode::Kind::pose_oriented)
                    a += dist_bias(*mode.phi, mode.dist->at(static_cast<int>(i), static_cast<int>(j)))[static_cast<std::size_t>(h)];
                else if (mode.kind == pot::AttentionMode::Kind::uncertainty_guided)
                    a /= divisor[j];
                logits[j] = a;
            }
            const auto probs = softmax_row(logits);
            for (int c = 0; c < hd; ++c) {
                double acc = 0;
                for (std::size_t j = 0; j < joints; ++j)
                    acc += probs[j] * v[j][static_cast<std::size_t>(h * hd + c)];
                concat[i][static_cast<std::size_t>(h * hd + c)] = acc;
            }
        }
    }
    return add_bias(matmul(concat, from_tensor(p.po)), vec_from_tensor(p.bo));
}

inline Mat encoder_layer(const Mat& z, const pot::EncoderLayer& layer, const ModeInfo& mode) {
    const Mat a = attend(layernorm(z, vec_from_tensor(layer.ln1_gamma), vec_from_tensor(layer.ln1_beta)),
                         layer.attn, mode);
    const Mat z1 = add(a, z);
    Mat h = layernorm(z1, vec_from_tensor(layer.ln2_gamma), vec_from_tensor(layer.ln2_beta));
    h = add_bias(matmul(h, from_tensor(layer.ffn.w1)), vec_from_tensor(layer.ffn.b1));
    h = gelu(h);
    h = add_bias(matmul(h, from_tensor(layer.ffn.w2)), vec_from_tensor(layer.ffn.b2));
    return add(h, z1);
}

inline Mat head(const Mat& z, const pot::RegressionHead& h) {
    return add_bias(matmul(layernorm(z, vec_from_tensor(h.ln_gamma), vec_from_tensor(h.ln_beta)),
                           from_tensor(h.w)),
                    vec_from_tensor(h.b));
}

inline Mat embed(const Mat& x, const pot::Tensor& proj_w, const pot::Tensor& proj_b,
                 const pot::Tensor& keypoint, const pot::Tensor& group,
                 const pot::GroupAssignment& ga, bool use_group) {
    Mat z = add_bias(matmul(x, from_tensor(proj_w)), vec_from_tensor(proj_b));
    const Mat kp = from_tensor(keypoint);
    const Mat gp = from_tensor(group);
    for (std::size_t i = 0; i < z.size(); ++i)
        for (std::size_t c = 0; c < z[0].size(); ++c) {
            z[i][c] += kp[i][c];
            if (use_group) z[i][c] += gp[static_cast<std::size_t>(ga.group[i])][c];
        }
    return z;
}

inline Mat pot_forward(const pot::PotModel& m, const Mat& x) {
    Mat z = embed(x, m.proj_w, m.proj_b, m.keypoint_embed, m.group_embed, m.groups,
                  m.cfg.use_group_embed);
    for (const pot::EncoderLayer& layer : m.layers) {
        ModeInfo mode;
        mode.kind = m.cfg.pot_attention;
        if (mode.kind == pot::AttentionMode::Kind::pose_oriented) {
            mode.dist = &m.dist;
            mode.phi = &*layer.phi;
        }
        z = encoder_layer(z, layer, mode);
    }
    return head(z, m.reg_head);
}

inline Mat ugrn_forward(const pot::UgrnModel& u, const Mat& x2d, const Mat& y_sample,
                        const Mat& sigma) {
    Mat xt(x2d.size(), std::vector<double>(5));
    for (std::size_t i = 0; i < x2d.size(); ++i) {
        xt[i][0] = y_sample[i][0];
        xt[i][1] = y_sample[i][1];
        xt[i][2] = y_sample[i][2];
        xt[i][3] = x2d[i][0];
        xt[i][4] = x2d[i][1];
    }
    Mat z = embed(xt, u.proj_w, u.proj_b, u.keypoint_embed, u.group_embed, u.groups,
                  u.cfg.use_group_embed);
    for (const pot::EncoderLayer& layer : u.layers) {
        ModeInfo mode;
        mode.kind = u.cfg.ugrn_attention;
        if (mode.kind == pot::AttentionMode::Kind::pose_oriented) {
            mode.dist = &u.dist;
            mode.phi = &*layer.phi;
        } else if (mode.kind == pot::AttentionMode::Kind::uncertainty_guided) {
            mode.sigma = sigma;
        }
        z = encoder_layer(z, layer, mode);
    }
    return head(z, u.refine_head);
}

}  // namespace ref

// Convenience builders.

inline pot::Tensor random_tensor(pot::Shape shape, pot::Rng& rng, double scale = 1.0) {
    pot::Tensor t = pot::Tensor::zeros(std::move(shape));
    for (pot::real& v : t.raw()) v = static_cast<pot::real>(rng.gaussian() * scale);
    return t;
}

inline double max_abs_diff(const pot::Tensor& a, const ref::Mat& b) {
    double worst = 0;
    for (int i = 0; i < a.dim(0); ++i)
        for (int j = 0; j < a.dim(1); ++j)
            worst = std::max(worst, std::fabs(static_cast<double>(a.at(i, j)) -
                                              b[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]));
    return worst;
}

inline double max_abs_diff(const pot::Tensor& a, const pot::Tensor& b) {
    double worst = 0;
    for (std::size_t i = 0; i < a.numel(); ++i)
        worst = std::max(worst, std::fabs(static_cast<double>(a.raw()[i]) - static_cast<double>(b.raw()[i])));
    return worst;
}

inline pot::Skeleton path_skeleton(int n) {
    std::vector<std::pair<int, int>> edges;
    for (int i = 1; i < n; ++i) edges.emplace_back(i - 1, i);
    return pot::build_skeleton(n, std::move(edges), 0);
}

}  // namespace support
