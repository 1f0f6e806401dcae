#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "pot/data.hpp"
#include "pot/errors.hpp"
#include "pot/metrics.hpp"
#include "pot/model.hpp"
#include "pot/params.hpp"
#include "pot/tensor.hpp"

namespace pot {

// Floor applied to sigma wherever it divides or scales, so early-training
// near-zero predictions cannot blow up.
inline constexpr real kSigmaFloor = real(1e-4);

// The learning rate decays by `decay` once per this many epochs.
inline constexpr int kLrDecayInterval = 4;

// Deterministic stream ids split off the master seed.
inline constexpr std::uint64_t kStreamInitPot = 1;
inline constexpr std::uint64_t kStreamInitUgrn = 2;
inline constexpr std::uint64_t kStreamStage1 = 3;
inline constexpr std::uint64_t kStreamStage2 = 4;

struct TrainConfig {
    real lr0 = real(0.001);
    real decay = real(0.96);
    int epochs_per_stage = 25;
    int batch_size = 256;
    real lambda_sigma = real(0.001);
    real maxnorm_cap = real(1.0);
    std::uint64_t seed = 0;
    real beta1 = real(0.9);
    real beta2 = real(0.999);
    real adam_eps = real(1e-8);
    bool use_ug_sampling = true;  // ablation switch for the stage-II input draw

    void validate() const {
        if (lr0 <= 0 || decay <= 0 || epochs_per_stage <= 0 || batch_size <= 0 ||
            lambda_sigma < 0 || maxnorm_cap <= 0 || adam_eps <= 0)
            throw ConfigError("train config fields must be positive");
        if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1)
            throw ConfigError("adam betas must lie in [0,1)");
    }

    // Settings that let a two-stage run converge on a tiny synthetic set in
    // minutes: higher flat learning rate, no decay, looser norm cap. Rates
    // beyond ~0.03 destabilize the desk-size encoder. 50 epochs over the
    // default 128-sample corpus is 200 steps per stage.
    static TrainConfig desk() {
        TrainConfig c;
        c.lr0 = real(0.02);
        c.decay = real(1.0);
        c.epochs_per_stage = 50;
        c.batch_size = 32;
        c.maxnorm_cap = real(8.0);
        return c;
    }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = nlohmann::json{{"lr0", c.lr0},
                       {"decay", c.decay},
                       {"epochs_per_stage", c.epochs_per_stage},
                       {"batch_size", c.batch_size},
                       {"lambda_sigma", c.lambda_sigma},
                       {"maxnorm_cap", c.maxnorm_cap},
                       {"seed", c.seed},
                       {"beta1", c.beta1},
                       {"beta2", c.beta2},
                       {"adam_eps", c.adam_eps},
                       {"use_ug_sampling", c.use_ug_sampling}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
    c.lr0 = j.value("lr0", c.lr0);
    c.decay = j.value("decay", c.decay);
    c.epochs_per_stage = j.value("epochs_per_stage", c.epochs_per_stage);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lambda_sigma = j.value("lambda_sigma", c.lambda_sigma);
    c.maxnorm_cap = j.value("maxnorm_cap", c.maxnorm_cap);
    c.seed = j.value("seed", c.seed);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.adam_eps = j.value("adam_eps", c.adam_eps);
    c.use_ug_sampling = j.value("use_ug_sampling", c.use_ug_sampling);
}

// Mean over joints of the squared Euclidean residual.
inline Tensor stage1_loss(const Tensor& y_pred, const Tensor& y_true) {
    if (y_pred.shape() != y_true.shape() || y_pred.rank() != 2 || y_pred.dim(1) != 3)
        throw ShapeMismatch("stage1_loss " + shape_str(y_pred.shape()) + " vs " +
                            shape_str(y_true.shape()));
    Tensor r = sub(y_pred, y_true);
    return mul_scalar(sum_all(mul(r, r)), real(1) / static_cast<real>(y_pred.dim(0)));
}

namespace detail {

inline void check_sigma_nonnegative(const Tensor& sigma, const char* where) {
    for (real s : sigma.raw())
        if (!(s >= real(0)) || !std::isfinite(s)) throw NonPositiveSigma(where);
}

}  // namespace detail

// Heteroscedastic uncertainty loss: per joint, the sigma-scaled squared
// residual plus log ||sigma||^2. The prediction is treated as a constant;
// only sigma receives gradient.
inline Tensor sigma_loss(const Tensor& y_pred, const Tensor& y_true, const Tensor& sigma) {
    if (y_pred.shape() != y_true.shape() || sigma.shape() != y_pred.shape())
        throw ShapeMismatch("sigma_loss shapes");
    detail::check_sigma_nonnegative(sigma, "sigma_loss");
    Tensor pred_const = Tensor::from(y_pred.shape(), y_pred.raw());  // detached
    Tensor s = clamp_min(sigma, kSigmaFloor);
    Tensor r = div(sub(pred_const, y_true), s);
    Tensor per_joint = add(sum_lastdim(mul(r, r)), log_op(sum_lastdim(mul(s, s))));
    return mul_scalar(sum_all(per_joint), real(1) / static_cast<real>(y_pred.dim(0)));
}

// Stage-II objective: refinement L2 term plus lambda times the uncertainty
// loss of the first-stage prediction.
inline Tensor stage2_loss(const Tensor& y_refined, const Tensor& y_true, const Tensor& y_stage1,
                          const Tensor& sigma, real lambda) {
    return add(stage1_loss(y_refined, y_true), mul_scalar(sigma_loss(y_stage1, y_true, sigma), lambda));
}

// Reparameterized draw around the first-stage prediction: y + sigma * eps,
// eps ~ N(0,1). Gradient w.r.t. sigma passes through the product. Eval mode
// returns the prediction itself, untouched.
inline Tensor ug_sample(const Tensor& y_stage1, const Tensor& sigma, Rng& rng, bool training) {
    if (sigma.shape() != y_stage1.shape()) throw ShapeMismatch("ug_sample shapes");
    detail::check_sigma_nonnegative(sigma, "ug_sample");
    if (!training) return y_stage1;
    Tensor eps = gaussian(rng, y_stage1.shape());
    return add(y_stage1, mul(clamp_min(sigma, kSigmaFloor), eps));
}

inline real lr_at(int epoch, const TrainConfig& cfg) {
    return cfg.lr0 * static_cast<real>(std::pow(cfg.decay, epoch / kLrDecayInterval));
}

struct AdamState {
    struct Moments {
        std::vector<real> m, v;
    };
    std::int64_t step = 0;
    std::map<std::string, Moments> by_param;
};

// Bias-corrected Adam update followed by max-norm projection: rows of
// flagged weight matrices are rescaled onto the cap when they exceed it.
inline void adam_step(std::vector<ParamRef>& params, const GradMap& grads, AdamState& state,
                      real lr, const TrainConfig& cfg) {
    state.step += 1;
    const real bc1 = real(1) - static_cast<real>(std::pow(cfg.beta1, static_cast<real>(state.step)));
    const real bc2 = real(1) - static_cast<real>(std::pow(cfg.beta2, static_cast<real>(state.step)));
    for (ParamRef& p : params) {
        auto& mom = state.by_param[p.name];
        const std::size_t n = p.tensor.numel();
        if (mom.m.size() != n) {
            mom.m.assign(n, real(0));
            mom.v.assign(n, real(0));
        }
        auto it = grads.find(p.tensor.node().get());
        const std::vector<real>* g = it != grads.end() ? &it->second.raw() : nullptr;
        if (g && g->size() != n) throw ShapeMismatch("adam_step gradient for " + p.name);
        auto& w = p.tensor.raw();
        for (std::size_t i = 0; i < n; ++i) {
            const real gi = g ? (*g)[i] : real(0);
            mom.m[i] = cfg.beta1 * mom.m[i] + (real(1) - cfg.beta1) * gi;
            mom.v[i] = cfg.beta2 * mom.v[i] + (real(1) - cfg.beta2) * gi * gi;
            const real mhat = mom.m[i] / bc1;
            const real vhat = mom.v[i] / bc2;
            w[i] -= lr * mhat / (std::sqrt(vhat) + cfg.adam_eps);
        }
        if (p.max_norm && p.tensor.rank() == 2) {
            const int rows = p.tensor.dim(0), cols = p.tensor.dim(1);
            for (int r = 0; r < rows; ++r) {
                real norm2 = 0;
                for (int c = 0; c < cols; ++c) norm2 += p.tensor.at(r, c) * p.tensor.at(r, c);
                const real norm = std::sqrt(norm2);
                if (norm > cfg.maxnorm_cap) {
                    const real scale = cfg.maxnorm_cap / norm;
                    for (int c = 0; c < cols; ++c) p.tensor.at(r, c) *= scale;
                }
            }
        }
    }
}

struct LogRow {
    int epoch = 0;
    int step = 0;
    int stage = 1;
    real lr = 0;
    real loss = 0;
    real mpjpe = 0;
};

using TrainLog = std::vector<LogRow>;

using EpochCallback = std::function<void(int stage, int epoch)>;

namespace detail {

struct TensorDataset {
    std::vector<Tensor> x;  // J x 2 each
    std::vector<Tensor> y;  // J x 3 each
};

inline TensorDataset to_tensors(const std::vector<PoseSample>& data) {
    if (data.empty()) throw EmptyDataset("no samples");
    TensorDataset td;
    td.x.reserve(data.size());
    td.y.reserve(data.size());
    for (const PoseSample& s : data) {
        td.x.push_back(s.joints_2d);
        td.y.push_back(s.joints_3d);
    }
    return td;
}

inline std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    for (std::size_t i = n; i > 1; --i) {
        const std::size_t j = rng.next_u64() % i;
        std::swap(idx[i - 1], idx[j]);
    }
    return idx;
}

}  // namespace detail

// Epochs of shuffled mini-batches minimizing the stage-I loss. Only the
// first-stage parameter set is updated.
inline TrainLog train_stage1(PotModel& pot, const std::vector<PoseSample>& data,
                             const TrainConfig& cfg, const EpochCallback& on_epoch = {},
                             int start_epoch = 0) {
    cfg.validate();
    auto td = detail::to_tensors(data);
    auto params = pot.stage1_parameters();
    AdamState opt;
    Rng rng = Rng(cfg.seed).split(kStreamStage1);
    TrainLog log;
    int step = 0;
    for (int epoch = start_epoch; epoch < cfg.epochs_per_stage; ++epoch) {
        const real lr = lr_at(epoch, cfg);
        auto order = detail::shuffled_indices(td.x.size(), rng);
        for (std::size_t b0 = 0; b0 < order.size(); b0 += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t b1 = std::min(order.size(), b0 + static_cast<std::size_t>(cfg.batch_size));
            Tape tape;
            Tensor loss;
            std::vector<Tensor> preds, gts;
            {
                Tape::Scope scope(tape);
                Tensor acc = Tensor::scalar(0);
                for (std::size_t k = b0; k < b1; ++k) {
                    const Tensor& x = td.x[order[k]];
                    const Tensor& y = td.y[order[k]];
                    PotOutput out = pot_forward(pot, x, rng, true);
                    acc = add(acc, stage1_loss(out.pose, y));
                    preds.push_back(out.pose);
                    gts.push_back(y);
                }
                loss = mul_scalar(acc, real(1) / static_cast<real>(b1 - b0));
            }
            GradMap grads = tape.backward(loss);
            adam_step(params, grads, opt, lr, cfg);
            log.push_back({epoch, step, 1, lr, loss.item(), mpjpe(preds, gts)});
            ++step;
        }
        if (on_epoch) on_epoch(1, epoch);
    }
    return log;
}

// Stage II: the first-stage network runs frozen (off-tape, eval mode); the
// refiner and the uncertainty head train against the combined objective.
inline TrainLog train_stage2(PotModel& pot, UgrnModel& ugrn, const std::vector<PoseSample>& data,
                             const TrainConfig& cfg, const EpochCallback& on_epoch = {},
                             int start_epoch = 0) {
    cfg.validate();
    auto td = detail::to_tensors(data);
    std::vector<ParamRef> params = ugrn.parameters();
    auto unc = pot.uncertainty_parameters();
    params.insert(params.end(), unc.begin(), unc.end());
    AdamState opt;
    Rng rng = Rng(cfg.seed).split(kStreamStage2);
    Rng frozen_rng(0);  // never consumed: frozen forward runs eval mode
    TrainLog log;
    int step = 0;
    for (int epoch = start_epoch; epoch < cfg.epochs_per_stage; ++epoch) {
        const real lr = lr_at(epoch, cfg);
        auto order = detail::shuffled_indices(td.x.size(), rng);
        for (std::size_t b0 = 0; b0 < order.size(); b0 += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t b1 = std::min(order.size(), b0 + static_cast<std::size_t>(cfg.batch_size));
            Tape tape;
            Tensor loss;
            std::vector<Tensor> preds, gts;
            {
                Tape::Scope scope(tape);
                Tensor acc = Tensor::scalar(0);
                for (std::size_t k = b0; k < b1; ++k) {
                    const Tensor& x = td.x[order[k]];
                    const Tensor& y = td.y[order[k]];
                    PotOutput frozen = [&] {
                        Tape::Pause off;  // frozen encoder stays off the tape
                        return pot_forward(pot, x, frozen_rng, false);
                    }();
                    Tensor sigma = uncertainty(pot, frozen.features);
                    Tensor y_bar = cfg.use_ug_sampling ? ug_sample(frozen.pose, sigma, rng, true)
                                                       : frozen.pose;
                    Tensor y_hat = ugrn_forward(ugrn, x, y_bar, sigma, rng, true);
                    acc = add(acc, stage2_loss(y_hat, y, frozen.pose, sigma, cfg.lambda_sigma));
                    preds.push_back(y_hat);
                    gts.push_back(y);
                }
                loss = mul_scalar(acc, real(1) / static_cast<real>(b1 - b0));
            }
            GradMap grads = tape.backward(loss);
            adam_step(params, grads, opt, lr, cfg);
            log.push_back({epoch, step, 2, lr, loss.item(), mpjpe(preds, gts)});
            ++step;
        }
        if (on_epoch) on_epoch(2, epoch);
    }
    return log;
}

inline std::string train_log_csv(const TrainLog& log) {
    std::string out = "epoch,step,stage,lr,loss,mpjpe\n";
    char buf[160];
    for (const LogRow& r : log) {
        std::snprintf(buf, sizeof(buf), "%d,%d,%d,%.10g,%.10g,%.10g\n", r.epoch, r.step, r.stage,
                      static_cast<double>(r.lr), static_cast<double>(r.loss),
                      static_cast<double>(r.mpjpe));
        out += buf;
    }
    return out;
}

}  // namespace pot
