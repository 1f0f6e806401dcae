#pragma once

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include <json.hpp>

#include "pot/errors.hpp"
#include "pot/skeleton.hpp"
#include "pot/tensor.hpp"

namespace pot {

// 3D-PCK threshold (mm) and the grid the AUC averages over.
inline constexpr real kPckThresholdMm = real(150);
inline constexpr real kAucStepMm = real(5);
inline constexpr int kAucSteps = 30;  // 5,10,...,150

struct EvalReport {
    real mpjpe_mm = 0;
    real pck = 0;   // percentage
    real auc = 0;   // in [0,1]
    std::vector<real> per_joint_mm;
    std::vector<real> per_group_mm;
};

namespace detail {

inline void check_batch(const std::vector<Tensor>& pred, const std::vector<Tensor>& gt) {
    if (pred.size() != gt.size()) throw ShapeMismatch("batch sizes differ");
    if (pred.empty()) throw ShapeMismatch("empty batch");
    for (std::size_t n = 0; n < pred.size(); ++n)
        if (pred[n].shape() != gt[n].shape() || pred[n].rank() != 2 || pred[n].dim(1) != 3)
            throw ShapeMismatch("pose " + std::to_string(n));
}

// Euclidean error per (sample, joint) after aligning both roots.
inline std::vector<std::vector<real>> aligned_errors(const std::vector<Tensor>& pred,
                                                     const std::vector<Tensor>& gt, int root) {
    check_batch(pred, gt);
    std::vector<std::vector<real>> err(pred.size());
    for (std::size_t n = 0; n < pred.size(); ++n) {
        const Tensor& p = pred[n];
        const Tensor& g = gt[n];
        const int joints = p.dim(0);
        err[n].resize(static_cast<std::size_t>(joints));
        for (int i = 0; i < joints; ++i) {
            real d2 = 0;
            for (int c = 0; c < 3; ++c) {
                const real dp = p.at(i, c) - p.at(root, c);
                const real dg = g.at(i, c) - g.at(root, c);
                d2 += (dp - dg) * (dp - dg);
            }
            err[n][static_cast<std::size_t>(i)] = std::sqrt(d2);
        }
    }
    return err;
}

}  // namespace detail

inline std::vector<real> per_joint_error(const std::vector<Tensor>& pred,
                                         const std::vector<Tensor>& gt, int root = 0) {
    auto err = detail::aligned_errors(pred, gt, root);
    const std::size_t joints = err.front().size();
    std::vector<real> out(joints, real(0));
    for (const auto& row : err)
        for (std::size_t i = 0; i < joints; ++i) out[i] += row[i];
    for (real& v : out) v /= static_cast<real>(err.size());
    return out;
}

// Mean Euclidean distance over samples and joints, roots aligned.
inline real mpjpe(const std::vector<Tensor>& pred, const std::vector<Tensor>& gt, int root = 0) {
    auto pj = per_joint_error(pred, gt, root);
    real s = 0;
    for (real v : pj) s += v;
    return s / static_cast<real>(pj.size());
}

// Percentage of (sample, joint) pairs with aligned error under the threshold.
inline real pck(const std::vector<Tensor>& pred, const std::vector<Tensor>& gt,
                real threshold_mm = kPckThresholdMm, int root = 0) {
    auto err = detail::aligned_errors(pred, gt, root);
    std::size_t hits = 0, total = 0;
    for (const auto& row : err)
        for (real v : row) {
            hits += v < threshold_mm ? 1 : 0;
            ++total;
        }
    return real(100) * static_cast<real>(hits) / static_cast<real>(total);
}

// Mean PCK over thresholds 5,10,...,150 mm, scaled into [0,1].
inline real auc(const std::vector<Tensor>& pred, const std::vector<Tensor>& gt, int root = 0) {
    real acc = 0;
    for (int k = 1; k <= kAucSteps; ++k)
        acc += pck(pred, gt, kAucStepMm * static_cast<real>(k), root);
    return acc / (real(100) * static_cast<real>(kAucSteps));
}

// MPJPE restricted to the joints of each distance group.
inline std::vector<real> per_group_error(const std::vector<Tensor>& pred,
                                         const std::vector<Tensor>& gt,
                                         const GroupAssignment& groups, int root = 0) {
    auto pj = per_joint_error(pred, gt, root);
    if (pj.size() != groups.group.size()) throw ShapeMismatch("group table vs joints");
    std::vector<real> sum(static_cast<std::size_t>(groups.num_groups), real(0));
    std::vector<int> count(static_cast<std::size_t>(groups.num_groups), 0);
    for (std::size_t i = 0; i < pj.size(); ++i) {
        sum[static_cast<std::size_t>(groups.group[i])] += pj[i];
        count[static_cast<std::size_t>(groups.group[i])] += 1;
    }
    for (std::size_t g = 0; g < sum.size(); ++g)
        if (count[g] > 0) sum[g] /= static_cast<real>(count[g]);
    return sum;
}

inline EvalReport evaluate(const std::vector<Tensor>& pred, const std::vector<Tensor>& gt,
                           const GroupAssignment& groups, int root = 0) {
    EvalReport r;
    r.per_joint_mm = per_joint_error(pred, gt, root);
    real s = 0;
    for (real v : r.per_joint_mm) s += v;
    r.mpjpe_mm = s / static_cast<real>(r.per_joint_mm.size());
    r.pck = pck(pred, gt, kPckThresholdMm, root);
    r.auc = auc(pred, gt, root);
    r.per_group_mm = per_group_error(pred, gt, groups, root);
    return r;
}

inline nlohmann::json report_to_json(const EvalReport& r) {
    return nlohmann::json{{"mpjpe_mm", r.mpjpe_mm},
                          {"pck", r.pck},
                          {"auc", r.auc},
                          {"per_joint_mm", r.per_joint_mm},
                          {"per_group_mm", r.per_group_mm}};
}

inline std::string per_group_csv(const EvalReport& r) {
    std::string out = "group,mpjpe_mm\n";
    char buf[64];
    for (std::size_t g = 0; g < r.per_group_mm.size(); ++g) {
        std::snprintf(buf, sizeof(buf), "%zu,%.10g\n", g, static_cast<double>(r.per_group_mm[g]));
        out += buf;
    }
    return out;
}

}  // namespace pot
