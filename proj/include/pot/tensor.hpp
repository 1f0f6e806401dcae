#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "pot/errors.hpp"
#include "pot/rng.hpp"

namespace pot {

// Scalar type of every tensor. Double is the verification mode; define
// POT_REAL_FLOAT to trade precision for speed.
#ifdef POT_REAL_FLOAT
using real = float;
#else
using real = double;
#endif

using Shape = std::vector<int>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (int d : s) n *= static_cast<std::size_t>(d);
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ")";
    return os.str();
}

struct TensorNode {
    Shape shape;
    std::vector<real> data;
    std::vector<real> grad;  // sized lazily by the tape
    bool requires_grad = false;
    bool is_leaf = true;  // false for op outputs
};

using NodePtr = std::shared_ptr<TensorNode>;

// Dense n-dimensional value. Copying a Tensor copies a handle to shared
// storage; ops produce fresh storage.
class Tensor {
public:
    Tensor() : node_(std::make_shared<TensorNode>()) {}
    explicit Tensor(NodePtr n) : node_(std::move(n)) {}

    static Tensor zeros(Shape shape) {
        auto n = std::make_shared<TensorNode>();
        n->data.assign(shape_numel(shape), real(0));
        n->shape = std::move(shape);
        return Tensor(std::move(n));
    }
    static Tensor full(Shape shape, real v) {
        Tensor t = zeros(std::move(shape));
        std::fill(t.raw().begin(), t.raw().end(), v);
        return t;
    }
    static Tensor from(Shape shape, std::vector<real> values) {
        if (shape_numel(shape) != values.size())
            throw ShapeMismatch("from: " + shape_str(shape) + " vs " +
                                std::to_string(values.size()) + " values");
        auto n = std::make_shared<TensorNode>();
        n->shape = std::move(shape);
        n->data = std::move(values);
        return Tensor(std::move(n));
    }
    static Tensor scalar(real v) { return from({1}, {v}); }

    const Shape& shape() const { return node_->shape; }
    int dim(int i) const { return node_->shape.at(static_cast<std::size_t>(i)); }
    int rank() const { return static_cast<int>(node_->shape.size()); }
    std::size_t numel() const { return node_->data.size(); }

    std::vector<real>& raw() { return node_->data; }
    const std::vector<real>& raw() const { return node_->data; }

    real& at(int i) { return node_->data[static_cast<std::size_t>(i)]; }
    real at(int i) const { return node_->data[static_cast<std::size_t>(i)]; }
    real& at(int i, int j) {
        return node_->data[static_cast<std::size_t>(i) * dim(1) + j];
    }
    real at(int i, int j) const {
        return node_->data[static_cast<std::size_t>(i) * dim(1) + j];
    }

    real item() const {
        if (numel() != 1) throw ShapeMismatch("item() on " + shape_str(shape()));
        return node_->data[0];
    }

    bool requires_grad() const { return node_->requires_grad; }
    Tensor& set_requires_grad(bool rg = true) {
        node_->requires_grad = rg;
        return *this;
    }

    // Copy of the accumulated gradient (zeros if never touched by a tape).
    Tensor grad() const {
        Tensor g = zeros(shape());
        if (node_->grad.size() == g.numel()) g.raw() = node_->grad;
        return g;
    }

    const NodePtr& node() const { return node_; }

    bool all_finite() const {
        for (real v : node_->data)
            if (!std::isfinite(v)) return false;
        return true;
    }

private:
    NodePtr node_;
};

using GradMap = std::unordered_map<const TensorNode*, Tensor>;

// Wengert list: ops append backward closures in execution order during the
// forward pass; replaying them in reverse is a reverse topological sweep.
// One tape per training step; backward consumes it.
class Tape {
public:
    static Tape*& current_slot() {
        thread_local Tape* t = nullptr;
        return t;
    }
    static Tape* current() { return current_slot(); }

    // Activates a tape for the enclosing scope (ops record only while some
    // tape is active).
    struct Scope {
        explicit Scope(Tape& t) : prev_(current_slot()) { current_slot() = &t; }
        ~Scope() { current_slot() = prev_; }
        Scope(const Scope&) = delete;
        Scope& operator=(const Scope&) = delete;

    private:
        Tape* prev_;
    };

    // Suspends recording for the enclosing scope.
    struct Pause {
        Pause() : prev_(current_slot()) { current_slot() = nullptr; }
        ~Pause() { current_slot() = prev_; }
        Pause(const Pause&) = delete;
        Pause& operator=(const Pause&) = delete;

    private:
        Tape* prev_;
    };

    // Ensures a zeroed grad buffer the first time a node appears on this
    // tape; leaves are collected for the gradient map.
    void touch(const NodePtr& n) {
        if (seen_.insert(n.get()).second) {
            n->grad.assign(n->data.size(), real(0));
            if (n->is_leaf && n->requires_grad) leaves_.push_back(n);
        }
    }

    void record(std::function<void()> backward_fn) {
        consumed_ = false;  // fresh recordings re-arm the tape
        entries_.push_back(std::move(backward_fn));
    }

    // Replays the list in reverse and returns one gradient per
    // requires_grad leaf encountered during the forward pass.
    GradMap backward(const Tensor& loss) {
        if (consumed_) throw TapeConsumed("backward called twice without re-forward");
        if (loss.numel() != 1) throw NonScalarLoss("loss shape " + shape_str(loss.shape()));
        auto& ln = *loss.node();
        if (ln.grad.size() == 1) ln.grad[0] = real(1);
        for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
        GradMap out;
        for (const auto& leaf : leaves_) {
            Tensor g = Tensor::zeros(leaf->shape);
            g.raw() = leaf->grad;
            out.emplace(leaf.get(), std::move(g));
        }
        entries_.clear();
        seen_.clear();
        leaves_.clear();
        consumed_ = true;
        return out;
    }

    std::size_t size() const { return entries_.size(); }

private:
    std::vector<std::function<void()>> entries_;
    std::unordered_set<TensorNode*> seen_;
    std::vector<NodePtr> leaves_;
    bool consumed_ = false;
};

inline GradMap backward(const Tensor& loss, Tape& tape) { return tape.backward(loss); }

namespace detail {

inline Tape* tape_for(std::initializer_list<const Tensor*> inputs) {
    Tape* t = Tape::current();
    if (!t) return nullptr;
    for (const Tensor* in : inputs)
        if (in->requires_grad()) return t;
    return nullptr;
}

// Marks an op output as a grad-carrying interior node and registers all
// participating nodes on the tape.
inline void enlist(Tape* t, Tensor& out, std::initializer_list<const Tensor*> inputs) {
    out.node()->is_leaf = false;
    out.node()->requires_grad = true;
    for (const Tensor* in : inputs) t->touch(in->node());
    t->touch(out.node());
}

// Per-output-dim element strides of `in` broadcast against `out`
// (0 where a dimension is replicated).
inline std::vector<std::size_t> bcast_strides(const Shape& in, const Shape& out) {
    if (in.size() > out.size())
        throw ShapeMismatch("broadcast " + shape_str(in) + " -> " + shape_str(out));
    std::vector<std::size_t> st(out.size(), 0);
    std::size_t run = 1;
    const int off = static_cast<int>(out.size() - in.size());
    for (int i = static_cast<int>(in.size()) - 1; i >= 0; --i) {
        if (in[i] == out[i + off]) {
            st[i + off] = run;
        } else if (in[i] == 1) {
            st[i + off] = 0;
        } else {
            throw ShapeMismatch("broadcast " + shape_str(in) + " -> " + shape_str(out));
        }
        run *= static_cast<std::size_t>(in[i]);
    }
    return st;
}

inline Shape broadcast_shape(const Shape& a, const Shape& b) {
    const std::size_t r = std::max(a.size(), b.size());
    Shape out(r, 1);
    for (std::size_t i = 0; i < r; ++i) {
        const int da = i < r - a.size() ? 1 : a[i - (r - a.size())];
        const int db = i < r - b.size() ? 1 : b[i - (r - b.size())];
        if (da != db && da != 1 && db != 1)
            throw ShapeMismatch("broadcast " + shape_str(a) + " vs " + shape_str(b));
        out[i] = std::max(da, db);
    }
    return out;
}

// Visits every element of `out_shape`, handing the linear offsets into the
// output and both broadcast inputs.
template <class F>
void for_each_bcast(const Shape& out_shape, const std::vector<std::size_t>& sa,
                    const std::vector<std::size_t>& sb, F&& f) {
    const std::size_t n = shape_numel(out_shape);
    const int r = static_cast<int>(out_shape.size());
    std::vector<int> idx(static_cast<std::size_t>(r), 0);
    std::size_t ia = 0, ib = 0;
    for (std::size_t oi = 0; oi < n; ++oi) {
        f(oi, ia, ib);
        for (int d = r - 1; d >= 0; --d) {
            ++idx[d];
            ia += sa[d];
            ib += sb[d];
            if (idx[d] < out_shape[d]) break;
            ia -= static_cast<std::size_t>(out_shape[d]) * sa[d];
            ib -= static_cast<std::size_t>(out_shape[d]) * sb[d];
            idx[d] = 0;
        }
    }
}

enum class BinKind { add, sub, mul, div };

inline Tensor binary_op(const Tensor& a, const Tensor& b, BinKind kind) {
    const Shape os = broadcast_shape(a.shape(), b.shape());
    const auto sa = bcast_strides(a.shape(), os);
    const auto sb = bcast_strides(b.shape(), os);
    Tensor out = Tensor::zeros(os);
    const auto& av = a.raw();
    const auto& bv = b.raw();
    auto& ov = out.raw();
    for_each_bcast(os, sa, sb, [&](std::size_t oi, std::size_t ia, std::size_t ib) {
        switch (kind) {
            case BinKind::add: ov[oi] = av[ia] + bv[ib]; break;
            case BinKind::sub: ov[oi] = av[ia] - bv[ib]; break;
            case BinKind::mul: ov[oi] = av[ia] * bv[ib]; break;
            case BinKind::div: ov[oi] = av[ia] / bv[ib]; break;
        }
    });
    if (Tape* t = tape_for({&a, &b})) {
        enlist(t, out, {&a, &b});
        NodePtr an = a.node(), bn = b.node(), on = out.node();
        t->record([an, bn, on, os, sa, sb, kind]() {
            for_each_bcast(os, sa, sb, [&](std::size_t oi, std::size_t ia, std::size_t ib) {
                const real g = on->grad[oi];
                switch (kind) {
                    case BinKind::add:
                        if (an->requires_grad) an->grad[ia] += g;
                        if (bn->requires_grad) bn->grad[ib] += g;
                        break;
                    case BinKind::sub:
                        if (an->requires_grad) an->grad[ia] += g;
                        if (bn->requires_grad) bn->grad[ib] -= g;
                        break;
                    case BinKind::mul:
                        if (an->requires_grad) an->grad[ia] += g * bn->data[ib];
                        if (bn->requires_grad) bn->grad[ib] += g * an->data[ia];
                        break;
                    case BinKind::div: {
                        const real d = bn->data[ib];
                        if (an->requires_grad) an->grad[ia] += g / d;
                        if (bn->requires_grad) bn->grad[ib] -= g * an->data[ia] / (d * d);
                        break;
                    }
                }
            });
        });
    }
    return out;
}

// Elementwise y = f(x) with dy/dx given by dfn(x, y).
template <class Fwd, class Dfn>
Tensor unary_op(const Tensor& a, Fwd&& fwd, Dfn&& dfn) {
    Tensor out = Tensor::zeros(a.shape());
    const auto& av = a.raw();
    auto& ov = out.raw();
    for (std::size_t i = 0; i < av.size(); ++i) ov[i] = fwd(av[i]);
    if (Tape* t = tape_for({&a})) {
        enlist(t, out, {&a});
        NodePtr an = a.node(), on = out.node();
        auto d = std::forward<Dfn>(dfn);
        t->record([an, on, d]() {
            for (std::size_t i = 0; i < an->data.size(); ++i)
                an->grad[i] += on->grad[i] * d(an->data[i], on->data[i]);
        });
    }
    return out;
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) { return detail::binary_op(a, b, detail::BinKind::add); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return detail::binary_op(a, b, detail::BinKind::sub); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return detail::binary_op(a, b, detail::BinKind::mul); }
inline Tensor div(const Tensor& a, const Tensor& b) { return detail::binary_op(a, b, detail::BinKind::div); }

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }

inline Tensor mul_scalar(const Tensor& a, real s) {
    return detail::unary_op(
        a, [s](real x) { return x * s; }, [s](real, real) { return s; });
}
inline Tensor add_scalar(const Tensor& a, real s) {
    return detail::unary_op(
        a, [s](real x) { return x + s; }, [](real, real) { return real(1); });
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        throw ShapeMismatch("matmul " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor out = Tensor::zeros({m, n});
    const auto& av = a.raw();
    const auto& bv = b.raw();
    auto& ov = out.raw();
    for (int i = 0; i < m; ++i)
        for (int p = 0; p < k; ++p) {
            const real x = av[static_cast<std::size_t>(i) * k + p];
            if (x == real(0)) continue;
            const std::size_t bo = static_cast<std::size_t>(p) * n;
            const std::size_t oo = static_cast<std::size_t>(i) * n;
            for (int j = 0; j < n; ++j) ov[oo + j] += x * bv[bo + j];
        }
    if (Tape* t = detail::tape_for({&a, &b})) {
        detail::enlist(t, out, {&a, &b});
        NodePtr an = a.node(), bn = b.node(), on = out.node();
        t->record([an, bn, on, m, k, n]() {
            // dA += dC * B^T, dB += A^T * dC
            if (an->requires_grad)
                for (int i = 0; i < m; ++i)
                    for (int p = 0; p < k; ++p) {
                        real acc = 0;
                        for (int j = 0; j < n; ++j)
                            acc += on->grad[static_cast<std::size_t>(i) * n + j] *
                                   bn->data[static_cast<std::size_t>(p) * n + j];
                        an->grad[static_cast<std::size_t>(i) * k + p] += acc;
                    }
            if (bn->requires_grad)
                for (int p = 0; p < k; ++p)
                    for (int j = 0; j < n; ++j) {
                        real acc = 0;
                        for (int i = 0; i < m; ++i)
                            acc += an->data[static_cast<std::size_t>(i) * k + p] *
                                   on->grad[static_cast<std::size_t>(i) * n + j];
                        bn->grad[static_cast<std::size_t>(p) * n + j] += acc;
                    }
        });
    }
    return out;
}

inline Tensor transpose(const Tensor& a) {
    if (a.rank() != 2) throw ShapeMismatch("transpose needs rank 2, got " + shape_str(a.shape()));
    const int m = a.dim(0), n = a.dim(1);
    Tensor out = Tensor::zeros({n, m});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out.at(j, i) = a.at(i, j);
    if (Tape* t = detail::tape_for({&a})) {
        detail::enlist(t, out, {&a});
        NodePtr an = a.node(), on = out.node();
        t->record([an, on, m, n]() {
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j)
                    an->grad[static_cast<std::size_t>(i) * n + j] +=
                        on->grad[static_cast<std::size_t>(j) * m + i];
        });
    }
    return out;
}

inline Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_numel(shape) != a.numel())
        throw ShapeMismatch("reshape " + shape_str(a.shape()) + " -> " + shape_str(shape));
    Tensor out = Tensor::zeros(std::move(shape));
    out.raw() = a.raw();
    if (Tape* t = detail::tape_for({&a})) {
        detail::enlist(t, out, {&a});
        NodePtr an = a.node(), on = out.node();
        t->record([an, on]() {
            for (std::size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += on->grad[i];
        });
    }
    return out;
}

inline Tensor concat_last_dim(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeMismatch("concat_last_dim of nothing");
    const Shape& lead = parts.front().shape();
    int total_last = 0;
    for (const Tensor& p : parts) {
        if (p.rank() != static_cast<int>(lead.size()))
            throw ShapeMismatch("concat_last_dim rank mismatch");
        for (std::size_t d = 0; d + 1 < lead.size(); ++d)
            if (p.shape()[d] != lead[d]) throw ShapeMismatch("concat_last_dim dim mismatch");
        total_last += p.shape().back();
    }
    Shape os = lead;
    os.back() = total_last;
    Tensor out = Tensor::zeros(os);
    const std::size_t rows = out.numel() / static_cast<std::size_t>(total_last);
    std::size_t col0 = 0;
    for (const Tensor& p : parts) {
        const std::size_t w = static_cast<std::size_t>(p.shape().back());
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < w; ++c)
                out.raw()[r * total_last + col0 + c] = p.raw()[r * w + c];
        col0 += w;
    }
    bool any_rg = false;
    for (const Tensor& p : parts) any_rg |= p.requires_grad();
    if (Tape* t = Tape::current(); t && any_rg) {
        out.node()->is_leaf = false;
        out.node()->requires_grad = true;
        std::vector<NodePtr> ins;
        ins.reserve(parts.size());
        for (const Tensor& p : parts) {
            t->touch(p.node());
            ins.push_back(p.node());
        }
        t->touch(out.node());
        NodePtr on = out.node();
        t->record([ins, on, rows, total_last]() {
            std::size_t c0 = 0;
            for (const NodePtr& in : ins) {
                const std::size_t w = static_cast<std::size_t>(in->shape.back());
                if (in->requires_grad)
                    for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t c = 0; c < w; ++c)
                            in->grad[r * w + c] +=
                                on->grad[r * static_cast<std::size_t>(total_last) + c0 + c];
                c0 += w;
            }
        });
    }
    return out;
}

inline Tensor slice_last_dim(const Tensor& a, int start, int len) {
    const int last = a.shape().back();
    if (start < 0 || len <= 0 || start + len > last)
        throw ShapeMismatch("slice_last_dim [" + std::to_string(start) + "," +
                            std::to_string(start + len) + ") of " + shape_str(a.shape()));
    Shape os = a.shape();
    os.back() = len;
    Tensor out = Tensor::zeros(os);
    const std::size_t rows = a.numel() / static_cast<std::size_t>(last);
    for (std::size_t r = 0; r < rows; ++r)
        for (int c = 0; c < len; ++c)
            out.raw()[r * len + c] = a.raw()[r * last + start + c];
    if (Tape* t = detail::tape_for({&a})) {
        detail::enlist(t, out, {&a});
        NodePtr an = a.node(), on = out.node();
        t->record([an, on, rows, last, start, len]() {
            for (std::size_t r = 0; r < rows; ++r)
                for (int c = 0; c < len; ++c)
                    an->grad[r * last + start + c] += on->grad[r * len + c];
        });
    }
    return out;
}

// Softmax over the last dimension, max-shifted per slice.
inline Tensor softmax_lastdim(const Tensor& a) {
    if (!a.all_finite()) throw NonFiniteInput("softmax_lastdim");
    const int w = a.shape().back();
    const std::size_t rows = a.numel() / static_cast<std::size_t>(w);
    Tensor out = Tensor::zeros(a.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const real* x = a.raw().data() + r * w;
        real* y = out.raw().data() + r * w;
        real mx = x[0];
        for (int c = 1; c < w; ++c) mx = std::max(mx, x[c]);
        real sum = 0;
        for (int c = 0; c < w; ++c) {
            y[c] = std::exp(x[c] - mx);
            sum += y[c];
        }
        for (int c = 0; c < w; ++c) y[c] /= sum;
    }
    if (Tape* t = detail::tape_for({&a})) {
        detail::enlist(t, out, {&a});
        NodePtr an = a.node(), on = out.node();
        t->record([an, on, rows, w]() {
            for (std::size_t r = 0; r < rows; ++r) {
                const real* y = on->data.data() + r * w;
                const real* gy = on->grad.data() + r * w;
                real dot = 0;
                for (int c = 0; c < w; ++c) dot += gy[c] * y[c];
                for (int c = 0; c < w; ++c) an->grad[r * w + c] += y[c] * (gy[c] - dot);
            }
        });
    }
    return out;
}

// Layer normalization over the last dimension; gamma and beta are length-C
// vectors applied to every slice.
inline Tensor layernorm(const Tensor& a, const Tensor& gamma, const Tensor& beta,
                        real eps = real(1e-5)) {
    const int w = a.shape().back();
    if (gamma.numel() != static_cast<std::size_t>(w) || beta.numel() != static_cast<std::size_t>(w))
        throw ShapeMismatch("layernorm affine params vs width " + std::to_string(w));
    const std::size_t rows = a.numel() / static_cast<std::size_t>(w);
    Tensor out = Tensor::zeros(a.shape());
    std::vector<real> xhat(a.numel());
    std::vector<real> inv_sd(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const real* x = a.raw().data() + r * w;
        real mean = 0;
        for (int c = 0; c < w; ++c) mean += x[c];
        mean /= w;
        real var = 0;
        for (int c = 0; c < w; ++c) var += (x[c] - mean) * (x[c] - mean);
        var /= w;
        const real inv = real(1) / std::sqrt(var + eps);
        inv_sd[r] = inv;
        for (int c = 0; c < w; ++c) {
            xhat[r * w + c] = (x[c] - mean) * inv;
            out.raw()[r * w + c] = gamma.raw()[c] * xhat[r * w + c] + beta.raw()[c];
        }
    }
    if (Tape* t = detail::tape_for({&a, &gamma, &beta})) {
        detail::enlist(t, out, {&a, &gamma, &beta});
        NodePtr an = a.node(), gn = gamma.node(), bn = beta.node(), on = out.node();
        auto xh = std::make_shared<std::vector<real>>(std::move(xhat));
        auto isd = std::make_shared<std::vector<real>>(std::move(inv_sd));
        t->record([an, gn, bn, on, xh, isd, rows, w]() {
            for (std::size_t r = 0; r < rows; ++r) {
                const real* gy = on->grad.data() + r * w;
                const real* h = xh->data() + r * w;
                if (gn->requires_grad)
                    for (int c = 0; c < w; ++c) gn->grad[c] += gy[c] * h[c];
                if (bn->requires_grad)
                    for (int c = 0; c < w; ++c) bn->grad[c] += gy[c];
                if (an->requires_grad) {
                    real m1 = 0, m2 = 0;  // mean(dxhat), mean(dxhat*xhat)
                    for (int c = 0; c < w; ++c) {
                        const real dxh = gy[c] * gn->data[c];
                        m1 += dxh;
                        m2 += dxh * h[c];
                    }
                    m1 /= w;
                    m2 /= w;
                    for (int c = 0; c < w; ++c) {
                        const real dxh = gy[c] * gn->data[c];
                        an->grad[r * w + c] += (*isd)[r] * (dxh - m1 - h[c] * m2);
                    }
                }
            }
        });
    }
    return out;
}

// Exact-erf GELU: x * Phi(x).
inline Tensor gelu(const Tensor& a) {
    constexpr real inv_sqrt2 = real(0.7071067811865475244);
    constexpr real inv_sqrt2pi = real(0.3989422804014326779);
    return detail::unary_op(
        a,
        [](real x) { return real(0.5) * x * (real(1) + std::erf(x * inv_sqrt2)); },
        [](real x, real) {
            const real cdf = real(0.5) * (real(1) + std::erf(x * inv_sqrt2));
            return cdf + x * inv_sqrt2pi * std::exp(real(-0.5) * x * x);
        });
}

// Inverted dropout: survivors are scaled by 1/(1-rate) so inference is the
// identity. rate == 0 or eval mode leaves the input (and the rng) untouched.
inline Tensor dropout(const Tensor& a, real rate, Rng& rng, bool training) {
    if (rate < real(0) || rate >= real(1))
        throw ConfigError("dropout rate " + std::to_string(rate));
    if (!training || rate == real(0)) return a;
    const real keep_scale = real(1) / (real(1) - rate);
    Tensor out = Tensor::zeros(a.shape());
    auto mask = std::make_shared<std::vector<real>>(a.numel());
    for (std::size_t i = 0; i < a.numel(); ++i) {
        (*mask)[i] = (static_cast<real>(rng.uniform()) < rate) ? real(0) : keep_scale;
        out.raw()[i] = a.raw()[i] * (*mask)[i];
    }
    if (Tape* t = detail::tape_for({&a})) {
        detail::enlist(t, out, {&a});
        NodePtr an = a.node(), on = out.node();
        t->record([an, on, mask]() {
            for (std::size_t i = 0; i < an->grad.size(); ++i)
                an->grad[i] += on->grad[i] * (*mask)[i];
        });
    }
    return out;
}

inline Tensor exp_op(const Tensor& a) {
    return detail::unary_op(
        a, [](real x) { return std::exp(x); }, [](real, real y) { return y; });
}

inline Tensor log_op(const Tensor& a) {
    for (real v : a.raw())
        if (!(v > real(0))) throw NonFiniteInput("log of non-positive value");
    return detail::unary_op(
        a, [](real x) { return std::log(x); }, [](real x, real) { return real(1) / x; });
}

inline Tensor sqrt_op(const Tensor& a) {
    for (real v : a.raw())
        if (v < real(0)) throw NonFiniteInput("sqrt of negative value");
    return detail::unary_op(
        a, [](real x) { return std::sqrt(x); },
        [](real, real y) { return real(0.5) / y; });
}

// Lower clamp; gradient passes only where the input is above the floor.
inline Tensor clamp_min(const Tensor& a, real floor) {
    return detail::unary_op(
        a, [floor](real x) { return x < floor ? floor : x; },
        [floor](real x, real) { return x < floor ? real(0) : real(1); });
}

inline Tensor sum_all(const Tensor& a) {
    real s = 0;
    for (real v : a.raw()) s += v;
    Tensor out = Tensor::scalar(s);
    if (Tape* t = detail::tape_for({&a})) {
        detail::enlist(t, out, {&a});
        NodePtr an = a.node(), on = out.node();
        t->record([an, on]() {
            for (std::size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += on->grad[0];
        });
    }
    return out;
}

inline Tensor mean_all(const Tensor& a) {
    return mul_scalar(sum_all(a), real(1) / static_cast<real>(a.numel()));
}

// Sum over the last dimension, kept as a size-1 axis.
inline Tensor sum_lastdim(const Tensor& a) {
    const int w = a.shape().back();
    const std::size_t rows = a.numel() / static_cast<std::size_t>(w);
    Shape os = a.shape();
    os.back() = 1;
    Tensor out = Tensor::zeros(os);
    for (std::size_t r = 0; r < rows; ++r) {
        real s = 0;
        for (int c = 0; c < w; ++c) s += a.raw()[r * w + c];
        out.raw()[r] = s;
    }
    if (Tape* t = detail::tape_for({&a})) {
        detail::enlist(t, out, {&a});
        NodePtr an = a.node(), on = out.node();
        t->record([an, on, rows, w]() {
            for (std::size_t r = 0; r < rows; ++r)
                for (int c = 0; c < w; ++c) an->grad[r * w + c] += on->grad[r];
        });
    }
    return out;
}

// Draws from N(0,1); the result is a constant leaf.
inline Tensor gaussian(Rng& rng, Shape shape) {
    Tensor out = Tensor::zeros(std::move(shape));
    for (real& v : out.raw()) v = static_cast<real>(rng.gaussian());
    return out;
}

}  // namespace pot
