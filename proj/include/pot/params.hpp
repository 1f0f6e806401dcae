#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "pot/rng.hpp"
#include "pot/tensor.hpp"

namespace pot {

// Named handle to a trainable tensor. `max_norm` marks weight matrices whose
// rows are subject to the max-norm cap after each optimizer step.
struct ParamRef {
    std::string name;
    Tensor tensor;
    bool max_norm = false;
};

// Fan-based uniform init: U(-sqrt(6/(fan_in+fan_out)), +sqrt(...)).
inline Tensor glorot_uniform(int fan_in, int fan_out, Rng& rng) {
    const real limit = std::sqrt(real(6) / static_cast<real>(fan_in + fan_out));
    Tensor t = Tensor::zeros({fan_in, fan_out});
    for (real& v : t.raw())
        v = (real(2) * static_cast<real>(rng.uniform()) - real(1)) * limit;
    t.set_requires_grad();
    return t;
}

inline Tensor normal_init(Shape shape, real stddev, Rng& rng) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (real& v : t.raw()) v = static_cast<real>(rng.gaussian()) * stddev;
    t.set_requires_grad();
    return t;
}

inline Tensor zeros_param(Shape shape) {
    Tensor t = Tensor::zeros(std::move(shape));
    t.set_requires_grad();
    return t;
}

inline Tensor ones_param(Shape shape) {
    Tensor t = Tensor::full(std::move(shape), real(1));
    t.set_requires_grad();
    return t;
}

inline std::size_t total_scalars(const std::vector<ParamRef>& params) {
    std::size_t n = 0;
    for (const ParamRef& p : params) n += p.tensor.numel();
    return n;
}

// FNV-1a over the raw parameter bytes, in listing order. Any bit flip in any
// scalar changes the digest.
inline std::uint64_t param_bytes_hash(const std::vector<ParamRef>& params) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    auto mix = [&h](const unsigned char* p, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) {
            h ^= p[i];
            h *= 0x100000001B3ULL;
        }
    };
    for (const ParamRef& p : params) {
        mix(reinterpret_cast<const unsigned char*>(p.name.data()), p.name.size());
        mix(reinterpret_cast<const unsigned char*>(p.tensor.raw().data()),
            p.tensor.raw().size() * sizeof(real));
    }
    return h;
}

}  // namespace pot
