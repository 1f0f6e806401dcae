#pragma once

#include <cmath>
#include <cstdint>

namespace pot {

// Deterministic 64-bit generator (splitmix64: Weyl counter + bit mixer).
// The stream depends only on the seed value, not on platform or stdlib,
// so identical seeds replay identical streams everywhere.
//
// Gaussian draws use the Marsaglia polar method on top of the uniform
// stream; it consumes a variable but seed-determined number of uniforms.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // Uniform on [0, 1), 53-bit resolution.
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Standard normal. Caches the second variate of each polar-method pair.
    double gaussian() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u, v, s;
        do {
            u = 2.0 * uniform() - 1.0;
            v = 2.0 * uniform() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        const double m = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * m;
        has_spare_ = true;
        return u * m;
    }

    // Independent child stream; derivation depends only on (seed, stream id).
    Rng split(std::uint64_t stream) const {
        Rng probe(state_ ^ (0xD1B54A32D192ED03ULL * (stream + 1)));
        return Rng(probe.next_u64());
    }

    std::uint64_t state() const { return state_; }
    void restore(std::uint64_t state) {
        state_ = state;
        has_spare_ = false;
    }

private:
    std::uint64_t state_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace pot
