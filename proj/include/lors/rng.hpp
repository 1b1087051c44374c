#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "lors/tensor.hpp"

namespace lors {

/// Seeded mt19937_64 with a self-contained uniform-double mapping, so equal
/// seeds give bit-identical streams independent of the standard library's
/// distribution implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1) with 53 random mantissa bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    int uniform_int(int lo, int hi) {  // inclusive bounds
        return lo + static_cast<int>(engine_() % static_cast<std::uint64_t>(hi - lo + 1));
    }

    /// Derives an independent stream, for per-component seeding.
    Rng fork(std::uint64_t salt) {
        return Rng(next_u64() ^ (salt * 0x9e3779b97f4a7c15ull));
    }

private:
    std::mt19937_64 engine_;
};

inline void fill_uniform(Tensor& t, Rng& rng, double lo, double hi) {
    for (double& v : t.data()) v = rng.uniform(lo, hi);
}

inline void fill_constant(Tensor& t, double v) {
    std::fill(t.data().begin(), t.data().end(), v);
}

/// Kaiming-uniform with fan_in taken from the first extent: entries drawn
/// from [-b, b], b = sqrt(6 / fan_in).
inline void kaiming_uniform(Tensor& t, Rng& rng) {
    if (t.rank() < 1 || t.extent(0) <= 0) {
        throw ShapeError("kaiming_uniform on shape " + shape_str(t.shape()));
    }
    const double bound = std::sqrt(6.0 / t.extent(0));
    fill_uniform(t, rng, -bound, bound);
}

inline double kaiming_bound(int fan_in) { return std::sqrt(6.0 / fan_in); }

/// Xavier-uniform over [-b, b], b = sqrt(6 / (fan_in + fan_out)), for plain
/// dense weights.
inline void xavier_uniform(Tensor& t, Rng& rng) {
    if (t.rank() != 2) throw ShapeError("xavier_uniform on shape " + shape_str(t.shape()));
    const double bound = std::sqrt(6.0 / (t.extent(0) + t.extent(1)));
    fill_uniform(t, rng, -bound, bound);
}

}  // namespace lors
