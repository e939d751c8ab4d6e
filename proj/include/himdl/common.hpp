#pragma once

// Shared numeric utilities: a portable seeded RNG, log-space reductions,
// and the error types the CLI maps to exit codes.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace himdl {

inline constexpr double kLogTwoPi = 1.8378770664093454836;  // ln(2*pi)
inline constexpr double kProbEps = 1e-7;    // clamp for p inside log terms
inline constexpr double kSigmaFloor = 1e-3; // lower bound on lognormal scale

// Bad run configuration (CLI exit code 2).
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Training produced a non-finite loss (CLI exit code 3).
struct DivergenceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// File could not be read/written/parsed (CLI exit code 4).
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// mt19937_64 with hand-rolled uniform/normal mappings so that streams are
// reproducible across standard libraries (std distributions are not).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    // Uniform on (0, 1]: 53-bit mantissa, never returns 0.
    double uniform() {
        return static_cast<double>((gen_() >> 11) + 1) * 0x1.0p-53;
    }

    // Standard normal via Box-Muller; two uniforms per draw, no cached state.
    double normal() {
        const double u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) *
               std::cos(2.0 * std::numbers::pi * u2);
    }

    // Derive an independent stream (for per-split / per-epoch seeding).
    Rng spawn(std::uint64_t salt) {
        return Rng(next_u64() ^ (0x9e3779b97f4a7c15ULL * (salt + 1)));
    }

private:
    std::mt19937_64 gen_;
};

inline double log_sum_exp(std::span<const double> xs) {
    double m = -std::numeric_limits<double>::infinity();
    for (double x : xs) m = std::max(m, x);
    if (!std::isfinite(m)) return m;  // all -inf (or a NaN/inf poisoned max)
    double acc = 0.0;
    for (double x : xs) acc += std::exp(x - m);
    return m + std::log(acc);
}

// Permutation-invariant mean: values are sorted, then pairwise-summed, so any
// reordering of the inputs produces the bit-identical result.
inline double canonical_mean(std::vector<double> xs) {
    if (xs.empty()) throw std::invalid_argument("canonical_mean: empty input");
    std::sort(xs.begin(), xs.end());
    // pairwise reduction in place
    std::size_t n = xs.size();
    while (n > 1) {
        std::size_t half = n / 2;
        for (std::size_t i = 0; i < half; ++i)
            xs[i] = xs[2 * i] + xs[2 * i + 1];
        if (n % 2 == 1) {
            xs[half] = xs[n - 1];
            ++half;
        }
        n = half;
    }
    return xs[0] / static_cast<double>(xs.size());
}

}  // namespace himdl
