#pragma once

#include <cstdint>
#include <random>
#include <span>

namespace sharedrep {

/// Deterministic random source.
///
/// std::mt19937_64's output sequence is fixed by the standard, but the
/// standard distributions are not, so all conversions to uniform/normal
/// values and shuffles are done here to keep results identical across
/// standard library implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    /// Derives an independent stream from (seed, stream) with SplitMix64.
    static Rng stream(std::uint64_t seed, std::uint64_t stream_id);

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform();

    /// Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Unbiased integer in [0, n). n must be > 0.
    std::uint64_t below(std::uint64_t n);

    /// Standard normal via Box-Muller (caches the second variate).
    double normal();

    template <typename T>
    void shuffle(std::span<T> values) {
        for (std::size_t i = values.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(values[i - 1], values[j]);
        }
    }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace sharedrep
