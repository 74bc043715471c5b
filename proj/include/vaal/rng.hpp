#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <utility>
#include <vector>

namespace vaal {

/// SplitMix64 generator. The distributions below are written out by hand
/// because the standard library's are not reproducible across vendors, and
/// runs must replay bit-exactly.
class Rng {
public:
    using result_type = std::uint64_t;

    explicit Rng(std::uint64_t seed = 0) : state_(seed) {}

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

    result_type operator()() {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    /// Independent child stream; `stream` names the purpose (round, repetition...).
    Rng split(std::uint64_t stream) const { return Rng(mix(state_ ^ mix(stream + 0x632BE59BD9B4E019ULL))); }

    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n). Rejection sampling, no modulo bias.
    std::uint64_t below(std::uint64_t n) {
        if (n <= 1) return 0;
        const std::uint64_t limit = max() - max() % n;
        std::uint64_t x;
        do {
            x = (*this)();
        } while (x >= limit);
        return x % n;
    }

    /// Standard normal via Box-Muller (one draw per call, the pair's twin is cached).
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[below(i)]);
        }
    }

    static std::uint64_t mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

private:
    std::uint64_t state_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

/// Seed for a named purpose derived from a master seed.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
    return Rng::mix(master ^ Rng::mix(stream * 0xD1B54A32D192ED03ULL + 1));
}

/// k distinct values sampled uniformly from `from`, returned in draw order.
template <typename T>
std::vector<T> sample_without_replacement(std::vector<T> from, std::size_t k, Rng& rng) {
    // partial Fisher-Yates
    for (std::size_t i = 0; i < k && i < from.size(); ++i) {
        std::swap(from[i], from[i + rng.below(from.size() - i)]);
    }
    from.resize(std::min(k, from.size()));
    return from;
}

}  // namespace vaal
