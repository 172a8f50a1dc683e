// sscsr - seeded random streams with fully specified draw algorithms.
//
// All randomness in the project flows through RngStream so that a given
// (seed, draw sequence) reproduces bit-identically on every build. The
// distributions are implemented here instead of <random>'s because the
// standard leaves their algorithms unspecified.
#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace sscsr {

// splitmix64: mixes one 64-bit word. Used for hashing seed material.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Order-sensitive combine of arbitrary seed material into one sub-seed.
// hash_seed(s, a, b) != hash_seed(s, b, a) in general.
inline std::uint64_t hash_seed(std::uint64_t seed) { return splitmix64(seed); }

template <typename... Rest>
std::uint64_t hash_seed(std::uint64_t seed, std::uint64_t head, Rest... rest) {
    return hash_seed(splitmix64(seed ^ splitmix64(head)), rest...);
}

// A deterministic random stream. mt19937_64 output is pinned by the standard;
// every distribution below is pinned by this file.
class RngStream {
public:
    explicit RngStream(std::uint64_t seed) : engine_(splitmix64(seed)) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform on [0, 1) with 53 random bits.
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Uniform on [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n). Rejection sampling, no modulo bias.
    std::uint64_t uniform_index(std::uint64_t n) {
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x;
        do {
            x = next_u64();
        } while (x >= limit);
        return x % n;
    }

    // Standard normal via Box-Muller. Draws pairs; caches the second value.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1, u2;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double t = 2.0 * M_PI * u2;
        spare_ = r * std::sin(t);
        have_spare_ = true;
        return r * std::cos(t);
    }

    // In-place Fisher-Yates shuffle.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(uniform_index(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // Random permutation of 0..n-1.
    std::vector<std::size_t> permutation(std::size_t n) {
        std::vector<std::size_t> p(n);
        for (std::size_t i = 0; i < n; ++i) p[i] = i;
        shuffle(p);
        return p;
    }

private:
    std::mt19937_64 engine_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

} // namespace sscsr
