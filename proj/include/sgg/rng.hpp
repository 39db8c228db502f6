#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

#include "sgg/errors.hpp"

namespace sgg {

// Combine a base seed, a stream tag and a counter into one 64-bit seed.
// Used to derive independent deterministic streams (init / permutation /
// negative sampling / ...) from a single run seed, so that training can be
// resumed at any step without replaying the RNG history.
inline std::uint64_t mix_seed(std::uint64_t seed, std::string_view tag, std::uint64_t counter = 0) {
    std::uint64_t h = 1469598103934665603ull; // FNV-1a
    for (char c : tag) {
        h ^= static_cast<std::uint64_t>(static_cast<unsigned char>(c));
        h *= 1099511628211ull;
    }
    std::uint64_t z = seed ^ h ^ (counter * 0x9e3779b97f4a7c15ull);
    // splitmix64 finalizer
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

// mt19937_64 with hand-rolled distribution layers. The standard engine is
// bit-specified; the distributions in <random> are not, so sampling here goes
// through explicit formulas to keep streams identical across standard
// libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform01() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    // Uniform index in [0, n).
    std::size_t uniform_index(std::size_t n) {
        if (n == 0) throw DomainError("uniform_index: n must be positive");
        std::size_t i = static_cast<std::size_t>(uniform01() * static_cast<double>(n));
        return i < n ? i : n - 1;
    }

    // Standard normal via basic Box-Muller (one value per two uniforms; no
    // cached state, so the stream position is a pure function of call count).
    double normal() {
        double u1 = uniform01();
        double u2 = uniform01();
        while (u1 <= 0.0) u1 = uniform01();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    // Sample an index from an (unnormalized is fine) nonnegative weight vector
    // by CDF inversion.
    std::size_t discrete(const std::vector<double>& weights) {
        double total = 0.0;
        for (double w : weights) total += w;
        if (total <= 0.0) throw DomainError("discrete: weights must have positive mass");
        double r = uniform01() * total;
        double acc = 0.0;
        for (std::size_t i = 0; i < weights.size(); ++i) {
            acc += weights[i];
            if (r < acc) return i;
        }
        return weights.size() - 1;
    }

    // Fisher-Yates shuffle driven by uniform_index.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = uniform_index(i);
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 gen_;
};

} // namespace sgg
