#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace dualtower {

// Deterministic RNG. mt19937_64 output is pinned by the standard, but the
// std distributions are not, so uniform/normal are derived here by hand.
// Two builds with the same seed must produce identical streams.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed), seed_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // uniform in [0, 1) with 53 bits of mantissa
    double uniform() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller without a cached spare: one normal costs two uniforms, which
    // keeps the stream position independent of caller interleaving.
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) {
            u1 = uniform();
        }
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // index in [0, n); n must be positive
    std::size_t index(std::size_t n) {
        return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n;
    }

    // Independent child stream keyed by a label, so adding a consumer does not
    // shift every other stream.
    Rng derive(std::string_view label) const {
        std::uint64_t h = 0xcbf29ce484222325ull;
        for (const char c : label) {
            h ^= static_cast<std::uint8_t>(c);
            h *= 0x100000001b3ull;
        }
        return Rng(splitmix64(seed_ ^ h));
    }

    Rng derive(std::uint64_t tag) const { return Rng(splitmix64(seed_ ^ tag)); }

private:
    static std::uint64_t splitmix64(std::uint64_t x) {
        x += 0x9e3779b97f4a7c15ull;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
        return x ^ (x >> 31);
    }

    std::mt19937_64 engine_;
    std::uint64_t seed_ = 0;
};

}  // namespace dualtower
