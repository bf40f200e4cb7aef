#pragma once

#include <cassert>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <utility>
#include <vector>

namespace atg {

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/*
  Deterministic xoshiro256** generator with hand-rolled distributions.
  The standard <random> distributions are implementation-defined, so all
  sampling goes through this class to keep traces and maps reproducible
  across compilers and platforms.
*/
class Rng {
public:
    explicit Rng(uint64_t seed) {
        uint64_t x = seed;
        for (auto &word : state_) {
            x = splitmix64(x);
            word = x;
        }
    }

    // Independent child stream; tag distinguishes call sites.
    Rng child(uint64_t tag) { return Rng(splitmix64(next() ^ splitmix64(tag))); }

    uint64_t next() {
        const uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // Uniform in [0, 1).
    double uniform01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    // Uniform integer in [lo, hi] inclusive, unbiased by rejection.
    int uniform_int(int lo, int hi) {
        assert(lo <= hi);
        const uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
        const uint64_t limit = UINT64_MAX - UINT64_MAX % span;
        uint64_t x;
        do {
            x = next();
        } while (x >= limit);
        return lo + static_cast<int>(x % span);
    }

    std::size_t uniform_index(std::size_t n) {
        assert(n > 0);
        return static_cast<std::size_t>(uniform_int(0, static_cast<int>(n) - 1));
    }

    // Uniform point in the disk of given radius around the origin.
    std::pair<double, double> uniform_disk(double radius) {
        const double r = radius * std::sqrt(uniform01());
        const double theta = 2.0 * std::numbers::pi * uniform01();
        return {r * std::cos(theta), r * std::sin(theta)};
    }

    template <typename T>
    void shuffle(std::vector<T> &v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[uniform_index(i)]);
        }
    }

private:
    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    uint64_t state_[4];
};

}  // namespace atg
