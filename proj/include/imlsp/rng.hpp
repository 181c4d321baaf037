#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

namespace imlsp {

// Deterministic PRNG with hand-rolled distributions. The standard library
// distributions are implementation-defined, so sampling goes through this
// wrapper to keep outputs identical for a given seed on every platform.

inline std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Derives an independent stream seed from (seed, index, salt) so parallel
// and serial evaluation of per-index work draw identical numbers. Each word
// is absorbed only after the previous one has been fully diffused.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index,
                                 std::uint64_t salt = 0) {
    std::uint64_t s = seed;
    std::uint64_t h = splitmix64(s);
    s = h ^ (index + 0x6a09e667f3bcc909ULL);
    h = splitmix64(s);
    s = h ^ (salt + 0xbb67ae8584caa73bULL);
    return splitmix64(s);
}

class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) {
        std::uint64_t sm = seed;
        for (auto& w : state_) w = splitmix64(sm);
    }

    // xoshiro256++
    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n). Rejection-free modulo bias is negligible for
    // the n used here, but do it properly anyway.
    std::uint64_t uniform_index(std::uint64_t n) {
        if (n <= 1) return 0;
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t v = next_u64();
        while (v >= limit) v = next_u64();
        return v % n;
    }

    // Standard normal via Box-Muller (no cached spare; call order stays
    // trivially reproducible).
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) *
               std::cos(2.0 * std::numbers::pi * u2);
    }

    double normal(double mean, double sd) { return mean + sd * normal(); }

    double exponential(double rate) {
        double u = uniform();
        while (u <= 0.0) u = uniform();
        return -std::log(u) / rate;
    }

    // Index drawn from unnormalized non-negative weights.
    std::size_t categorical(const std::vector<double>& weights) {
        double total = 0.0;
        for (double w : weights) total += w;
        double u = uniform() * total;
        for (std::size_t i = 0; i + 1 < weights.size(); ++i) {
            u -= weights[i];
            if (u < 0.0) return i;
        }
        return weights.empty() ? 0 : weights.size() - 1;
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = uniform_index(i);
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) {
        return (x << k) | (x >> (64 - k));
    }
    std::uint64_t state_[4];
};

}  // namespace imlsp
