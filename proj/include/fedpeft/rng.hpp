// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

namespace fedpeft {

inline std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9e3779b97f4a7c15ull;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

/// xoshiro256++ with hand-rolled distributions. std::*_distribution is not
/// pinned across standard libraries, so every draw here is implemented
/// explicitly to keep seeded runs bit-reproducible.
class Rng {
public:
    explicit Rng(std::uint64_t seed) {
        std::uint64_t s = seed;
        for (auto& w : state_) w = splitmix64(s);
    }

    /// Independent substream keyed by (seed, a, b), e.g. (run seed, round, client id).
    static Rng stream(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
        std::uint64_t s = seed;
        std::uint64_t mixed = splitmix64(s) ^ (a * 0x9e3779b97f4a7c15ull);
        mixed = mixed * 0xff51afd7ed558ccdull + b;
        return Rng(mixed);
    }

    std::uint64_t next_u64() {
        auto rotl = [](std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); };
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

    /// Uniform in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Unbiased uniform integer in [0, n).
    std::uint64_t uniform_below(std::uint64_t n) {
        const std::uint64_t bound = ~std::uint64_t{0} / n * n;
        std::uint64_t x;
        do {
            x = next_u64();
        } while (x >= bound);
        return x % n;
    }

    /// Standard normal via Box-Muller (spare discarded to keep the stream simple).
    double normal() {
        const double u1 = 1.0 - uniform();  // (0, 1], avoids log(0)
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    /// Normal(0, stddev) resampled until |z| <= cut standard deviations.
    double truncated_normal(double stddev, double cut = 2.0) {
        double z;
        do {
            z = normal();
        } while (std::fabs(z) > cut);
        return z * stddev;
    }

    /// Gamma(alpha, 1) via Marsaglia-Tsang; alpha < 1 boosted through G(alpha+1).
    double gamma(double alpha) {
        if (alpha < 1.0) {
            const double u = uniform();
            return gamma(alpha + 1.0) * std::pow(u > 0 ? u : 0x1.0p-53, 1.0 / alpha);
        }
        const double d = alpha - 1.0 / 3.0;
        const double c = 1.0 / std::sqrt(9.0 * d);
        for (;;) {
            double x, v;
            do {
                x = normal();
                v = 1.0 + c * x;
            } while (v <= 0.0);
            v = v * v * v;
            const double u = uniform();
            if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
            if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
        }
    }

    /// One draw from Dirichlet(alpha * 1_n), normalized gamma vector.
    std::vector<double> dirichlet(double alpha, std::size_t n) {
        std::vector<double> p(n);
        double sum = 0.0;
        for (auto& pi : p) {
            pi = gamma(alpha);
            sum += pi;
        }
        if (sum <= 0.0) {  // all-underflow corner; fall back to uniform
            for (auto& pi : p) pi = 1.0 / static_cast<double>(n);
            return p;
        }
        for (auto& pi : p) pi /= sum;
        return p;
    }

    /// Fisher-Yates shuffle.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(uniform_below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::array<std::uint64_t, 4> state_{};
};

/// FNV-1a over a byte string; used for stable name and config hashes.
inline std::uint64_t fnv1a64(const void* data, std::size_t len) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

}  // namespace fedpeft
