#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace lmforge {

// Deterministic random source. std::mt19937_64 is fully specified by the
// standard, and every distribution here is hand-rolled, so streams are
// identical across platforms and compilers for a given seed.
class Rng {
public:
    explicit Rng(uint64_t seed) : engine_(seed), base_seed_(seed) {}

    uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1).
    double next_double() {
        return (next_u64() >> 11) * 0x1.0p-53;
    }

    float next_float() { return static_cast<float>(next_double()); }

    // Uniform integer in [lo, hi), hi > lo.
    int64_t uniform_int(int64_t lo, int64_t hi) {
        const uint64_t span = static_cast<uint64_t>(hi - lo);
        // Rejection sampling to avoid modulo bias.
        const uint64_t limit = UINT64_MAX - UINT64_MAX % span;
        uint64_t r = next_u64();
        while (r >= limit) r = next_u64();
        return lo + static_cast<int64_t>(r % span);
    }

    bool bernoulli(double p) { return next_double() < p; }

    // Standard normal via Box-Muller.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = next_double();
        double u2 = next_double();
        while (u1 <= 1e-300) u1 = next_double();
        const double mag = std::sqrt(-2.0 * std::log(u1));
        const double two_pi = 6.283185307179586476925286766559;
        spare_ = mag * std::sin(two_pi * u2);
        have_spare_ = true;
        return mag * std::cos(two_pi * u2);
    }

    // Normal(0, sigma) with samples outside +/- clip*sigma redrawn.
    float truncated_normal(float sigma, float clip = 2.0f) {
        double z = normal();
        while (std::abs(z) > clip) z = normal();
        return static_cast<float>(z * sigma);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        // Fisher-Yates with our own index draws.
        for (size_t i = v.size(); i > 1; --i) {
            const size_t j = static_cast<size_t>(uniform_int(0, static_cast<int64_t>(i)));
            std::swap(v[i - 1], v[j]);
        }
    }

    // Independent substream for (seed, stream) pairs, e.g. per epoch or trial.
    Rng fork(uint64_t stream) const {
        // splitmix64 over the base seed and stream index.
        uint64_t z = base_seed_ ^ (stream + 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return Rng(z ^ (z >> 31));
    }

    static Rng with_stream(uint64_t seed, uint64_t stream) {
        return Rng(seed).fork(stream);
    }

private:
    std::mt19937_64 engine_;
    uint64_t base_seed_ = 0;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace lmforge
