#pragma once

#include <cmath>
#include <cstdint>

namespace mspotts {

// Counter-style 64-bit generator (splitmix64). Cheap to seed, so every
// (ray, bin) pair gets its own stream and parallel simulation stays
// bit-identical to the serial run.
class SplitMix64 {
  public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in (0, 1).
    double uniform() {
        return (static_cast<double>(next() >> 11) + 0.5) * 0x1.0p-53;
    }

  private:
    std::uint64_t state_;
};

inline std::uint64_t hash_combine(std::uint64_t seed, std::uint64_t v) {
    return seed ^ (v + 0x9e3779b97f4a7c15ULL + (seed << 6) + (seed >> 2));
}

// Poisson sampling: Knuth inversion for small means, PTRS (Hormann 1993)
// transformed rejection for large ones. Both paths use only elementary
// functions on doubles, so draws are reproducible across platforms.
inline long long sample_poisson(double mean, SplitMix64& rng) {
    if (mean <= 0.0) return 0;
    if (mean < 30.0) {
        const double limit = std::exp(-mean);
        long long k = 0;
        double prod = rng.uniform();
        while (prod > limit) {
            ++k;
            prod *= rng.uniform();
        }
        return k;
    }
    const double b = 0.931 + 2.53 * std::sqrt(mean);
    const double a = -0.059 + 0.02483 * b;
    const double inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    const double v_r = 0.9277 - 3.6224 / (b - 2.0);
    for (;;) {
        double u = rng.uniform() - 0.5;
        double v = rng.uniform();
        double us = 0.5 - std::abs(u);
        double k = std::floor((2.0 * a / us + b) * u + mean + 0.43);
        if (us >= 0.07 && v <= v_r) return static_cast<long long>(k);
        if (k < 0.0 || (us < 0.013 && v > us)) continue;
        double lhs = std::log(v * inv_alpha / (a / (us * us) + b));
        double rhs = -mean + k * std::log(mean) - std::lgamma(k + 1.0);
        if (lhs <= rhs) return static_cast<long long>(k);
    }
}

// Standard normal draw (Box-Muller, cosine branch).
inline double sample_normal(SplitMix64& rng) {
    double u1 = rng.uniform();
    double u2 = rng.uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * 3.14159265358979323846 * u2);
}

// Sub-stream seed derivation from a label, so each consumer of randomness
// gets an independent stream from the single experiment seed.
inline std::uint64_t labeled_seed(std::uint64_t seed, const char* label) {
    std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
    for (const char* p = label; *p; ++p) {
        h ^= static_cast<unsigned char>(*p);
        h *= 0x100000001b3ULL;
    }
    return hash_combine(seed, h);
}

}  // namespace mspotts
