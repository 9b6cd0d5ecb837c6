#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>

namespace madml {

// splitmix64 finalizer; used to turn (seed, tag...) tuples into
// well-separated substream seeds so that parallel workers draw from
// independent streams keyed by logical index, never by thread id.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> tags) {
    std::uint64_t h = splitmix64(master);
    for (std::uint64_t t : tags) h = splitmix64(h ^ t);
    return h;
}

// compile-time FNV-1a for stream tags, e.g. rng_tag("penalty.boot")
constexpr std::uint64_t rng_tag(const char* s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (; *s; ++s) h = (h ^ static_cast<std::uint64_t>(*s)) * 1099511628211ULL;
    return h;
}

// Deterministic stream: std::mt19937_64 (sequence fixed by the standard)
// plus explicitly specified uniform/normal transforms. std::*_distribution
// are implementation-defined and therefore not used.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // uniform on (0, 1]: 53-bit mantissa, never exactly zero
    double uniform() {
        return static_cast<double>((engine_() >> 11) + 1) * 0x1.0p-53;
    }

    // uniform on [lo, hi)
    double uniform(double lo, double hi) {
        double u = static_cast<double>(engine_() >> 11) * 0x1.0p-53;
        return lo + u * (hi - lo);
    }

    bool bernoulli(double p) { return uniform(0.0, 1.0) < p; }

    // Marsaglia polar method, pairs generated eagerly (no cached spare, so
    // replaying a substream from its seed reproduces the sequence exactly).
    void normal_pair(double& z0, double& z1) {
        double u, v, s;
        do {
            u = 2.0 * uniform(0.0, 1.0) - 1.0;
            v = 2.0 * uniform(0.0, 1.0) - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        const double m = std::sqrt(-2.0 * std::log(s) / s);
        z0 = u * m;
        z1 = v * m;
    }

    double normal() {
        double z0, z1;
        normal_pair(z0, z1);
        return z0;
    }

    void fill_normal(std::span<double> out) {
        std::size_t i = 0;
        while (i + 1 < out.size()) {
            normal_pair(out[i], out[i + 1]);
            i += 2;
        }
        if (i < out.size()) out[i] = normal();
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace madml
