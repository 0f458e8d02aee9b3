#pragma once

// Self-contained counter-free PRNG (xoshiro256++) with explicit stream
// derivation. std::random distributions are implementation-defined, so all
// draws here are spelled out; a given (seed, id...) stream produces the same
// byte-identical sequence on every run of the same binary.

#include <cmath>
#include <cstdint>
#include <numbers>

namespace diqcd {

inline std::uint64_t splitmix64(std::uint64_t& s) {
    s += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = s;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

class Rng {
public:
    Rng() : Rng(0) {}

    explicit Rng(std::uint64_t seed) {
        std::uint64_t s = seed;
        for (auto& w : state_) w = splitmix64(s);
    }

    std::uint64_t raw() {
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

    // Uniform on [0, 1) with 53 significant bits.
    double uniform01() { return double(raw() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // Standard normal via Box-Muller; pairs are cached.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        do { u1 = uniform01(); } while (u1 <= 0.0);
        const double u2 = uniform01();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) {
        return (x << k) | (x >> (64 - k));
    }

    std::uint64_t state_[4] = {};
    double spare_ = 0.0;
    bool have_spare_ = false;
};

// Hierarchical stream derivation: mixes each id into the seed so that
// (seed, a, b) and (seed, a, b') are independent for b != b'.
inline std::uint64_t derive_seed(std::uint64_t seed) { return seed; }

template <class... Ids>
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t id, Ids... rest) {
    std::uint64_t s = seed ^ (id + 0x632be59bd9b4e019ULL);
    std::uint64_t mixed = splitmix64(s);
    return derive_seed(mixed, static_cast<std::uint64_t>(rest)...);
}

template <class... Ids>
Rng make_stream(std::uint64_t seed, Ids... ids) {
    return Rng(derive_seed(seed, static_cast<std::uint64_t>(ids)...));
}

} // namespace diqcd
