#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace rfrec {

// splitmix64 step; used to derive independent stream seeds from one root seed.
inline std::uint64_t splitmix64(std::uint64_t& s) {
    std::uint64_t z = (s += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Stable stream key: hash-chains (seed, tag, index) so every consumer of
// randomness (per-client init, per-client noise, zeta draws, dropout,
// splitting) gets its own independent engine regardless of call order.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag, std::uint64_t index = 0) {
    std::uint64_t s = seed;
    std::uint64_t a = splitmix64(s);
    s ^= tag * 0x9e3779b97f4a7c15ULL;
    std::uint64_t b = splitmix64(s);
    s ^= index + 0x632be59bd9b4e019ULL;
    std::uint64_t c = splitmix64(s);
    return a ^ (b << 1) ^ c;
}

namespace stream {
inline constexpr std::uint64_t init   = 0x696e6974ULL;  // parameter initialization
inline constexpr std::uint64_t noise  = 0x6e6f6973ULL;  // per-client upload perturbation
inline constexpr std::uint64_t zeta   = 0x7a657461ULL;  // RFRecF branch draws
inline constexpr std::uint64_t drop   = 0x64726f70ULL;  // dropout cohort draws
inline constexpr std::uint64_t split  = 0x73706c74ULL;  // train/test partition
inline constexpr std::uint64_t synth  = 0x73796e74ULL;  // synthetic data generation
inline constexpr std::uint64_t sample = 0x73616d70ULL;  // theory-check sampling
}  // namespace stream

// Deterministic random stream. Distributions are implemented explicitly
// (not via std::*_distribution) so the draw sequence is pinned by this code
// alone, independent of the standard library in use.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    // uniform on the open interval (0,1); never returns an exact endpoint
    double uniform01() {
        return (static_cast<double>(gen_() >> 12) + 0.5) * 0x1.0p-52;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    bool bernoulli(double p) { return uniform01() < p; }

    // Box-Muller; two uniforms per draw, no cached second value
    double normal(double mean = 0.0, double sd = 1.0) {
        double u1 = uniform01();
        double u2 = uniform01();
        double r = std::sqrt(-2.0 * std::log(u1));
        return mean + sd * r * std::cos(6.283185307179586476925286766559 * u2);
    }

    // inverse-CDF Laplace(0, scale); uniform01 is open so result is finite
    double laplace(double scale) {
        double u = uniform01() - 0.5;
        double mag = -scale * std::log1p(-2.0 * std::abs(u));
        return u < 0 ? -mag : mag;
    }

private:
    std::mt19937_64 gen_;
};

}  // namespace rfrec
