#pragma once

#include <cmath>
#include <cstdint>

namespace mvsde {

// Philox4x32-10 counter-based generator (Salmon et al., SC'11). Every normal
// variate is addressed by (seed, stream, particle, step, coordinate), so a
// simulation is reproducible bit-for-bit regardless of how the particle loop
// is scheduled across threads, and coupled runs share noise by construction.
struct Philox4x32 {
    static constexpr std::uint32_t M0 = 0xD2511F53u;
    static constexpr std::uint32_t M1 = 0xCD9E8D57u;
    static constexpr std::uint32_t W0 = 0x9E3779B9u;
    static constexpr std::uint32_t W1 = 0xBB67AE85u;

    struct Block {
        std::uint32_t v[4];
    };

    static Block run(std::uint32_t c0, std::uint32_t c1, std::uint32_t c2, std::uint32_t c3,
                     std::uint32_t k0, std::uint32_t k1) {
        for (int round = 0; round < 10; ++round) {
            const std::uint64_t p0 = static_cast<std::uint64_t>(M0) * c0;
            const std::uint64_t p1 = static_cast<std::uint64_t>(M1) * c2;
            const std::uint32_t hi0 = static_cast<std::uint32_t>(p0 >> 32);
            const std::uint32_t lo0 = static_cast<std::uint32_t>(p0);
            const std::uint32_t hi1 = static_cast<std::uint32_t>(p1 >> 32);
            const std::uint32_t lo1 = static_cast<std::uint32_t>(p1);
            const std::uint32_t n0 = hi1 ^ c1 ^ k0;
            const std::uint32_t n1 = lo1;
            const std::uint32_t n2 = hi0 ^ c3 ^ k1;
            const std::uint32_t n3 = lo0;
            c0 = n0; c1 = n1; c2 = n2; c3 = n3;
            k0 += W0; k1 += W1;
        }
        return Block{{c0, c1, c2, c3}};
    }
};

// Streams partition the key space so distinct uses of the same seed never
// collide (initial sampling vs. path increments vs. audit draws).
enum class RngStream : std::uint32_t {
    Increments = 0,
    InitialDraw = 1,
    Audit = 2,
    Scratch = 3,
};

inline double u64_to_unit_open(std::uint64_t x) {
    // (0, 1]: safe under log().
    return (static_cast<double>(x >> 11) + 1.0) * 0x1p-53;
}

// Two standard normals addressed by (seed, stream, step, particle, block).
inline void philox_normal_pair(std::uint64_t seed, RngStream stream, std::uint64_t step,
                               std::uint64_t particle, std::uint32_t block, double out[2]) {
    const std::uint32_t k0 = static_cast<std::uint32_t>(seed);
    const std::uint32_t k1 = static_cast<std::uint32_t>(seed >> 32) ^
                             (static_cast<std::uint32_t>(stream) * 0x85EBCA6Bu + 1u);
    const auto b = Philox4x32::run(static_cast<std::uint32_t>(step),
                                   static_cast<std::uint32_t>(step >> 32) ^
                                       static_cast<std::uint32_t>(particle >> 32),
                                   static_cast<std::uint32_t>(particle), block, k0, k1);
    const std::uint64_t u0 = (static_cast<std::uint64_t>(b.v[0]) << 32) | b.v[1];
    const std::uint64_t u1 = (static_cast<std::uint64_t>(b.v[2]) << 32) | b.v[3];
    const double r = std::sqrt(-2.0 * std::log(u64_to_unit_open(u0)));
    const double theta = 6.283185307179586476925286766559 * u64_to_unit_open(u1);
    out[0] = r * std::cos(theta);
    out[1] = r * std::sin(theta);
}

// Normal variate for one coordinate; coordinates are packed two per block.
inline double philox_normal(std::uint64_t seed, RngStream stream, std::uint64_t step,
                            std::uint64_t particle, std::uint32_t coord) {
    double pair[2];
    philox_normal_pair(seed, stream, step, particle, coord >> 1, pair);
    return pair[coord & 1u];
}

// Uniform in (0, 1] for one coordinate slot.
inline double philox_uniform(std::uint64_t seed, RngStream stream, std::uint64_t step,
                             std::uint64_t particle, std::uint32_t coord) {
    const auto b = Philox4x32::run(static_cast<std::uint32_t>(step),
                                   static_cast<std::uint32_t>(step >> 32) ^
                                       static_cast<std::uint32_t>(particle >> 32),
                                   static_cast<std::uint32_t>(particle), coord | 0x80000000u,
                                   static_cast<std::uint32_t>(seed),
                                   static_cast<std::uint32_t>(seed >> 32) ^
                                       (static_cast<std::uint32_t>(stream) * 0x85EBCA6Bu + 1u));
    const std::uint64_t u = (static_cast<std::uint64_t>(b.v[0]) << 32) | b.v[1];
    return u64_to_unit_open(u);
}

}  // namespace mvsde
