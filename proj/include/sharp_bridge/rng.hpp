#pragma once

// Philox4x32-10 counter-based generator and the Gaussian streams built on it.
// Every path owns a substream addressed by (seed, path, step, block), so
// draws do not depend on thread scheduling.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace sharp_bridge {

using PhiloxCounter = std::array<std::uint32_t, 4>;
using PhiloxKey = std::array<std::uint32_t, 2>;

inline PhiloxCounter philox4x32_10(PhiloxCounter ctr, PhiloxKey key) {
    constexpr std::uint32_t m0 = 0xD2511F53u, m1 = 0xCD9E8D57u;
    constexpr std::uint32_t w0 = 0x9E3779B9u, w1 = 0xBB67AE85u;
    for (int round = 0; round < 10; ++round) {
        const std::uint64_t p0 = static_cast<std::uint64_t>(m0) * ctr[0];
        const std::uint64_t p1 = static_cast<std::uint64_t>(m1) * ctr[2];
        const auto hi0 = static_cast<std::uint32_t>(p0 >> 32), lo0 = static_cast<std::uint32_t>(p0);
        const auto hi1 = static_cast<std::uint32_t>(p1 >> 32), lo1 = static_cast<std::uint32_t>(p1);
        ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
        key[0] += w0;
        key[1] += w1;
    }
    return ctr;
}

/// Uniform on (0, 1) with 53 random bits, from two 32-bit words.
inline double uniform53(std::uint32_t hi, std::uint32_t lo) {
    const std::uint64_t bits = (static_cast<std::uint64_t>(hi) << 21) ^ (lo >> 11);
    return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
}

/// Standard normal draws for one path.
class GaussianStream {
public:
    GaussianStream(std::uint64_t seed, std::uint64_t path)
        : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)},
          path_lo_(static_cast<std::uint32_t>(path)),
          path_hi_(static_cast<std::uint32_t>(path >> 32)) {}

    /// Writes `n` normals for time step `step` (Box-Muller, two per block).
    void fill(std::uint32_t step, double* out, int n) const {
        for (int i = 0, block = 0; i < n; i += 2, ++block) {
            const auto r = philox4x32_10({static_cast<std::uint32_t>(block), step, path_lo_, path_hi_}, key_);
            const double u1 = uniform53(r[0], r[1]);
            const double u2 = uniform53(r[2], r[3]);
            const double rad = std::sqrt(-2.0 * std::log(u1));
            const double ang = 2.0 * std::numbers::pi * u2;
            out[i] = rad * std::cos(ang);
            if (i + 1 < n) out[i + 1] = rad * std::sin(ang);
        }
    }

private:
    PhiloxKey key_;
    std::uint32_t path_lo_;
    std::uint32_t path_hi_;
};

}  // namespace sharp_bridge
