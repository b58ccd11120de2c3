#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>

// IEEE-754 binary16 conversion, round-to-nearest-even, implemented on the f64
// bit pattern directly so there is no double rounding through f32.

namespace skim {

inline std::uint16_t f16_from_f64(double x) {
    const std::uint64_t bits = std::bit_cast<std::uint64_t>(x);
    const auto sign = static_cast<std::uint16_t>((bits >> 48) & 0x8000u);
    const int exp = static_cast<int>((bits >> 52) & 0x7FF);
    const std::uint64_t frac = bits & 0xFFFFFFFFFFFFFull;

    if (exp == 0x7FF) {  // inf or nan
        return static_cast<std::uint16_t>(sign | (frac ? 0x7E00u : 0x7C00u));
    }
    if (exp == 0) return sign;  // f64 subnormals are far below half's range

    const int e = exp - 1023;
    if (e >= 16) return static_cast<std::uint16_t>(sign | 0x7C00u);  // overflow

    if (e >= -14) {
        // normal half: round the 52-bit fraction to 10 bits
        auto E = static_cast<std::uint16_t>(e + 15);
        std::uint64_t keep = frac >> 42;
        const std::uint64_t rem = frac & ((1ull << 42) - 1);
        const std::uint64_t half = 1ull << 41;
        if (rem > half || (rem == half && (keep & 1))) ++keep;
        if (keep == 0x400) {  // carry into the exponent
            keep = 0;
            if (++E == 31) return static_cast<std::uint16_t>(sign | 0x7C00u);
        }
        return static_cast<std::uint16_t>(sign | static_cast<std::uint16_t>(E << 10) |
                                          static_cast<std::uint16_t>(keep));
    }

    // subnormal half: round to a multiple of 2^-24
    const std::uint64_t M = (1ull << 52) | frac;
    const int shift = 28 - e;  // >= 43
    if (shift >= 64) return sign;
    std::uint64_t keep = M >> shift;
    const std::uint64_t rem = M & ((1ull << shift) - 1);
    const std::uint64_t half = 1ull << (shift - 1);
    if (rem > half || (rem == half && (keep & 1))) ++keep;
    // keep == 0x400 lands exactly on the smallest normal encoding
    return static_cast<std::uint16_t>(sign | static_cast<std::uint16_t>(keep));
}

inline double f64_from_f16(std::uint16_t h) {
    const bool neg = (h & 0x8000u) != 0;
    const int E = (h >> 10) & 0x1F;
    const int f = h & 0x3FF;
    double v;
    if (E == 0) {
        v = static_cast<double>(f) * 0x1.0p-24;
    } else if (E == 31) {
        v = f ? std::numeric_limits<double>::quiet_NaN()
              : std::numeric_limits<double>::infinity();
    } else {
        v = std::ldexp(static_cast<double>(1024 + f), E - 25);
    }
    return neg ? -v : v;
}

// Storage rounding for a centroid: through binary16 and back.
inline double round_f16(double x) { return f64_from_f16(f16_from_f64(x)); }

// Storage rounding for a scaling entry: through binary32 and back.
inline double round_f32(double x) { return static_cast<double>(static_cast<float>(x)); }

}  // namespace skim
