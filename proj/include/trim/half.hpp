// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <bit>
#include <cstdint>

namespace trim {

// IEEE 754 binary16 <-> binary32. Narrowing rounds to nearest, ties to even.

inline float half_to_float(std::uint16_t h) noexcept {
    const std::uint32_t sign = static_cast<std::uint32_t>(h & 0x8000u) << 16;
    std::uint32_t exp = (h >> 10) & 0x1fu;
    std::uint32_t mant = h & 0x3ffu;
    std::uint32_t bits;
    if (exp == 0) {
        if (mant == 0) {
            bits = sign;
        } else {
            // subnormal: renormalize
            exp = 127 - 15 + 1;
            while ((mant & 0x400u) == 0) {
                mant <<= 1;
                --exp;
            }
            mant &= 0x3ffu;
            bits = sign | (exp << 23) | (mant << 13);
        }
    } else if (exp == 0x1f) {
        bits = sign | 0x7f800000u | (mant << 13);
    } else {
        bits = sign | ((exp + 127 - 15) << 23) | (mant << 13);
    }
    return std::bit_cast<float>(bits);
}

inline std::uint16_t float_to_half(float f) noexcept {
    const std::uint32_t bits = std::bit_cast<std::uint32_t>(f);
    const std::uint16_t sign = static_cast<std::uint16_t>((bits >> 16) & 0x8000u);
    const std::uint32_t abs = bits & 0x7fffffffu;

    if (abs >= 0x7f800000u) { // inf or nan
        const std::uint16_t nan_bit = (abs > 0x7f800000u) ? 0x200u : 0u;
        return sign | 0x7c00u | nan_bit;
    }
    if (abs >= 0x477ff000u) { // rounds to >= 65520 -> inf
        return sign | 0x7c00u;
    }
    if (abs < 0x38800000u) { // below smallest normal half: subnormal or zero
        if (abs < 0x33000000u) { // < 2^-25 rounds to zero
            return sign;
        }
        const std::uint32_t exp = abs >> 23;
        const std::uint32_t mant = (abs & 0x7fffffu) | 0x800000u;
        // value = mant * 2^(exp-150), half subnormal unit is 2^-24
        const std::uint32_t shift = 126 - exp;
        std::uint32_t half_mant = mant >> shift;
        const std::uint32_t rem = mant & ((1u << shift) - 1u);
        const std::uint32_t halfway = 1u << (shift - 1);
        if (rem > halfway || (rem == halfway && (half_mant & 1u))) {
            ++half_mant;
        }
        return sign | static_cast<std::uint16_t>(half_mant);
    }
    std::uint32_t h = ((abs >> 13) - ((127u - 15u) << 10));
    const std::uint32_t rem = abs & 0x1fffu;
    if (rem > 0x1000u || (rem == 0x1000u && (h & 1u))) {
        ++h; // carry into exponent is correct rounding
    }
    return sign | static_cast<std::uint16_t>(h);
}

} // namespace trim
