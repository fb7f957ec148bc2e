#pragma once

// Counter-based Gaussian stream. Every draw is a pure function of
// (seed, stream, path, step), so paths can be simulated in any order or
// partition and still see the same noise.

#include <array>
#include <cmath>
#include <cstdint>

namespace deepis {

namespace philox {

using Counter = std::array<std::uint32_t, 4>;
using Key = std::array<std::uint32_t, 2>;

inline constexpr std::uint32_t kMul0 = 0xD2511F53;
inline constexpr std::uint32_t kMul1 = 0xCD9E8D57;
inline constexpr std::uint32_t kWeyl0 = 0x9E3779B9;
inline constexpr std::uint32_t kWeyl1 = 0xBB67AE85;

inline Counter round(const Counter& c, const Key& k) {
    const std::uint64_t p0 = static_cast<std::uint64_t>(kMul0) * c[0];
    const std::uint64_t p1 = static_cast<std::uint64_t>(kMul1) * c[2];
    return {static_cast<std::uint32_t>(p1 >> 32) ^ c[1] ^ k[0], static_cast<std::uint32_t>(p1),
            static_cast<std::uint32_t>(p0 >> 32) ^ c[3] ^ k[1], static_cast<std::uint32_t>(p0)};
}

// Philox4x32 with 10 rounds (Salmon et al., SC'11).
inline Counter philox4x32_10(Counter c, Key k) {
    for (int r = 0; r < 10; ++r) {
        c = round(c, k);
        if (r < 9) {
            k[0] += kWeyl0;
            k[1] += kWeyl1;
        }
    }
    return c;
}

} // namespace philox

// Uniform in the open interval (0, 1) on the midpoints of a 2^-52 lattice.
inline double uniform_open(std::uint32_t hi, std::uint32_t lo) {
    const std::uint64_t bits = (static_cast<std::uint64_t>(hi) << 20) ^ (lo >> 12);
    return (static_cast<double>(bits & ((1ULL << 52) - 1)) + 0.5) * 0x1.0p-52;
}

// Inverse standard normal CDF, Wichura's AS241 (PPND16), ~1e-16 relative accuracy.
inline double inverse_normal_cdf(double p) {
    const double q = p - 0.5;
    if (std::fabs(q) <= 0.425) {
        const double r = 0.180625 - q * q;
        return q *
               (((((((2509.0809287301226727 * r + 33430.575583588128105) * r + 67265.770927008700853) * r +
                    45921.953931549871457) * r + 13731.693765509461125) * r + 1971.5909503065514427) * r +
                 133.14166789178437745) * r + 3.387132872796366608) /
               (((((((5226.495278852545925 * r + 28729.085735721942674) * r + 39307.89580009271061) * r +
                    21213.794301586595867) * r + 5394.1960214247511077) * r + 687.1870074920579083) * r +
                 42.313330701600911252) * r + 1.0);
    }
    double r = q < 0.0 ? p : 1.0 - p;
    r = std::sqrt(-std::log(r));
    double x;
    if (r <= 5.0) {
        r -= 1.6;
        x = (((((((7.7454501427834140764e-4 * r + 0.0227238449892691845833) * r + 0.24178072517745061177) * r +
                 1.27045825245236838258) * r + 3.64784832476320460504) * r + 5.7694972214606914055) * r +
              4.6303378461565452959) * r + 1.42343711074968357734) /
            (((((((1.05075007164441684324e-9 * r + 5.475938084995344946e-4) * r + 0.0151986665636164571966) * r +
                 0.14810397642748007459) * r + 0.68976733498510000455) * r + 1.6763848301838038494) * r +
              2.05319162663775882187) * r + 1.0);
    } else {
        r -= 5.0;
        x = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r + 0.0012426609473880784386) * r +
                 0.026532189526576123093) * r + 0.29656057182850489123) * r + 1.7848265399172913358) * r +
              5.4637849111641143699) * r + 6.6579046435011037772) /
            (((((((2.04426310338993978564e-15 * r + 1.4215117583164458887e-7) * r + 1.8463183175100546818e-5) * r +
                 7.868691311456132591e-4) * r + 0.0148753612908506148525) * r + 0.13692988092273580531) * r +
              0.59983220655588793769) * r + 1.0);
    }
    return q < 0.0 ? -x : x;
}

// Substream identifiers. Training, pilot, evaluation and initialisation draws
// live in disjoint counter domains so evaluation is always out of sample.
namespace streams {
inline constexpr std::uint32_t kDefault = 0;
inline constexpr std::uint32_t kInit = 0x10000000u;
inline constexpr std::uint32_t kPilot = 0x20000000u;
inline constexpr std::uint32_t kTrainBase = 0x30000000u;  // + batch index
inline constexpr std::uint32_t kEvalPlain = 0x40000000u;
inline constexpr std::uint32_t kEvalImportance = 0x40000001u;
} // namespace streams

// Raw 128-bit block for (seed, stream, a, b).
inline philox::Counter random_block(std::uint64_t seed, std::uint32_t stream, std::uint64_t a, std::uint32_t b) {
    const philox::Key key{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
    const philox::Counter ctr{static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32), b, stream};
    return philox::philox4x32_10(ctr, key);
}

inline double gaussian(std::uint64_t seed, std::uint32_t stream, std::uint64_t path, std::uint32_t step) {
    const auto block = random_block(seed, stream, path, step);
    return inverse_normal_cdf(uniform_open(block[0], block[1]));
}

inline double gaussian_stream(std::uint64_t seed, std::uint64_t path, std::uint32_t step) {
    return gaussian(seed, streams::kDefault, path, step);
}

inline double uniform(std::uint64_t seed, std::uint32_t stream, std::uint64_t index, std::uint32_t sub) {
    const auto block = random_block(seed, stream, index, sub);
    return uniform_open(block[0], block[1]);
}

} // namespace deepis
