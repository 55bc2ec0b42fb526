#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

#include "mcross/common.hpp"

namespace mcross {

// All randomness in the project flows from one master seed. Sub-streams are
// derived by hashing the master seed with a purpose string so results do not
// depend on the order in which components draw.
inline uint64_t derive_seed(uint64_t master, std::string_view purpose) {
    return fnv1a64(purpose, fnv1a64_u64(master));
}

inline std::mt19937_64 make_rng(uint64_t master, std::string_view purpose) {
    return std::mt19937_64(derive_seed(master, purpose));
}

// Bounded draw without distribution objects; deterministic across stdlibs.
inline size_t draw_index(std::mt19937_64& rng, size_t n) {
    return static_cast<size_t>(rng() % n);
}

inline double draw_unit(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * (1.0 / 9007199254740992.0); // 53-bit mantissa
}

// Truncated normal: resample until |x| <= 2 sigma.
inline double draw_trunc_normal(std::mt19937_64& rng, double sigma) {
    for (;;) {
        // Box-Muller from two unit draws; avoids stdlib normal_distribution
        // so streams are identical across platforms.
        double u1 = draw_unit(rng);
        double u2 = draw_unit(rng);
        if (u1 <= 0.0) continue;
        double r = std::sqrt(-2.0 * std::log(u1));
        double x = r * std::cos(6.283185307179586476925287 * u2) * sigma;
        if (x >= -2.0 * sigma && x <= 2.0 * sigma) return x;
    }
}

} // namespace mcross
