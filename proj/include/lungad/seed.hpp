#pragma once

#include <cstdint>

namespace lungad {

// Independent child seed for stream `stream` of a run seeded with `seed` (splitmix64 mix).
constexpr uint64_t derive_seed(uint64_t seed, uint64_t stream) {
    auto mix = [](uint64_t x) {
        x += 0x9E3779B97F4A7C15ULL;
        x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
        x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
        return x ^ (x >> 31);
    };
    return mix(seed ^ mix(stream));
}

} // namespace lungad
