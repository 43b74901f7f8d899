#pragma once

#include <cstdint>

namespace vitp::detail {

inline uint64_t mix_key(uint64_t a, uint64_t b) {
    // splitmix64 finalizer over the pair; cheap and well-scrambled.
    uint64_t x = a * 0x9e3779b97f4a7c15ull + b;
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ull;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebull;
    x ^= x >> 31;
    return x;
}

} // namespace vitp::detail
