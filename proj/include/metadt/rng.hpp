#ifndef METADT_RNG_HPP
#define METADT_RNG_HPP

#include <cstdint>
#include <random>

namespace metadt {

using Rng = std::mt19937_64;

// splitmix64 step; used to derive child seeds.
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// Declared seed-splitting rule: (seed, worker_index) -> child seed.
inline std::uint64_t child_seed(std::uint64_t seed, std::uint64_t worker_index) {
    return mix64(mix64(seed) ^ mix64(worker_index + 0x1000));
}

}  // namespace metadt

#endif
