#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace sabma::rng {

// Seed derivation scheme. Every consumer of randomness owns a private engine
// seeded through derive(); there is no shared RNG state anywhere.
//
//   stream_seed = splitmix64(splitmix64(master ^ fnv1a(tag)) + index)
//
// Tags used by the harness (documented here and in the README):
//   "data"       dataset generation         (index: 0 train, 1 test, 2 val)
//   "init"       parameter initialization
//   "sabma"      per-step posterior noise   (index: global fine-tune step)
//   "bma"        BMA posterior samples      (index: sample)
//   "spectrum"   spectroscopy samples       (index: sample)
//   "lanczos"    Lanczos start vectors      (index: restart count)
//   "shift"      covariate-shift noise      (index: severity)
//   "order"      random BMA ordering

constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

constexpr std::uint64_t derive(std::uint64_t master, std::string_view tag, std::uint64_t index = 0) {
    return splitmix64(splitmix64(master ^ fnv1a(tag)) + index);
}

inline std::mt19937_64 engine(std::uint64_t seed) { return std::mt19937_64(seed); }

} // namespace sabma::rng
