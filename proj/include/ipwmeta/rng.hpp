#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace ipwmeta {

using Rng = std::mt19937_64;

// Independent generator for the stream labelled by `keys` under `seed`.
// The same (seed, keys) always yields the same sequence, so results do not
// depend on the order in which replicates are processed.
inline Rng substream(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) {
    std::vector<std::uint32_t> words;
    words.reserve(2 * (keys.size() + 1));
    auto push = [&](std::uint64_t v) {
        words.push_back(static_cast<std::uint32_t>(v));
        words.push_back(static_cast<std::uint32_t>(v >> 32));
    };
    push(seed);
    for (auto k : keys) push(k);
    std::seed_seq seq(words.begin(), words.end());
    return Rng(seq);
}

// Purpose tags keep streams for different jobs apart.
enum StreamTag : std::uint64_t {
    kStreamPopulation = 1,
    kStreamSelection = 2,
    kStreamBootstrap = 3,
};

}  // namespace ipwmeta
