#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace msdcee {

inline std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9e3779b97f4a7c15ull;
    std::uint64_t z = state;
    z = (z ^ (z >> 30u)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27u)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31u);
}

/// Derives an independent child seed from a parent seed and a list of tags.
/// Same inputs always give the same child, independent of call order.
inline std::uint64_t derive_seed(std::uint64_t parent, std::initializer_list<std::uint64_t> tags) {
    std::uint64_t state = parent;
    std::uint64_t out = splitmix64(state);
    for (std::uint64_t tag : tags) {
        state ^= tag + 0x632be59bd9b4e019ull + (out << 6u) + (out >> 2u);
        out = splitmix64(state);
    }
    return out;
}

// Stable tags for the substreams of one episode.
enum class StreamTag : std::uint64_t {
    prior = 1,
    sensor = 2,
    resample = 3,
    plan = 4,
    candidates = 5,
    scenarios = 6,
    downsample = 7,
};

inline std::uint64_t derive_seed(std::uint64_t parent, StreamTag tag, std::uint64_t index = 0) {
    return derive_seed(parent, {static_cast<std::uint64_t>(tag), index});
}

/// Explicit random stream. Every stochastic operation takes one by reference,
/// so results are a pure function of the seed it was constructed with.
class RandomStream {
public:
    explicit RandomStream(std::uint64_t seed) : engine_(seed) {}

    double uniform(double lo, double hi) {
        return std::uniform_real_distribution<double>(lo, hi)(engine_);
    }

    double uniform01() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }

    double normal() { return std::normal_distribution<double>(0.0, 1.0)(engine_); }

    std::size_t index(std::size_t n) {
        return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
    }

    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
};

}  // namespace msdcee
