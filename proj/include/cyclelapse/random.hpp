#pragma once

#include <cstdint>
#include <random>

namespace cyclelapse {

/// Seedable random stream. Child streams are derived with split(), so a
/// worker or a training step can own an independent stream whose contents
/// depend only on (parent seed, stream id).
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

    std::uint64_t seed() const { return seed_; }

    double normal() { return normal_(engine_); }
    double uniform() { return uniform_(engine_); }
    std::uint64_t next() { return engine_(); }

    /// Uniform index in [0, n).
    std::size_t index(std::size_t n) {
        return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
    }

    Rng split(std::uint64_t stream) const { return Rng(mix(seed_ ^ mix(stream + 0x51ed27u))); }

    /// SplitMix64 finalizer.
    static std::uint64_t mix(std::uint64_t x) {
        x += 0x9e3779b97f4a7c15ULL;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
        return x ^ (x >> 31);
    }

private:
    std::uint64_t seed_;
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
    std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace cyclelapse
