#pragma once

#include <cstdint>
#include <random>

namespace fours::numerics {

// splitmix64 step; advances `state` and returns the mixed output.
std::uint64_t splitmix64(std::uint64_t& state);

// Independent child seed for stream `stream` of a parent seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

// Portable generator: mt19937_64 bits with distributions implemented here so
// that draws do not depend on the standard library's distribution classes.
class Rng {
public:
    explicit Rng(std::uint64_t seed);

    std::uint64_t bits() { return engine_(); }
    // Uniform on the open interval (0, 1) with 53 random bits.
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    // Standard normal via the quantile function.
    double normal();
    // Uniform integer in [0, n).
    std::size_t index(std::size_t n);

private:
    std::mt19937_64 engine_;
};

}  // namespace fours::numerics
