#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace msd {

/// Seeded 64-bit generator. Uniform and normal draws are computed here rather
/// than through <random> distributions so streams are identical across
/// standard library implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0);

    /// Independent stream for task `index` under `seed` (trajectories, cases, samples).
    static Rng derive(std::uint64_t seed, std::uint64_t index);

    std::uint64_t next_u64();
    double uniform();                       // [0, 1)
    double uniform(double lo, double hi);   // [lo, hi)
    double normal();                        // standard normal, Box-Muller
    std::size_t below(std::size_t n);       // [0, n)

    std::uint64_t seed() const { return seed_; }
    std::string state() const;
    void set_state(const std::string& state);

private:
    std::uint64_t seed_;
    std::mt19937_64 engine_;
};

}  // namespace msd
