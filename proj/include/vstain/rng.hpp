#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string>

namespace vstain {

/// Seeded random source. Every stochastic operation in the library draws from
/// one of these; nothing reads ambient entropy.
///
/// Substreams are derived either statelessly from a (seed, path...) tuple via
/// `derive`, or statefully via `fork`, which consumes one draw from the parent.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0);

    static Rng derive(std::uint64_t seed, std::initializer_list<std::uint64_t> path);

    Rng fork();

    std::uint64_t next_u64();
    double uniform();
    double uniform(double lo, double hi);
    double normal();
    /// Inclusive on both ends.
    int uniform_int(int lo, int hi);

    std::string serialize() const;
    static Rng deserialize(const std::string& state);

    bool operator==(const Rng& other) const;

private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace vstain
