#pragma once

#include <cstdint>
#include <random>

#include "proex/common.hpp"

namespace proex {

// Owned random source. Each trainer/sampler holds its own instance; never
// shared across threads.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(gen_); }

    double normal() { return std::normal_distribution<double>(0.0, 1.0)(gen_); }

    double gamma(double alpha) {
        return std::gamma_distribution<double>(alpha, 1.0)(gen_);
    }

    // Uniform index in [0, n).
    std::size_t index(std::size_t n) {
        return std::uniform_int_distribution<std::size_t>(0, n - 1)(gen_);
    }

    std::uint64_t bits() { return gen_(); }

    std::mt19937_64& engine() { return gen_; }

private:
    std::mt19937_64 gen_;
};

inline void fill_normal(Vec& v, Rng& rng) {
    for (double& x : v) x = rng.normal();
}

// Xavier-uniform with bound sqrt(6/(fan_in+fan_out)).
inline void xavier_init(Vec& v, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (double& x : v) x = (2.0 * rng.uniform() - 1.0) * bound;
}

}  // namespace proex
