#pragma once

#include <cstdint>
#include <string_view>

#include "latt/tensor.hpp"

namespace latt {

/// Deterministic generator. All randomness in the project flows from a single
/// root seed through named streams (stream name -> independent sequence), so
/// adding a new consumer never perturbs existing ones.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed ^ 0x9e3779b97f4a7c15ull) {}

    /// Independent stream derived from this generator's seed and a name.
    Rng stream(std::string_view name) const;

    std::uint64_t next_u64();

    /// Uniform in [0, 1).
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Uniform integer in [0, n).
    std::uint64_t uniform_index(std::uint64_t n) { return n ? next_u64() % n : 0; }

    /// Standard normal (Box-Muller).
    double normal();
    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    /// Normal(0, stddev) resampled until within +/- 2 stddev.
    double trunc_normal(double stddev);

    void fill_uniform(Tensor& t, double lo, double hi);
    void fill_normal(Tensor& t, double mean, double stddev);
    void fill_trunc_normal(Tensor& t, double stddev);

private:
    std::uint64_t state_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace latt
