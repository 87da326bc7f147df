#include "latt/rng.hpp"

#include <cmath>
#include <numbers>

namespace latt {

namespace {

std::uint64_t splitmix64(std::uint64_t& x) {
    x += 0x9e3779b97f4a7c15ull;
    std::uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ull;
    }
    return h;
}

}  // namespace

Rng Rng::stream(std::string_view name) const {
    Rng child(0);
    child.state_ = state_ ^ (fnv1a(name) * 0xda942042e4dd58b5ull);
    // decorrelate from the parent sequence
    splitmix64(child.state_);
    return child;
}

std::uint64_t Rng::next_u64() { return splitmix64(state_); }

double Rng::uniform() {
    // 53 mantissa bits -> [0, 1)
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
}

double Rng::trunc_normal(double stddev) {
    for (;;) {
        const double v = normal();
        if (std::abs(v) <= 2.0) return v * stddev;
    }
}

void Rng::fill_uniform(Tensor& t, double lo, double hi) {
    for (std::size_t i = 0; i < t.numel(); ++i) t.set_item(i, uniform(lo, hi));
}

void Rng::fill_normal(Tensor& t, double mean, double stddev) {
    for (std::size_t i = 0; i < t.numel(); ++i) t.set_item(i, normal(mean, stddev));
}

void Rng::fill_trunc_normal(Tensor& t, double stddev) {
    for (std::size_t i = 0; i < t.numel(); ++i) t.set_item(i, trunc_normal(stddev));
}

}  // namespace latt
