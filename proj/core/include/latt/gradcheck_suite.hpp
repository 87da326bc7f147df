#pragma once

#include <cstdint>

#include "latt/gradcheck.hpp"

namespace latt {

struct GradCheckCase {
    std::string name;
    ScalarProgram program;
    std::map<std::string, Tensor> params;
    std::function<bool(const std::string&, double)> skip;  // may be empty
};

/// One scalar program per registered differentiable op plus the composite
/// paradigm forwards and the full ELSA block, on shapes <= (2,4,6,6).
/// Parameters are drawn in f64 from named streams of `seed`.
std::vector<GradCheckCase> default_gradcheck_suite(std::uint64_t seed);

/// Runs one case at the given settings.
GradReport run_gradcheck_case(const GradCheckCase& c, double step, DType analytic_dtype);

}  // namespace latt
