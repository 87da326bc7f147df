#pragma once

#include <functional>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "latt/autograd.hpp"

namespace latt {

struct GradReportEntry {
    std::string param;
    double max_rel_err = 0.0;
    double max_abs_err = 0.0;
    double step = 0.0;
    std::size_t skipped = 0;
};

struct GradReport {
    std::vector<GradReportEntry> entries;

    double max_rel_err() const;
    double max_abs_err() const;
    std::size_t total_skipped() const;
    /// CSV: parameter name, max_rel_err, max_abs_err, skipped. LF endings.
    void write_csv(std::ostream& out) const;
};

/// Builds a scalar-valued graph from named parameter leaves and returns the
/// output node. Must be deterministic in the parameters.
using ScalarProgram = std::function<Var(Tape&, const std::map<std::string, Tensor>&)>;

struct FdOptions {
    /// Relative step; per element h = step * max(1, |theta_i|).
    double step = 1e-5;
    /// Dtype of the analytic pass. The difference quotient always runs in f64.
    DType analytic_dtype = DType::F64;
    /// Elements to exclude (e.g. spow near 0 for lam < 1): (param, value) -> skip.
    std::function<bool(const std::string&, double)> skip;
};

/// Central differences (f(t+h e_i) - f(t-h e_i)) / (2h) compared elementwise
/// against tape gradients. Relative error is normalized by max(1,|a|,|fd|).
GradReport fd_check(const ScalarProgram& f, const std::map<std::string, Tensor>& params,
                    const FdOptions& opts = {});

}  // namespace latt
