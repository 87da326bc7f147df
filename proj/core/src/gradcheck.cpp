#include "latt/gradcheck.hpp"

#include <cmath>
#include <stdexcept>

namespace latt {

double GradReport::max_rel_err() const {
    double m = 0.0;
    for (const auto& e : entries) m = std::max(m, e.max_rel_err);
    return m;
}

double GradReport::max_abs_err() const {
    double m = 0.0;
    for (const auto& e : entries) m = std::max(m, e.max_abs_err);
    return m;
}

std::size_t GradReport::total_skipped() const {
    std::size_t n = 0;
    for (const auto& e : entries) n += e.skipped;
    return n;
}

void GradReport::write_csv(std::ostream& out) const {
    out << "parameter,max_rel_err,max_abs_err,skipped\n";
    for (const auto& e : entries) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.6e,%.6e", e.max_rel_err, e.max_abs_err);
        out << e.param << "," << buf << "," << e.skipped << "\n";
    }
}

namespace {

double eval_scalar(const ScalarProgram& f, const std::map<std::string, Tensor>& params) {
    Tape tape;
    Var out = f(tape, params);
    const Tensor& v = tape.value(out);
    if (v.numel() != 1) throw std::invalid_argument("fd_check: program must be scalar-valued");
    const double r = v.item(0);
    if (!std::isfinite(r)) throw std::runtime_error("fd_check: non-finite function value");
    return r;
}

}  // namespace

GradReport fd_check(const ScalarProgram& f, const std::map<std::string, Tensor>& params,
                    const FdOptions& opts) {
    // analytic pass at the requested dtype
    std::map<std::string, Tensor> analytic_params;
    for (const auto& [name, t] : params) analytic_params.emplace(name, t.cast(opts.analytic_dtype));
    Tape tape;
    Var out = f(tape, analytic_params);
    if (tape.value(out).numel() != 1)
        throw std::invalid_argument("fd_check: program must be scalar-valued");
    Tensor seed = Tensor::ones({1}, tape.value(out).dtype());
    const auto grads = tape.backward(out, seed);

    // difference quotients in f64
    std::map<std::string, Tensor> fd_params;
    for (const auto& [name, t] : params) fd_params.emplace(name, t.cast(DType::F64));

    GradReport report;
    for (const auto& [name, grad] : grads) {
        GradReportEntry entry;
        entry.param = name;
        entry.step = opts.step;
        Tensor& theta = fd_params.at(name);
        auto values = theta.data<double>();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double original = values[i];
            if (opts.skip && opts.skip(name, original)) {
                ++entry.skipped;
                continue;
            }
            const double h = opts.step * std::max(1.0, std::abs(original));
            values[i] = original + h;
            const double fp = eval_scalar(f, fd_params);
            values[i] = original - h;
            const double fm = eval_scalar(f, fd_params);
            values[i] = original;
            const double fd = (fp - fm) / (2.0 * h);
            const double a = grad.item(i);
            const double abs_err = std::abs(a - fd);
            const double rel_err = abs_err / std::max({1.0, std::abs(a), std::abs(fd)});
            entry.max_abs_err = std::max(entry.max_abs_err, abs_err);
            entry.max_rel_err = std::max(entry.max_rel_err, rel_err);
        }
        report.entries.push_back(std::move(entry));
    }
    return report;
}

}  // namespace latt
