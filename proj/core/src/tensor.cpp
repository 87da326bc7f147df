#include "latt/tensor.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace latt {

namespace {

std::size_t product(const std::vector<std::size_t>& dims) {
    std::size_t n = 1;
    for (std::size_t d : dims) n *= d;
    return n;
}

void validate_dims(const std::vector<std::size_t>& dims) {
    if (dims.empty()) throw std::invalid_argument("Tensor: dims must be non-empty");
    for (std::size_t d : dims) {
        if (d == 0) throw std::invalid_argument("Tensor: every extent must be >= 1");
    }
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> dims, DType dt) : dims_(std::move(dims)), dtype_(dt) {
    validate_dims(dims_);
    numel_ = product(dims_);
    data_.assign(numel_ * dtype_size(dt), std::byte{0});
}

Tensor Tensor::zeros(std::vector<std::size_t> dims, DType dt) { return Tensor(std::move(dims), dt); }

Tensor Tensor::full(std::vector<std::size_t> dims, double value, DType dt) {
    Tensor t(std::move(dims), dt);
    dispatch_dtype(dt, [&](auto tag) {
        using T = decltype(tag);
        for (auto& v : t.data<T>()) v = static_cast<T>(value);
    });
    return t;
}

Tensor Tensor::from_values(std::vector<std::size_t> dims, const std::vector<double>& values, DType dt) {
    Tensor t(std::move(dims), dt);
    if (values.size() != t.numel()) throw std::invalid_argument("Tensor::from_values: element count mismatch");
    for (std::size_t i = 0; i < values.size(); ++i) t.set_item(i, values[i]);
    return t;
}

std::size_t Tensor::offset(std::initializer_list<std::size_t> idx) const {
    if (idx.size() != dims_.size()) throw std::invalid_argument("Tensor::offset: rank mismatch");
    std::size_t off = 0;
    std::size_t axis = 0;
    for (std::size_t i : idx) {
        if (i >= dims_[axis]) throw std::out_of_range("Tensor::offset: index out of range");
        off = off * dims_[axis] + i;
        ++axis;
    }
    return off;
}

double Tensor::item(std::size_t linear) const {
    if (linear >= numel_) throw std::out_of_range("Tensor::item: out of range");
    return dispatch_dtype(dtype_, [&](auto tag) {
        using T = decltype(tag);
        return static_cast<double>(data<T>()[linear]);
    });
}

void Tensor::set_item(std::size_t linear, double v) {
    if (linear >= numel_) throw std::out_of_range("Tensor::set_item: out of range");
    dispatch_dtype(dtype_, [&](auto tag) {
        using T = decltype(tag);
        data<T>()[linear] = static_cast<T>(v);
    });
}

Tensor Tensor::reshaped(std::vector<std::size_t> new_dims) const {
    validate_dims(new_dims);
    if (product(new_dims) != numel_) throw std::invalid_argument("Tensor::reshaped: element count mismatch");
    Tensor out = *this;
    out.dims_ = std::move(new_dims);
    return out;
}

Tensor Tensor::cast(DType dt) const {
    if (dt == dtype_) return *this;
    Tensor out(dims_, dt);
    for (std::size_t i = 0; i < numel_; ++i) out.set_item(i, item(i));
    return out;
}

void Tensor::check_dtype(DType want) const {
    if (want != dtype_) throw std::invalid_argument("Tensor: dtype mismatch in typed access");
}

OffsetOrder OffsetOrder::make(int kernel_size) {
    if (kernel_size < 1 || kernel_size % 2 == 0)
        throw std::invalid_argument("OffsetOrder: kernel size must be odd and >= 1");
    OffsetOrder order;
    order.kernel_size = kernel_size;
    const int r = (kernel_size - 1) / 2;
    order.offsets.reserve(static_cast<std::size_t>(kernel_size) * kernel_size);
    for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) order.offsets.emplace_back(dy, dx);
    return order;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (a.dims() != b.dims()) throw std::invalid_argument("max_abs_diff: shape mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.item(i) - b.item(i)));
    return m;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
    return a.dims() == b.dims() && a.dtype() == b.dtype() &&
           std::memcmp(a.raw(), b.raw(), a.raw_size()) == 0;
}

}  // namespace latt
