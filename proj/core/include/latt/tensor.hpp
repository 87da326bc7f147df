#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <utility>
#include <vector>

#include "latt/dtype.hpp"

namespace latt {

/// Dense N-dimensional array, C-order, element type f32 or f64.
/// Feature maps use (batch, channel, height, width) layout.
class Tensor {
public:
    Tensor() = default;
    Tensor(std::vector<std::size_t> dims, DType dt);

    static Tensor zeros(std::vector<std::size_t> dims, DType dt);
    static Tensor full(std::vector<std::size_t> dims, double value, DType dt);
    static Tensor ones(std::vector<std::size_t> dims, DType dt) { return full(std::move(dims), 1.0, dt); }
    /// Builds a tensor from explicit values (converted to dt).
    static Tensor from_values(std::vector<std::size_t> dims, const std::vector<double>& values, DType dt);

    const std::vector<std::size_t>& dims() const { return dims_; }
    std::size_t ndim() const { return dims_.size(); }
    std::size_t dim(std::size_t i) const { return dims_[i]; }
    DType dtype() const { return dtype_; }
    std::size_t numel() const { return numel_; }
    bool empty() const { return data_.empty(); }

    template <class T>
    std::span<T> data() {
        check_dtype(dtype_of<T>::value);
        return {reinterpret_cast<T*>(data_.data()), numel_};
    }
    template <class T>
    std::span<const T> data() const {
        check_dtype(dtype_of<T>::value);
        return {reinterpret_cast<const T*>(data_.data()), numel_};
    }

    const std::byte* raw() const { return data_.data(); }
    std::byte* raw() { return data_.data(); }
    std::size_t raw_size() const { return data_.size(); }

    /// Linear offset of a multi-index (C-order). Debug/test convenience.
    std::size_t offset(std::initializer_list<std::size_t> idx) const;

    template <class T>
    T& at(std::initializer_list<std::size_t> idx) {
        return data<T>()[offset(idx)];
    }
    template <class T>
    T at(std::initializer_list<std::size_t> idx) const {
        return data<T>()[offset(idx)];
    }

    /// Element read with conversion to double, any dtype.
    double item(std::size_t linear) const;
    void set_item(std::size_t linear, double v);

    /// Same data, new dims (element count must match).
    Tensor reshaped(std::vector<std::size_t> new_dims) const;

    /// Copy converted to the requested dtype.
    Tensor cast(DType dt) const;

    bool same_shape(const Tensor& other) const { return dims_ == other.dims_; }

private:
    void check_dtype(DType want) const;

    std::vector<std::size_t> dims_;
    DType dtype_ = DType::F32;
    std::size_t numel_ = 0;
    std::vector<std::byte> data_;
};

/// Row-major enumeration of the (dy, dx) displacements of a K x K
/// neighborhood, dy outer: (-(K-1)/2,-(K-1)/2), ..., ((K-1)/2,(K-1)/2).
/// Every module indexes patch/offset axes through this single ordering.
struct OffsetOrder {
    int kernel_size = 1;
    std::vector<std::pair<int, int>> offsets;

    static OffsetOrder make(int kernel_size);
};

/// Max |a-b| over all elements; shapes must match. Mixed dtypes compare as double.
double max_abs_diff(const Tensor& a, const Tensor& b);

/// True when both tensors have identical dims, dtype and bytes.
bool bitwise_equal(const Tensor& a, const Tensor& b);

}  // namespace latt
