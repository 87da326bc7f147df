#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace latt {

enum class DType : std::uint8_t { F32 = 0, F64 = 1 };

inline std::size_t dtype_size(DType dt) { return dt == DType::F32 ? 4 : 8; }

inline const char* dtype_name(DType dt) { return dt == DType::F32 ? "f32" : "f64"; }

inline DType dtype_from_name(const std::string& s) {
    if (s == "f32") return DType::F32;
    if (s == "f64") return DType::F64;
    throw std::invalid_argument("unknown dtype: " + s);
}

template <class T>
struct dtype_of;
template <>
struct dtype_of<float> {
    static constexpr DType value = DType::F32;
};
template <>
struct dtype_of<double> {
    static constexpr DType value = DType::F64;
};

/// Invokes f with a value-initialized float or double tag matching dt.
template <class F>
decltype(auto) dispatch_dtype(DType dt, F&& f) {
    if (dt == DType::F32) return f(float{});
    return f(double{});
}

}  // namespace latt
