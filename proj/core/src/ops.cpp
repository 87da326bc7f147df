#include "latt/ops.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace latt {

namespace {

void require(bool cond, const char* msg) {
    if (!cond) throw std::invalid_argument(msg);
}

void require_same(const Tensor& a, const Tensor& b, const char* who) {
    if (a.dims() != b.dims() || a.dtype() != b.dtype())
        throw std::invalid_argument(std::string(who) + ": operands must share shape and dtype");
}

struct AxisSplit {
    std::size_t outer = 1, n = 1, inner = 1;
};

AxisSplit split_axis(const Tensor& x, int axis, const char* who) {
    if (axis < 0 || static_cast<std::size_t>(axis) >= x.ndim())
        throw std::invalid_argument(std::string(who) + ": axis out of range");
    AxisSplit s;
    for (std::size_t i = 0; i < x.ndim(); ++i) {
        const std::size_t d = x.dim(i);
        if (i < static_cast<std::size_t>(axis))
            s.outer *= d;
        else if (i == static_cast<std::size_t>(axis))
            s.n = d;
        else
            s.inner *= d;
    }
    return s;
}

template <class T, class F>
Tensor map_unary(const Tensor& x, F&& f) {
    Tensor out(x.dims(), x.dtype());
    auto xs = x.data<T>();
    auto os = out.data<T>();
    for (std::size_t i = 0; i < xs.size(); ++i) os[i] = f(xs[i]);
    return out;
}

}  // namespace

// --------------------------- elementwise -----------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    require_same(a, b, "add");
    Tensor out(a.dims(), a.dtype());
    dispatch_dtype(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto as = a.data<T>(), bs = b.data<T>();
        auto os = out.data<T>();
        for (std::size_t i = 0; i < as.size(); ++i) os[i] = as[i] + bs[i];
    });
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same(a, b, "sub");
    Tensor out(a.dims(), a.dtype());
    dispatch_dtype(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto as = a.data<T>(), bs = b.data<T>();
        auto os = out.data<T>();
        for (std::size_t i = 0; i < as.size(); ++i) os[i] = as[i] - bs[i];
    });
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same(a, b, "mul");
    Tensor out(a.dims(), a.dtype());
    dispatch_dtype(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto as = a.data<T>(), bs = b.data<T>();
        auto os = out.data<T>();
        for (std::size_t i = 0; i < as.size(); ++i) os[i] = as[i] * bs[i];
    });
    return out;
}

Tensor scale(const Tensor& a, double c) {
    return dispatch_dtype(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        return map_unary<T>(a, [cc = static_cast<T>(c)](T v) { return v * cc; });
    });
}

void add_inplace(Tensor& dst, const Tensor& src) {
    require_same(dst, src, "add_inplace");
    dispatch_dtype(dst.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto d = dst.data<T>();
        auto s = src.data<T>();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
    });
}

Tensor sum_all(const Tensor& a) {
    Tensor out({1}, a.dtype());
    dispatch_dtype(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        T acc = 0;
        for (T v : a.data<T>()) acc += v;
        out.data<T>()[0] = acc;
    });
    return out;
}

Tensor gelu(const Tensor& x) {
    return dispatch_dtype(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        return map_unary<T>(x, [](T v) {
            const double d = static_cast<double>(v);
            return static_cast<T>(0.5 * d * (1.0 + std::erf(d / std::sqrt(2.0))));
        });
    });
}

Tensor gelu_vjp(const Tensor& x, const Tensor& g) {
    require_same(x, g, "gelu_vjp");
    Tensor out(x.dims(), x.dtype());
    dispatch_dtype(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto xs = x.data<T>(), gs = g.data<T>();
        auto os = out.data<T>();
        const double inv_sqrt_2pi = 0.3989422804014327;
        for (std::size_t i = 0; i < xs.size(); ++i) {
            const double d = static_cast<double>(xs[i]);
            const double cdf = 0.5 * (1.0 + std::erf(d / std::sqrt(2.0)));
            const double pdf = inv_sqrt_2pi * std::exp(-0.5 * d * d);
            os[i] = static_cast<T>(static_cast<double>(gs[i]) * (cdf + d * pdf));
        }
    });
    return out;
}

Tensor spow(const Tensor& o, double lam) {
    return dispatch_dtype(o.dtype(), [&](auto tag) {
        using T = decltype(tag);
        return map_unary<T>(o, [lam](T v) {
            if (lam == 1.0) return v;
            const double d = static_cast<double>(v);
            if (d == 0.0) return static_cast<T>(0);
            const double s = d < 0.0 ? -1.0 : 1.0;
            return static_cast<T>(s * std::pow(std::abs(d), lam));
        });
    });
}

Tensor spow_vjp(const Tensor& o, double lam, const Tensor& g) {
    require_same(o, g, "spow_vjp");
    Tensor out(o.dims(), o.dtype());
    dispatch_dtype(o.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto os_ = o.data<T>(), gs = g.data<T>();
        auto out_s = out.data<T>();
        for (std::size_t i = 0; i < os_.size(); ++i) {
            double deriv;
            if (lam == 1.0) {
                deriv = 1.0;
            } else {
                const double a = std::abs(static_cast<double>(os_[i]));
                deriv = a == 0.0 ? 0.0 : lam * std::pow(a, lam - 1.0);
            }
            out_s[i] = static_cast<T>(static_cast<double>(gs[i]) * deriv);
        }
    });
    return out;
}

// --------------------------- softmax / filter norm -------------------------

Tensor softmax_over(const Tensor& x, int axis) {
    const AxisSplit s = split_axis(x, axis, "softmax_over");
    Tensor out(x.dims(), x.dtype());
    dispatch_dtype(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto xs = x.data<T>();
        auto os = out.data<T>();
        for (std::size_t o = 0; o < s.outer; ++o) {
            for (std::size_t in = 0; in < s.inner; ++in) {
                const std::size_t base = o * s.n * s.inner + in;
                double mx = -std::numeric_limits<double>::infinity();
                for (std::size_t j = 0; j < s.n; ++j) {
                    const double v = static_cast<double>(xs[base + j * s.inner]);
                    if (std::isnan(v)) throw std::invalid_argument("softmax_over: NaN input rejected");
                    mx = std::max(mx, v);
                }
                double denom = 0.0;
                for (std::size_t j = 0; j < s.n; ++j)
                    denom += std::exp(static_cast<double>(xs[base + j * s.inner]) - mx);
                for (std::size_t j = 0; j < s.n; ++j)
                    os[base + j * s.inner] = static_cast<T>(
                        std::exp(static_cast<double>(xs[base + j * s.inner]) - mx) / denom);
            }
        }
    });
    return out;
}

Tensor softmax_vjp(const Tensor& y, const Tensor& g, int axis) {
    require_same(y, g, "softmax_vjp");
    const AxisSplit s = split_axis(y, axis, "softmax_vjp");
    Tensor out(y.dims(), y.dtype());
    dispatch_dtype(y.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto ys = y.data<T>(), gs = g.data<T>();
        auto os = out.data<T>();
        for (std::size_t o = 0; o < s.outer; ++o) {
            for (std::size_t in = 0; in < s.inner; ++in) {
                const std::size_t base = o * s.n * s.inner + in;
                double dot = 0.0;
                for (std::size_t j = 0; j < s.n; ++j) {
                    const std::size_t k = base + j * s.inner;
                    dot += static_cast<double>(ys[k]) * static_cast<double>(gs[k]);
                }
                for (std::size_t j = 0; j < s.n; ++j) {
                    const std::size_t k = base + j * s.inner;
                    os[k] = static_cast<T>(static_cast<double>(ys[k]) *
                                           (static_cast<double>(gs[k]) - dot));
                }
            }
        }
    });
    return out;
}

Tensor filter_normalize(const Tensor& x, int axis, double eps, bool* degenerate) {
    const AxisSplit s = split_axis(x, axis, "filter_normalize");
    if (degenerate) *degenerate = s.n < 2;
    Tensor out(x.dims(), x.dtype());
    if (s.n < 2) return out;  // all-zero slices
    dispatch_dtype(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto xs = x.data<T>();
        auto os = out.data<T>();
        for (std::size_t o = 0; o < s.outer; ++o) {
            for (std::size_t in = 0; in < s.inner; ++in) {
                const std::size_t base = o * s.n * s.inner + in;
                double mean = 0.0;
                for (std::size_t j = 0; j < s.n; ++j) mean += static_cast<double>(xs[base + j * s.inner]);
                mean /= static_cast<double>(s.n);
                double var = 0.0;
                for (std::size_t j = 0; j < s.n; ++j) {
                    const double d = static_cast<double>(xs[base + j * s.inner]) - mean;
                    var += d * d;
                }
                var /= static_cast<double>(s.n);
                const double denom = std::sqrt(var) + eps;
                for (std::size_t j = 0; j < s.n; ++j) {
                    const std::size_t k = base + j * s.inner;
                    const double d = static_cast<double>(xs[k]) - mean;
                    os[k] = static_cast<T>(denom == 0.0 ? 0.0 : d / denom);
                }
            }
        }
    });
    return out;
}

Tensor filter_normalize_vjp(const Tensor& x, int axis, double eps, const Tensor& g) {
    require_same(x, g, "filter_normalize_vjp");
    const AxisSplit s = split_axis(x, axis, "filter_normalize_vjp");
    Tensor out(x.dims(), x.dtype());
    if (s.n < 2) return out;  // degenerate slices carry no gradient
    dispatch_dtype(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto xs = x.data<T>(), gs = g.data<T>();
        auto os = out.data<T>();
        for (std::size_t o = 0; o < s.outer; ++o) {
            for (std::size_t in = 0; in < s.inner; ++in) {
                const std::size_t base = o * s.n * s.inner + in;
                double mean = 0.0, gmean = 0.0;
                for (std::size_t j = 0; j < s.n; ++j) {
                    mean += static_cast<double>(xs[base + j * s.inner]);
                    gmean += static_cast<double>(gs[base + j * s.inner]);
                }
                mean /= static_cast<double>(s.n);
                gmean /= static_cast<double>(s.n);
                double var = 0.0, gdotc = 0.0;
                for (std::size_t j = 0; j < s.n; ++j) {
                    const std::size_t k = base + j * s.inner;
                    const double c = static_cast<double>(xs[k]) - mean;
                    var += c * c;
                    gdotc += static_cast<double>(gs[k]) * c;
                }
                var /= static_cast<double>(s.n);
                const double sd = std::sqrt(var);
                const double denom = sd + eps;
                if (sd == 0.0) continue;  // constant slice: non-differentiable point, grad 0
                const double scale2 = gdotc / (denom * denom * static_cast<double>(s.n) * sd);
                for (std::size_t j = 0; j < s.n; ++j) {
                    const std::size_t k = base + j * s.inner;
                    const double c = static_cast<double>(xs[k]) - mean;
                    os[k] = static_cast<T>((static_cast<double>(gs[k]) - gmean) / denom - scale2 * c);
                }
            }
        }
    });
    return out;
}

// --------------------------- unfold / fold ---------------------------------

Tensor unfold(const Tensor& x, int kernel_size) {
    require(x.ndim() == 4, "unfold: input must be 4D (B,C,H,W)");
    require(kernel_size >= 1 && kernel_size % 2 == 1, "unfold: kernel size must be odd");
    const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t KK = static_cast<std::size_t>(kernel_size) * kernel_size;
    const std::size_t P = H * W;
    const int r = (kernel_size - 1) / 2;
    Tensor out({B, C, KK, P}, x.dtype());
    dispatch_dtype(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto xs = x.data<T>();
        auto os = out.data<T>();
        for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t c = 0; c < C; ++c) {
                const T* src = xs.data() + (b * C + c) * P;
                T* dst = os.data() + (b * C + c) * KK * P;
                std::size_t t = 0;
                for (int dy = -r; dy <= r; ++dy) {
                    for (int dx = -r; dx <= r; ++dx, ++t) {
                        T* row = dst + t * P;
                        for (std::size_t h = 0; h < H; ++h) {
                            const long sy = static_cast<long>(h) + dy;
                            if (sy < 0 || sy >= static_cast<long>(H)) continue;  // row stays zero
                            for (std::size_t w = 0; w < W; ++w) {
                                const long sx = static_cast<long>(w) + dx;
                                if (sx < 0 || sx >= static_cast<long>(W)) continue;
                                row[h * W + w] = src[static_cast<std::size_t>(sy) * W + sx];
                            }
                        }
                    }
                }
            }
        }
    });
    return out;
}

Tensor fold_add(const Tensor& g, int kernel_size, std::size_t height, std::size_t width) {
    require(g.ndim() == 4, "fold_add: input must be 4D (B,C,K*K,H*W)");
    const std::size_t B = g.dim(0), C = g.dim(1), KK = g.dim(2), P = g.dim(3);
    require(KK == static_cast<std::size_t>(kernel_size) * kernel_size, "fold_add: patch axis mismatch");
    require(P == height * width, "fold_add: pixel axis mismatch");
    const int r = (kernel_size - 1) / 2;
    Tensor out({B, C, height, width}, g.dtype());
    dispatch_dtype(g.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto gs = g.data<T>();
        auto os = out.data<T>();
        for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t c = 0; c < C; ++c) {
                T* dst = os.data() + (b * C + c) * P;
                const T* src = gs.data() + (b * C + c) * KK * P;
                std::size_t t = 0;
                for (int dy = -r; dy <= r; ++dy) {
                    for (int dx = -r; dx <= r; ++dx, ++t) {
                        const T* row = src + t * P;
                        for (std::size_t h = 0; h < height; ++h) {
                            const long sy = static_cast<long>(h) + dy;
                            if (sy < 0 || sy >= static_cast<long>(height)) continue;
                            for (std::size_t w = 0; w < width; ++w) {
                                const long sx = static_cast<long>(w) + dx;
                                if (sx < 0 || sx >= static_cast<long>(width)) continue;
                                dst[static_cast<std::size_t>(sy) * width + sx] += row[h * width + w];
                            }
                        }
                    }
                }
            }
        }
    });
    return out;
}

// --------------------------- channel contractions --------------------------

Tensor contract_channel(const Tensor& x, const Tensor& table) {
    require(x.ndim() == 4, "contract_channel: x must be (B,C,H,W)");
    require(table.ndim() == 3, "contract_channel: table must be (C,G,T)");
    require(x.dim(1) == table.dim(0), "contract_channel: channel extents must match");
    require(x.dtype() == table.dtype(), "contract_channel: dtype mismatch");
    const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t G = table.dim(1), T_ = table.dim(2), P = H * W;
    Tensor out({B, G, T_, H, W}, x.dtype());
    dispatch_dtype(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto xs = x.data<T>();
        auto ts = table.data<T>();
        auto os = out.data<T>();
        for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t c = 0; c < C; ++c) {
                const T* src = xs.data() + (b * C + c) * P;
                for (std::size_t g = 0; g < G; ++g) {
                    for (std::size_t t = 0; t < T_; ++t) {
                        const T coef = ts[(c * G + g) * T_ + t];
                        if (coef == T{0}) continue;
                        T* dst = os.data() + ((b * G + g) * T_ + t) * P;
                        for (std::size_t p = 0; p < P; ++p) dst[p] += coef * src[p];
                    }
                }
            }
        }
    });
    return out;
}

Tensor contract_channel_vjp_x(const Tensor& g, const Tensor& table, std::size_t channels) {
    const std::size_t B = g.dim(0), G = g.dim(1), T_ = g.dim(2), H = g.dim(3), W = g.dim(4);
    const std::size_t P = H * W;
    Tensor out({B, channels, H, W}, g.dtype());
    dispatch_dtype(g.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto gs = g.data<T>();
        auto ts = table.data<T>();
        auto os = out.data<T>();
        for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t c = 0; c < channels; ++c) {
                T* dst = os.data() + (b * channels + c) * P;
                for (std::size_t gh = 0; gh < G; ++gh) {
                    for (std::size_t t = 0; t < T_; ++t) {
                        const T coef = ts[(c * G + gh) * T_ + t];
                        if (coef == T{0}) continue;
                        const T* src = gs.data() + ((b * G + gh) * T_ + t) * P;
                        for (std::size_t p = 0; p < P; ++p) dst[p] += coef * src[p];
                    }
                }
            }
        }
    });
    return out;
}

Tensor contract_channel_vjp_table(const Tensor& g, const Tensor& x) {
    const std::size_t B = g.dim(0), G = g.dim(1), T_ = g.dim(2), H = g.dim(3), W = g.dim(4);
    const std::size_t C = x.dim(1), P = H * W;
    Tensor out({C, G, T_}, g.dtype());
    dispatch_dtype(g.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto gs = g.data<T>();
        auto xs = x.data<T>();
        auto os = out.data<T>();
        for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t c = 0; c < C; ++c) {
                const T* src = xs.data() + (b * C + c) * P;
                for (std::size_t gh = 0; gh < G; ++gh) {
                    for (std::size_t t = 0; t < T_; ++t) {
                        const T* grow = gs.data() + ((b * G + gh) * T_ + t) * P;
                        T acc = 0;
                        for (std::size_t p = 0; p < P; ++p) acc += grow[p] * src[p];
                        os[(c * G + gh) * T_ + t] += acc;
                    }
                }
            }
        }
    });
    return out;
}

Tensor contract_unfolded(const Tensor& xu, const Tensor& table) {
    require(xu.ndim() == 4, "contract_unfolded: xu must be (B,C,T,P)");
    require(table.ndim() == 3 && table.dim(0) == xu.dim(1) && table.dim(2) == xu.dim(2),
            "contract_unfolded: table must be (C,G,T) matching xu");
    const std::size_t B = xu.dim(0), C = xu.dim(1), T_ = xu.dim(2), P = xu.dim(3);
    const std::size_t G = table.dim(1);
    Tensor out({B, G, T_, P}, xu.dtype());
    dispatch_dtype(xu.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto xs = xu.data<T>();
        auto ts = table.data<T>();
        auto os = out.data<T>();
        for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t c = 0; c < C; ++c) {
                for (std::size_t g = 0; g < G; ++g) {
                    for (std::size_t t = 0; t < T_; ++t) {
                        const T coef = ts[(c * G + g) * T_ + t];
                        if (coef == T{0}) continue;
                        const T* src = xs.data() + ((b * C + c) * T_ + t) * P;
                        T* dst = os.data() + ((b * G + g) * T_ + t) * P;
                        for (std::size_t p = 0; p < P; ++p) dst[p] += coef * src[p];
                    }
                }
            }
        }
    });
    return out;
}

Tensor contract_unfolded_vjp_x(const Tensor& g, const Tensor& table, std::size_t channels) {
    const std::size_t B = g.dim(0), G = g.dim(1), T_ = g.dim(2), P = g.dim(3);
    Tensor out({B, channels, T_, P}, g.dtype());
    dispatch_dtype(g.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto gs = g.data<T>();
        auto ts = table.data<T>();
        auto os = out.data<T>();
        for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t c = 0; c < channels; ++c) {
                for (std::size_t gh = 0; gh < G; ++gh) {
                    for (std::size_t t = 0; t < T_; ++t) {
                        const T coef = ts[(c * G + gh) * T_ + t];
                        if (coef == T{0}) continue;
                        const T* src = gs.data() + ((b * G + gh) * T_ + t) * P;
                        T* dst = os.data() + ((b * channels + c) * T_ + t) * P;
                        for (std::size_t p = 0; p < P; ++p) dst[p] += coef * src[p];
                    }
                }
            }
        }
    });
    return out;
}

Tensor contract_unfolded_vjp_table(const Tensor& g, const Tensor& xu) {
    const std::size_t B = g.dim(0), G = g.dim(1), T_ = g.dim(2), P = g.dim(3);
    const std::size_t C = xu.dim(1);
    Tensor out({C, G, T_}, g.dtype());
    dispatch_dtype(g.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto gs = g.data<T>();
        auto xs = xu.data<T>();
        auto os = out.data<T>();
        for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t c = 0; c < C; ++c) {
                for (std::size_t gh = 0; gh < G; ++gh) {
                    for (std::size_t t = 0; t < T_; ++t) {
                        const T* xrow = xs.data() + ((b * C + c) * T_ + t) * P;
                        const T* grow = gs.data() + ((b * G + gh) * T_ + t) * P;
                        T acc = 0;
                        for (std::size_t p = 0; p < P; ++p) acc += xrow[p] * grow[p];
                        os[(c * G + gh) * T_ + t] += acc;
                    }
                }
            }
        }
    });
    return out;
}

// --------------------------- per-head neighbor kernels ----------------------

Tensor head_dot(const Tensor& q, const Tensor& ku, std::size_t groups) {
    require(q.ndim() == 4 && ku.ndim() == 4, "head_dot: q (B,C,H,W), ku (B,C,T,P)");
    const std::size_t B = q.dim(0), C = q.dim(1);
    const std::size_t T_ = ku.dim(2), P = ku.dim(3);
    require(q.dim(2) * q.dim(3) == P && ku.dim(1) == C, "head_dot: shape mismatch");
    require(groups >= 1 && C % groups == 0, "head_dot: heads must divide channels");
    const std::size_t dh = C / groups;
    Tensor out({B, groups, T_, P}, q.dtype());
    dispatch_dtype(q.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto qs = q.data<T>();
        auto ks = ku.data<T>();
        auto os = out.data<T>();
        for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t g = 0; g < groups; ++g) {
                for (std::size_t d = 0; d < dh; ++d) {
                    const std::size_t c = g * dh + d;
                    const T* qrow = qs.data() + (b * C + c) * P;
                    for (std::size_t t = 0; t < T_; ++t) {
                        const T* krow = ks.data() + ((b * C + c) * T_ + t) * P;
                        T* dst = os.data() + ((b * groups + g) * T_ + t) * P;
                        for (std::size_t p = 0; p < P; ++p) dst[p] += qrow[p] * krow[p];
                    }
                }
            }
        }
    });
    return out;
}

Tensor head_dot_vjp_q(const Tensor& g, const Tensor& ku, std::size_t groups,
                      std::size_t height, std::size_t width) {
    const std::size_t B = g.dim(0), T_ = g.dim(2), P = g.dim(3);
    const std::size_t C = ku.dim(1), dh = C / groups;
    Tensor out({B, C, height, width}, g.dtype());
    dispatch_dtype(g.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto gs = g.data<T>();
        auto ks = ku.data<T>();
        auto os = out.data<T>();
        for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t gh = 0; gh < groups; ++gh) {
                for (std::size_t d = 0; d < dh; ++d) {
                    const std::size_t c = gh * dh + d;
                    T* dst = os.data() + (b * C + c) * P;
                    for (std::size_t t = 0; t < T_; ++t) {
                        const T* grow = gs.data() + ((b * groups + gh) * T_ + t) * P;
                        const T* krow = ks.data() + ((b * C + c) * T_ + t) * P;
                        for (std::size_t p = 0; p < P; ++p) dst[p] += grow[p] * krow[p];
                    }
                }
            }
        }
    });
    return out;
}

Tensor head_dot_vjp_ku(const Tensor& g, const Tensor& q, std::size_t groups) {
    const std::size_t B = g.dim(0), T_ = g.dim(2), P = g.dim(3);
    const std::size_t C = q.dim(1), dh = C / groups;
    Tensor out({B, C, T_, P}, g.dtype());
    dispatch_dtype(g.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto gs = g.data<T>();
        auto qs = q.data<T>();
        auto os = out.data<T>();
        for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t gh = 0; gh < groups; ++gh) {
                for (std::size_t d = 0; d < dh; ++d) {
                    const std::size_t c = gh * dh + d;
                    const T* qrow = qs.data() + (b * C + c) * P;
                    for (std::size_t t = 0; t < T_; ++t) {
                        const T* grow = gs.data() + ((b * groups + gh) * T_ + t) * P;
                        T* dst = os.data() + ((b * C + c) * T_ + t) * P;
                        for (std::size_t p = 0; p < P; ++p) dst[p] += grow[p] * qrow[p];
                    }
                }
            }
        }
    });
    return out;
}

Tensor head_contract(const Tensor& x, const Tensor& tbl) {
    require(x.ndim() == 4 && tbl.ndim() == 3, "head_contract: x (B,C,H,W), tbl (dh,G,T)");
    const std::size_t B = x.dim(0), C = x.dim(1), P = x.dim(2) * x.dim(3);
    const std::size_t dh = tbl.dim(0), G = tbl.dim(1), T_ = tbl.dim(2);
    require(dh * G == C, "head_contract: dh*G must equal channels");
    Tensor out({B, G, T_, P}, x.dtype());
    dispatch_dtype(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto xs = x.data<T>();
        auto ts = tbl.data<T>();
        auto os = out.data<T>();
        for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t g = 0; g < G; ++g) {
                for (std::size_t d = 0; d < dh; ++d) {
                    const T* src = xs.data() + (b * C + g * dh + d) * P;
                    for (std::size_t t = 0; t < T_; ++t) {
                        const T coef = ts[(d * G + g) * T_ + t];
                        if (coef == T{0}) continue;
                        T* dst = os.data() + ((b * G + g) * T_ + t) * P;
                        for (std::size_t p = 0; p < P; ++p) dst[p] += coef * src[p];
                    }
                }
            }
        }
    });
    return out;
}

Tensor head_contract_vjp_x(const Tensor& g, const Tensor& tbl, std::size_t height, std::size_t width) {
    const std::size_t B = g.dim(0), G = g.dim(1), T_ = g.dim(2), P = g.dim(3);
    const std::size_t dh = tbl.dim(0), C = dh * G;
    Tensor out({B, C, height, width}, g.dtype());
    dispatch_dtype(g.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto gs = g.data<T>();
        auto ts = tbl.data<T>();
        auto os = out.data<T>();
        for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t gh = 0; gh < G; ++gh) {
                for (std::size_t d = 0; d < dh; ++d) {
                    T* dst = os.data() + (b * C + gh * dh + d) * P;
                    for (std::size_t t = 0; t < T_; ++t) {
                        const T coef = ts[(d * G + gh) * T_ + t];
                        if (coef == T{0}) continue;
                        const T* src = gs.data() + ((b * G + gh) * T_ + t) * P;
                        for (std::size_t p = 0; p < P; ++p) dst[p] += coef * src[p];
                    }
                }
            }
        }
    });
    return out;
}

Tensor head_contract_vjp_tbl(const Tensor& g, const Tensor& x) {
    const std::size_t B = g.dim(0), G = g.dim(1), T_ = g.dim(2), P = g.dim(3);
    const std::size_t C = x.dim(1), dh = C / G;
    Tensor out({dh, G, T_}, g.dtype());
    dispatch_dtype(g.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto gs = g.data<T>();
        auto xs = x.data<T>();
        auto os = out.data<T>();
        for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t gh = 0; gh < G; ++gh) {
                for (std::size_t d = 0; d < dh; ++d) {
                    const T* src = xs.data() + (b * C + gh * dh + d) * P;
                    for (std::size_t t = 0; t < T_; ++t) {
                        const T* grow = gs.data() + ((b * G + gh) * T_ + t) * P;
                        T acc = 0;
                        for (std::size_t p = 0; p < P; ++p) acc += src[p] * grow[p];
                        os[(d * G + gh) * T_ + t] += acc;
                    }
                }
            }
        }
    });
    return out;
}

Tensor head_contract_unfolded(const Tensor& ku, const Tensor& tbl) {
    require(ku.ndim() == 4 && tbl.ndim() == 3, "head_contract_unfolded: ku (B,C,T,P), tbl (dh,G,T)");
    const std::size_t B = ku.dim(0), C = ku.dim(1), T_ = ku.dim(2), P = ku.dim(3);
    const std::size_t dh = tbl.dim(0), G = tbl.dim(1);
    require(dh * G == C && tbl.dim(2) == T_, "head_contract_unfolded: shape mismatch");
    Tensor out({B, G, T_, P}, ku.dtype());
    dispatch_dtype(ku.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto ks = ku.data<T>();
        auto ts = tbl.data<T>();
        auto os = out.data<T>();
        for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t g = 0; g < G; ++g) {
                for (std::size_t d = 0; d < dh; ++d) {
                    const std::size_t c = g * dh + d;
                    for (std::size_t t = 0; t < T_; ++t) {
                        const T coef = ts[(d * G + g) * T_ + t];
                        if (coef == T{0}) continue;
                        const T* src = ks.data() + ((b * C + c) * T_ + t) * P;
                        T* dst = os.data() + ((b * G + g) * T_ + t) * P;
                        for (std::size_t p = 0; p < P; ++p) dst[p] += coef * src[p];
                    }
                }
            }
        }
    });
    return out;
}

Tensor head_contract_unfolded_vjp_ku(const Tensor& g, const Tensor& tbl, std::size_t channels) {
    const std::size_t B = g.dim(0), G = g.dim(1), T_ = g.dim(2), P = g.dim(3);
    const std::size_t dh = channels / G;
    Tensor out({B, channels, T_, P}, g.dtype());
    dispatch_dtype(g.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto gs = g.data<T>();
        auto ts = tbl.data<T>();
        auto os = out.data<T>();
        for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t gh = 0; gh < G; ++gh) {
                for (std::size_t d = 0; d < dh; ++d) {
                    const std::size_t c = gh * dh + d;
                    for (std::size_t t = 0; t < T_; ++t) {
                        const T coef = ts[(d * G + gh) * T_ + t];
                        if (coef == T{0}) continue;
                        const T* src = gs.data() + ((b * G + gh) * T_ + t) * P;
                        T* dst = os.data() + ((b * channels + c) * T_ + t) * P;
                        for (std::size_t p = 0; p < P; ++p) dst[p] += coef * src[p];
                    }
                }
            }
        }
    });
    return out;
}

Tensor head_contract_unfolded_vjp_tbl(const Tensor& g, const Tensor& ku) {
    const std::size_t B = g.dim(0), G = g.dim(1), T_ = g.dim(2), P = g.dim(3);
    const std::size_t C = ku.dim(1), dh = C / G;
    Tensor out({dh, G, T_}, g.dtype());
    dispatch_dtype(g.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto gs = g.data<T>();
        auto ks = ku.data<T>();
        auto os = out.data<T>();
        for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t gh = 0; gh < G; ++gh) {
                for (std::size_t d = 0; d < dh; ++d) {
                    const std::size_t c = gh * dh + d;
                    for (std::size_t t = 0; t < T_; ++t) {
                        const T* krow = ks.data() + ((b * C + c) * T_ + t) * P;
                        const T* grow = gs.data() + ((b * G + gh) * T_ + t) * P;
                        T acc = 0;
                        for (std::size_t p = 0; p < P; ++p) acc += krow[p] * grow[p];
                        os[(d * G + gh) * T_ + t] += acc;
                    }
                }
            }
        }
    });
    return out;
}

Tensor add_bias_gt(const Tensor& x, const Tensor& bias) {
    require(x.ndim() == 4 && bias.ndim() == 2, "add_bias_gt: x (B,G,T,P), bias (G,T)");
    require(x.dim(1) == bias.dim(0) && x.dim(2) == bias.dim(1), "add_bias_gt: shape mismatch");
    const std::size_t B = x.dim(0), G = x.dim(1), T_ = x.dim(2), P = x.dim(3);
    Tensor out(x.dims(), x.dtype());
    dispatch_dtype(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto xs = x.data<T>();
        auto bs = bias.data<T>();
        auto os = out.data<T>();
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t g = 0; g < G; ++g)
                for (std::size_t t = 0; t < T_; ++t) {
                    const T bv = bs[g * T_ + t];
                    const std::size_t base = ((b * G + g) * T_ + t) * P;
                    for (std::size_t p = 0; p < P; ++p) os[base + p] = xs[base + p] + bv;
                }
    });
    return out;
}

Tensor add_bias_gt_vjp_bias(const Tensor& g) {
    const std::size_t B = g.dim(0), G = g.dim(1), T_ = g.dim(2), P = g.dim(3);
    Tensor out({G, T_}, g.dtype());
    dispatch_dtype(g.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto gs = g.data<T>();
        auto os = out.data<T>();
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t gh = 0; gh < G; ++gh)
                for (std::size_t t = 0; t < T_; ++t) {
                    const std::size_t base = ((b * G + gh) * T_ + t) * P;
                    T acc = 0;
                    for (std::size_t p = 0; p < P; ++p) acc += gs[base + p];
                    os[gh * T_ + t] += acc;
                }
    });
    return out;
}

Tensor apply_neighbor(const Tensor& attn, const Tensor& vu) {
    require(attn.ndim() == 4 && vu.ndim() == 4, "apply_neighbor: attn (B,G,T,P), vu (B,C,T,P)");
    const std::size_t B = attn.dim(0), G = attn.dim(1), T_ = attn.dim(2), P = attn.dim(3);
    const std::size_t C = vu.dim(1);
    require(vu.dim(0) == B && vu.dim(2) == T_ && vu.dim(3) == P && C % G == 0,
            "apply_neighbor: shape mismatch");
    const std::size_t dh = C / G;
    Tensor out({B, C, P}, attn.dtype());
    dispatch_dtype(attn.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto as = attn.data<T>();
        auto vs = vu.data<T>();
        auto os = out.data<T>();
        for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t g = 0; g < G; ++g) {
                for (std::size_t d = 0; d < dh; ++d) {
                    const std::size_t c = g * dh + d;
                    T* dst = os.data() + (b * C + c) * P;
                    for (std::size_t t = 0; t < T_; ++t) {
                        const T* arow = as.data() + ((b * G + g) * T_ + t) * P;
                        const T* vrow = vs.data() + ((b * C + c) * T_ + t) * P;
                        for (std::size_t p = 0; p < P; ++p) dst[p] += arow[p] * vrow[p];
                    }
                }
            }
        }
    });
    return out;
}

Tensor apply_neighbor_vjp_attn(const Tensor& g, const Tensor& vu, std::size_t groups) {
    const std::size_t B = g.dim(0), C = g.dim(1), P = g.dim(2);
    const std::size_t T_ = vu.dim(2), dh = C / groups;
    Tensor out({B, groups, T_, P}, g.dtype());
    dispatch_dtype(g.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto gs = g.data<T>();
        auto vs = vu.data<T>();
        auto os = out.data<T>();
        for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t gh = 0; gh < groups; ++gh) {
                for (std::size_t d = 0; d < dh; ++d) {
                    const std::size_t c = gh * dh + d;
                    const T* grow = gs.data() + (b * C + c) * P;
                    for (std::size_t t = 0; t < T_; ++t) {
                        const T* vrow = vs.data() + ((b * C + c) * T_ + t) * P;
                        T* dst = os.data() + ((b * groups + gh) * T_ + t) * P;
                        for (std::size_t p = 0; p < P; ++p) dst[p] += grow[p] * vrow[p];
                    }
                }
            }
        }
    });
    return out;
}

Tensor apply_neighbor_vjp_vu(const Tensor& g, const Tensor& attn) {
    const std::size_t B = g.dim(0), C = g.dim(1), P = g.dim(2);
    const std::size_t G = attn.dim(1), T_ = attn.dim(2), dh = C / G;
    Tensor out({B, C, T_, P}, g.dtype());
    dispatch_dtype(g.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto gs = g.data<T>();
        auto as = attn.data<T>();
        auto os = out.data<T>();
        for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t gh = 0; gh < G; ++gh) {
                for (std::size_t d = 0; d < dh; ++d) {
                    const std::size_t c = gh * dh + d;
                    const T* grow = gs.data() + (b * C + c) * P;
                    for (std::size_t t = 0; t < T_; ++t) {
                        const T* arow = as.data() + ((b * G + gh) * T_ + t) * P;
                        T* dst = os.data() + ((b * C + c) * T_ + t) * P;
                        for (std::size_t p = 0; p < P; ++p) dst[p] = grow[p] * arow[p];
                    }
                }
            }
        }
    });
    return out;
}

Tensor expand_heads(const Tensor& h, std::size_t channels) {
    require(h.ndim() == 4, "expand_heads: input must be (B,G,T,P)");
    const std::size_t B = h.dim(0), G = h.dim(1), T_ = h.dim(2), P = h.dim(3);
    require(channels % G == 0 && channels >= G, "expand_heads: heads must divide channels");
    Tensor out({B, channels, T_, P}, h.dtype());
    dispatch_dtype(h.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto hs = h.data<T>();
        auto os = out.data<T>();
        const std::size_t slab = T_ * P;
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t c = 0; c < channels; ++c) {
                const T* src = hs.data() + (b * G + c % G) * slab;
                T* dst = os.data() + (b * channels + c) * slab;
                for (std::size_t i = 0; i < slab; ++i) dst[i] = src[i];
            }
    });
    return out;
}

Tensor expand_heads_vjp(const Tensor& g, std::size_t groups) {
    const std::size_t B = g.dim(0), C = g.dim(1), T_ = g.dim(2), P = g.dim(3);
    Tensor out({B, groups, T_, P}, g.dtype());
    dispatch_dtype(g.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto gs = g.data<T>();
        auto os = out.data<T>();
        const std::size_t slab = T_ * P;
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t c = 0; c < C; ++c) {
                const T* src = gs.data() + (b * C + c) * slab;
                T* dst = os.data() + (b * groups + c % groups) * slab;
                for (std::size_t i = 0; i < slab; ++i) dst[i] += src[i];
            }
    });
    return out;
}

Tensor mul_table_ct(const Tensor& x, const Tensor& m) {
    require(x.ndim() == 4 && m.ndim() == 2, "mul_table_ct: x (B,C,T,P), m (C,T)");
    require(x.dim(1) == m.dim(0) && x.dim(2) == m.dim(1), "mul_table_ct: shape mismatch");
    const std::size_t B = x.dim(0), C = x.dim(1), T_ = x.dim(2), P = x.dim(3);
    Tensor out(x.dims(), x.dtype());
    dispatch_dtype(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto xs = x.data<T>();
        auto ms = m.data<T>();
        auto os = out.data<T>();
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t t = 0; t < T_; ++t) {
                    const T coef = ms[c * T_ + t];
                    const std::size_t base = ((b * C + c) * T_ + t) * P;
                    for (std::size_t p = 0; p < P; ++p) os[base + p] = coef * xs[base + p];
                }
    });
    return out;
}

Tensor mul_table_ct_vjp_x(const Tensor& g, const Tensor& m) { return mul_table_ct(g, m); }

Tensor mul_table_ct_vjp_m(const Tensor& g, const Tensor& x) {
    const std::size_t B = g.dim(0), C = g.dim(1), T_ = g.dim(2), P = g.dim(3);
    Tensor out({C, T_}, g.dtype());
    dispatch_dtype(g.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto gs = g.data<T>();
        auto xs = x.data<T>();
        auto os = out.data<T>();
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t t = 0; t < T_; ++t) {
                    const std::size_t base = ((b * C + c) * T_ + t) * P;
                    T acc = 0;
                    for (std::size_t p = 0; p < P; ++p) acc += gs[base + p] * xs[base + p];
                    os[c * T_ + t] += acc;
                }
    });
    return out;
}

Tensor add_table_ct(const Tensor& x, const Tensor& s) {
    require(x.ndim() == 4 && s.ndim() == 2, "add_table_ct: x (B,C,T,P), s (C,T)");
    require(x.dim(1) == s.dim(0) && x.dim(2) == s.dim(1), "add_table_ct: shape mismatch");
    const std::size_t B = x.dim(0), C = x.dim(1), T_ = x.dim(2), P = x.dim(3);
    Tensor out(x.dims(), x.dtype());
    dispatch_dtype(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto xs = x.data<T>();
        auto ss = s.data<T>();
        auto os = out.data<T>();
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t t = 0; t < T_; ++t) {
                    const T sv = ss[c * T_ + t];
                    const std::size_t base = ((b * C + c) * T_ + t) * P;
                    for (std::size_t p = 0; p < P; ++p) os[base + p] = xs[base + p] + sv;
                }
    });
    return out;
}

Tensor add_table_ct_vjp_s(const Tensor& g) {
    const std::size_t B = g.dim(0), C = g.dim(1), T_ = g.dim(2), P = g.dim(3);
    Tensor out({C, T_}, g.dtype());
    dispatch_dtype(g.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto gs = g.data<T>();
        auto os = out.data<T>();
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t t = 0; t < T_; ++t) {
                    const std::size_t base = ((b * C + c) * T_ + t) * P;
                    T acc = 0;
                    for (std::size_t p = 0; p < P; ++p) acc += gs[base + p];
                    os[c * T_ + t] += acc;
                }
    });
    return out;
}

}  // namespace latt
