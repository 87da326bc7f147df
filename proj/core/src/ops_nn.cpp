#include <cmath>
#include <stdexcept>

#include "latt/ops.hpp"

namespace latt {

namespace {

void require(bool cond, const char* msg) {
    if (!cond) throw std::invalid_argument(msg);
}

}  // namespace

Tensor conv2d_grouped(const Tensor& x, const Tensor& w, const Tensor* bias, std::size_t groups) {
    require(x.ndim() == 4 && w.ndim() == 4, "conv2d_grouped: x (B,Ci,H,W), w (Co,Ci/g,Kh,Kw)");
    const std::size_t B = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t Co = w.dim(0), Cig = w.dim(1), Kh = w.dim(2), Kw = w.dim(3);
    require(groups >= 1 && Ci % groups == 0 && Co % groups == 0, "conv2d_grouped: bad group count");
    require(Cig == Ci / groups, "conv2d_grouped: weight channel extent mismatch");
    require(Kh % 2 == 1 && Kw % 2 == 1, "conv2d_grouped: kernel extents must be odd");
    if (bias) require(bias->ndim() == 1 && bias->dim(0) == Co, "conv2d_grouped: bias extent mismatch");
    const std::size_t Cog = Co / groups;
    const int ry = static_cast<int>(Kh - 1) / 2, rx = static_cast<int>(Kw - 1) / 2;
    Tensor out({B, Co, H, W}, x.dtype());
    dispatch_dtype(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto xs = x.data<T>();
        auto ws = w.data<T>();
        auto os = out.data<T>();
        const std::size_t P = H * W;
        for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t co = 0; co < Co; ++co) {
                const std::size_t grp = co / Cog;
                T* dst = os.data() + (b * Co + co) * P;
                if (bias) {
                    const T bv = bias->data<T>()[co];
                    for (std::size_t p = 0; p < P; ++p) dst[p] = bv;
                }
                for (std::size_t cg = 0; cg < Cig; ++cg) {
                    const std::size_t ci = grp * Cig + cg;
                    const T* src = xs.data() + (b * Ci + ci) * P;
                    const T* ker = ws.data() + (co * Cig + cg) * Kh * Kw;
                    for (std::size_t ky = 0; ky < Kh; ++ky) {
                        const int dy = static_cast<int>(ky) - ry;
                        for (std::size_t kx = 0; kx < Kw; ++kx) {
                            const int dx = static_cast<int>(kx) - rx;
                            const T coef = ker[ky * Kw + kx];
                            if (coef == T{0}) continue;
                            const std::size_t h0 = dy < 0 ? static_cast<std::size_t>(-dy) : 0;
                            const std::size_t h1 = dy > 0 ? (H > static_cast<std::size_t>(dy) ? H - static_cast<std::size_t>(dy) : 0) : H;
                            const std::size_t w0 = dx < 0 ? static_cast<std::size_t>(-dx) : 0;
                            const std::size_t w1 = dx > 0 ? (W > static_cast<std::size_t>(dx) ? W - static_cast<std::size_t>(dx) : 0) : W;
                            for (std::size_t h = h0; h < h1; ++h) {
                                const T* srow = src + (h + dy) * W + dx;
                                T* drow = dst + h * W;
                                for (std::size_t ww = w0; ww < w1; ++ww) drow[ww] += coef * srow[ww];
                            }
                        }
                    }
                }
            }
        }
    });
    return out;
}

Tensor conv2d_vjp_x(const Tensor& g, const Tensor& w, std::size_t groups, std::size_t in_channels) {
    const std::size_t B = g.dim(0), Co = g.dim(1), H = g.dim(2), W = g.dim(3);
    const std::size_t Cig = w.dim(1), Kh = w.dim(2), Kw = w.dim(3);
    const std::size_t Cog = Co / groups;
    const int ry = static_cast<int>(Kh - 1) / 2, rx = static_cast<int>(Kw - 1) / 2;
    Tensor out({B, in_channels, H, W}, g.dtype());
    dispatch_dtype(g.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto gs = g.data<T>();
        auto ws = w.data<T>();
        auto os = out.data<T>();
        const std::size_t P = H * W;
        for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t co = 0; co < Co; ++co) {
                const std::size_t grp = co / Cog;
                const T* grow = gs.data() + (b * Co + co) * P;
                for (std::size_t cg = 0; cg < Cig; ++cg) {
                    const std::size_t ci = grp * Cig + cg;
                    T* dst = os.data() + (b * in_channels + ci) * P;
                    const T* ker = ws.data() + (co * Cig + cg) * Kh * Kw;
                    for (std::size_t ky = 0; ky < Kh; ++ky) {
                        const int dy = static_cast<int>(ky) - ry;
                        for (std::size_t kx = 0; kx < Kw; ++kx) {
                            const int dx = static_cast<int>(kx) - rx;
                            const T coef = ker[ky * Kw + kx];
                            if (coef == T{0}) continue;
                            // out pixel (h,w) consumed x at (h+dy, w+dx)
                            const std::size_t h0 = dy < 0 ? static_cast<std::size_t>(-dy) : 0;
                            const std::size_t h1 = dy > 0 ? (H > static_cast<std::size_t>(dy) ? H - static_cast<std::size_t>(dy) : 0) : H;
                            const std::size_t w0 = dx < 0 ? static_cast<std::size_t>(-dx) : 0;
                            const std::size_t w1 = dx > 0 ? (W > static_cast<std::size_t>(dx) ? W - static_cast<std::size_t>(dx) : 0) : W;
                            for (std::size_t h = h0; h < h1; ++h) {
                                const T* grow2 = grow + h * W;
                                T* drow = dst + (h + dy) * W + dx;
                                for (std::size_t ww = w0; ww < w1; ++ww) drow[ww] += coef * grow2[ww];
                            }
                        }
                    }
                }
            }
        }
    });
    return out;
}

Tensor conv2d_vjp_w(const Tensor& g, const Tensor& x, std::size_t groups,
                    std::size_t kernel_h, std::size_t kernel_w) {
    const std::size_t B = g.dim(0), Co = g.dim(1), H = g.dim(2), W = g.dim(3);
    const std::size_t Ci = x.dim(1);
    const std::size_t Cig = Ci / groups, Cog = Co / groups;
    const int ry = static_cast<int>(kernel_h - 1) / 2, rx = static_cast<int>(kernel_w - 1) / 2;
    Tensor out({Co, Cig, kernel_h, kernel_w}, g.dtype());
    dispatch_dtype(g.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto gs = g.data<T>();
        auto xs = x.data<T>();
        auto os = out.data<T>();
        const std::size_t P = H * W;
        for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t co = 0; co < Co; ++co) {
                const std::size_t grp = co / Cog;
                const T* grow = gs.data() + (b * Co + co) * P;
                for (std::size_t cg = 0; cg < Cig; ++cg) {
                    const std::size_t ci = grp * Cig + cg;
                    const T* src = xs.data() + (b * Ci + ci) * P;
                    T* ker = os.data() + (co * Cig + cg) * kernel_h * kernel_w;
                    for (std::size_t ky = 0; ky < kernel_h; ++ky) {
                        const int dy = static_cast<int>(ky) - ry;
                        for (std::size_t kx = 0; kx < kernel_w; ++kx) {
                            const int dx = static_cast<int>(kx) - rx;
                            const std::size_t h0 = dy < 0 ? static_cast<std::size_t>(-dy) : 0;
                            const std::size_t h1 = dy > 0 ? (H > static_cast<std::size_t>(dy) ? H - static_cast<std::size_t>(dy) : 0) : H;
                            const std::size_t w0 = dx < 0 ? static_cast<std::size_t>(-dx) : 0;
                            const std::size_t w1 = dx > 0 ? (W > static_cast<std::size_t>(dx) ? W - static_cast<std::size_t>(dx) : 0) : W;
                            T acc = 0;
                            for (std::size_t h = h0; h < h1; ++h) {
                                const T* g2 = grow + h * W;
                                const T* s2 = src + (h + dy) * W + dx;
                                for (std::size_t ww = w0; ww < w1; ++ww) acc += g2[ww] * s2[ww];
                            }
                            ker[ky * kernel_w + kx] += acc;
                        }
                    }
                }
            }
        }
    });
    return out;
}

Tensor conv2d_vjp_bias(const Tensor& g) {
    const std::size_t B = g.dim(0), Co = g.dim(1), P = g.dim(2) * g.dim(3);
    Tensor out({Co}, g.dtype());
    dispatch_dtype(g.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto gs = g.data<T>();
        auto os = out.data<T>();
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t co = 0; co < Co; ++co) {
                const T* row = gs.data() + (b * Co + co) * P;
                T acc = 0;
                for (std::size_t p = 0; p < P; ++p) acc += row[p];
                os[co] += acc;
            }
    });
    return out;
}

Tensor layer_norm_channels(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    require(x.ndim() == 4, "layer_norm_channels: input must be (B,C,H,W)");
    const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    require(gamma.dim(0) == C && beta.dim(0) == C, "layer_norm_channels: affine extent mismatch");
    Tensor out(x.dims(), x.dtype());
    dispatch_dtype(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto xs = x.data<T>();
        auto gs = gamma.data<T>();
        auto bs = beta.data<T>();
        auto os = out.data<T>();
        const std::size_t P = H * W;
        for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t p = 0; p < P; ++p) {
                double mean = 0.0;
                for (std::size_t c = 0; c < C; ++c) mean += static_cast<double>(xs[(b * C + c) * P + p]);
                mean /= static_cast<double>(C);
                double var = 0.0;
                for (std::size_t c = 0; c < C; ++c) {
                    const double d = static_cast<double>(xs[(b * C + c) * P + p]) - mean;
                    var += d * d;
                }
                var /= static_cast<double>(C);
                const double inv = 1.0 / std::sqrt(var + eps);
                for (std::size_t c = 0; c < C; ++c) {
                    const std::size_t k = (b * C + c) * P + p;
                    const double nv = (static_cast<double>(xs[k]) - mean) * inv;
                    os[k] = static_cast<T>(nv * static_cast<double>(gs[c]) + static_cast<double>(bs[c]));
                }
            }
        }
    });
    return out;
}

void layer_norm_channels_vjp(const Tensor& x, const Tensor& gamma, double eps, const Tensor& g,
                             Tensor& gx, Tensor& ggamma, Tensor& gbeta) {
    const std::size_t B = x.dim(0), C = x.dim(1), P = x.dim(2) * x.dim(3);
    gx = Tensor(x.dims(), x.dtype());
    ggamma = Tensor({C}, x.dtype());
    gbeta = Tensor({C}, x.dtype());
    dispatch_dtype(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto xs = x.data<T>();
        auto gms = gamma.data<T>();
        auto gs = g.data<T>();
        auto gxs = gx.data<T>();
        auto ggs = ggamma.data<T>();
        auto gbs = gbeta.data<T>();
        for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t p = 0; p < P; ++p) {
                double mean = 0.0;
                for (std::size_t c = 0; c < C; ++c) mean += static_cast<double>(xs[(b * C + c) * P + p]);
                mean /= static_cast<double>(C);
                double var = 0.0;
                for (std::size_t c = 0; c < C; ++c) {
                    const double d = static_cast<double>(xs[(b * C + c) * P + p]) - mean;
                    var += d * d;
                }
                var /= static_cast<double>(C);
                const double inv = 1.0 / std::sqrt(var + eps);
                // dldn = g * gamma; reductions over the channel slice
                double sum_dldn = 0.0, sum_dldn_n = 0.0;
                for (std::size_t c = 0; c < C; ++c) {
                    const std::size_t k = (b * C + c) * P + p;
                    const double n = (static_cast<double>(xs[k]) - mean) * inv;
                    const double dldn = static_cast<double>(gs[k]) * static_cast<double>(gms[c]);
                    sum_dldn += dldn;
                    sum_dldn_n += dldn * n;
                    ggs[c] += static_cast<T>(static_cast<double>(gs[k]) * n);
                    gbs[c] += static_cast<T>(static_cast<double>(gs[k]));
                }
                for (std::size_t c = 0; c < C; ++c) {
                    const std::size_t k = (b * C + c) * P + p;
                    const double n = (static_cast<double>(xs[k]) - mean) * inv;
                    const double dldn = static_cast<double>(gs[k]) * static_cast<double>(gms[c]);
                    gxs[k] = static_cast<T>(
                        inv * (dldn - sum_dldn / static_cast<double>(C) - n * sum_dldn_n / static_cast<double>(C)));
                }
            }
        }
    });
}

Tensor space_to_depth(const Tensor& x, int patch) {
    require(x.ndim() == 4, "space_to_depth: input must be (B,C,H,W)");
    require(patch >= 1, "space_to_depth: patch must be >= 1");
    const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t P = static_cast<std::size_t>(patch);
    require(H % P == 0 && W % P == 0, "space_to_depth: spatial extents must divide by patch");
    const std::size_t Ho = H / P, Wo = W / P;
    Tensor out({B, C * P * P, Ho, Wo}, x.dtype());
    dispatch_dtype(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto xs = x.data<T>();
        auto os = out.data<T>();
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t py = 0; py < P; ++py)
                    for (std::size_t px = 0; px < P; ++px) {
                        const std::size_t co = (c * P + py) * P + px;
                        for (std::size_t h = 0; h < Ho; ++h)
                            for (std::size_t w = 0; w < Wo; ++w)
                                os[((b * C * P * P + co) * Ho + h) * Wo + w] =
                                    xs[((b * C + c) * H + h * P + py) * W + w * P + px];
                    }
    });
    return out;
}

Tensor depth_to_space(const Tensor& g, int patch) {
    const std::size_t B = g.dim(0), Cp = g.dim(1), Ho = g.dim(2), Wo = g.dim(3);
    const std::size_t P = static_cast<std::size_t>(patch);
    const std::size_t C = Cp / (P * P), H = Ho * P, W = Wo * P;
    Tensor out({B, C, H, W}, g.dtype());
    dispatch_dtype(g.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto gs = g.data<T>();
        auto os = out.data<T>();
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t py = 0; py < P; ++py)
                    for (std::size_t px = 0; px < P; ++px) {
                        const std::size_t co = (c * P + py) * P + px;
                        for (std::size_t h = 0; h < Ho; ++h)
                            for (std::size_t w = 0; w < Wo; ++w)
                                os[((b * C + c) * H + h * P + py) * W + w * P + px] =
                                    gs[((b * Cp + co) * Ho + h) * Wo + w];
                    }
    });
    return out;
}

Tensor mean_hw(const Tensor& x) {
    require(x.ndim() == 4, "mean_hw: input must be (B,C,H,W)");
    const std::size_t B = x.dim(0), C = x.dim(1), P = x.dim(2) * x.dim(3);
    Tensor out({B, C}, x.dtype());
    dispatch_dtype(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto xs = x.data<T>();
        auto os = out.data<T>();
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t c = 0; c < C; ++c) {
                const T* row = xs.data() + (b * C + c) * P;
                double acc = 0;
                for (std::size_t p = 0; p < P; ++p) acc += static_cast<double>(row[p]);
                os[b * C + c] = static_cast<T>(acc / static_cast<double>(P));
            }
    });
    return out;
}

Tensor mean_hw_vjp(const Tensor& g, std::size_t height, std::size_t width) {
    const std::size_t B = g.dim(0), C = g.dim(1), P = height * width;
    Tensor out({B, C, height, width}, g.dtype());
    dispatch_dtype(g.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto gs = g.data<T>();
        auto os = out.data<T>();
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t c = 0; c < C; ++c) {
                const T v = static_cast<T>(static_cast<double>(gs[b * C + c]) / static_cast<double>(P));
                T* row = os.data() + (b * C + c) * P;
                for (std::size_t p = 0; p < P; ++p) row[p] = v;
            }
    });
    return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor* bias) {
    require(x.ndim() == 2 && w.ndim() == 2 && x.dim(1) == w.dim(1), "linear: x (B,C), w (O,C)");
    const std::size_t B = x.dim(0), C = x.dim(1), O = w.dim(0);
    Tensor out({B, O}, x.dtype());
    dispatch_dtype(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto xs = x.data<T>();
        auto ws = w.data<T>();
        auto os = out.data<T>();
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t o = 0; o < O; ++o) {
                T acc = bias ? bias->data<T>()[o] : T{0};
                const T* xrow = xs.data() + b * C;
                const T* wrow = ws.data() + o * C;
                for (std::size_t c = 0; c < C; ++c) acc += xrow[c] * wrow[c];
                os[b * O + o] = acc;
            }
    });
    return out;
}

Tensor linear_vjp_x(const Tensor& g, const Tensor& w) {
    const std::size_t B = g.dim(0), O = g.dim(1), C = w.dim(1);
    Tensor out({B, C}, g.dtype());
    dispatch_dtype(g.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto gs = g.data<T>();
        auto ws = w.data<T>();
        auto os = out.data<T>();
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t o = 0; o < O; ++o) {
                const T gv = gs[b * O + o];
                const T* wrow = ws.data() + o * C;
                T* dst = os.data() + b * C;
                for (std::size_t c = 0; c < C; ++c) dst[c] += gv * wrow[c];
            }
    });
    return out;
}

Tensor linear_vjp_w(const Tensor& g, const Tensor& x) {
    const std::size_t B = g.dim(0), O = g.dim(1), C = x.dim(1);
    Tensor out({O, C}, g.dtype());
    dispatch_dtype(g.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto gs = g.data<T>();
        auto xs = x.data<T>();
        auto os = out.data<T>();
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t o = 0; o < O; ++o) {
                const T gv = gs[b * O + o];
                const T* xrow = xs.data() + b * C;
                T* dst = os.data() + o * C;
                for (std::size_t c = 0; c < C; ++c) dst[c] += gv * xrow[c];
            }
    });
    return out;
}

Tensor linear_vjp_bias(const Tensor& g) {
    const std::size_t B = g.dim(0), O = g.dim(1);
    Tensor out({O}, g.dtype());
    dispatch_dtype(g.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto gs = g.data<T>();
        auto os = out.data<T>();
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t o = 0; o < O; ++o) os[o] += gs[b * O + o];
    });
    return out;
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels, Tensor* probs) {
    require(logits.ndim() == 2, "cross_entropy: logits must be (B,N)");
    const std::size_t B = logits.dim(0), N = logits.dim(1);
    require(labels.size() == B, "cross_entropy: label count mismatch");
    if (probs) *probs = Tensor({B, N}, logits.dtype());
    Tensor out({1}, logits.dtype());
    dispatch_dtype(logits.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto ls = logits.data<T>();
        double loss = 0.0;
        for (std::size_t b = 0; b < B; ++b) {
            const int label = labels[b];
            require(label >= 0 && static_cast<std::size_t>(label) < N, "cross_entropy: label out of range");
            const T* row = ls.data() + b * N;
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t n = 0; n < N; ++n) mx = std::max(mx, static_cast<double>(row[n]));
            double denom = 0.0;
            for (std::size_t n = 0; n < N; ++n) denom += std::exp(static_cast<double>(row[n]) - mx);
            loss += std::log(denom) + mx - static_cast<double>(row[label]);
            if (probs) {
                auto ps = probs->data<T>();
                for (std::size_t n = 0; n < N; ++n)
                    ps[b * N + n] = static_cast<T>(std::exp(static_cast<double>(row[n]) - mx) / denom);
            }
        }
        out.data<T>()[0] = static_cast<T>(loss / static_cast<double>(B));
    });
    return out;
}

Tensor cross_entropy_vjp(const Tensor& logits, const std::vector<int>& labels, const Tensor& g) {
    const std::size_t B = logits.dim(0), N = logits.dim(1);
    Tensor probs;
    cross_entropy(logits, labels, &probs);
    Tensor out({B, N}, logits.dtype());
    dispatch_dtype(logits.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto ps = probs.data<T>();
        auto os = out.data<T>();
        const double gv = static_cast<double>(g.data<T>()[0]);
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t n = 0; n < N; ++n) {
                double v = static_cast<double>(ps[b * N + n]);
                if (static_cast<std::size_t>(labels[b]) == n) v -= 1.0;
                os[b * N + n] = static_cast<T>(gv * v / static_cast<double>(B));
            }
    });
    return out;
}

}  // namespace latt
