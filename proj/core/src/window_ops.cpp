#include "latt/window_ops.hpp"

#include <map>
#include <mutex>
#include <stdexcept>

namespace latt {

namespace {

void require(bool cond, const char* msg) {
    if (!cond) throw std::invalid_argument(msg);
}

struct WinDims {
    std::size_t B, nW, C, Pw;
};

WinDims win_dims(const Tensor& xw, const char* who) {
    if (xw.ndim() != 4) throw std::invalid_argument(std::string(who) + ": expected (B,nW,C,Pw)");
    return {xw.dim(0), xw.dim(1), xw.dim(2), xw.dim(3)};
}

}  // namespace

const std::vector<std::size_t>& relative_index_map(int window_size) {
    static std::map<int, std::vector<std::size_t>> cache;
    static std::mutex mu;
    std::lock_guard<std::mutex> lock(mu);
    auto it = cache.find(window_size);
    if (it != cache.end()) return it->second;
    require(window_size >= 1, "relative_index_map: window size must be >= 1");
    const std::size_t wd = static_cast<std::size_t>(window_size);
    const std::size_t pw = wd * wd;
    const std::size_t span = 2 * wd - 1;
    std::vector<std::size_t> map(pw * pw);
    for (std::size_t i = 0; i < pw; ++i) {
        const long yi = static_cast<long>(i / wd), xi = static_cast<long>(i % wd);
        for (std::size_t j = 0; j < pw; ++j) {
            const long yj = static_cast<long>(j / wd), xj = static_cast<long>(j % wd);
            const std::size_t row = static_cast<std::size_t>(yj - yi + static_cast<long>(wd) - 1);
            const std::size_t col = static_cast<std::size_t>(xj - xi + static_cast<long>(wd) - 1);
            map[i * pw + j] = row * span + col;
        }
    }
    return cache.emplace(window_size, std::move(map)).first->second;
}

Tensor window_partition(const Tensor& x, int window_size) {
    require(x.ndim() == 4, "window_partition: input must be (B,C,H,W)");
    const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t wd = static_cast<std::size_t>(window_size);
    if (wd == 0 || H % wd != 0 || W % wd != 0)
        throw std::invalid_argument("window_partition: window size must divide H and W");
    const std::size_t nH = H / wd, nWd = W / wd, nW = nH * nWd, Pw = wd * wd;
    Tensor out({B, nW, C, Pw}, x.dtype());
    dispatch_dtype(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto xs = x.data<T>();
        auto os = out.data<T>();
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t wy = 0; wy < nH; ++wy)
                for (std::size_t wx = 0; wx < nWd; ++wx) {
                    const std::size_t n = wy * nWd + wx;
                    for (std::size_t c = 0; c < C; ++c)
                        for (std::size_t py = 0; py < wd; ++py)
                            for (std::size_t px = 0; px < wd; ++px)
                                os[((b * nW + n) * C + c) * Pw + py * wd + px] =
                                    xs[((b * C + c) * H + wy * wd + py) * W + wx * wd + px];
                }
    });
    return out;
}

Tensor window_merge(const Tensor& xw, int window_size, std::size_t height, std::size_t width) {
    const auto [B, nW, C, Pw] = win_dims(xw, "window_merge");
    const std::size_t wd = static_cast<std::size_t>(window_size);
    const std::size_t nH = height / wd, nWd = width / wd;
    require(nH * nWd == nW && Pw == wd * wd, "window_merge: geometry mismatch");
    Tensor out({B, C, height, width}, xw.dtype());
    dispatch_dtype(xw.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto xs = xw.data<T>();
        auto os = out.data<T>();
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t wy = 0; wy < nH; ++wy)
                for (std::size_t wx = 0; wx < nWd; ++wx) {
                    const std::size_t n = wy * nWd + wx;
                    for (std::size_t c = 0; c < C; ++c)
                        for (std::size_t py = 0; py < wd; ++py)
                            for (std::size_t px = 0; px < wd; ++px)
                                os[((b * C + c) * height + wy * wd + py) * width + wx * wd + px] =
                                    xs[((b * nW + n) * C + c) * Pw + py * wd + px];
                }
    });
    return out;
}

Tensor win_qk(const Tensor& qw, const Tensor& kw, std::size_t groups) {
    const auto [B, nW, C, Pw] = win_dims(qw, "win_qk");
    require(kw.dims() == qw.dims(), "win_qk: q/k shape mismatch");
    require(groups >= 1 && C % groups == 0, "win_qk: heads must divide channels");
    const std::size_t dh = C / groups;
    Tensor out({B, nW, groups, Pw, Pw}, qw.dtype());
    dispatch_dtype(qw.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto qs = qw.data<T>();
        auto ks = kw.data<T>();
        auto os = out.data<T>();
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t n = 0; n < nW; ++n)
                for (std::size_t g = 0; g < groups; ++g) {
                    T* dst = os.data() + (((b * nW + n) * groups + g) * Pw) * Pw;
                    for (std::size_t d = 0; d < dh; ++d) {
                        const T* qrow = qs.data() + ((b * nW + n) * C + g * dh + d) * Pw;
                        const T* krow = ks.data() + ((b * nW + n) * C + g * dh + d) * Pw;
                        for (std::size_t i = 0; i < Pw; ++i)
                            for (std::size_t j = 0; j < Pw; ++j) dst[i * Pw + j] += qrow[i] * krow[j];
                    }
                }
    });
    return out;
}

Tensor win_qk_vjp_q(const Tensor& g, const Tensor& kw, std::size_t groups) {
    const std::size_t B = g.dim(0), nW = g.dim(1), Pw = g.dim(3);
    const std::size_t C = kw.dim(2), dh = C / groups;
    Tensor out(kw.dims(), kw.dtype());
    dispatch_dtype(g.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto gs = g.data<T>();
        auto ks = kw.data<T>();
        auto os = out.data<T>();
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t n = 0; n < nW; ++n)
                for (std::size_t gh = 0; gh < groups; ++gh) {
                    const T* grow = gs.data() + (((b * nW + n) * groups + gh) * Pw) * Pw;
                    for (std::size_t d = 0; d < dh; ++d) {
                        const T* krow = ks.data() + ((b * nW + n) * C + gh * dh + d) * Pw;
                        T* dst = os.data() + ((b * nW + n) * C + gh * dh + d) * Pw;
                        for (std::size_t i = 0; i < Pw; ++i) {
                            T acc = 0;
                            for (std::size_t j = 0; j < Pw; ++j) acc += grow[i * Pw + j] * krow[j];
                            dst[i] += acc;
                        }
                    }
                }
    });
    return out;
}

Tensor win_qk_vjp_k(const Tensor& g, const Tensor& qw, std::size_t groups) {
    const std::size_t B = g.dim(0), nW = g.dim(1), Pw = g.dim(3);
    const std::size_t C = qw.dim(2), dh = C / groups;
    Tensor out(qw.dims(), qw.dtype());
    dispatch_dtype(g.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto gs = g.data<T>();
        auto qs = qw.data<T>();
        auto os = out.data<T>();
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t n = 0; n < nW; ++n)
                for (std::size_t gh = 0; gh < groups; ++gh) {
                    const T* grow = gs.data() + (((b * nW + n) * groups + gh) * Pw) * Pw;
                    for (std::size_t d = 0; d < dh; ++d) {
                        const T* qrow = qs.data() + ((b * nW + n) * C + gh * dh + d) * Pw;
                        T* dst = os.data() + ((b * nW + n) * C + gh * dh + d) * Pw;
                        for (std::size_t j = 0; j < Pw; ++j) {
                            T acc = 0;
                            for (std::size_t i = 0; i < Pw; ++i) acc += grow[i * Pw + j] * qrow[i];
                            dst[j] += acc;
                        }
                    }
                }
    });
    return out;
}

Tensor win_q_table(const Tensor& qw, const Tensor& tbl, int window_size) {
    const auto [B, nW, C, Pw] = win_dims(qw, "win_q_table");
    const std::size_t dh = tbl.dim(0), G = tbl.dim(1), Tt = tbl.dim(2);
    require(dh * G == C, "win_q_table: dh*G must equal channels");
    const auto& idx = relative_index_map(window_size);
    require(idx.size() == Pw * Pw, "win_q_table: window geometry mismatch");
    Tensor out({B, nW, G, Pw, Pw}, qw.dtype());
    dispatch_dtype(qw.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto qs = qw.data<T>();
        auto ts = tbl.data<T>();
        auto os = out.data<T>();
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t n = 0; n < nW; ++n)
                for (std::size_t g = 0; g < G; ++g) {
                    T* dst = os.data() + (((b * nW + n) * G + g) * Pw) * Pw;
                    for (std::size_t d = 0; d < dh; ++d) {
                        const T* qrow = qs.data() + ((b * nW + n) * C + g * dh + d) * Pw;
                        const T* trow = ts.data() + (d * G + g) * Tt;
                        for (std::size_t i = 0; i < Pw; ++i)
                            for (std::size_t j = 0; j < Pw; ++j)
                                dst[i * Pw + j] += qrow[i] * trow[idx[i * Pw + j]];
                    }
                }
    });
    return out;
}

Tensor win_q_table_vjp_q(const Tensor& g, const Tensor& tbl, int window_size) {
    const std::size_t B = g.dim(0), nW = g.dim(1), G = g.dim(2), Pw = g.dim(3);
    const std::size_t dh = tbl.dim(0), Tt = tbl.dim(2), C = dh * G;
    const auto& idx = relative_index_map(window_size);
    Tensor out({B, nW, C, Pw}, g.dtype());
    dispatch_dtype(g.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto gs = g.data<T>();
        auto ts = tbl.data<T>();
        auto os = out.data<T>();
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t n = 0; n < nW; ++n)
                for (std::size_t gh = 0; gh < G; ++gh) {
                    const T* grow = gs.data() + (((b * nW + n) * G + gh) * Pw) * Pw;
                    for (std::size_t d = 0; d < dh; ++d) {
                        const T* trow = ts.data() + (d * G + gh) * Tt;
                        T* dst = os.data() + ((b * nW + n) * C + gh * dh + d) * Pw;
                        for (std::size_t i = 0; i < Pw; ++i) {
                            T acc = 0;
                            for (std::size_t j = 0; j < Pw; ++j) acc += grow[i * Pw + j] * trow[idx[i * Pw + j]];
                            dst[i] += acc;
                        }
                    }
                }
    });
    return out;
}

Tensor win_q_table_vjp_tbl(const Tensor& g, const Tensor& qw, int window_size, std::size_t table_rows) {
    const std::size_t B = g.dim(0), nW = g.dim(1), G = g.dim(2), Pw = g.dim(3);
    const std::size_t C = qw.dim(2), dh = C / G;
    const auto& idx = relative_index_map(window_size);
    Tensor out({dh, G, table_rows}, g.dtype());
    dispatch_dtype(g.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto gs = g.data<T>();
        auto qs = qw.data<T>();
        auto os = out.data<T>();
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t n = 0; n < nW; ++n)
                for (std::size_t gh = 0; gh < G; ++gh) {
                    const T* grow = gs.data() + (((b * nW + n) * G + gh) * Pw) * Pw;
                    for (std::size_t d = 0; d < dh; ++d) {
                        const T* qrow = qs.data() + ((b * nW + n) * C + gh * dh + d) * Pw;
                        T* trow = os.data() + (d * G + gh) * table_rows;
                        for (std::size_t i = 0; i < Pw; ++i)
                            for (std::size_t j = 0; j < Pw; ++j)
                                trow[idx[i * Pw + j]] += grow[i * Pw + j] * qrow[i];
                    }
                }
    });
    return out;
}

Tensor win_table_k(const Tensor& kw, const Tensor& tbl, int window_size) {
    const auto [B, nW, C, Pw] = win_dims(kw, "win_table_k");
    const std::size_t dh = tbl.dim(0), G = tbl.dim(1), Tt = tbl.dim(2);
    require(dh * G == C, "win_table_k: dh*G must equal channels");
    const auto& idx = relative_index_map(window_size);
    require(idx.size() == Pw * Pw, "win_table_k: window geometry mismatch");
    Tensor out({B, nW, G, Pw, Pw}, kw.dtype());
    dispatch_dtype(kw.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto ks = kw.data<T>();
        auto ts = tbl.data<T>();
        auto os = out.data<T>();
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t n = 0; n < nW; ++n)
                for (std::size_t g = 0; g < G; ++g) {
                    T* dst = os.data() + (((b * nW + n) * G + g) * Pw) * Pw;
                    for (std::size_t d = 0; d < dh; ++d) {
                        const T* krow = ks.data() + ((b * nW + n) * C + g * dh + d) * Pw;
                        const T* trow = ts.data() + (d * G + g) * Tt;
                        for (std::size_t i = 0; i < Pw; ++i)
                            for (std::size_t j = 0; j < Pw; ++j)
                                dst[i * Pw + j] += trow[idx[i * Pw + j]] * krow[j];
                    }
                }
    });
    return out;
}

Tensor win_table_k_vjp_k(const Tensor& g, const Tensor& tbl, int window_size) {
    const std::size_t B = g.dim(0), nW = g.dim(1), G = g.dim(2), Pw = g.dim(3);
    const std::size_t dh = tbl.dim(0), Tt = tbl.dim(2), C = dh * G;
    const auto& idx = relative_index_map(window_size);
    Tensor out({B, nW, C, Pw}, g.dtype());
    dispatch_dtype(g.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto gs = g.data<T>();
        auto ts = tbl.data<T>();
        auto os = out.data<T>();
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t n = 0; n < nW; ++n)
                for (std::size_t gh = 0; gh < G; ++gh) {
                    const T* grow = gs.data() + (((b * nW + n) * G + gh) * Pw) * Pw;
                    for (std::size_t d = 0; d < dh; ++d) {
                        const T* trow = ts.data() + (d * G + gh) * Tt;
                        T* dst = os.data() + ((b * nW + n) * C + gh * dh + d) * Pw;
                        for (std::size_t j = 0; j < Pw; ++j) {
                            T acc = 0;
                            for (std::size_t i = 0; i < Pw; ++i) acc += grow[i * Pw + j] * trow[idx[i * Pw + j]];
                            dst[j] += acc;
                        }
                    }
                }
    });
    return out;
}

Tensor win_table_k_vjp_tbl(const Tensor& g, const Tensor& kw, int window_size, std::size_t table_rows) {
    const std::size_t B = g.dim(0), nW = g.dim(1), G = g.dim(2), Pw = g.dim(3);
    const std::size_t C = kw.dim(2), dh = C / G;
    const auto& idx = relative_index_map(window_size);
    Tensor out({dh, G, table_rows}, g.dtype());
    dispatch_dtype(g.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto gs = g.data<T>();
        auto ks = kw.data<T>();
        auto os = out.data<T>();
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t n = 0; n < nW; ++n)
                for (std::size_t gh = 0; gh < G; ++gh) {
                    const T* grow = gs.data() + (((b * nW + n) * G + gh) * Pw) * Pw;
                    for (std::size_t d = 0; d < dh; ++d) {
                        const T* krow = ks.data() + ((b * nW + n) * C + gh * dh + d) * Pw;
                        T* trow = os.data() + (d * G + gh) * table_rows;
                        for (std::size_t i = 0; i < Pw; ++i)
                            for (std::size_t j = 0; j < Pw; ++j)
                                trow[idx[i * Pw + j]] += grow[i * Pw + j] * krow[j];
                    }
                }
    });
    return out;
}

Tensor add_bias_window(const Tensor& x, const Tensor& bias, int window_size) {
    require(x.ndim() == 5, "add_bias_window: x must be (B,nW,G,Pw,Pw)");
    const std::size_t B = x.dim(0), nW = x.dim(1), G = x.dim(2), Pw = x.dim(3);
    require(bias.ndim() == 2 && bias.dim(0) == G, "add_bias_window: bias must be (G,Tt)");
    const std::size_t Tt = bias.dim(1);
    const auto& idx = relative_index_map(window_size);
    require(idx.size() == Pw * Pw, "add_bias_window: window geometry mismatch");
    Tensor out(x.dims(), x.dtype());
    dispatch_dtype(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto xs = x.data<T>();
        auto bs = bias.data<T>();
        auto os = out.data<T>();
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t n = 0; n < nW; ++n)
                for (std::size_t g = 0; g < G; ++g) {
                    const std::size_t base = ((b * nW + n) * G + g) * Pw * Pw;
                    const T* brow = bs.data() + g * Tt;
                    for (std::size_t ij = 0; ij < Pw * Pw; ++ij) os[base + ij] = xs[base + ij] + brow[idx[ij]];
                }
    });
    return out;
}

Tensor add_bias_window_vjp_bias(const Tensor& g, int window_size, std::size_t table_rows) {
    const std::size_t B = g.dim(0), nW = g.dim(1), G = g.dim(2), Pw = g.dim(3);
    const auto& idx = relative_index_map(window_size);
    Tensor out({G, table_rows}, g.dtype());
    dispatch_dtype(g.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto gs = g.data<T>();
        auto os = out.data<T>();
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t n = 0; n < nW; ++n)
                for (std::size_t gh = 0; gh < G; ++gh) {
                    const std::size_t base = ((b * nW + n) * G + gh) * Pw * Pw;
                    T* brow = os.data() + gh * table_rows;
                    for (std::size_t ij = 0; ij < Pw * Pw; ++ij) brow[idx[ij]] += gs[base + ij];
                }
    });
    return out;
}

Tensor win_apply(const Tensor& attn, const Tensor& vw) {
    require(attn.ndim() == 5, "win_apply: attn must be (B,nW,G,Pw,Pw)");
    const std::size_t B = attn.dim(0), nW = attn.dim(1), G = attn.dim(2), Pw = attn.dim(3);
    const auto [Bv, nWv, C, Pwv] = win_dims(vw, "win_apply");
    require(Bv == B && nWv == nW && Pwv == Pw && C % G == 0, "win_apply: shape mismatch");
    const std::size_t dh = C / G;
    Tensor out({B, nW, C, Pw}, attn.dtype());
    dispatch_dtype(attn.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto as = attn.data<T>();
        auto vs = vw.data<T>();
        auto os = out.data<T>();
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t n = 0; n < nW; ++n)
                for (std::size_t g = 0; g < G; ++g) {
                    const T* arow = as.data() + (((b * nW + n) * G + g) * Pw) * Pw;
                    for (std::size_t d = 0; d < dh; ++d) {
                        const T* vrow = vs.data() + ((b * nW + n) * C + g * dh + d) * Pw;
                        T* dst = os.data() + ((b * nW + n) * C + g * dh + d) * Pw;
                        for (std::size_t i = 0; i < Pw; ++i) {
                            T acc = 0;
                            for (std::size_t j = 0; j < Pw; ++j) acc += arow[i * Pw + j] * vrow[j];
                            dst[i] = acc;
                        }
                    }
                }
    });
    return out;
}

Tensor win_apply_vjp_attn(const Tensor& g, const Tensor& vw, std::size_t groups) {
    const auto [B, nW, C, Pw] = win_dims(g, "win_apply_vjp_attn");
    const std::size_t dh = C / groups;
    Tensor out({B, nW, groups, Pw, Pw}, g.dtype());
    dispatch_dtype(g.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto gs = g.data<T>();
        auto vs = vw.data<T>();
        auto os = out.data<T>();
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t n = 0; n < nW; ++n)
                for (std::size_t gh = 0; gh < groups; ++gh) {
                    T* dst = os.data() + (((b * nW + n) * groups + gh) * Pw) * Pw;
                    for (std::size_t d = 0; d < dh; ++d) {
                        const T* grow = gs.data() + ((b * nW + n) * C + gh * dh + d) * Pw;
                        const T* vrow = vs.data() + ((b * nW + n) * C + gh * dh + d) * Pw;
                        for (std::size_t i = 0; i < Pw; ++i)
                            for (std::size_t j = 0; j < Pw; ++j) dst[i * Pw + j] += grow[i] * vrow[j];
                    }
                }
    });
    return out;
}

Tensor win_apply_vjp_v(const Tensor& g, const Tensor& attn) {
    const auto [B, nW, C, Pw] = win_dims(g, "win_apply_vjp_v");
    const std::size_t G = attn.dim(2), dh = C / G;
    Tensor out({B, nW, C, Pw}, g.dtype());
    dispatch_dtype(g.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto gs = g.data<T>();
        auto as = attn.data<T>();
        auto os = out.data<T>();
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t n = 0; n < nW; ++n)
                for (std::size_t gh = 0; gh < G; ++gh) {
                    const T* arow = as.data() + (((b * nW + n) * G + gh) * Pw) * Pw;
                    for (std::size_t d = 0; d < dh; ++d) {
                        const T* grow = gs.data() + ((b * nW + n) * C + gh * dh + d) * Pw;
                        T* dst = os.data() + ((b * nW + n) * C + gh * dh + d) * Pw;
                        for (std::size_t j = 0; j < Pw; ++j) {
                            T acc = 0;
                            for (std::size_t i = 0; i < Pw; ++i) acc += arow[i * Pw + j] * grow[i];
                            dst[j] += acc;
                        }
                    }
                }
    });
    return out;
}

}  // namespace latt
