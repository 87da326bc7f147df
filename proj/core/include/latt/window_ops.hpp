#pragma once

#include <vector>

#include "latt/tensor.hpp"

namespace latt {

/// Row index into a (2*Wd-1)^2 relative-position table for every ordered pair
/// of pixels (i, j) inside a Wd x Wd window: idx[i*Wd*Wd + j] encodes the
/// displacement j - i. Computed once per window size and cached.
const std::vector<std::size_t>& relative_index_map(int window_size);

/// (B,C,H,W) -> (B,nW,C,Pw) with Pw = Wd*Wd; windows enumerated row-major,
/// pixels inside each window row-major. Requires Wd | H and Wd | W.
Tensor window_partition(const Tensor& x, int window_size);
/// Inverse of window_partition.
Tensor window_merge(const Tensor& xw, int window_size, std::size_t height, std::size_t width);

/// logits[b,n,g,i,j] = sum_d qw[b,n,g*dh+d,i] * kw[b,n,g*dh+d,j].
Tensor win_qk(const Tensor& qw, const Tensor& kw, std::size_t groups);
Tensor win_qk_vjp_q(const Tensor& g, const Tensor& kw, std::size_t groups);
Tensor win_qk_vjp_k(const Tensor& g, const Tensor& qw, std::size_t groups);

/// logits[b,n,g,i,j] = sum_d qw[b,n,g*dh+d,i] * tbl[d,g,idx[i,j]];  tbl:(dh,G,Tt).
Tensor win_q_table(const Tensor& qw, const Tensor& tbl, int window_size);
Tensor win_q_table_vjp_q(const Tensor& g, const Tensor& tbl, int window_size);
Tensor win_q_table_vjp_tbl(const Tensor& g, const Tensor& qw, int window_size, std::size_t table_rows);

/// logits[b,n,g,i,j] = sum_d tbl[d,g,idx[i,j]] * kw[b,n,g*dh+d,j].
Tensor win_table_k(const Tensor& kw, const Tensor& tbl, int window_size);
Tensor win_table_k_vjp_k(const Tensor& g, const Tensor& tbl, int window_size);
Tensor win_table_k_vjp_tbl(const Tensor& g, const Tensor& kw, int window_size, std::size_t table_rows);

/// x:(B,nW,G,Pw,Pw) plus bias[g, idx[i,j]] broadcast over b, n.
Tensor add_bias_window(const Tensor& x, const Tensor& bias, int window_size);
Tensor add_bias_window_vjp_bias(const Tensor& g, int window_size, std::size_t table_rows);

/// out[b,n,g*dh+d,i] = sum_j attn[b,n,g,i,j] * vw[b,n,g*dh+d,j].
Tensor win_apply(const Tensor& attn, const Tensor& vw);
Tensor win_apply_vjp_attn(const Tensor& g, const Tensor& vw, std::size_t groups);
Tensor win_apply_vjp_v(const Tensor& g, const Tensor& attn);

}  // namespace latt
