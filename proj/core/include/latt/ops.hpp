#pragma once

#include <cstddef>
#include <optional>

#include "latt/tensor.hpp"

namespace latt {

// ---------------------------------------------------------------------------
// Elementwise and reductions
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
void add_inplace(Tensor& dst, const Tensor& src);

/// Sum of all elements, returned as a one-element tensor.
Tensor sum_all(const Tensor& a);

/// GELU with the exact erf formulation.
Tensor gelu(const Tensor& x);
Tensor gelu_vjp(const Tensor& x, const Tensor& g);

/// Sign-preserving power: sgn(o) * |o|^lam. Coincides with o for lam = 1.
Tensor spow(const Tensor& o, double lam);
/// d spow / d o = lam * |o|^(lam-1); 0 at o = 0 (caller excludes lam < 1 there).
Tensor spow_vjp(const Tensor& o, double lam, const Tensor& g);

// ---------------------------------------------------------------------------
// Softmax / filter normalization
// ---------------------------------------------------------------------------

/// Softmax along `axis`, stabilized by max subtraction. Rejects NaN input.
Tensor softmax_over(const Tensor& x, int axis);
/// Backward given the softmax output y: y * (g - sum(g*y)) along axis.
Tensor softmax_vjp(const Tensor& y, const Tensor& g, int axis);

/// Per-slice standardization along `axis`: (v - mean) / (std + eps) with the
/// population std. A length-1 axis yields all-zero slices; `degenerate`,
/// when given, is set accordingly.
Tensor filter_normalize(const Tensor& x, int axis, double eps, bool* degenerate = nullptr);
Tensor filter_normalize_vjp(const Tensor& x, int axis, double eps, const Tensor& g);

// ---------------------------------------------------------------------------
// Unfold (im2col) and channel contractions
// ---------------------------------------------------------------------------

/// (B,C,H,W) -> (B,C,K*K,H*W); element t of each column is the input at the
/// pixel displaced by OffsetOrder[t], zero where the displaced location falls
/// outside the image. K odd, zero padding of width (K-1)/2.
Tensor unfold(const Tensor& x, int kernel_size);
/// Transpose of unfold: scatter-adds (B,C,K*K,H*W) back onto (B,C,H,W).
Tensor fold_add(const Tensor& g, int kernel_size, std::size_t height, std::size_t width);

/// out[b,g,t,h,w] = sum_c x[b,c,h,w] * table[c,g,t];  x:(B,C,H,W), table:(C,G,T).
Tensor contract_channel(const Tensor& x, const Tensor& table);
Tensor contract_channel_vjp_x(const Tensor& g, const Tensor& table, std::size_t channels);
Tensor contract_channel_vjp_table(const Tensor& g, const Tensor& x);

/// out[b,g,t,p] = sum_c table[c,g,t] * xu[b,c,t,p];  xu:(B,C,T,P), table:(C,G,T).
Tensor contract_unfolded(const Tensor& xu, const Tensor& table);
Tensor contract_unfolded_vjp_x(const Tensor& g, const Tensor& table, std::size_t channels);
Tensor contract_unfolded_vjp_table(const Tensor& g, const Tensor& xu);

// ---------------------------------------------------------------------------
// Per-head kernels on the neighboring (sliding K x K) layout
// ---------------------------------------------------------------------------

/// out[b,g,t,p] = sum_d q[b,g*dh+d,p] * ku[b,g*dh+d,t,p];  q:(B,C,H,W), ku:(B,C,T,P).
Tensor head_dot(const Tensor& q, const Tensor& ku, std::size_t groups);
Tensor head_dot_vjp_q(const Tensor& g, const Tensor& ku, std::size_t groups,
                      std::size_t height, std::size_t width);
Tensor head_dot_vjp_ku(const Tensor& g, const Tensor& q, std::size_t groups);

/// out[b,g,t,p] = sum_d x[b,g*dh+d,p] * tbl[d,g,t];  tbl:(dh,G,T).
Tensor head_contract(const Tensor& x, const Tensor& tbl);
Tensor head_contract_vjp_x(const Tensor& g, const Tensor& tbl, std::size_t height, std::size_t width);
Tensor head_contract_vjp_tbl(const Tensor& g, const Tensor& x);

/// out[b,g,t,p] = sum_d tbl[d,g,t] * ku[b,g*dh+d,t,p];  ku:(B,C,T,P), tbl:(dh,G,T).
Tensor head_contract_unfolded(const Tensor& ku, const Tensor& tbl);
Tensor head_contract_unfolded_vjp_ku(const Tensor& g, const Tensor& tbl, std::size_t channels);
Tensor head_contract_unfolded_vjp_tbl(const Tensor& g, const Tensor& ku);

/// x:(B,G,T,P) plus bias[g,t] broadcast over b and p.
Tensor add_bias_gt(const Tensor& x, const Tensor& bias);
Tensor add_bias_gt_vjp_bias(const Tensor& g);

/// out[b,g*dh+d,p] = sum_t attn[b,g,t,p] * vu[b,g*dh+d,t,p];  returns (B,C,P).
Tensor apply_neighbor(const Tensor& attn, const Tensor& vu);
Tensor apply_neighbor_vjp_attn(const Tensor& g, const Tensor& vu, std::size_t groups);
Tensor apply_neighbor_vjp_vu(const Tensor& g, const Tensor& attn);

/// (B,G,T,P) -> (B,C,T,P) replicating the head block: out channel c reads head c % G.
Tensor expand_heads(const Tensor& h, std::size_t channels);
Tensor expand_heads_vjp(const Tensor& g, std::size_t groups);

/// x:(B,C,T,P) scaled per (channel, offset) by m:(C,T).
Tensor mul_table_ct(const Tensor& x, const Tensor& m);
Tensor mul_table_ct_vjp_x(const Tensor& g, const Tensor& m);
Tensor mul_table_ct_vjp_m(const Tensor& g, const Tensor& x);

/// x:(B,C,T,P) plus s[c,t] broadcast over b and p.
Tensor add_table_ct(const Tensor& x, const Tensor& s);
Tensor add_table_ct_vjp_s(const Tensor& g);

// ---------------------------------------------------------------------------
// Convolution, layer norm, shape movement, classifier head
// ---------------------------------------------------------------------------

/// Grouped 2D cross-correlation, stride 1, zero padding (K-1)/2 (odd K).
/// x:(B,Ci,H,W), w:(Co,Ci/groups,K,K), optional bias:(Co).
Tensor conv2d_grouped(const Tensor& x, const Tensor& w, const Tensor* bias, std::size_t groups);
Tensor conv2d_vjp_x(const Tensor& g, const Tensor& w, std::size_t groups, std::size_t in_channels);
Tensor conv2d_vjp_w(const Tensor& g, const Tensor& x, std::size_t groups,
                    std::size_t kernel_h, std::size_t kernel_w);
Tensor conv2d_vjp_bias(const Tensor& g);

/// Layer normalization over the channel axis of (B,C,H,W): (x-mu)/sqrt(var+eps)*gamma+beta.
Tensor layer_norm_channels(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps);
void layer_norm_channels_vjp(const Tensor& x, const Tensor& gamma, double eps, const Tensor& g,
                             Tensor& gx, Tensor& ggamma, Tensor& gbeta);

/// (B,C,H,W) -> (B,C*P*P,H/P,W/P); out channel c*P*P + py*P + px reads pixel (h*P+py, w*P+px).
Tensor space_to_depth(const Tensor& x, int patch);
Tensor depth_to_space(const Tensor& g, int patch);

/// Mean over H and W: (B,C,H,W) -> (B,C).
Tensor mean_hw(const Tensor& x);
Tensor mean_hw_vjp(const Tensor& g, std::size_t height, std::size_t width);

/// x:(B,C) * w:(O,C)^T + b -> (B,O).
Tensor linear(const Tensor& x, const Tensor& w, const Tensor* bias);
Tensor linear_vjp_x(const Tensor& g, const Tensor& w);
Tensor linear_vjp_w(const Tensor& g, const Tensor& x);
Tensor linear_vjp_bias(const Tensor& g);

/// Mean softmax cross-entropy of logits (B,N) against integer labels.
/// Returns a one-element tensor; probs, when given, receives softmax(logits).
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels, Tensor* probs = nullptr);
Tensor cross_entropy_vjp(const Tensor& logits, const std::vector<int>& labels, const Tensor& g);

}  // namespace latt
