#pragma once

#include <filesystem>
#include <string>

#include "latt/autograd.hpp"
#include "latt/rng.hpp"
#include "latt/tensor.hpp"

namespace latt {

/// Static channel-capacity expansion state: a multiplicative matrix O and an
/// additive matrix S, both (C, K, K), flattened over (K, K) in OffsetOrder.
struct GhostHeadParams {
    Tensor mul;  // O, standard normal init
    Tensor add;  // S, truncated normal std 0.02
};

/// Learnable state of one ELSA block.
struct ElsaParams {
    Tensor proj_q_w, proj_k_w, proj_v_w, proj_out_w;  // (C,C) 1x1 projections
    Tensor proj_q_b, proj_k_b, proj_v_b, proj_out_b;  // (C), unused when !with_bias
    bool with_bias = true;
    Tensor r_k, r_q;  // (C, G, K*K)
    Tensor r_b;       // (G, K*K)
    GhostHeadParams ghost;
    int kernel_size = 7;
    int heads = 1;
    double lambda = 1.0;
    double gamma = 1.0;

    static ElsaParams init(int channels, int heads, int kernel_size, Rng rng, DType dt,
                           bool with_bias = true);
    std::size_t channels() const { return proj_q_w.empty() ? 0 : proj_q_w.dim(0); }
    void validate() const;
};

/// Per-pixel Hadamard-attention weights (B, G, K*K, H, W), softmax-normalized
/// over the K*K axis.
struct HadamardAttention {
    Tensor values;
};

/// The three equivalent realizations of the Hadamard-attention form, plus the
/// production reordering with a GELU between the merged contraction and the
/// one-hot shift (not numerically equivalent to the first three).
enum class ElsaVariant { StrictUnfold, ShiftConv, MergedConv, Production };

const char* variant_name(ElsaVariant v);
ElsaVariant variant_from_name(const std::string& name);
const std::vector<ElsaVariant>& all_variants();

// -- graph route --

struct ElsaVars {
    Var proj_q_w, proj_k_w, proj_v_w, proj_out_w;
    Var proj_q_b, proj_k_b, proj_v_b, proj_out_b;  // invalid when bias disabled
    Var r_k, r_q, r_b;
    Var ghost_mul, ghost_add;
};

/// Registers every parameter as a leaf named `<prefix><name>`.
ElsaVars elsa_leaves(Tape& tape, const ElsaParams& params, const std::string& prefix = "");
/// Registers every parameter as a constant (forward-only evaluation).
ElsaVars elsa_constants(Tape& tape, const ElsaParams& params);

/// Pre-softmax logits of the chosen variant, (B, G, K*K, H*W).
Var hadamard_logits_graph(Tape& tape, Var q, Var k, const ElsaVars& vars,
                          const ElsaParams& params, ElsaVariant variant);
/// Softmax-normalized attention, (B, G, K*K, H*W).
Var hadamard_attention_graph(Tape& tape, Var q, Var k, const ElsaVars& vars,
                             const ElsaParams& params, ElsaVariant variant);
/// Ghost head on (B, G, T, P) attention -> (B, C, T, P).
Var ghost_head_graph(Tape& tape, Var h, Var ghost_mul, Var ghost_add, std::size_t channels,
                     double lambda, double gamma);
Var elsa_forward_graph(Tape& tape, Var x, const ElsaVars& vars, const ElsaParams& params,
                       ElsaVariant variant);

// -- eager surface --

HadamardAttention hadamard_attention(const Tensor& q, const Tensor& k, const ElsaParams& params,
                                     ElsaVariant variant);
/// Eq-8 expansion: out[b,c,t,h,w] = spow(O[c,t], lambda) * h[b, c % G, t, h, w]
/// + gamma * S[c,t], with spow the sign-preserving power.
Tensor ghost_head(const HadamardAttention& h, const GhostHeadParams& ghost, double lambda,
                  double gamma);
Tensor elsa_forward(const Tensor& x, const ElsaParams& params, ElsaVariant variant);

/// Ghost head over global attention maps (B, G, N, N) with tables (C, N);
/// the filter-element axis is the token axis. C must be a multiple of G;
/// the usual setting only doubles the head count (C = 2G).
Tensor ghost_head_global(const Tensor& attn, const Tensor& mul, const Tensor& add, double lambda,
                         double gamma);
Var ghost_head_global_graph(Tape& tape, Var attn, Var mul, Var add, double lambda, double gamma);

// -- serialization --

/// Writes the parameters as a directory of golden tensor containers plus a
/// `manifest.txt` listing name -> file.
void save_elsa_params(const ElsaParams& params, const std::filesystem::path& dir);
ElsaParams load_elsa_params(const std::filesystem::path& dir);

}  // namespace latt
