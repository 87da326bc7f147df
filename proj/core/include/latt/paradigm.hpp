#pragma once

#include <string>
#include <vector>

#include "latt/autograd.hpp"
#include "latt/rng.hpp"
#include "latt/tensor.hpp"

namespace latt {

/// Identity keeps raw logits as filter weights; it is supported for the
/// dynamic-filter degenerations but unstable in training (unnormalized
/// filters grow without bound).
enum class NormKind { Identity, FilterNorm, Softmax };
enum class ApplicationKind { Window, Neighboring };

const char* norm_name(NormKind n);
const char* application_name(ApplicationKind a);

struct Application {
    ApplicationKind kind = ApplicationKind::Window;
    int size = 7;  // window size Wd, or odd kernel size K

    static Application window(int wd) { return {ApplicationKind::Window, wd}; }
    static Application neighboring(int k) { return {ApplicationKind::Neighboring, k}; }
};

/// Complete description of one spatial-processing variant. The four term
/// flags gate q*k, q*r^k, r^q*k and r^b inside the shared form
///   f_i = sum_{j in Phi} Norm_j([s q_i k_j] + [q_i r^k_{j-i}] + [r^q_{j-i} k_j] + [r^b_{j-i}]) v_j
/// with Phi a non-overlapping window partition or the sliding neighborhood.
struct ParadigmConfig {
    bool use_qk = false;
    bool use_q_rk = false;
    bool use_rq_k = false;
    bool use_rb = false;
    NormKind norm = NormKind::Softmax;
    Application application;
    int heads = 1;
    int channels = 1;
    /// Scale on the q*k term; <= 0 selects the default head_dim^(-1/2).
    double qk_scale = 0.0;

    void validate() const;
    int head_dim() const { return channels / heads; }
    double effective_qk_scale() const;
    /// Rows of the relative-position tables: K*K neighboring, (2Wd-1)^2 window.
    std::size_t table_rows() const;
    /// Filter elements per query pixel: K*K neighboring, Wd*Wd window.
    std::size_t filter_elems() const;
};

/// Learnable relative-position state: r_k, r_q are (head_dim, G, T),
/// r_b is (G, T), T = table_rows() of the config.
struct RelPosTables {
    Tensor r_k;
    Tensor r_q;
    Tensor r_b;

    /// Truncated normal, std 0.02, truncation at +/- 2 std.
    static RelPosTables init(const ParadigmConfig& cfg, Rng rng, DType dt);
};

enum class NormState { Raw, FilterNormed, SoftmaxNormed };

/// Per-pixel filter weights, shape (B, G, T, P); in window mode P enumerates
/// (window, window-pixel) pairs.
struct AttentionMap {
    Tensor values;
    NormState normalized = NormState::Raw;
};

/// Standardizes each filter (the T axis) to mean 0 / population std 1 via
/// (v - mean)/(std + eps). A length-1 filter axis yields zero slices and
/// sets *degenerate.
AttentionMap filter_normalize(const AttentionMap& attn, double eps, bool* degenerate = nullptr);

// -- graph route (the implementation; eager wrappers below run it on a tape) --

struct RelPosVars {
    Var r_k, r_q, r_b;
};

/// Pre-normalization logits plus the configured normalization, as (B,G,T,P).
Var unified_attention_graph(Tape& tape, Var q, Var k, const RelPosVars& tables,
                            const ParadigmConfig& cfg);
Var unified_forward_graph(Tape& tape, Var q, Var k, Var v, const RelPosVars& tables,
                          const ParadigmConfig& cfg);

// -- eager surface --

AttentionMap unified_attention(const Tensor& q, const Tensor& k, const RelPosTables& tables,
                               const ParadigmConfig& cfg);
Tensor unified_forward(const Tensor& q, const Tensor& k, const Tensor& v,
                       const RelPosTables& tables, const ParadigmConfig& cfg);

/// Depth-wise sliding-window correlation with zero padding; weights (C,K,K).
Tensor dwconv_forward(const Tensor& x, const Tensor& weights);

/// Windowed multi-head attention with relative position bias (G,(2Wd-1)^2),
/// implemented directly per window as a second route for equivalence checks.
Tensor lsa_forward(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& bias,
                   int window_size, double scale);

// -- presets --

enum class Preset {
    Net1,
    Net2,
    Net3,
    Net4,
    Net5,
    Net6,
    Net7,
    SwinLSA,
    DwConv,
    InvolutionLike,
    Net6N,
    Net7N,
};

/// Flag/norm/application combination of the named variant. Geometry defaults
/// to size 7 with a single head; callers set channels/heads/size afterwards.
ParadigmConfig preset(Preset name);
ParadigmConfig preset(const std::string& name);
const std::vector<std::pair<std::string, Preset>>& preset_table();

class Config;

/// Dotted-key serialization under `paradigm.*` (use_qk, norm, application,
/// size, heads, channels, qk_scale).
void write_paradigm_config(const ParadigmConfig& cfg, Config& out);
ParadigmConfig read_paradigm_config(const Config& in);

}  // namespace latt
