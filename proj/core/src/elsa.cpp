#include "latt/elsa.hpp"

#include <cmath>
#include <stdexcept>

#include "latt/ops.hpp"
#include "latt/tensor_io.hpp"

namespace latt {

namespace {

void require(bool cond, const char* msg) {
    if (!cond) throw std::invalid_argument(msg);
}

// --- elsa-local kernels -----------------------------------------------------

// (C,G,T) table -> (G*T, C, 1, 1) 1x1-conv weight; out channel g*T+t holds
// the table column for (g, t).
Tensor table_to_conv_weight(const Tensor& tbl) {
    const std::size_t C = tbl.dim(0), G = tbl.dim(1), T = tbl.dim(2);
    Tensor out({G * T, C, 1, 1}, tbl.dtype());
    dispatch_dtype(tbl.dtype(), [&](auto tag) {
        using TT = decltype(tag);
        auto ts = tbl.data<TT>();
        auto os = out.data<TT>();
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t g = 0; g < G; ++g)
                for (std::size_t t = 0; t < T; ++t) os[(g * T + t) * C + c] = ts[(c * G + g) * T + t];
    });
    return out;
}

Tensor conv_weight_to_table(const Tensor& w, std::size_t groups) {
    const std::size_t GT = w.dim(0), C = w.dim(1), T = GT / groups;
    Tensor out({C, groups, T}, w.dtype());
    dispatch_dtype(w.dtype(), [&](auto tag) {
        using TT = decltype(tag);
        auto ws = w.data<TT>();
        auto os = out.data<TT>();
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t g = 0; g < groups; ++g)
                for (std::size_t t = 0; t < T; ++t) os[(c * groups + g) * T + t] = ws[(g * T + t) * C + c];
    });
    return out;
}

// rk, rq (C,G,T) -> merged (2*G*T, C, 1, 1): even channels carry the rk
// column, odd channels the rq column for the same (g, t).
Tensor tables_to_merged_weight(const Tensor& rk, const Tensor& rq) {
    const std::size_t C = rk.dim(0), G = rk.dim(1), T = rk.dim(2);
    Tensor out({2 * G * T, C, 1, 1}, rk.dtype());
    dispatch_dtype(rk.dtype(), [&](auto tag) {
        using TT = decltype(tag);
        auto ks = rk.data<TT>();
        auto qs = rq.data<TT>();
        auto os = out.data<TT>();
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t g = 0; g < G; ++g)
                for (std::size_t t = 0; t < T; ++t) {
                    const std::size_t i = g * T + t;
                    os[(2 * i) * C + c] = ks[(c * G + g) * T + t];
                    os[(2 * i + 1) * C + c] = qs[(c * G + g) * T + t];
                }
    });
    return out;
}

void merged_weight_to_tables(const Tensor& w, std::size_t groups, Tensor& grk, Tensor& grq) {
    const std::size_t C = w.dim(1), T = w.dim(0) / (2 * groups);
    grk = Tensor({C, groups, T}, w.dtype());
    grq = Tensor({C, groups, T}, w.dtype());
    dispatch_dtype(w.dtype(), [&](auto tag) {
        using TT = decltype(tag);
        auto ws = w.data<TT>();
        auto ks = grk.data<TT>();
        auto qs = grq.data<TT>();
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t g = 0; g < groups; ++g)
                for (std::size_t t = 0; t < T; ++t) {
                    const std::size_t i = g * T + t;
                    ks[(c * groups + g) * T + t] = ws[(2 * i) * C + c];
                    qs[(c * groups + g) * T + t] = ws[(2 * i + 1) * C + c];
                }
    });
}

// r_b (G,T) -> (2*G*T) conv bias on the even (identity-tap) channels only;
// a bias on the shifted channels would be zero-padded at borders.
Tensor interleave_bias(const Tensor& rb) {
    const std::size_t G = rb.dim(0), T = rb.dim(1);
    Tensor out({2 * G * T}, rb.dtype());
    dispatch_dtype(rb.dtype(), [&](auto tag) {
        using TT = decltype(tag);
        auto bs = rb.data<TT>();
        auto os = out.data<TT>();
        for (std::size_t i = 0; i < G * T; ++i) os[2 * i] = bs[i];
    });
    return out;
}

Tensor deinterleave_bias(const Tensor& g, std::size_t groups) {
    const std::size_t T = g.dim(0) / (2 * groups);
    Tensor out({groups, T}, g.dtype());
    dispatch_dtype(g.dtype(), [&](auto tag) {
        using TT = decltype(tag);
        auto gs = g.data<TT>();
        auto os = out.data<TT>();
        for (std::size_t i = 0; i < groups * T; ++i) os[i] = gs[2 * i];
    });
    return out;
}

// x:(B,C,T,P) scaled / shifted per (channel, pixel) by a (C,P) table.
Tensor mul_table_cp(const Tensor& x, const Tensor& m) {
    const std::size_t B = x.dim(0), C = x.dim(1), T = x.dim(2), P = x.dim(3);
    require(m.dim(0) == C && m.dim(1) == P, "mul_table_cp: table shape mismatch");
    Tensor out(x.dims(), x.dtype());
    dispatch_dtype(x.dtype(), [&](auto tag) {
        using TT = decltype(tag);
        auto xs = x.data<TT>();
        auto ms = m.data<TT>();
        auto os = out.data<TT>();
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t t = 0; t < T; ++t) {
                    const std::size_t base = ((b * C + c) * T + t) * P;
                    const TT* mrow = ms.data() + c * P;
                    for (std::size_t p = 0; p < P; ++p) os[base + p] = xs[base + p] * mrow[p];
                }
    });
    return out;
}

Tensor mul_table_cp_vjp_m(const Tensor& g, const Tensor& x) {
    const std::size_t B = g.dim(0), C = g.dim(1), T = g.dim(2), P = g.dim(3);
    Tensor out({C, P}, g.dtype());
    dispatch_dtype(g.dtype(), [&](auto tag) {
        using TT = decltype(tag);
        auto gs = g.data<TT>();
        auto xs = x.data<TT>();
        auto os = out.data<TT>();
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t t = 0; t < T; ++t) {
                    const std::size_t base = ((b * C + c) * T + t) * P;
                    TT* mrow = os.data() + c * P;
                    for (std::size_t p = 0; p < P; ++p) mrow[p] += gs[base + p] * xs[base + p];
                }
    });
    return out;
}

Tensor add_table_cp(const Tensor& x, const Tensor& s) {
    const std::size_t B = x.dim(0), C = x.dim(1), T = x.dim(2), P = x.dim(3);
    require(s.dim(0) == C && s.dim(1) == P, "add_table_cp: table shape mismatch");
    Tensor out(x.dims(), x.dtype());
    dispatch_dtype(x.dtype(), [&](auto tag) {
        using TT = decltype(tag);
        auto xs = x.data<TT>();
        auto ss = s.data<TT>();
        auto os = out.data<TT>();
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t t = 0; t < T; ++t) {
                    const std::size_t base = ((b * C + c) * T + t) * P;
                    const TT* srow = ss.data() + c * P;
                    for (std::size_t p = 0; p < P; ++p) os[base + p] = xs[base + p] + srow[p];
                }
    });
    return out;
}

Tensor add_table_cp_vjp_s(const Tensor& g) {
    const std::size_t B = g.dim(0), C = g.dim(1), T = g.dim(2), P = g.dim(3);
    Tensor out({C, P}, g.dtype());
    dispatch_dtype(g.dtype(), [&](auto tag) {
        using TT = decltype(tag);
        auto gs = g.data<TT>();
        auto os = out.data<TT>();
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t t = 0; t < T; ++t) {
                    const std::size_t base = ((b * C + c) * T + t) * P;
                    TT* srow = os.data() + c * P;
                    for (std::size_t p = 0; p < P; ++p) srow[p] += gs[base + p];
                }
    });
    return out;
}

// --- tape wrappers for the local kernels ------------------------------------

Var ag_table_to_conv_weight(Var tbl) {
    Tape& t = *tbl.tape;
    const std::size_t G = t.value(tbl).dim(1);
    return t.record("table_to_conv_weight", {tbl}, table_to_conv_weight(t.value(tbl)),
                    [G](const Tensor& g) {
                        return std::vector<Tensor>{conv_weight_to_table(g, G)};
                    });
}

Var ag_tables_to_merged_weight(Var rk, Var rq) {
    Tape& t = *rk.tape;
    const std::size_t G = t.value(rk).dim(1);
    return t.record("tables_to_merged_weight", {rk, rq},
                    tables_to_merged_weight(t.value(rk), t.value(rq)), [G](const Tensor& g) {
                        std::vector<Tensor> out(2);
                        merged_weight_to_tables(g, G, out[0], out[1]);
                        return out;
                    });
}

Var ag_interleave_bias(Var rb) {
    Tape& t = *rb.tape;
    const std::size_t G = t.value(rb).dim(0);
    return t.record("interleave_bias", {rb}, interleave_bias(t.value(rb)), [G](const Tensor& g) {
        return std::vector<Tensor>{deinterleave_bias(g, G)};
    });
}

Var ag_mul_table_cp(Var x, Var m) {
    Tape& t = *x.tape;
    Tensor xv = t.value(x), mv = t.value(m);
    const bool nx = t.needs_grad(x), nm = t.needs_grad(m);
    return t.record("mul_table_cp", {x, m}, mul_table_cp(xv, mv), [xv, mv, nx, nm](const Tensor& g) {
        std::vector<Tensor> out(2);
        if (nx) out[0] = mul_table_cp(g, mv);
        if (nm) out[1] = mul_table_cp_vjp_m(g, xv);
        return out;
    });
}

Var ag_add_table_cp(Var x, Var s) {
    Tape& t = *x.tape;
    const bool ns = t.needs_grad(s);
    return t.record("add_table_cp", {x, s}, add_table_cp(t.value(x), t.value(s)),
                    [ns](const Tensor& g) {
                        std::vector<Tensor> out(2);
                        out[0] = g;
                        if (ns) out[1] = add_table_cp_vjp_s(g);
                        return out;
                    });
}

// One-hot depth-wise shift kernels: channel g*K*K+t picks up the input
// displaced by OffsetOrder[t] under zero padding.
Tensor shift_kernels(std::size_t gkk, int K, DType dt) {
    const std::size_t KK = static_cast<std::size_t>(K) * K;
    Tensor w = Tensor::zeros({gkk, 1, static_cast<std::size_t>(K), static_cast<std::size_t>(K)}, dt);
    for (std::size_t i = 0; i < gkk; ++i) {
        const std::size_t t = i % KK;
        w.set_item((i * KK) + t, 1.0);
    }
    return w;
}

// Grouped kernels over channel pairs: tap 0 keeps the identity (center),
// tap 1 applies the OffsetOrder shift.
Tensor merged_shift_kernels(std::size_t gkk, int K, DType dt) {
    const std::size_t KK = static_cast<std::size_t>(K) * K;
    const std::size_t center = KK / 2;
    Tensor w = Tensor::zeros({gkk, 2, static_cast<std::size_t>(K), static_cast<std::size_t>(K)}, dt);
    for (std::size_t i = 0; i < gkk; ++i) {
        const std::size_t t = i % KK;
        w.set_item((i * 2) * KK + center, 1.0);
        w.set_item((i * 2 + 1) * KK + t, 1.0);
    }
    return w;
}

Var conv1x1(Tape& tape, Var x, Var w, Var b) {
    // (C,C) weights enter conv2d as (C,C,1,1)
    const auto& wv = tape.value(w);
    Var w4 = ag::reshape(w, {wv.dim(0), wv.dim(1), 1, 1});
    return ag::conv2d(x, w4, b, 1);
}

}  // namespace

const char* variant_name(ElsaVariant v) {
    switch (v) {
        case ElsaVariant::StrictUnfold: return "strict_unfold";
        case ElsaVariant::ShiftConv: return "shift_conv";
        case ElsaVariant::MergedConv: return "merged_conv";
        case ElsaVariant::Production: return "production";
    }
    return "?";
}

ElsaVariant variant_from_name(const std::string& name) {
    for (ElsaVariant v : all_variants())
        if (name == variant_name(v)) return v;
    throw std::invalid_argument("unknown variant: " + name);
}

const std::vector<ElsaVariant>& all_variants() {
    static const std::vector<ElsaVariant> v = {ElsaVariant::StrictUnfold, ElsaVariant::ShiftConv,
                                               ElsaVariant::MergedConv, ElsaVariant::Production};
    return v;
}

ElsaParams ElsaParams::init(int channels, int heads, int kernel_size, Rng rng, DType dt,
                            bool with_bias) {
    if (channels < 1 || heads < 1 || channels % heads != 0)
        throw std::invalid_argument("ElsaParams: heads must divide channels");
    if (kernel_size < 1 || kernel_size % 2 == 0)
        throw std::invalid_argument("ElsaParams: kernel size must be odd");
    const std::size_t C = static_cast<std::size_t>(channels);
    const std::size_t G = static_cast<std::size_t>(heads);
    const std::size_t K = static_cast<std::size_t>(kernel_size);
    const std::size_t KK = K * K;
    ElsaParams p;
    p.kernel_size = kernel_size;
    p.heads = heads;
    p.with_bias = with_bias;
    auto proj = [&](const char* name) {
        Tensor w({C, C}, dt);
        Rng r = rng.stream(std::string("elsa/") + name);
        r.fill_trunc_normal(w, 0.02);
        return w;
    };
    p.proj_q_w = proj("proj_q");
    p.proj_k_w = proj("proj_k");
    p.proj_v_w = proj("proj_v");
    p.proj_out_w = proj("proj_out");
    if (with_bias) {
        p.proj_q_b = Tensor::zeros({C}, dt);
        p.proj_k_b = Tensor::zeros({C}, dt);
        p.proj_v_b = Tensor::zeros({C}, dt);
        p.proj_out_b = Tensor::zeros({C}, dt);
    }
    p.r_k = Tensor({C, G, KK}, dt);
    p.r_q = Tensor({C, G, KK}, dt);
    p.r_b = Tensor({G, KK}, dt);
    Rng rk = rng.stream("elsa/r_k"), rq = rng.stream("elsa/r_q"), rb = rng.stream("elsa/r_b");
    rk.fill_trunc_normal(p.r_k, 0.02);
    rq.fill_trunc_normal(p.r_q, 0.02);
    rb.fill_trunc_normal(p.r_b, 0.02);
    p.ghost.mul = Tensor({C, K, K}, dt);
    p.ghost.add = Tensor({C, K, K}, dt);
    Rng gm = rng.stream("elsa/ghost_mul"), ga = rng.stream("elsa/ghost_add");
    gm.fill_normal(p.ghost.mul, 0.0, 1.0);
    ga.fill_trunc_normal(p.ghost.add, 0.02);
    return p;
}

void ElsaParams::validate() const {
    const std::size_t C = channels();
    const std::size_t KK = static_cast<std::size_t>(kernel_size) * kernel_size;
    if (kernel_size % 2 == 0) throw std::invalid_argument("ElsaParams: kernel size must be odd");
    if (heads < 1 || C % static_cast<std::size_t>(heads) != 0)
        throw std::invalid_argument("ElsaParams: heads must divide channels");
    if (r_k.ndim() != 3 || r_k.dim(0) != C || r_k.dim(2) != KK || r_q.dims() != r_k.dims())
        throw std::invalid_argument("ElsaParams: r_k/r_q must be (C,G,K*K)");
    if (r_b.ndim() != 2 || r_b.dim(1) != KK) throw std::invalid_argument("ElsaParams: r_b must be (G,K*K)");
    if (ghost.mul.ndim() != 3 || ghost.mul.dim(0) != C || ghost.add.dims() != ghost.mul.dims())
        throw std::invalid_argument("ElsaParams: ghost matrices must be (C,K,K)");
}

ElsaVars elsa_leaves(Tape& tape, const ElsaParams& p, const std::string& prefix) {
    ElsaVars v;
    v.proj_q_w = tape.leaf(p.proj_q_w, prefix + "proj_q.weight");
    v.proj_k_w = tape.leaf(p.proj_k_w, prefix + "proj_k.weight");
    v.proj_v_w = tape.leaf(p.proj_v_w, prefix + "proj_v.weight");
    v.proj_out_w = tape.leaf(p.proj_out_w, prefix + "proj_out.weight");
    if (p.with_bias) {
        v.proj_q_b = tape.leaf(p.proj_q_b, prefix + "proj_q.bias");
        v.proj_k_b = tape.leaf(p.proj_k_b, prefix + "proj_k.bias");
        v.proj_v_b = tape.leaf(p.proj_v_b, prefix + "proj_v.bias");
        v.proj_out_b = tape.leaf(p.proj_out_b, prefix + "proj_out.bias");
    }
    v.r_k = tape.leaf(p.r_k, prefix + "r_k");
    v.r_q = tape.leaf(p.r_q, prefix + "r_q");
    v.r_b = tape.leaf(p.r_b, prefix + "r_b");
    v.ghost_mul = tape.leaf(p.ghost.mul, prefix + "ghost.mul");
    v.ghost_add = tape.leaf(p.ghost.add, prefix + "ghost.add");
    return v;
}

ElsaVars elsa_constants(Tape& tape, const ElsaParams& p) {
    ElsaVars v;
    v.proj_q_w = tape.constant(p.proj_q_w);
    v.proj_k_w = tape.constant(p.proj_k_w);
    v.proj_v_w = tape.constant(p.proj_v_w);
    v.proj_out_w = tape.constant(p.proj_out_w);
    if (p.with_bias) {
        v.proj_q_b = tape.constant(p.proj_q_b);
        v.proj_k_b = tape.constant(p.proj_k_b);
        v.proj_v_b = tape.constant(p.proj_v_b);
        v.proj_out_b = tape.constant(p.proj_out_b);
    }
    v.r_k = tape.constant(p.r_k);
    v.r_q = tape.constant(p.r_q);
    v.r_b = tape.constant(p.r_b);
    v.ghost_mul = tape.constant(p.ghost.mul);
    v.ghost_add = tape.constant(p.ghost.add);
    return v;
}

Var hadamard_logits_graph(Tape& tape, Var q, Var k, const ElsaVars& vars,
                          const ElsaParams& params, ElsaVariant variant) {
    params.validate();
    const Tensor& qv = tape.value(q);
    require(qv.ndim() == 4 && tape.value(k).dims() == qv.dims(),
            "hadamard_attention: q/k must be matching (B,C,H,W)");
    require(qv.dim(1) == params.channels(), "hadamard_attention: channel extent mismatch");
    const std::size_t B = qv.dim(0), H = qv.dim(2), W = qv.dim(3);
    const std::size_t G = static_cast<std::size_t>(params.heads);
    const int K = params.kernel_size;
    const std::size_t KK = static_cast<std::size_t>(K) * K;
    const std::size_t GKK = G * KK;
    const DType dt = qv.dtype();

    Var hp = ag::mul(q, k);

    switch (variant) {
        case ElsaVariant::StrictUnfold: {
            // (q_i . k_i) r^k : plain channel contraction at each pixel
            Var term1 = ag::reshape(ag::contract_channel(hp, vars.r_k), {B, G, KK, H * W});
            // r^q (q_j . k_j) : unfold aligns pixel j with i, then contract
            Var hp_u = ag::unfold(hp, K);
            Var term2 = ag::contract_unfolded(hp_u, vars.r_q);
            return ag::add_bias_gt(ag::add(term1, term2), vars.r_b);
        }
        case ElsaVariant::ShiftConv: {
            // both contractions as 1x1 convs; the j-term realigned by one-hot
            // depth-wise shift kernels instead of unfold
            Var w1 = ag_table_to_conv_weight(vars.r_k);
            Var w2 = ag_table_to_conv_weight(vars.r_q);
            Var bias1 = ag::reshape(vars.r_b, {GKK});
            Var hp_rk = ag::conv2d(hp, w1, bias1, 1);
            Var rq_hp = ag::conv2d(hp, w2, Var{}, 1);
            Var shift = tape.constant(shift_kernels(GKK, K, dt));
            Var shifted = ag::conv2d(rq_hp, shift, Var{}, GKK);
            return ag::reshape(ag::add(hp_rk, shifted), {B, G, KK, H * W});
        }
        case ElsaVariant::MergedConv:
        case ElsaVariant::Production: {
            // single fused C -> 2*G*K^2 contraction; grouped one-hot kernels
            // combine the identity tap with the shifted tap per (g, t)
            Var wm = ag_tables_to_merged_weight(vars.r_k, vars.r_q);
            Var bias_m = ag_interleave_bias(vars.r_b);
            Var merged = ag::conv2d(hp, wm, bias_m, 1);
            if (variant == ElsaVariant::Production) merged = ag::gelu(merged);
            Var kernels = tape.constant(merged_shift_kernels(GKK, K, dt));
            Var combined = ag::conv2d(merged, kernels, Var{}, GKK);
            return ag::reshape(combined, {B, G, KK, H * W});
        }
    }
    throw std::invalid_argument("hadamard_attention: unknown variant");
}

Var hadamard_attention_graph(Tape& tape, Var q, Var k, const ElsaVars& vars,
                             const ElsaParams& params, ElsaVariant variant) {
    return ag::softmax_over(hadamard_logits_graph(tape, q, k, vars, params, variant), 2);
}

Var ghost_head_graph(Tape& tape, Var h, Var ghost_mul, Var ghost_add, std::size_t channels,
                     double lambda, double gamma) {
    const Tensor& hv = tape.value(h);
    require(hv.ndim() == 4, "ghost_head: attention must be (B,G,T,P)");
    const std::size_t G = hv.dim(1), T = hv.dim(2);
    require(channels % G == 0, "ghost_head: heads must divide channels");
    const auto& mul_dims = tape.value(ghost_mul).dims();
    require(mul_dims[0] == channels, "ghost_head: ghost matrices must have the block channel extent");
    Var o_flat = ag::reshape(ghost_mul, {channels, T});
    Var s_flat = ag::reshape(ghost_add, {channels, T});
    Var o_pow = ag::spow(o_flat, lambda);
    Var expanded = ag::expand_heads(h, channels);
    Var scaled = ag::mul_table_ct(expanded, o_pow);
    return ag::add_table_ct(scaled, ag::scale(s_flat, gamma));
}

Var elsa_forward_graph(Tape& tape, Var x, const ElsaVars& vars, const ElsaParams& params,
                       ElsaVariant variant) {
    const Tensor& xv = tape.value(x);
    require(xv.ndim() == 4, "elsa_forward: input must be (B,C,H,W)");
    const std::size_t B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    Var q = conv1x1(tape, x, vars.proj_q_w, vars.proj_q_b);
    Var k = conv1x1(tape, x, vars.proj_k_w, vars.proj_k_b);
    Var v = conv1x1(tape, x, vars.proj_v_w, vars.proj_v_b);
    Var attn = hadamard_attention_graph(tape, q, k, vars, params, variant);
    Var gh = ghost_head_graph(tape, attn, vars.ghost_mul, vars.ghost_add, C, params.lambda,
                              params.gamma);
    Var vu = ag::unfold(v, params.kernel_size);
    Var f = ag::apply_neighbor(gh, vu);  // per-channel filters: C groups of width 1
    Var f4 = ag::reshape(f, {B, C, H, W});
    return conv1x1(tape, f4, vars.proj_out_w, vars.proj_out_b);
}

HadamardAttention hadamard_attention(const Tensor& q, const Tensor& k, const ElsaParams& params,
                                     ElsaVariant variant) {
    Tape tape;
    Var qv = tape.constant(q), kv = tape.constant(k);
    ElsaVars vars = elsa_constants(tape, params);
    Var attn = hadamard_attention_graph(tape, qv, kv, vars, params, variant);
    const std::size_t B = q.dim(0), H = q.dim(2), W = q.dim(3);
    const std::size_t G = static_cast<std::size_t>(params.heads);
    const std::size_t KK = static_cast<std::size_t>(params.kernel_size) * params.kernel_size;
    HadamardAttention out;
    out.values = tape.value(attn).reshaped({B, G, KK, H, W});
    return out;
}

Tensor ghost_head(const HadamardAttention& h, const GhostHeadParams& ghost, double lambda,
                  double gamma) {
    require(h.values.ndim() == 5, "ghost_head: attention must be (B,G,T,H,W)");
    const std::size_t B = h.values.dim(0), G = h.values.dim(1), T = h.values.dim(2);
    const std::size_t H = h.values.dim(3), W = h.values.dim(4);
    const std::size_t C = ghost.mul.dim(0);
    Tape tape;
    Var hv = tape.constant(h.values.reshaped({B, G, T, H * W}));
    Var out = ghost_head_graph(tape, hv, tape.constant(ghost.mul), tape.constant(ghost.add), C,
                               lambda, gamma);
    return tape.value(out).reshaped({B, C, T, H, W});
}

Tensor elsa_forward(const Tensor& x, const ElsaParams& params, ElsaVariant variant) {
    Tape tape;
    Var xv = tape.constant(x);
    ElsaVars vars = elsa_constants(tape, params);
    return tape.value(elsa_forward_graph(tape, xv, vars, params, variant));
}

Var ghost_head_global_graph(Tape& tape, Var attn, Var mul, Var add, double lambda, double gamma) {
    const Tensor& av = tape.value(attn);
    require(av.ndim() == 4 && av.dim(2) == av.dim(3), "ghost_head_global: attention must be (B,G,N,N)");
    const std::size_t G = av.dim(1), N = av.dim(2);
    const Tensor& mv = tape.value(mul);
    require(mv.ndim() == 2 && mv.dim(1) == N, "ghost_head_global: tables must be (C,N)");
    const std::size_t C = mv.dim(0);
    require(C >= G, "ghost_head_global: expansion factor must be >= 1");
    require(C % G == 0, "ghost_head_global: heads must divide channels");
    // the token axis plays the filter-element role: tables index (c, n2)
    Var o_pow = ag::spow(mul, lambda);
    Var expanded = ag::expand_heads(attn, C);
    Var scaled = ag_mul_table_cp(expanded, o_pow);
    return ag_add_table_cp(scaled, ag::scale(add, gamma));
}

Tensor ghost_head_global(const Tensor& attn, const Tensor& mul, const Tensor& add, double lambda,
                         double gamma) {
    Tape tape;
    Var out = ghost_head_global_graph(tape, tape.constant(attn), tape.constant(mul),
                                      tape.constant(add), lambda, gamma);
    return tape.value(out);
}

void save_elsa_params(const ElsaParams& params, const std::filesystem::path& dir) {
    params.validate();
    std::vector<std::pair<std::string, Tensor>> entries;
    entries.emplace_back("proj_q.weight", params.proj_q_w);
    entries.emplace_back("proj_k.weight", params.proj_k_w);
    entries.emplace_back("proj_v.weight", params.proj_v_w);
    entries.emplace_back("proj_out.weight", params.proj_out_w);
    if (params.with_bias) {
        entries.emplace_back("proj_q.bias", params.proj_q_b);
        entries.emplace_back("proj_k.bias", params.proj_k_b);
        entries.emplace_back("proj_v.bias", params.proj_v_b);
        entries.emplace_back("proj_out.bias", params.proj_out_b);
    }
    entries.emplace_back("r_k", params.r_k);
    entries.emplace_back("r_q", params.r_q);
    entries.emplace_back("r_b", params.r_b);
    entries.emplace_back("ghost.mul", params.ghost.mul);
    entries.emplace_back("ghost.add", params.ghost.add);
    entries.emplace_back("hyper", Tensor::from_values({2}, {params.lambda, params.gamma}, DType::F64));
    save_manifest(entries, dir);
}

ElsaParams load_elsa_params(const std::filesystem::path& dir) {
    ElsaParams p;
    p.with_bias = false;
    auto entries = load_manifest(dir);
    for (auto& [name, tensor] : entries) {
        if (name == "proj_q.weight") p.proj_q_w = std::move(tensor);
        else if (name == "proj_k.weight") p.proj_k_w = std::move(tensor);
        else if (name == "proj_v.weight") p.proj_v_w = std::move(tensor);
        else if (name == "proj_out.weight") p.proj_out_w = std::move(tensor);
        else if (name == "proj_q.bias") { p.proj_q_b = std::move(tensor); p.with_bias = true; }
        else if (name == "proj_k.bias") p.proj_k_b = std::move(tensor);
        else if (name == "proj_v.bias") p.proj_v_b = std::move(tensor);
        else if (name == "proj_out.bias") p.proj_out_b = std::move(tensor);
        else if (name == "r_k") p.r_k = std::move(tensor);
        else if (name == "r_q") p.r_q = std::move(tensor);
        else if (name == "r_b") p.r_b = std::move(tensor);
        else if (name == "ghost.mul") p.ghost.mul = std::move(tensor);
        else if (name == "ghost.add") p.ghost.add = std::move(tensor);
        else if (name == "hyper") {
            p.lambda = tensor.item(0);
            p.gamma = tensor.item(1);
        } else {
            throw std::runtime_error("load_elsa_params: unknown entry " + name);
        }
    }
    p.heads = static_cast<int>(p.r_b.dim(0));
    p.kernel_size = static_cast<int>(p.ghost.mul.dim(1));
    p.validate();
    return p;
}

}  // namespace latt
