#include "latt/paradigm.hpp"

#include <cmath>
#include <stdexcept>

#include "latt/ops.hpp"
#include "latt/window_ops.hpp"
#include "latt/config.hpp"

namespace latt {

const char* norm_name(NormKind n) {
    switch (n) {
        case NormKind::Identity: return "identity";
        case NormKind::FilterNorm: return "filter_norm";
        case NormKind::Softmax: return "softmax";
    }
    return "?";
}

const char* application_name(ApplicationKind a) {
    return a == ApplicationKind::Window ? "window" : "neighboring";
}

void ParadigmConfig::validate() const {
    if (!use_qk && !use_q_rk && !use_rq_k && !use_rb)
        throw std::invalid_argument("ParadigmConfig: at least one parameterization term must be enabled");
    if (heads < 1 || channels < 1 || channels % heads != 0)
        throw std::invalid_argument("ParadigmConfig: heads must divide channels");
    if (application.size < 1) throw std::invalid_argument("ParadigmConfig: window/kernel size must be >= 1");
    if (application.kind == ApplicationKind::Neighboring && application.size % 2 == 0)
        throw std::invalid_argument("ParadigmConfig: kernel size must be odd");
}

double ParadigmConfig::effective_qk_scale() const {
    if (qk_scale > 0.0) return qk_scale;
    return 1.0 / std::sqrt(static_cast<double>(head_dim()));
}

std::size_t ParadigmConfig::table_rows() const {
    const std::size_t s = static_cast<std::size_t>(application.size);
    return application.kind == ApplicationKind::Neighboring ? s * s : (2 * s - 1) * (2 * s - 1);
}

std::size_t ParadigmConfig::filter_elems() const {
    const std::size_t s = static_cast<std::size_t>(application.size);
    return s * s;
}

RelPosTables RelPosTables::init(const ParadigmConfig& cfg, Rng rng, DType dt) {
    cfg.validate();
    const std::size_t dh = static_cast<std::size_t>(cfg.head_dim());
    const std::size_t G = static_cast<std::size_t>(cfg.heads);
    const std::size_t T = cfg.table_rows();
    RelPosTables tables;
    tables.r_k = Tensor({dh, G, T}, dt);
    tables.r_q = Tensor({dh, G, T}, dt);
    tables.r_b = Tensor({G, T}, dt);
    Rng rk_rng = rng.stream("rel_pos/r_k");
    Rng rq_rng = rng.stream("rel_pos/r_q");
    Rng rb_rng = rng.stream("rel_pos/r_b");
    rk_rng.fill_trunc_normal(tables.r_k, 0.02);
    rq_rng.fill_trunc_normal(tables.r_q, 0.02);
    rb_rng.fill_trunc_normal(tables.r_b, 0.02);
    return tables;
}

AttentionMap filter_normalize(const AttentionMap& attn, double eps, bool* degenerate) {
    if (attn.values.ndim() != 4)
        throw std::invalid_argument("filter_normalize: attention map must be (B,G,T,P)");
    AttentionMap out;
    out.values = filter_normalize(attn.values, 2, eps, degenerate);
    out.normalized = NormState::FilterNormed;
    return out;
}

namespace {

Var apply_norm(Var logits, const ParadigmConfig& cfg, int axis) {
    switch (cfg.norm) {
        case NormKind::Identity: return logits;
        case NormKind::Softmax: return ag::softmax_over(logits, axis);
        case NormKind::FilterNorm: return ag::filter_normalize(logits, axis, 1e-5);
    }
    throw std::invalid_argument("unknown normalization");
}

/// (B,nW,G,Pw,Pw) window logits -> (B,G,Pw,nW*Pw) attention-map layout.
Tensor window_logits_to_map(const Tensor& x) {
    const std::size_t B = x.dim(0), nW = x.dim(1), G = x.dim(2), Pw = x.dim(3);
    Tensor out({B, G, Pw, nW * Pw}, x.dtype());
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t n = 0; n < nW; ++n)
            for (std::size_t g = 0; g < G; ++g)
                for (std::size_t i = 0; i < Pw; ++i)
                    for (std::size_t j = 0; j < Pw; ++j)
                        out.set_item(((b * G + g) * Pw + j) * (nW * Pw) + n * Pw + i,
                                     x.item((((b * nW + n) * G + g) * Pw + i) * Pw + j));
    return out;
}

Var neighbor_logits(Tape& tape, Var q, Var k, const RelPosVars& tables, const ParadigmConfig& cfg) {
    const Tensor& qv = tape.value(q);
    const std::size_t B = qv.dim(0), H = qv.dim(2), W = qv.dim(3);
    const std::size_t G = static_cast<std::size_t>(cfg.heads);
    const int K = cfg.application.size;
    const std::size_t T = cfg.table_rows();

    Var ku;  // unfolded keys, built lazily: only qk and rq_k need them
    auto unfolded_k = [&]() {
        if (!ku.valid()) ku = ag::unfold(k, K);
        return ku;
    };

    Var logits;
    auto accumulate = [&](Var term) { logits = logits.valid() ? ag::add(logits, term) : term; };
    if (cfg.use_qk)
        accumulate(ag::scale(ag::head_dot(q, unfolded_k(), G), cfg.effective_qk_scale()));
    if (cfg.use_q_rk) accumulate(ag::head_contract(q, tables.r_k));
    if (cfg.use_rq_k) accumulate(ag::head_contract_unfolded(unfolded_k(), tables.r_q));
    if (cfg.use_rb) {
        if (!logits.valid())
            logits = tape.constant(Tensor::zeros({B, G, T, H * W}, qv.dtype()));
        logits = ag::add_bias_gt(logits, tables.r_b);
    }
    return logits;
}

Var window_logits(Tape& tape, Var qw, Var kw, const RelPosVars& tables, const ParadigmConfig& cfg) {
    const Tensor& qv = tape.value(qw);
    const std::size_t B = qv.dim(0), nW = qv.dim(1), Pw = qv.dim(3);
    const std::size_t G = static_cast<std::size_t>(cfg.heads);
    const int Wd = cfg.application.size;

    Var logits;
    auto accumulate = [&](Var term) { logits = logits.valid() ? ag::add(logits, term) : term; };
    if (cfg.use_qk) accumulate(ag::scale(ag::win_qk(qw, kw, G), cfg.effective_qk_scale()));
    if (cfg.use_q_rk) accumulate(ag::win_q_table(qw, tables.r_k, Wd));
    if (cfg.use_rq_k) accumulate(ag::win_table_k(kw, tables.r_q, Wd));
    if (cfg.use_rb) {
        if (!logits.valid())
            logits = tape.constant(Tensor::zeros({B, nW, G, Pw, Pw}, qv.dtype()));
        logits = ag::add_bias_window(logits, tables.r_b, Wd);
    }
    return logits;
}

void check_forward_inputs(const Tensor& q, const Tensor& k, const ParadigmConfig& cfg) {
    cfg.validate();
    if (q.ndim() != 4 || k.dims() != q.dims())
        throw std::invalid_argument("unified: q/k must be matching (B,C,H,W)");
    if (q.dim(1) != static_cast<std::size_t>(cfg.channels))
        throw std::invalid_argument("unified: channel extent does not match config");
}

}  // namespace

Var unified_attention_graph(Tape& tape, Var q, Var k, const RelPosVars& tables,
                            const ParadigmConfig& cfg) {
    check_forward_inputs(tape.value(q), tape.value(k), cfg);
    if (cfg.application.kind == ApplicationKind::Neighboring) {
        Var logits = neighbor_logits(tape, q, k, tables, cfg);
        return apply_norm(logits, cfg, 2);
    }
    Var qw = ag::window_partition(q, cfg.application.size);
    Var kw = ag::window_partition(k, cfg.application.size);
    Var logits = window_logits(tape, qw, kw, tables, cfg);
    return apply_norm(logits, cfg, 4);
}

Var unified_forward_graph(Tape& tape, Var q, Var k, Var v, const RelPosVars& tables,
                          const ParadigmConfig& cfg) {
    const Tensor& qv = tape.value(q);
    check_forward_inputs(qv, tape.value(k), cfg);
    const std::size_t B = qv.dim(0), C = qv.dim(1), H = qv.dim(2), W = qv.dim(3);
    Var attn = unified_attention_graph(tape, q, k, tables, cfg);
    if (cfg.application.kind == ApplicationKind::Neighboring) {
        Var vu = ag::unfold(v, cfg.application.size);
        Var f = ag::apply_neighbor(attn, vu);  // (B,C,P)
        return ag::reshape(f, {B, C, H, W});
    }
    Var vw = ag::window_partition(v, cfg.application.size);
    Var fw = ag::win_apply(attn, vw);
    return ag::window_merge(fw, cfg.application.size, H, W);
}

AttentionMap unified_attention(const Tensor& q, const Tensor& k, const RelPosTables& tables,
                               const ParadigmConfig& cfg) {
    Tape tape;
    Var qv = tape.constant(q), kv = tape.constant(k);
    RelPosVars tv{tape.constant(tables.r_k), tape.constant(tables.r_q), tape.constant(tables.r_b)};
    Var attn = unified_attention_graph(tape, qv, kv, tv, cfg);
    AttentionMap map;
    Tensor raw = tape.value(attn);
    map.values = cfg.application.kind == ApplicationKind::Neighboring ? raw : window_logits_to_map(raw);
    switch (cfg.norm) {
        case NormKind::Identity: map.normalized = NormState::Raw; break;
        case NormKind::FilterNorm: map.normalized = NormState::FilterNormed; break;
        case NormKind::Softmax: map.normalized = NormState::SoftmaxNormed; break;
    }
    return map;
}

Tensor unified_forward(const Tensor& q, const Tensor& k, const Tensor& v,
                       const RelPosTables& tables, const ParadigmConfig& cfg) {
    Tape tape;
    Var qv = tape.constant(q), kv = tape.constant(k), vv = tape.constant(v);
    RelPosVars tv{tape.constant(tables.r_k), tape.constant(tables.r_q), tape.constant(tables.r_b)};
    return tape.value(unified_forward_graph(tape, qv, kv, vv, tv, cfg));
}

Tensor dwconv_forward(const Tensor& x, const Tensor& weights) {
    if (x.ndim() != 4 || weights.ndim() != 3)
        throw std::invalid_argument("dwconv_forward: x (B,C,H,W), weights (C,K,K)");
    if (x.dim(1) != weights.dim(0))
        throw std::invalid_argument("dwconv_forward: channel extents must match");
    const std::size_t C = weights.dim(0), K = weights.dim(1);
    if (weights.dim(2) != K || K % 2 == 0)
        throw std::invalid_argument("dwconv_forward: kernel must be square and odd");
    return conv2d_grouped(x, weights.reshaped({C, 1, K, K}), nullptr, C);
}

Tensor lsa_forward(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& bias,
                   int window_size, double scale) {
    if (q.ndim() != 4 || k.dims() != q.dims() || v.dims() != q.dims())
        throw std::invalid_argument("lsa_forward: q/k/v must be matching (B,C,H,W)");
    const std::size_t B = q.dim(0), C = q.dim(1), H = q.dim(2), W = q.dim(3);
    const std::size_t wd = static_cast<std::size_t>(window_size);
    if (wd == 0 || H % wd != 0 || W % wd != 0)
        throw std::invalid_argument("lsa_forward: window size must divide H and W");
    if (bias.ndim() != 2 || bias.dim(1) != (2 * wd - 1) * (2 * wd - 1))
        throw std::invalid_argument("lsa_forward: bias must be (G,(2Wd-1)^2)");
    const std::size_t G = bias.dim(0);
    if (G < 1 || C % G != 0) throw std::invalid_argument("lsa_forward: heads must divide channels");
    const std::size_t dh = C / G;
    const std::size_t Pw = wd * wd;
    const auto& idx = relative_index_map(window_size);

    Tensor out = Tensor::zeros(q.dims(), q.dtype());
    return dispatch_dtype(q.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto qs = q.data<T>();
        auto ks = k.data<T>();
        auto vs = v.data<T>();
        auto bs = bias.data<T>();
        auto os = out.data<T>();
        const std::size_t nH = H / wd, nWd = W / wd;
        std::vector<double> logits(Pw), weights(Pw);
        auto pixel = [&](std::size_t wy, std::size_t wx, std::size_t p) {
            return (wy * wd + p / wd) * W + wx * wd + p % wd;
        };
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t wy = 0; wy < nH; ++wy)
                for (std::size_t wx = 0; wx < nWd; ++wx)
                    for (std::size_t g = 0; g < G; ++g)
                        for (std::size_t i = 0; i < Pw; ++i) {
                            double mx = -std::numeric_limits<double>::infinity();
                            for (std::size_t j = 0; j < Pw; ++j) {
                                double dot = 0.0;
                                for (std::size_t d = 0; d < dh; ++d) {
                                    const std::size_t c = g * dh + d;
                                    dot += static_cast<double>(qs[(b * C + c) * H * W + pixel(wy, wx, i)]) *
                                           static_cast<double>(ks[(b * C + c) * H * W + pixel(wy, wx, j)]);
                                }
                                logits[j] = scale * dot +
                                            static_cast<double>(bs[g * bias.dim(1) + idx[i * Pw + j]]);
                                mx = std::max(mx, logits[j]);
                            }
                            double denom = 0.0;
                            for (std::size_t j = 0; j < Pw; ++j) {
                                weights[j] = std::exp(logits[j] - mx);
                                denom += weights[j];
                            }
                            for (std::size_t d = 0; d < dh; ++d) {
                                const std::size_t c = g * dh + d;
                                double acc = 0.0;
                                for (std::size_t j = 0; j < Pw; ++j)
                                    acc += weights[j] / denom *
                                           static_cast<double>(vs[(b * C + c) * H * W + pixel(wy, wx, j)]);
                                os[(b * C + c) * H * W + pixel(wy, wx, i)] = static_cast<T>(acc);
                            }
                        }
        return out;
    });
}

ParadigmConfig preset(Preset name) {
    ParadigmConfig cfg;
    cfg.norm = NormKind::Softmax;
    cfg.application = Application::window(7);
    switch (name) {
        case Preset::Net1: cfg.use_qk = true; break;
        case Preset::Net2: cfg.use_q_rk = true; break;
        case Preset::Net3: cfg.use_rq_k = true; break;
        case Preset::Net4: cfg.use_rb = true; break;
        case Preset::Net5: cfg.use_q_rk = cfg.use_rq_k = true; break;
        case Preset::Net6: cfg.use_q_rk = cfg.use_rq_k = cfg.use_rb = true; break;
        case Preset::Net7: cfg.use_qk = cfg.use_q_rk = cfg.use_rq_k = cfg.use_rb = true; break;
        case Preset::SwinLSA:
            cfg.use_qk = cfg.use_rb = true;
            break;
        case Preset::DwConv:
            cfg.use_rb = true;
            cfg.norm = NormKind::Identity;
            cfg.application = Application::neighboring(7);
            break;
        case Preset::InvolutionLike:
            cfg.use_q_rk = true;
            cfg.norm = NormKind::Identity;
            cfg.application = Application::neighboring(7);
            break;
        case Preset::Net6N:
            cfg.use_q_rk = cfg.use_rq_k = cfg.use_rb = true;
            cfg.application = Application::neighboring(7);
            break;
        case Preset::Net7N:
            cfg.use_qk = cfg.use_q_rk = cfg.use_rq_k = cfg.use_rb = true;
            cfg.application = Application::neighboring(7);
            break;
    }
    return cfg;
}

const std::vector<std::pair<std::string, Preset>>& preset_table() {
    static const std::vector<std::pair<std::string, Preset>> table = {
        {"Net1", Preset::Net1},
        {"Net2", Preset::Net2},
        {"Net3", Preset::Net3},
        {"Net4", Preset::Net4},
        {"Net5", Preset::Net5},
        {"Net6", Preset::Net6},
        {"Net7", Preset::Net7},
        {"SwinLSA", Preset::SwinLSA},
        {"DwConv", Preset::DwConv},
        {"InvolutionLike", Preset::InvolutionLike},
        {"Net6N", Preset::Net6N},
        {"Net7N", Preset::Net7N},
    };
    return table;
}

ParadigmConfig preset(const std::string& name) {
    for (const auto& [n, p] : preset_table())
        if (n == name) return preset(p);
    throw std::invalid_argument("unknown preset: " + name);
}

void write_paradigm_config(const ParadigmConfig& cfg, Config& out) {
    out.set("paradigm.use_qk", cfg.use_qk ? "true" : "false");
    out.set("paradigm.use_q_rk", cfg.use_q_rk ? "true" : "false");
    out.set("paradigm.use_rq_k", cfg.use_rq_k ? "true" : "false");
    out.set("paradigm.use_rb", cfg.use_rb ? "true" : "false");
    out.set("paradigm.norm", norm_name(cfg.norm));
    out.set("paradigm.application", application_name(cfg.application.kind));
    out.set("paradigm.size", std::to_string(cfg.application.size));
    out.set("paradigm.heads", std::to_string(cfg.heads));
    out.set("paradigm.channels", std::to_string(cfg.channels));
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", cfg.qk_scale);
    out.set("paradigm.qk_scale", buf);
}

ParadigmConfig read_paradigm_config(const Config& in) {
    ParadigmConfig cfg;
    cfg.use_qk = in.get_bool("paradigm.use_qk", false);
    cfg.use_q_rk = in.get_bool("paradigm.use_q_rk", false);
    cfg.use_rq_k = in.get_bool("paradigm.use_rq_k", false);
    cfg.use_rb = in.get_bool("paradigm.use_rb", false);
    const std::string norm = in.get_or("paradigm.norm", "softmax");
    if (norm == "identity")
        cfg.norm = NormKind::Identity;
    else if (norm == "filter_norm")
        cfg.norm = NormKind::FilterNorm;
    else if (norm == "softmax")
        cfg.norm = NormKind::Softmax;
    else
        throw std::invalid_argument("paradigm.norm: unknown value " + norm);
    const std::string app = in.get_or("paradigm.application", "window");
    if (app == "window")
        cfg.application.kind = ApplicationKind::Window;
    else if (app == "neighboring")
        cfg.application.kind = ApplicationKind::Neighboring;
    else
        throw std::invalid_argument("paradigm.application: unknown value " + app);
    cfg.application.size = static_cast<int>(in.get_int("paradigm.size", 7));
    cfg.heads = static_cast<int>(in.get_int("paradigm.heads", 1));
    cfg.channels = static_cast<int>(in.get_int("paradigm.channels", 1));
    cfg.qk_scale = in.get_double("paradigm.qk_scale", 0.0);
    cfg.validate();
    return cfg;
}

}  // namespace latt
