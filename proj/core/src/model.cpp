#include "latt/model.hpp"

#include <cmath>
#include <stdexcept>

#include "latt/ops.hpp"
#include "latt/rng.hpp"

namespace latt {

const char* mixer_name(MixerKind m) {
    switch (m) {
        case MixerKind::LSA: return "lsa";
        case MixerKind::DwConv: return "dwconv";
        case MixerKind::Unified: return "unified";
        case MixerKind::ELSA: return "elsa";
    }
    return "?";
}

MixerKind mixer_from_name(const std::string& name) {
    if (name == "lsa") return MixerKind::LSA;
    if (name == "dwconv") return MixerKind::DwConv;
    if (name == "unified") return MixerKind::Unified;
    if (name == "elsa") return MixerKind::ELSA;
    throw std::invalid_argument("unknown mixer: " + name);
}

const char* head_setting_name(HeadSetting h) {
    switch (h) {
        case HeadSetting::One: return "one";
        case HeadSetting::OneX: return "1x";
        case HeadSetting::TwoX: return "2x";
        case HeadSetting::C: return "c";
    }
    return "?";
}

HeadSetting head_setting_from_name(const std::string& name) {
    if (name == "one" || name == "1") return HeadSetting::One;
    if (name == "1x") return HeadSetting::OneX;
    if (name == "2x") return HeadSetting::TwoX;
    if (name == "c" || name == "C") return HeadSetting::C;
    throw std::invalid_argument("unknown head setting: " + name);
}

std::vector<int> ModelConfig::resolved_heads() const {
    std::vector<int> heads;
    heads.reserve(stages.size());
    for (const auto& s : stages) {
        switch (head_setting) {
            case HeadSetting::One: heads.push_back(1); break;
            case HeadSetting::OneX: heads.push_back(s.heads); break;
            case HeadSetting::TwoX: heads.push_back(2 * s.heads); break;
            case HeadSetting::C: heads.push_back(s.channels); break;
        }
    }
    return heads;
}

int ModelConfig::stage_resolution(std::size_t stage) const {
    int r = image_size / patch_embed;
    for (std::size_t s = 0; s < stage; ++s) r /= 2;
    return r;
}

void ModelConfig::validate() const {
    if (stages.empty()) throw std::invalid_argument("ModelConfig: at least one stage required");
    if (patch_embed < 1 || image_size % patch_embed != 0)
        throw std::invalid_argument("ModelConfig: patch size must divide the image size");
    if (num_classes < 2) throw std::invalid_argument("ModelConfig: need >= 2 classes");
    const auto heads = resolved_heads();
    for (std::size_t s = 0; s < stages.size(); ++s) {
        const auto& st = stages[s];
        if (st.blocks < 1 || st.channels < 1)
            throw std::invalid_argument("ModelConfig: blocks/channels must be positive");
        if (heads[s] < 1 || st.channels % heads[s] != 0)
            throw std::invalid_argument("ModelConfig: heads must divide channels at every stage");
        const int res = stage_resolution(s);
        if (res < 1) throw std::invalid_argument("ModelConfig: too many stages for the image size");
        const bool windowed =
            st.mixer.kind == MixerKind::LSA ||
            (st.mixer.kind == MixerKind::Unified &&
             preset(st.mixer.unified_preset).application.kind == ApplicationKind::Window);
        if (windowed) {
            if (st.window_or_kernel < 1 || res % st.window_or_kernel != 0)
                throw std::invalid_argument("ModelConfig: window size must divide the stage resolution");
        } else {
            if (st.window_or_kernel < 1 || st.window_or_kernel % 2 == 0)
                throw std::invalid_argument("ModelConfig: kernel size must be odd");
        }
    }
}

namespace {

std::size_t su(int v) { return static_cast<std::size_t>(v); }

}  // namespace

ModelConfig tiny_config(MixerKind kind) {
    ModelConfig cfg;
    cfg.patch_embed = 4;
    cfg.num_classes = 10;
    cfg.image_size = 32;
    StageConfig s0;
    s0.blocks = 1;
    s0.channels = 16;
    s0.heads = 2;
    s0.mixer.kind = kind;
    StageConfig s1;
    s1.blocks = 1;
    s1.channels = 32;
    s1.heads = 4;
    s1.mixer.kind = kind;
    const bool windowed = kind == MixerKind::LSA ||
                          (kind == MixerKind::Unified &&
                           preset(s0.mixer.unified_preset).application.kind == ApplicationKind::Window);
    s0.window_or_kernel = windowed ? 4 : 3;
    s1.window_or_kernel = windowed ? 4 : 3;
    cfg.stages = {s0, s1};
    return cfg;
}

Model Model::build(const ModelConfig& cfg, std::uint64_t seed, DType dt) {
    cfg.validate();
    Model m;
    m.cfg_ = cfg;
    m.dtype_ = dt;
    Rng root(seed);

    auto add_param = [&](const std::string& name, std::vector<std::size_t> dims, double init_std,
                         double fill = 0.0) {
        Tensor t(dims, dt);
        if (init_std > 0.0) {
            Rng r = root.stream(name);
            r.fill_trunc_normal(t, init_std);
        } else if (fill != 0.0) {
            t = Tensor::full(dims, fill, dt);
        }
        m.names_.push_back(name);
        m.params_.emplace(name, std::move(t));
    };
    auto add_normal_param = [&](const std::string& name, std::vector<std::size_t> dims) {
        Tensor t(dims, dt);
        Rng r = root.stream(name);
        r.fill_normal(t, 0.0, 1.0);
        m.names_.push_back(name);
        m.params_.emplace(name, std::move(t));
    };
    auto add_norm = [&](const std::string& prefix, std::size_t c) {
        add_param(prefix + ".gamma", {c}, 0.0, 1.0);
        add_param(prefix + ".beta", {c}, 0.0, 0.0);
    };
    auto add_proj = [&](const std::string& prefix, std::size_t out, std::size_t in, bool bias = true) {
        add_param(prefix + ".weight", {out, in}, 0.02);
        if (bias) add_param(prefix + ".bias", {out}, 0.0);
    };

    const auto heads = cfg.resolved_heads();
    const std::size_t c0 = su(cfg.stages[0].channels);
    add_proj("patch_embed.proj", c0, su(cfg.in_channels * cfg.patch_embed * cfg.patch_embed));
    add_norm("patch_embed.norm", c0);

    for (std::size_t s = 0; s < cfg.stages.size(); ++s) {
        const auto& st = cfg.stages[s];
        const std::size_t C = su(st.channels);
        const std::size_t G = su(heads[s]);
        for (int b = 0; b < st.blocks; ++b) {
            const std::string bp = "stage" + std::to_string(s) + ".block" + std::to_string(b) + ".";
            add_norm(bp + "norm1", C);
            const std::string mp = bp + "mixer.";
            switch (st.mixer.kind) {
                case MixerKind::LSA: {
                    add_proj(mp + "proj_q", C, C);
                    add_proj(mp + "proj_k", C, C);
                    add_proj(mp + "proj_v", C, C);
                    const std::size_t span = su(2 * st.window_or_kernel - 1);
                    add_param(mp + "rel_bias", {G, span * span}, 0.02);
                    add_proj(mp + "proj_out", C, C);
                    break;
                }
                case MixerKind::DwConv: {
                    add_param(mp + "dw.weight", {C, 1, su(st.window_or_kernel), su(st.window_or_kernel)},
                              0.02);
                    add_param(mp + "dw.bias", {C}, 0.0);
                    break;
                }
                case MixerKind::Unified: {
                    ParadigmConfig pc = preset(st.mixer.unified_preset);
                    pc.channels = st.channels;
                    pc.heads = heads[s];
                    pc.application.size = st.window_or_kernel;
                    const std::size_t T = pc.table_rows();
                    const std::size_t dh = su(pc.head_dim());
                    if (pc.use_qk || pc.use_q_rk) add_proj(mp + "proj_q", C, C);
                    if (pc.use_qk || pc.use_rq_k) add_proj(mp + "proj_k", C, C);
                    add_proj(mp + "proj_v", C, C);
                    if (pc.use_q_rk) add_param(mp + "r_k", {dh, G, T}, 0.02);
                    if (pc.use_rq_k) add_param(mp + "r_q", {dh, G, T}, 0.02);
                    if (pc.use_rb) add_param(mp + "r_b", {G, T}, 0.02);
                    add_proj(mp + "proj_out", C, C);
                    break;
                }
                case MixerKind::ELSA: {
                    const std::size_t K = su(st.window_or_kernel);
                    add_proj(mp + "proj_q", C, C);
                    add_proj(mp + "proj_k", C, C);
                    add_proj(mp + "proj_v", C, C);
                    add_param(mp + "r_k", {C, G, K * K}, 0.02);
                    add_param(mp + "r_q", {C, G, K * K}, 0.02);
                    add_param(mp + "r_b", {G, K * K}, 0.02);
                    add_normal_param(mp + "ghost.mul", {C, K, K});
                    add_param(mp + "ghost.add", {C, K, K}, 0.02);
                    add_proj(mp + "proj_out", C, C);
                    break;
                }
            }
            add_norm(bp + "norm2", C);
            add_proj(bp + "mlp.fc1", 4 * C, C);
            add_proj(bp + "mlp.fc2", C, 4 * C);
        }
        if (s + 1 < cfg.stages.size()) {
            const std::string dp = "downsample" + std::to_string(s) + ".";
            add_norm(dp + "norm", 4 * C);
            add_param(dp + "reduce.weight", {su(cfg.stages[s + 1].channels), 4 * C}, 0.02);
        }
    }
    const std::size_t cl = su(cfg.stages.back().channels);
    add_norm("head.norm", cl);
    add_proj("head.fc", su(cfg.num_classes), cl);
    return m;
}

Tensor& Model::param(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::invalid_argument("Model: unknown parameter " + name);
    return it->second;
}

const Tensor& Model::param(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::invalid_argument("Model: unknown parameter " + name);
    return it->second;
}

std::uint64_t Model::param_count() const {
    std::uint64_t n = 0;
    for (const auto& [name, t] : params_) n += t.numel();
    return n;
}

struct Model::Binder {
    Tape& tape;
    const Model& model;
    bool trainable;
    std::map<std::string, Var> cache;

    Var operator()(const std::string& name) {
        auto it = cache.find(name);
        if (it != cache.end()) return it->second;
        const Tensor& value = model.param(name);
        Var v = trainable ? tape.leaf(value, name) : tape.constant(value);
        cache.emplace(name, v);
        return v;
    }
};

namespace {

Var conv1x1_p(Tape& tape, Var x, Var w, Var b) {
    const auto& wv = tape.value(w);
    return ag::conv2d(x, ag::reshape(w, {wv.dim(0), wv.dim(1), 1, 1}), b, 1);
}

}  // namespace

Var Model::mixer_graph(Tape& tape, Binder& bind, Var x, std::size_t stage,
                       const std::string& prefix) const {
    const auto& st = cfg_.stages[stage];
    const int G = cfg_.resolved_heads()[stage];
    switch (st.mixer.kind) {
        case MixerKind::LSA: {
            Var q = conv1x1_p(tape, x, bind(prefix + "proj_q.weight"), bind(prefix + "proj_q.bias"));
            Var k = conv1x1_p(tape, x, bind(prefix + "proj_k.weight"), bind(prefix + "proj_k.bias"));
            Var v = conv1x1_p(tape, x, bind(prefix + "proj_v.weight"), bind(prefix + "proj_v.bias"));
            ParadigmConfig pc = preset(Preset::SwinLSA);
            pc.channels = st.channels;
            pc.heads = G;
            pc.application = Application::window(st.window_or_kernel);
            RelPosVars tables{Var{}, Var{}, bind(prefix + "rel_bias")};
            Var y = unified_forward_graph(tape, q, k, v, tables, pc);
            return conv1x1_p(tape, y, bind(prefix + "proj_out.weight"), bind(prefix + "proj_out.bias"));
        }
        case MixerKind::DwConv: {
            return ag::conv2d(x, bind(prefix + "dw.weight"), bind(prefix + "dw.bias"),
                              su(st.channels));
        }
        case MixerKind::Unified: {
            ParadigmConfig pc = preset(st.mixer.unified_preset);
            pc.channels = st.channels;
            pc.heads = G;
            pc.application.size = st.window_or_kernel;
            Var q = x, k = x;
            if (pc.use_qk || pc.use_q_rk)
                q = conv1x1_p(tape, x, bind(prefix + "proj_q.weight"), bind(prefix + "proj_q.bias"));
            if (pc.use_qk || pc.use_rq_k)
                k = conv1x1_p(tape, x, bind(prefix + "proj_k.weight"), bind(prefix + "proj_k.bias"));
            Var v = conv1x1_p(tape, x, bind(prefix + "proj_v.weight"), bind(prefix + "proj_v.bias"));
            RelPosVars tables;
            if (pc.use_q_rk) tables.r_k = bind(prefix + "r_k");
            if (pc.use_rq_k) tables.r_q = bind(prefix + "r_q");
            if (pc.use_rb) tables.r_b = bind(prefix + "r_b");
            Var y = unified_forward_graph(tape, q, k, v, tables, pc);
            return conv1x1_p(tape, y, bind(prefix + "proj_out.weight"), bind(prefix + "proj_out.bias"));
        }
        case MixerKind::ELSA: {
            ElsaParams meta;
            meta.kernel_size = st.window_or_kernel;
            meta.heads = G;
            meta.lambda = 1.0;
            meta.gamma = 1.0;
            meta.with_bias = true;
            ElsaVars vars;
            vars.proj_q_w = bind(prefix + "proj_q.weight");
            vars.proj_q_b = bind(prefix + "proj_q.bias");
            vars.proj_k_w = bind(prefix + "proj_k.weight");
            vars.proj_k_b = bind(prefix + "proj_k.bias");
            vars.proj_v_w = bind(prefix + "proj_v.weight");
            vars.proj_v_b = bind(prefix + "proj_v.bias");
            vars.proj_out_w = bind(prefix + "proj_out.weight");
            vars.proj_out_b = bind(prefix + "proj_out.bias");
            vars.r_k = bind(prefix + "r_k");
            vars.r_q = bind(prefix + "r_q");
            vars.r_b = bind(prefix + "r_b");
            vars.ghost_mul = bind(prefix + "ghost.mul");
            vars.ghost_add = bind(prefix + "ghost.add");
            // validate() inspects the real tensors
            meta.proj_q_w = param(prefix + "proj_q.weight");
            meta.r_k = param(prefix + "r_k");
            meta.r_q = param(prefix + "r_q");
            meta.r_b = param(prefix + "r_b");
            meta.ghost.mul = param(prefix + "ghost.mul");
            meta.ghost.add = param(prefix + "ghost.add");
            return elsa_forward_graph(tape, x, vars, meta, st.mixer.elsa_variant);
        }
    }
    throw std::invalid_argument("unknown mixer kind");
}

Var Model::forward_graph(Tape& tape, Var images, bool trainable) const {
    Binder bind{tape, *this, trainable, {}};
    constexpr double ln_eps = 1e-5;

    Var x = ag::space_to_depth(images, cfg_.patch_embed);
    x = conv1x1_p(tape, x, bind("patch_embed.proj.weight"), bind("patch_embed.proj.bias"));
    x = ag::layer_norm_channels(x, bind("patch_embed.norm.gamma"), bind("patch_embed.norm.beta"),
                                ln_eps);

    for (std::size_t s = 0; s < cfg_.stages.size(); ++s) {
        const auto& st = cfg_.stages[s];
        for (int b = 0; b < st.blocks; ++b) {
            const std::string bp = "stage" + std::to_string(s) + ".block" + std::to_string(b) + ".";
            Var y = ag::layer_norm_channels(x, bind(bp + "norm1.gamma"), bind(bp + "norm1.beta"),
                                            ln_eps);
            y = mixer_graph(tape, bind, y, s, bp + "mixer.");
            x = ag::add(x, y);
            y = ag::layer_norm_channels(x, bind(bp + "norm2.gamma"), bind(bp + "norm2.beta"), ln_eps);
            y = conv1x1_p(tape, y, bind(bp + "mlp.fc1.weight"), bind(bp + "mlp.fc1.bias"));
            y = ag::gelu(y);
            y = conv1x1_p(tape, y, bind(bp + "mlp.fc2.weight"), bind(bp + "mlp.fc2.bias"));
            x = ag::add(x, y);
        }
        if (s + 1 < cfg_.stages.size()) {
            const std::string dp = "downsample" + std::to_string(s) + ".";
            x = ag::space_to_depth(x, 2);
            x = ag::layer_norm_channels(x, bind(dp + "norm.gamma"), bind(dp + "norm.beta"), ln_eps);
            x = conv1x1_p(tape, x, bind(dp + "reduce.weight"), Var{});
        }
    }

    x = ag::layer_norm_channels(x, bind("head.norm.gamma"), bind("head.norm.beta"), ln_eps);
    Var feat = ag::mean_hw(x);
    return ag::linear(feat, bind("head.fc.weight"), bind("head.fc.bias"));
}

Tensor Model::forward(const Tensor& images) const {
    Tape tape;
    Var in = tape.constant(images.cast(dtype_));
    return tape.value(forward_graph(tape, in, false));
}

}  // namespace latt
