#include "latt/flops.hpp"

#include <stdexcept>

namespace latt {

const char* named_arch_name(NamedArch a) {
    switch (a) {
        case NamedArch::SwinT_LSA: return "SwinT_LSA";
        case NamedArch::SwinT_ELSA: return "SwinT_ELSA";
        case NamedArch::SwinT_ELSA_HA_only: return "SwinT_ELSA_HA_only";
    }
    return "?";
}

NamedArch named_arch_from_name(const std::string& name) {
    if (name == "SwinT_LSA") return NamedArch::SwinT_LSA;
    if (name == "SwinT_ELSA") return NamedArch::SwinT_ELSA;
    if (name == "SwinT_ELSA_HA_only") return NamedArch::SwinT_ELSA_HA_only;
    throw std::invalid_argument("unknown architecture: " + name);
}

namespace {

using u64 = std::uint64_t;

struct Acc {
    u64 params = 0, flops = 0;
    void add(u64 p, u64 f) {
        params += p;
        flops += f;
    }
};

// Windowed-attention block, Swin layout. M: window, tokens: positions.
void lsa_block(Acc& acc, u64 C, u64 G, u64 M, u64 tokens) {
    const u64 span = (2 * M - 1) * (2 * M - 1);
    acc.add(2 * C, 0);                                        // LN1
    acc.add(3 * C * C + 3 * C, tokens * 3 * C * C);           // qkv
    acc.add(span * G, tokens * 2 * (M * M) * C);              // bias table; QK + AV
    acc.add(C * C + C, tokens * C * C);                       // proj
    acc.add(2 * C, 0);                                        // LN2
    acc.add(8 * C * C + 5 * C, tokens * 8 * C * C);           // MLP (ratio 4)
}

// ELSA block in the production parameterization: per-head-width relative
// tables (head_dim x G x K^2 = C x K^2 values each) and, optionally, the
// ghost matrices O and S.
void elsa_block(Acc& acc, u64 C, u64 G, u64 K, u64 tokens, bool ghost) {
    const u64 KK = K * K;
    acc.add(2 * C, 0);                                        // LN1
    acc.add(4 * (C * C + C), tokens * 4 * C * C);             // q,k,v,out projections
    acc.add(0, tokens * C);                                   // Hadamard product
    acc.add(2 * C * KK + G * KK, tokens * 2 * KK * C);        // r_k, r_q, r_b; both contractions
    if (ghost) acc.add(2 * C * KK, tokens * KK * C);          // O, S; expansion apply
    acc.add(0, tokens * KK * C);                              // filter application over v
    acc.add(2 * C, 0);                                        // LN2
    acc.add(8 * C * C + 5 * C, tokens * 8 * C * C);           // MLP
}

}  // namespace

CountResult count_params_flops(NamedArch arch, int resolution) {
    if (resolution < 32 || resolution % 32 != 0)
        throw std::invalid_argument("count_params_flops: resolution must be a positive multiple of 32");
    const u64 dims[4] = {96, 192, 384, 768};
    const u64 depths[4] = {2, 2, 6, 2};
    const u64 heads[4] = {3, 6, 12, 24};
    const u64 window = 7, patch = 4, classes = 1000, in_ch = 3, elsa_kernel = 7;

    Acc acc;
    const u64 r0 = static_cast<u64>(resolution) / patch;
    acc.add(in_ch * patch * patch * dims[0] + dims[0] + 2 * dims[0],
            r0 * r0 * in_ch * patch * patch * dims[0]);  // patch embed conv + LN

    u64 res = r0;
    for (int s = 0; s < 4; ++s) {
        const u64 tokens = res * res;
        const bool elsa_stage = arch != NamedArch::SwinT_LSA && s < 3;
        for (u64 d = 0; d < depths[s]; ++d) {
            if (elsa_stage)
                elsa_block(acc, dims[s], heads[s], elsa_kernel, tokens,
                           arch == NamedArch::SwinT_ELSA);
            else
                lsa_block(acc, dims[s], heads[s], window, tokens);
        }
        if (s < 3) {
            const u64 C = dims[s], Cn = dims[s + 1];
            const u64 tn = (res / 2) * (res / 2);
            acc.add(2 * 4 * C + 4 * C * Cn, tn * 4 * C * Cn);  // merge LN + reduction
            res /= 2;
        }
    }
    acc.add(2 * dims[3], 0);                                   // final LN
    acc.add(dims[3] * classes + classes, dims[3] * classes);   // classifier
    return {acc.params, acc.flops};
}

CountResult count_params_flops(const ModelConfig& cfg) {
    cfg.validate();
    // parameters from the real tensors
    Model probe = Model::build(cfg, 0, DType::F32);
    Acc acc;
    acc.params = probe.param_count();

    const auto heads = cfg.resolved_heads();
    const u64 p = static_cast<u64>(cfg.patch_embed);
    u64 res = static_cast<u64>(cfg.image_size) / p;
    acc.flops += res * res * static_cast<u64>(cfg.in_channels) * p * p *
                 static_cast<u64>(cfg.stages[0].channels);
    for (std::size_t s = 0; s < cfg.stages.size(); ++s) {
        const auto& st = cfg.stages[s];
        const u64 C = static_cast<u64>(st.channels);
        const u64 G = static_cast<u64>(heads[s]);
        const u64 tokens = res * res;
        u64 mixer = 0;
        const u64 sz = static_cast<u64>(st.window_or_kernel);
        switch (st.mixer.kind) {
            case MixerKind::LSA: mixer = 4 * C * C + 2 * sz * sz * C; break;
            case MixerKind::DwConv: mixer = sz * sz * C; break;
            case MixerKind::Unified: {
                ParadigmConfig pc = preset(st.mixer.unified_preset);
                const u64 T = sz * sz;  // filter elements per pixel
                u64 proj = 1;           // v
                if (pc.use_qk || pc.use_q_rk) ++proj;
                if (pc.use_qk || pc.use_rq_k) ++proj;
                ++proj;  // out
                mixer = proj * C * C + T * C;  // projections + filter application
                if (pc.use_qk) mixer += T * C;
                if (pc.use_q_rk) mixer += T * C;
                if (pc.use_rq_k) mixer += T * C;
                break;
            }
            case MixerKind::ELSA: {
                const u64 KK = sz * sz;
                // full-channel tables: each contraction costs C*G*K^2 per pixel
                mixer = 4 * C * C + C + 2 * KK * C * G + KK * C /*ghost*/ + KK * C /*apply*/;
                break;
            }
        }
        acc.flops += tokens * static_cast<u64>(st.blocks) * (mixer + 8 * C * C);
        if (s + 1 < cfg.stages.size()) {
            const u64 Cn = static_cast<u64>(cfg.stages[s + 1].channels);
            acc.flops += (res / 2) * (res / 2) * 4 * C * Cn;
            res /= 2;
        }
    }
    acc.flops += static_cast<u64>(cfg.stages.back().channels) * static_cast<u64>(cfg.num_classes);
    return {acc.params, acc.flops};
}

}  // namespace latt
