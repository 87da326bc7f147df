#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "latt/autograd.hpp"
#include "latt/elsa.hpp"
#include "latt/paradigm.hpp"
#include "latt/tensor.hpp"

namespace latt {

enum class MixerKind { LSA, DwConv, Unified, ELSA };

const char* mixer_name(MixerKind m);
MixerKind mixer_from_name(const std::string& name);

struct MixerSpec {
    MixerKind kind = MixerKind::LSA;
    Preset unified_preset = Preset::Net6N;               // Unified only
    ElsaVariant elsa_variant = ElsaVariant::MergedConv;  // ELSA only
};

struct StageConfig {
    int blocks = 1;
    int channels = 16;
    int heads = 2;
    MixerSpec mixer;
    /// Window size for windowed mixers, odd kernel size for neighboring ones.
    int window_or_kernel = 4;
};

/// Head-count settings: One forces a single head, OneX keeps the configured
/// per-stage counts, TwoX doubles them, C sets heads = channels.
enum class HeadSetting { One, OneX, TwoX, C };

const char* head_setting_name(HeadSetting h);
HeadSetting head_setting_from_name(const std::string& name);

struct ModelConfig {
    std::vector<StageConfig> stages;
    int patch_embed = 4;
    int num_classes = 10;
    int in_channels = 3;
    int image_size = 32;
    HeadSetting head_setting = HeadSetting::OneX;

    void validate() const;
    /// Per-stage head counts after applying head_setting.
    std::vector<int> resolved_heads() const;
    /// Feature-map side length entering stage s.
    int stage_resolution(std::size_t stage) const;
};

/// Two-stage 32x32 configuration used by the training demo; the mixer kind
/// selects ELSA (kernel 3) or one of its counterparts (window 4 for LSA).
ModelConfig tiny_config(MixerKind kind);

/// Miniature hierarchical classifier:
///   patch embed -> stages of [pre-norm, mixer, residual, pre-norm, MLP(4x),
///   residual] with 2x downsampling between stages -> GAP -> linear head.
class Model {
public:
    static Model build(const ModelConfig& cfg, std::uint64_t seed, DType dt = DType::F32);

    const ModelConfig& config() const { return cfg_; }
    DType dtype() const { return dtype_; }

    const std::vector<std::string>& param_names() const { return names_; }
    Tensor& param(const std::string& name);
    const Tensor& param(const std::string& name) const;
    std::uint64_t param_count() const;

    /// Builds the forward graph on the given tape. Parameters enter as leaves
    /// when trainable (names match param_names()), otherwise as constants.
    Var forward_graph(Tape& tape, Var images, bool trainable) const;
    /// Eager logits (B, num_classes).
    Tensor forward(const Tensor& images) const;

private:
    struct Binder;
    Var mixer_graph(Tape& tape, Binder& bind, Var x, std::size_t stage,
                    const std::string& prefix) const;

    ModelConfig cfg_;
    DType dtype_ = DType::F32;
    std::vector<std::string> names_;
    std::map<std::string, Tensor> params_;
};

}  // namespace latt
