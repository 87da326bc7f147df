#pragma once

#include <cstdint>
#include <string>

#include "latt/model.hpp"

namespace latt {

struct CountResult {
    std::uint64_t params = 0;
    std::uint64_t flops = 0;  // multiply-add pairs; normalization excluded
};

/// Published-layout reference architectures: 4 stages, depths 2/2/6/2,
/// channels 96/192/384/768, heads 3/6/12/24, window 7; the ELSA variants
/// replace the attention of the first three stages with kernel-7 blocks.
enum class NamedArch { SwinT_LSA, SwinT_ELSA, SwinT_ELSA_HA_only };

const char* named_arch_name(NamedArch a);
NamedArch named_arch_from_name(const std::string& name);

/// Analytic counts for a reference architecture at the given input resolution.
CountResult count_params_flops(NamedArch arch, int resolution);

/// Counts for a miniature config: parameters from the actual tensor extents,
/// FLOPs from the same analytic walk the forward pass performs.
CountResult count_params_flops(const ModelConfig& cfg);

}  // namespace latt
