#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "latt/tensor.hpp"

namespace latt {

/// Golden tensor container, bit-exact: magic "LATT", u8 version=1,
/// u8 dtype code (0=f32, 1=f64), u8 ndim, one pad byte to 8 bytes,
/// ndim x u64 little-endian dims, then elements little-endian C-order.
void save_tensor(const Tensor& t, const std::filesystem::path& path);
Tensor load_tensor(const std::filesystem::path& path);

/// Directory manifest: a structured text file listing `name = tensor-file`
/// pairs (one per line, relative paths), next to the tensor containers.
void save_manifest(const std::vector<std::pair<std::string, Tensor>>& entries,
                   const std::filesystem::path& dir,
                   const std::string& manifest_name = "manifest.txt");
std::vector<std::pair<std::string, Tensor>> load_manifest(
    const std::filesystem::path& dir, const std::string& manifest_name = "manifest.txt");

}  // namespace latt
