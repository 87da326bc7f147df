#pragma once

#include <cstdint>
#include <vector>

#include "latt/tensor.hpp"

namespace latt {

/// Procedurally generated 10-class image set: oriented stripes, checkers of
/// two scales, rings, blobs and gradients on 32x32x3, with additive Gaussian
/// noise. Identical (seed, n, noise) always produce bitwise-identical data.
class SyntheticDataset {
public:
    static constexpr int kImageSize = 32;
    static constexpr int kChannels = 3;
    static constexpr int kClasses = 10;

    static SyntheticDataset make(std::uint64_t seed, std::size_t n, double noise_sigma = 0.25);

    std::size_t size() const { return labels_.size(); }
    const std::vector<int>& labels() const { return labels_; }
    const Tensor& images() const { return images_; }  // (n, 3, 32, 32) f32

    /// Gathers a batch (B, 3, 32, 32) at the requested dtype.
    Tensor gather(const std::vector<std::size_t>& indices, DType dt) const;
    std::vector<int> gather_labels(const std::vector<std::size_t>& indices) const;

private:
    Tensor images_;
    std::vector<int> labels_;
};

}  // namespace latt
