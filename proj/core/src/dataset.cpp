#include "latt/dataset.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "latt/rng.hpp"

namespace latt {

namespace {

constexpr int N = SyntheticDataset::kImageSize;

/// Fills a 32x32 pattern in roughly [-1, 1] for the given class.
void render_pattern(int label, Rng& rng, float* img) {
    const double pi = std::numbers::pi;
    auto at = [&](int y, int x) -> float& { return img[y * N + x]; };
    switch (label) {
        case 0:    // horizontal stripes
        case 1:    // vertical stripes
        case 2:    // diagonal stripes
        case 3: {  // anti-diagonal stripes
            const double freq = rng.uniform(2.0, 4.5);
            const double phase = rng.uniform(0.0, 2.0 * pi);
            for (int y = 0; y < N; ++y)
                for (int x = 0; x < N; ++x) {
                    double u = 0.0;
                    if (label == 0) u = y;
                    if (label == 1) u = x;
                    if (label == 2) u = (x + y) / std::sqrt(2.0);
                    if (label == 3) u = (x - y) / std::sqrt(2.0);
                    at(y, x) = static_cast<float>(std::sin(2.0 * pi * freq * u / N + phase));
                }
            break;
        }
        case 4:    // coarse checkerboard
        case 5: {  // fine checkerboard
            const int cell = label == 4 ? static_cast<int>(rng.uniform(5.0, 8.0))
                                        : static_cast<int>(rng.uniform(2.0, 3.5));
            const int oy = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(cell)));
            const int ox = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(cell)));
            for (int y = 0; y < N; ++y)
                for (int x = 0; x < N; ++x)
                    at(y, x) = (((y + oy) / cell + (x + ox) / cell) % 2 == 0) ? 1.0f : -1.0f;
            break;
        }
        case 6: {  // concentric rings
            const double cy = rng.uniform(12.0, 20.0), cx = rng.uniform(12.0, 20.0);
            const double freq = rng.uniform(2.5, 4.5);
            for (int y = 0; y < N; ++y)
                for (int x = 0; x < N; ++x) {
                    const double r = std::hypot(y - cy, x - cx);
                    at(y, x) = static_cast<float>(std::sin(2.0 * pi * freq * r / N));
                }
            break;
        }
        case 7: {  // one large blob
            const double cy = rng.uniform(10.0, 22.0), cx = rng.uniform(10.0, 22.0);
            const double s = rng.uniform(4.0, 7.0);
            const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
            for (int y = 0; y < N; ++y)
                for (int x = 0; x < N; ++x) {
                    const double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
                    at(y, x) = static_cast<float>(sign * 2.0 * std::exp(-d2 / (2.0 * s * s)) - sign * 0.5);
                }
            break;
        }
        case 8: {  // many small blobs
            for (int y = 0; y < N; ++y)
                for (int x = 0; x < N; ++x) at(y, x) = -0.3f;
            const int count = 5 + static_cast<int>(rng.uniform_index(4));
            for (int b = 0; b < count; ++b) {
                const double cy = rng.uniform(3.0, 29.0), cx = rng.uniform(3.0, 29.0);
                const double s = rng.uniform(1.4, 2.4);
                for (int y = 0; y < N; ++y)
                    for (int x = 0; x < N; ++x) {
                        const double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
                        at(y, x) += static_cast<float>(1.8 * std::exp(-d2 / (2.0 * s * s)));
                    }
            }
            break;
        }
        default: {  // linear gradient with a random direction
            const double theta = rng.uniform(0.0, 2.0 * pi);
            const double dy = std::sin(theta), dx = std::cos(theta);
            for (int y = 0; y < N; ++y)
                for (int x = 0; x < N; ++x) {
                    const double u = (dy * (y - N / 2.0) + dx * (x - N / 2.0)) / (N / 2.0);
                    at(y, x) = static_cast<float>(u);
                }
            break;
        }
    }
}

}  // namespace

SyntheticDataset SyntheticDataset::make(std::uint64_t seed, std::size_t n, double noise_sigma) {
    SyntheticDataset ds;
    ds.images_ = Tensor({std::max<std::size_t>(n, 1), kChannels, N, N}, DType::F32);
    ds.labels_.resize(n);
    Rng root(seed);
    auto pixels = ds.images_.data<float>();
    std::vector<float> pattern(static_cast<std::size_t>(N) * N);
    for (std::size_t i = 0; i < n; ++i) {
        const int label = static_cast<int>(i % kClasses);
        ds.labels_[i] = label;
        Rng rng = root.stream("sample/" + std::to_string(i));
        render_pattern(label, rng, pattern.data());
        float* base = pixels.data() + i * kChannels * N * N;
        for (int c = 0; c < kChannels; ++c) {
            const float gain = static_cast<float>(rng.uniform(0.7, 1.3));
            float* plane = base + static_cast<std::size_t>(c) * N * N;
            for (int p = 0; p < N * N; ++p)
                plane[p] = gain * pattern[static_cast<std::size_t>(p)] +
                           static_cast<float>(rng.normal(0.0, noise_sigma));
        }
    }
    return ds;
}

Tensor SyntheticDataset::gather(const std::vector<std::size_t>& indices, DType dt) const {
    const std::size_t plane = static_cast<std::size_t>(kChannels) * N * N;
    Tensor out({indices.size(), kChannels, N, N}, dt);
    auto src = images_.data<float>();
    for (std::size_t b = 0; b < indices.size(); ++b) {
        const float* s = src.data() + indices[b] * plane;
        for (std::size_t p = 0; p < plane; ++p) out.set_item(b * plane + p, s[p]);
    }
    return out;
}

std::vector<int> SyntheticDataset::gather_labels(const std::vector<std::size_t>& indices) const {
    std::vector<int> out(indices.size());
    for (std::size_t i = 0; i < indices.size(); ++i) out[i] = labels_[indices[i]];
    return out;
}

}  // namespace latt
