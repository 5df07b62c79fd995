#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <variant>
#include <vector>

#include "ulrl/data.hpp"
#include "ulrl/errors.hpp"
#include "ulrl/rng.hpp"
#include "ulrl/tensor.hpp"

namespace ulrl {

/// Bottom-right checkerboard patch: block-local cell (i,j) is 1 when i+j is even,
/// 0 otherwise, written to all channels.
struct PatchTrigger {
    std::size_t size = 3;
};

/// x' = (1-alpha)*x + alpha*pattern, pattern shaped like the image.
struct BlendedTrigger {
    float alpha = 0.2f;
    Tensor<float> pattern;  // [C,H,W]
};

/// Per-column sinusoid: x' = clamp(x + A*sin(2*pi*j*f/W)).
struct SinusoidalTrigger {
    float amplitude = 40.0f / 255.0f;
    int frequency = 6;
};

using TriggerSpec = std::variant<PatchTrigger, BlendedTrigger, SinusoidalTrigger>;

inline const char* trigger_name(const TriggerSpec& spec) {
    if (std::holds_alternative<PatchTrigger>(spec)) return "patch";
    if (std::holds_alternative<BlendedTrigger>(spec)) return "blended";
    return "sinusoidal";
}

/// Default blend pattern: a fixed-seed low-frequency binary image, built by
/// bilinear upsampling of a seeded 3x3 grid per channel and thresholding at 0.5.
/// Stands in for an external high-contrast asset.
inline Tensor<float> default_blend_pattern(std::size_t channels, std::size_t height, std::size_t width) {
    Rng rng(0x0B1E5DEDu);  // constant: the pattern is an asset, not an experiment variable
    Tensor<float> pattern({channels, height, width});
    const std::size_t g = 3;
    std::vector<float> grid(g * g);
    for (std::size_t c = 0; c < channels; ++c) {
        for (auto& v : grid) v = static_cast<float>(rng.uniform());
        for (std::size_t i = 0; i < height; ++i)
            for (std::size_t j = 0; j < width; ++j) {
                const double y = height == 1 ? 0.0 : static_cast<double>(i) / (height - 1) * (g - 1);
                const double x = width == 1 ? 0.0 : static_cast<double>(j) / (width - 1) * (g - 1);
                const std::size_t y0 = std::min<std::size_t>(static_cast<std::size_t>(y), g - 2);
                const std::size_t x0 = std::min<std::size_t>(static_cast<std::size_t>(x), g - 2);
                const double fy = y - y0, fx = x - x0;
                const double v = grid[y0 * g + x0] * (1 - fy) * (1 - fx) +
                                 grid[y0 * g + x0 + 1] * (1 - fy) * fx +
                                 grid[(y0 + 1) * g + x0] * fy * (1 - fx) +
                                 grid[(y0 + 1) * g + x0 + 1] * fy * fx;
                pattern.data[(c * height + i) * width + j] = v > 0.5 ? 1.0f : 0.0f;
            }
    }
    return pattern;
}

/// In-place trigger application to a single [C,H,W] image buffer.
inline void apply_trigger_inplace(float* image, std::size_t channels, std::size_t height,
                                  std::size_t width, const TriggerSpec& spec) {
    if (const auto* patch = std::get_if<PatchTrigger>(&spec)) {
        if (patch->size > height || patch->size > width)
            throw ShapeError("apply_trigger: patch does not fit inside the image");
        const std::size_t r0 = height - patch->size, c0 = width - patch->size;
        for (std::size_t c = 0; c < channels; ++c)
            for (std::size_t i = 0; i < patch->size; ++i)
                for (std::size_t j = 0; j < patch->size; ++j)
                    image[(c * height + r0 + i) * width + c0 + j] = ((i + j) % 2 == 0) ? 1.0f : 0.0f;
    } else if (const auto* blend = std::get_if<BlendedTrigger>(&spec)) {
        if (blend->pattern.shape != Shape{channels, height, width})
            throw ShapeError("apply_trigger: blend pattern shape " + shape_str(blend->pattern.shape) +
                             " does not match image [" + std::to_string(channels) + "," +
                             std::to_string(height) + "," + std::to_string(width) + "]");
        const float a = blend->alpha;
        for (std::size_t i = 0; i < channels * height * width; ++i)
            image[i] = (1.0f - a) * image[i] + a * blend->pattern.data[i];
    } else {
        const auto& sig = std::get<SinusoidalTrigger>(spec);
        for (std::size_t j = 0; j < width; ++j) {
            const float offset = sig.amplitude *
                                 static_cast<float>(std::sin(2.0 * 3.14159265358979323846 *
                                                             static_cast<double>(j) * sig.frequency / width));
            for (std::size_t c = 0; c < channels; ++c)
                for (std::size_t i = 0; i < height; ++i) {
                    float& px = image[(c * height + i) * width + j];
                    px = std::clamp(px + offset, 0.0f, 1.0f);
                }
        }
    }
}

inline Tensor<float> apply_trigger(const Tensor<float>& image, const TriggerSpec& spec) {
    if (image.rank() != 3) throw ShapeError("apply_trigger: image must be [C,H,W]");
    Tensor<float> out = image;
    apply_trigger_inplace(out.ptr(), out.extent(0), out.extent(1), out.extent(2), spec);
    return out;
}

/// All-to-one poisoning plan.
struct PoisonPlan {
    double rate = 0.10;
    int target_label = 0;
};

/// Poison floor(rate*N) samples chosen uniformly without replacement from the
/// non-target classes: trigger applied, label overwritten, mask set. Sample order
/// is preserved.
inline LabeledDataset poison_dataset(const LabeledDataset& ds, const TriggerSpec& spec,
                                     const PoisonPlan& plan, Rng& rng) {
    if (plan.rate < 0.0 || plan.rate > 1.0) throw InputError("poison_dataset: rate must be in [0,1]");
    if (plan.target_label < 0 || plan.target_label >= ds.num_classes)
        throw InputError("poison_dataset: target label out of range");
    const std::size_t n = ds.size();
    const std::size_t count = static_cast<std::size_t>(plan.rate * static_cast<double>(n));

    std::vector<std::size_t> eligible;
    eligible.reserve(n);
    for (std::size_t i = 0; i < n; ++i)
        if (ds.labels[i] != plan.target_label) eligible.push_back(i);
    if (count > eligible.size())
        throw InputError("poison_dataset: " + std::to_string(count) + " poison slots but only " +
                         std::to_string(eligible.size()) + " non-target samples");

    LabeledDataset out = ds;
    for (std::size_t i = 0; i < count; ++i) {
        std::size_t j = i + rng.uniform_below(eligible.size() - i);
        std::swap(eligible[i], eligible[j]);
        const std::size_t idx = eligible[i];
        apply_trigger_inplace(out.sample(idx), out.images.extent(1), out.images.extent(2),
                              out.images.extent(3), spec);
        out.labels[idx] = plan.target_label;
        out.poison_mask[idx] = 1;
    }
    return out;
}

}  // namespace ulrl
