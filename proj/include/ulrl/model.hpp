#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ulrl/errors.hpp"
#include "ulrl/rng.hpp"
#include "ulrl/tensor.hpp"

namespace ulrl {

/// Layer kinds. Numeric values double as checkpoint kind tags; keep them stable.
enum class LayerKind : std::uint8_t {
    Input = 0,  // checkpoint-only pseudo record carrying the input extents
    Dense = 1,
    Relu = 2,
    Conv2d = 3,  // fixed 3x3 kernel, stride 1, pad 1
    MaxPool2d = 4,  // fixed 2x2 window, stride 2
    Flatten = 5,
};

inline const char* layer_kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::Input: return "input";
        case LayerKind::Dense: return "dense";
        case LayerKind::Relu: return "relu";
        case LayerKind::Conv2d: return "conv2d";
        case LayerKind::MaxPool2d: return "maxpool2";
        case LayerKind::Flatten: return "flatten";
    }
    return "?";
}

struct LayerSpec {
    LayerKind kind;
    std::size_t in = 0;   // dense: input features, conv: input channels
    std::size_t out = 0;  // dense: output features, conv: output channels

    static LayerSpec dense(std::size_t in, std::size_t out) { return {LayerKind::Dense, in, out}; }
    static LayerSpec relu() { return {LayerKind::Relu}; }
    static LayerSpec conv2d(std::size_t in_ch, std::size_t out_ch) { return {LayerKind::Conv2d, in_ch, out_ch}; }
    static LayerSpec maxpool2() { return {LayerKind::MaxPool2d}; }
    static LayerSpec flatten() { return {LayerKind::Flatten}; }

    bool operator==(const LayerSpec&) const = default;
};

template <typename S>
struct Layer {
    LayerSpec spec;
    Tensor<S> weight;  // dense: [out,in], conv: [out,in,3,3], otherwise empty
    Tensor<S> bias;    // [out] for dense/conv, otherwise empty

    bool has_params() const { return !weight.data.empty(); }
};

/// He-uniform row: std = sqrt(2 / fan_in), samples from U(-std, std). Biases are
/// the caller's business (set to zero).
template <typename S>
void he_uniform(std::size_t fan_in, Rng& rng, std::span<S> out) {
    if (fan_in == 0) throw InputError("he_uniform: fan_in must be >= 1");
    const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (S& v : out) v = static_cast<S>(rng.uniform(-std, std));
}

template <typename S>
std::vector<S> he_uniform(std::size_t fan_in, Rng& rng) {
    std::vector<S> row(fan_in);
    he_uniform<S>(fan_in, rng, row);
    return row;
}

/// Ordered layer stack over a fixed input geometry. The last layer is always the
/// Dense classifier; everything before it is the feature extractor.
template <typename S>
struct Model {
    std::size_t channels = 0, height = 0, width = 0;
    std::vector<Layer<S>> layers;

    std::size_t num_classes() const { return layers.back().spec.out; }
    std::size_t feature_dim() const { return layers.back().spec.in; }

    Layer<S>& classifier() { return layers.back(); }
    const Layer<S>& classifier() const { return layers.back(); }

    template <typename T>
    Model<T> cast() const {
        Model<T> out;
        out.channels = channels;
        out.height = height;
        out.width = width;
        out.layers.reserve(layers.size());
        for (const auto& l : layers)
            out.layers.push_back({l.spec, l.weight.template cast<T>(), l.bias.template cast<T>()});
        return out;
    }

    bool operator==(const Model&) const = default;
};

namespace detail {

struct Dims {
    std::size_t c = 0, h = 0, w = 0;  // 4-d activation [N,c,h,w]
    std::size_t flat = 0;             // 2-d activation [N,flat]; 0 means still 4-d
    bool is_flat() const { return flat != 0; }
};

inline Dims layer_output_dims(const LayerSpec& spec, const Dims& in, std::size_t index) {
    const std::string where = "layer " + std::to_string(index) + " (" + layer_kind_name(spec.kind) + ")";
    switch (spec.kind) {
        case LayerKind::Dense: {
            if (!in.is_flat())
                throw ShapeError(where + ": expects a flat input; add a flatten layer first");
            if (in.flat != spec.in)
                throw ShapeError(where + ": expects " + std::to_string(spec.in) + " input features, got " +
                                 std::to_string(in.flat));
            Dims out;
            out.flat = spec.out;
            return out;
        }
        case LayerKind::Relu:
            return in;
        case LayerKind::Conv2d: {
            if (in.is_flat()) throw ShapeError(where + ": expects a [N,C,H,W] input");
            if (in.c != spec.in)
                throw ShapeError(where + ": expects " + std::to_string(spec.in) + " input channels, got " +
                                 std::to_string(in.c));
            return {spec.out, in.h, in.w, 0};
        }
        case LayerKind::MaxPool2d: {
            if (in.is_flat()) throw ShapeError(where + ": expects a [N,C,H,W] input");
            if (in.h < 2 || in.w < 2) throw ShapeError(where + ": input spatial extents must be >= 2");
            return {in.c, in.h / 2, in.w / 2, 0};
        }
        case LayerKind::Flatten: {
            if (in.is_flat()) throw ShapeError(where + ": input is already flat");
            Dims out;
            out.flat = in.c * in.h * in.w;
            return out;
        }
        case LayerKind::Input:
            throw ShapeError(where + ": input records are not executable layers");
    }
    throw ShapeError(where + ": unknown layer kind");
}

}  // namespace detail

/// Validate a layer stack against an input geometry. Throws ShapeError naming the
/// offending layer. Returns the classifier input width (feature dimension).
inline std::size_t validate_stack(std::size_t channels, std::size_t height, std::size_t width,
                                  const std::vector<LayerSpec>& specs) {
    if (specs.empty()) throw ShapeError("model: needs at least a flatten and a dense classifier");
    if (specs.back().kind != LayerKind::Dense)
        throw ShapeError("model: last layer must be the dense classifier");
    detail::Dims dims{channels, height, width, 0};
    std::size_t feature_dim = 0;
    for (std::size_t i = 0; i < specs.size(); ++i) {
        if (i + 1 == specs.size()) feature_dim = dims.flat;
        dims = detail::layer_output_dims(specs[i], dims, i);
    }
    return feature_dim;
}

/// Build a model with He-uniform weights and zero biases, in spec order.
template <typename S>
Model<S> make_model(std::size_t channels, std::size_t height, std::size_t width,
                    const std::vector<LayerSpec>& specs, Rng& rng) {
    validate_stack(channels, height, width, specs);
    Model<S> model;
    model.channels = channels;
    model.height = height;
    model.width = width;
    model.layers.reserve(specs.size());
    for (const auto& spec : specs) {
        Layer<S> layer{spec, {}, {}};
        if (spec.kind == LayerKind::Dense) {
            layer.weight = Tensor<S>({spec.out, spec.in});
            layer.bias = Tensor<S>({spec.out});
            for (std::size_t row = 0; row < spec.out; ++row)
                he_uniform<S>(spec.in, rng, std::span<S>(layer.weight.ptr() + row * spec.in, spec.in));
        } else if (spec.kind == LayerKind::Conv2d) {
            const std::size_t fan_in = spec.in * 9;
            layer.weight = Tensor<S>({spec.out, spec.in, 3, 3});
            layer.bias = Tensor<S>({spec.out});
            for (std::size_t oc = 0; oc < spec.out; ++oc)
                he_uniform<S>(fan_in, rng, std::span<S>(layer.weight.ptr() + oc * fan_in, fan_in));
        }
        model.layers.push_back(std::move(layer));
    }
    return model;
}

}  // namespace ulrl
