#pragma once

#include <cstdint>
#include <vector>

#include "ulrl/model.hpp"
#include "ulrl/tensor.hpp"

namespace ulrl {

/// Per-layer activations of one forward pass, kept for backprop.
template <typename S>
struct ForwardTrace {
    std::vector<Tensor<S>> outputs;                      // outputs[i] = activation after layer i
    std::vector<std::vector<std::uint32_t>> pool_argmax;  // flat input index per pooled element

    const Tensor<S>& logits() const { return outputs.back(); }
    const Tensor<S>& features() const { return outputs[outputs.size() - 2]; }
};

template <typename S>
struct ForwardResult {
    Tensor<S> features;  // [N,F] classifier input
    Tensor<S> logits;    // [N,K]
};

/// Per-parameter gradient tensors, aligned with model.layers.
template <typename S>
struct Gradients {
    std::vector<Tensor<S>> weight;
    std::vector<Tensor<S>> bias;

    bool all_finite() const {
        for (const auto& g : weight)
            if (!g.all_finite()) return false;
        for (const auto& g : bias)
            if (!g.all_finite()) return false;
        return true;
    }
};

namespace detail {

template <typename S>
Tensor<S> dense_forward(const Tensor<S>& in, const Layer<S>& layer) {
    const std::size_t n = in.extent(0), fi = layer.spec.in, fo = layer.spec.out;
    Tensor<S> out({n, fo});
    const S* w = layer.weight.ptr();
    const S* b = layer.bias.ptr();
    for (std::size_t r = 0; r < n; ++r) {
        const S* x = in.ptr() + r * fi;
        S* y = out.ptr() + r * fo;
        for (std::size_t o = 0; o < fo; ++o) {
            S acc = b[o];
            const S* wr = w + o * fi;
            for (std::size_t i = 0; i < fi; ++i) acc += wr[i] * x[i];
            y[o] = acc;
        }
    }
    return out;
}

template <typename S>
Tensor<S> relu_forward(const Tensor<S>& in) {
    Tensor<S> out(in.shape);
    for (std::size_t i = 0; i < in.numel(); ++i) out[i] = in[i] > S(0) ? in[i] : S(0);
    return out;
}

template <typename S>
Tensor<S> conv2d_forward(const Tensor<S>& in, const Layer<S>& layer) {
    const std::size_t n = in.extent(0), ci = layer.spec.in, co = layer.spec.out;
    const std::size_t h = in.extent(2), w = in.extent(3);
    Tensor<S> out({n, co, h, w});
    for (std::size_t img = 0; img < n; ++img)
        for (std::size_t oc = 0; oc < co; ++oc)
            for (std::size_t oh = 0; oh < h; ++oh)
                for (std::size_t ow = 0; ow < w; ++ow) {
                    S acc = layer.bias[oc];
                    for (std::size_t ic = 0; ic < ci; ++ic)
                        for (std::size_t kh = 0; kh < 3; ++kh) {
                            const std::size_t ih = oh + kh;
                            if (ih < 1 || ih > h) continue;  // pad 1
                            for (std::size_t kw = 0; kw < 3; ++kw) {
                                const std::size_t iw = ow + kw;
                                if (iw < 1 || iw > w) continue;
                                acc += in.at4(img, ic, ih - 1, iw - 1) *
                                       layer.weight.data[((oc * ci + ic) * 3 + kh) * 3 + kw];
                            }
                        }
                    out.at4(img, oc, oh, ow) = acc;
                }
    return out;
}

template <typename S>
Tensor<S> maxpool2_forward(const Tensor<S>& in, std::vector<std::uint32_t>& argmax) {
    const std::size_t n = in.extent(0), c = in.extent(1), h = in.extent(2), w = in.extent(3);
    const std::size_t oh = h / 2, ow = w / 2;
    Tensor<S> out({n, c, oh, ow});
    argmax.assign(out.numel(), 0);
    std::size_t oi = 0;
    for (std::size_t img = 0; img < n; ++img)
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t y = 0; y < oh; ++y)
                for (std::size_t x = 0; x < ow; ++x, ++oi) {
                    S best = in.at4(img, ch, 2 * y, 2 * x);
                    std::size_t best_idx = ((img * c + ch) * h + 2 * y) * w + 2 * x;
                    for (std::size_t dy = 0; dy < 2; ++dy)
                        for (std::size_t dx = 0; dx < 2; ++dx) {
                            const S v = in.at4(img, ch, 2 * y + dy, 2 * x + dx);
                            if (v > best) {  // strict: ties keep the first scanned cell
                                best = v;
                                best_idx = ((img * c + ch) * h + 2 * y + dy) * w + 2 * x + dx;
                            }
                        }
                    out[oi] = best;
                    argmax[oi] = static_cast<std::uint32_t>(best_idx);
                }
    return out;
}

template <typename S>
Tensor<S> flatten_forward(const Tensor<S>& in) {
    Tensor<S> out;
    out.shape = {in.extent(0), in.numel() / in.extent(0)};
    out.data = in.data;
    return out;
}

}  // namespace detail

/// Run the full stack, keeping every intermediate activation.
template <typename S>
ForwardTrace<S> forward_trace(const Model<S>& model, const Tensor<S>& batch) {
    if (batch.rank() != 4 || batch.extent(1) != model.channels || batch.extent(2) != model.height ||
        batch.extent(3) != model.width)
        throw ShapeError("forward: batch shape " + shape_str(batch.shape) + " does not match model input [N," +
                         std::to_string(model.channels) + "," + std::to_string(model.height) + "," +
                         std::to_string(model.width) + "]");
    ForwardTrace<S> trace;
    trace.outputs.reserve(model.layers.size());
    trace.pool_argmax.resize(model.layers.size());
    const Tensor<S>* cur = &batch;
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        const Layer<S>& layer = model.layers[i];
        switch (layer.spec.kind) {
            case LayerKind::Dense:
                if (cur->rank() != 2 || cur->extent(1) != layer.spec.in)
                    throw ShapeError("forward: layer " + std::to_string(i) + " (dense): input " +
                                     shape_str(cur->shape) + " incompatible with spec in=" +
                                     std::to_string(layer.spec.in));
                trace.outputs.push_back(detail::dense_forward(*cur, layer));
                break;
            case LayerKind::Relu:
                trace.outputs.push_back(detail::relu_forward(*cur));
                break;
            case LayerKind::Conv2d:
                if (cur->rank() != 4 || cur->extent(1) != layer.spec.in)
                    throw ShapeError("forward: layer " + std::to_string(i) + " (conv2d): input " +
                                     shape_str(cur->shape) + " incompatible with spec in_ch=" +
                                     std::to_string(layer.spec.in));
                trace.outputs.push_back(detail::conv2d_forward(*cur, layer));
                break;
            case LayerKind::MaxPool2d:
                trace.outputs.push_back(detail::maxpool2_forward(*cur, trace.pool_argmax[i]));
                break;
            case LayerKind::Flatten:
                trace.outputs.push_back(detail::flatten_forward(*cur));
                break;
            case LayerKind::Input:
                throw ShapeError("forward: layer " + std::to_string(i) + ": input records are not executable");
        }
        cur = &trace.outputs.back();
    }
    return trace;
}

/// Forward pass returning (features, logits) per the classifier split.
template <typename S>
ForwardResult<S> forward(const Model<S>& model, const Tensor<S>& batch) {
    ForwardTrace<S> trace = forward_trace(model, batch);
    const std::size_t L = trace.outputs.size();
    return {std::move(trace.outputs[L - 2]), std::move(trace.outputs[L - 1])};
}

/// Backprop through the traced stack. dlogits is the loss gradient w.r.t. logits.
template <typename S>
Gradients<S> backward(const Model<S>& model, const Tensor<S>& batch, const ForwardTrace<S>& trace,
                      const Tensor<S>& dlogits) {
    const std::size_t L = model.layers.size();
    Gradients<S> grads;
    grads.weight.resize(L);
    grads.bias.resize(L);

    Tensor<S> d = dlogits;  // gradient flowing backwards
    for (std::size_t li = L; li-- > 0;) {
        const Layer<S>& layer = model.layers[li];
        const Tensor<S>& input = li == 0 ? batch : trace.outputs[li - 1];
        const Tensor<S>& output = trace.outputs[li];
        switch (layer.spec.kind) {
            case LayerKind::Dense: {
                const std::size_t n = input.extent(0), fi = layer.spec.in, fo = layer.spec.out;
                Tensor<S> dw({fo, fi}), db({fo}), dx({n, fi});
                for (std::size_t r = 0; r < n; ++r) {
                    const S* dy = d.ptr() + r * fo;
                    const S* x = input.ptr() + r * fi;
                    S* dxr = dx.ptr() + r * fi;
                    for (std::size_t o = 0; o < fo; ++o) {
                        const S g = dy[o];
                        db[o] += g;
                        S* dwr = dw.ptr() + o * fi;
                        const S* wr = layer.weight.ptr() + o * fi;
                        for (std::size_t i = 0; i < fi; ++i) {
                            dwr[i] += g * x[i];
                            dxr[i] += g * wr[i];
                        }
                    }
                }
                grads.weight[li] = std::move(dw);
                grads.bias[li] = std::move(db);
                d = std::move(dx);
                break;
            }
            case LayerKind::Relu: {
                Tensor<S> dx(input.shape);
                for (std::size_t i = 0; i < d.numel(); ++i)
                    dx[i] = output[i] > S(0) ? d[i] : S(0);  // zero exactly where forward output was 0
                d = std::move(dx);
                break;
            }
            case LayerKind::Conv2d: {
                const std::size_t n = input.extent(0), ci = layer.spec.in, co = layer.spec.out;
                const std::size_t h = input.extent(2), w = input.extent(3);
                Tensor<S> dw(layer.weight.shape), db({co}), dx(input.shape);
                for (std::size_t img = 0; img < n; ++img)
                    for (std::size_t oc = 0; oc < co; ++oc)
                        for (std::size_t oh = 0; oh < h; ++oh)
                            for (std::size_t ow = 0; ow < w; ++ow) {
                                const S g = d.at4(img, oc, oh, ow);
                                db[oc] += g;
                                for (std::size_t ic = 0; ic < ci; ++ic)
                                    for (std::size_t kh = 0; kh < 3; ++kh) {
                                        const std::size_t ih = oh + kh;
                                        if (ih < 1 || ih > h) continue;
                                        for (std::size_t kw = 0; kw < 3; ++kw) {
                                            const std::size_t iw = ow + kw;
                                            if (iw < 1 || iw > w) continue;
                                            const std::size_t wi = ((oc * ci + ic) * 3 + kh) * 3 + kw;
                                            dw[wi] += g * input.at4(img, ic, ih - 1, iw - 1);
                                            dx.at4(img, ic, ih - 1, iw - 1) += g * layer.weight[wi];
                                        }
                                    }
                            }
                grads.weight[li] = std::move(dw);
                grads.bias[li] = std::move(db);
                d = std::move(dx);
                break;
            }
            case LayerKind::MaxPool2d: {
                Tensor<S> dx(input.shape);
                const auto& argmax = trace.pool_argmax[li];
                for (std::size_t i = 0; i < d.numel(); ++i) dx[argmax[i]] += d[i];
                d = std::move(dx);
                break;
            }
            case LayerKind::Flatten: {
                Tensor<S> dx(input.shape);
                dx.data = d.data;
                d = std::move(dx);
                break;
            }
            case LayerKind::Input:
                break;
        }
    }
    return grads;
}

/// Convenience wrapper matching the loss-gradient calling convention; runs its own trace.
template <typename S>
Gradients<S> backward(const Model<S>& model, const Tensor<S>& batch, const Tensor<S>& dlogits) {
    return backward(model, batch, forward_trace(model, batch), dlogits);
}

}  // namespace ulrl
