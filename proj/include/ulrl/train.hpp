#pragma once

#include <cstring>
#include <numeric>
#include <string>
#include <vector>

#include "ulrl/data.hpp"
#include "ulrl/loss.hpp"
#include "ulrl/metrics.hpp"
#include "ulrl/model.hpp"
#include "ulrl/nn.hpp"
#include "ulrl/optim.hpp"

namespace ulrl {

struct ModelSpec {
    std::size_t channels = 3, height = 8, width = 8;
    std::vector<LayerSpec> layers;
};

/// Default desk model: Flatten -> Dense(C*H*W -> hidden...) with ReLU between,
/// then the Dense classifier. Conv channels, when given, prepend
/// {Conv2d + ReLU + MaxPool2d} blocks.
inline ModelSpec make_model_spec(std::size_t channels, std::size_t height, std::size_t width,
                                 const std::vector<std::size_t>& conv_channels,
                                 const std::vector<std::size_t>& hidden_dims, std::size_t num_classes) {
    ModelSpec spec{channels, height, width, {}};
    std::size_t c = channels, h = height, w = width;
    for (std::size_t oc : conv_channels) {
        spec.layers.push_back(LayerSpec::conv2d(c, oc));
        spec.layers.push_back(LayerSpec::relu());
        spec.layers.push_back(LayerSpec::maxpool2());
        c = oc;
        h /= 2;
        w /= 2;
    }
    spec.layers.push_back(LayerSpec::flatten());
    std::size_t in = c * h * w;
    for (std::size_t dim : hidden_dims) {
        spec.layers.push_back(LayerSpec::dense(in, dim));
        spec.layers.push_back(LayerSpec::relu());
        in = dim;
    }
    spec.layers.push_back(LayerSpec::dense(in, num_classes));
    return spec;
}

struct TrainConfig {
    int epochs = 30;
    int batch_size = 64;
    float lr = 0.05f;
    float momentum = 0.9f;
    std::uint64_t shuffle_seed = 1;  // per-epoch shuffles derive from (this, epoch)
};

namespace detail {

inline Tensor<float> gather_images(const LabeledDataset& ds, const std::vector<std::size_t>& order,
                                   std::size_t from, std::size_t count) {
    const std::size_t d = ds.sample_numel();
    Tensor<float> batch({count, ds.images.extent(1), ds.images.extent(2), ds.images.extent(3)});
    for (std::size_t i = 0; i < count; ++i)
        std::memcpy(batch.ptr() + i * d, ds.sample(order[from + i]), d * sizeof(float));
    return batch;
}

inline std::vector<int> gather_labels(const LabeledDataset& ds, const std::vector<std::size_t>& order,
                                      std::size_t from, std::size_t count) {
    std::vector<int> labels(count);
    for (std::size_t i = 0; i < count; ++i) labels[i] = ds.labels[order[from + i]];
    return labels;
}

}  // namespace detail

struct TrainOutcome {
    Model<float> model;
    MetricsReport report;  // one `train` row per epoch: loss and training accuracy
};

/// Minimize cross-entropy over the (possibly poisoned) mixture with momentum SGD.
/// Per-epoch rows carry the epoch mean loss and the running training accuracy
/// measured from the logits of each step before the update.
inline TrainOutcome train_backdoored(const ModelSpec& spec, const LabeledDataset& ds,
                                     const TrainConfig& cfg, Rng& rng) {
    if (cfg.epochs < 1 || cfg.batch_size < 1) throw InputError("train: epochs and batch_size must be >= 1");
    if (!(cfg.lr > 0.0f)) throw InputError("train: learning rate must be positive");
    if (ds.size() == 0) throw InputError("train: empty dataset");

    TrainOutcome out;
    out.model = make_model<float>(spec.channels, spec.height, spec.width, spec.layers, rng);
    OptState<float> opt(out.model, cfg.lr, cfg.momentum);

    const std::size_t n = ds.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        Rng shuffle_rng(derive_seed(cfg.shuffle_seed, static_cast<std::uint64_t>(epoch)));
        shuffle_rng.shuffle(order.begin(), order.end());

        double loss_sum = 0.0;
        std::size_t correct = 0;
        for (std::size_t start = 0; start < n; start += cfg.batch_size) {
            const std::size_t count = std::min<std::size_t>(cfg.batch_size, n - start);
            Tensor<float> batch = detail::gather_images(ds, order, start, count);
            std::vector<int> labels = detail::gather_labels(ds, order, start, count);

            ForwardTrace<float> trace = forward_trace(out.model, batch);
            LossResult<float> loss = cross_entropy(trace.logits(), labels);
            if (!std::isfinite(loss.loss))
                throw NumericError("train: loss diverged at epoch " + std::to_string(epoch));
            loss_sum += loss.loss * static_cast<double>(count);
            const std::size_t k = trace.logits().extent(1);
            for (std::size_t r = 0; r < count; ++r)
                if (detail::argmax_row(trace.logits().ptr() + r * k, k) == labels[r]) ++correct;

            Gradients<float> grads = backward(out.model, batch, trace, loss.dlogits);
            step(opt, out.model, grads, StepDirection::Descend);
        }
        out.report.add("train", epoch, loss_sum / static_cast<double>(n),
                       static_cast<double>(correct) / static_cast<double>(n));
    }
    return out;
}

}  // namespace ulrl
