#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "ulrl/data.hpp"
#include "ulrl/loss.hpp"
#include "ulrl/metrics.hpp"
#include "ulrl/model.hpp"
#include "ulrl/nn.hpp"
#include "ulrl/optim.hpp"
#include "ulrl/train.hpp"

namespace ulrl {

enum class Regularizer { Cosine, InnerProduct, None };

inline const char* regularizer_name(Regularizer r) {
    switch (r) {
        case Regularizer::Cosine: return "cosine";
        case Regularizer::InnerProduct: return "inner_product";
        case Regularizer::None: return "none";
    }
    return "?";
}

struct RelearnConfig {
    float eta = 0.01f;       // learning rate
    float alpha = 0.7f;      // penalty weight; None behaves as alpha = 0
    int epochs = 20;
    int batch_size = 16;
    Regularizer regularizer = Regularizer::Cosine;
    float momentum = 0.9f;
    std::uint64_t shuffle_seed = 1;
};

/// Original classifier rows of the flagged neurons, captured before
/// reinitialization. Biases are excluded; rows stay fixed for the whole run.
template <typename S>
struct OriginalRowBank {
    std::vector<int> neurons;
    Tensor<S> rows;  // [|S|, F]
};

template <typename S>
OriginalRowBank<S> capture_rows(const Model<S>& model, std::span<const int> flagged) {
    const auto& cls = model.classifier();
    const std::size_t f = cls.spec.in;
    OriginalRowBank<S> bank;
    bank.neurons.assign(flagged.begin(), flagged.end());
    bank.rows = Tensor<S>({flagged.size(), f});
    for (std::size_t i = 0; i < flagged.size(); ++i) {
        const int neuron = flagged[i];
        if (neuron < 0 || static_cast<std::size_t>(neuron) >= cls.spec.out)
            throw InputError("capture_rows: neuron index " + std::to_string(neuron) + " out of range");
        for (std::size_t j = 0; j < f; ++j) bank.rows.data[i * f + j] = cls.weight.data[neuron * f + j];
    }
    return bank;
}

/// He-reinitialize the flagged classifier rows and zero their biases; every other
/// parameter is left bit-identical. Returns the modified copy.
inline Model<float> reinit_neurons(Model<float> model, std::span<const int> flagged, Rng& rng) {
    if (flagged.empty()) throw InputError("reinit_neurons: empty neuron set");
    auto& cls = model.classifier();
    const std::size_t f = cls.spec.in;
    for (int neuron : flagged) {
        if (neuron < 0 || static_cast<std::size_t>(neuron) >= cls.spec.out)
            throw InputError("reinit_neurons: neuron index " + std::to_string(neuron) + " out of range");
        he_uniform<float>(f, rng, std::span<float>(cls.weight.ptr() + neuron * f, f));
        cls.bias[neuron] = 0.0f;
    }
    return model;
}

/// Uniform sample of n distinct neurons, for the random-reinit ablation.
inline std::vector<int> select_random_neurons(int num_neurons, int n, Rng& rng) {
    if (n < 1 || n > num_neurons) throw InputError("select_random_neurons: need 1 <= n <= K");
    std::vector<int> pool(num_neurons);
    std::iota(pool.begin(), pool.end(), 0);
    for (int i = 0; i < n; ++i) {
        const std::size_t j = i + rng.uniform_below(pool.size() - i);
        std::swap(pool[i], pool[j]);
    }
    pool.resize(n);
    return pool;
}

template <typename S>
struct PenaltyResult {
    double value = 0.0;
    Tensor<S> grad_rows;  // [|S|, F], gradient w.r.t. the flagged rows only
};

/// Row-similarity penalty between current classifier rows and the bank.
/// cosine: sum_i w_i.o_i / (|w_i||o_i|); inner_product: sum_i w_i.o_i;
/// none: identically zero. Rows with L2 norm <= 1e-12 contribute nothing.
template <typename S>
PenaltyResult<S> similarity_penalty(const Tensor<S>& classifier_weights, const OriginalRowBank<S>& bank,
                                    Regularizer kind) {
    const std::size_t f = classifier_weights.extent(1);
    if (!bank.neurons.empty() && bank.rows.extent(1) != f)
        throw ShapeError("similarity_penalty: bank row width does not match classifier");
    PenaltyResult<S> result;
    result.grad_rows = Tensor<S>({bank.neurons.size(), f});
    if (kind == Regularizer::None) return result;

    for (std::size_t i = 0; i < bank.neurons.size(); ++i) {
        const S* w = classifier_weights.ptr() + static_cast<std::size_t>(bank.neurons[i]) * f;
        const S* o = bank.rows.ptr() + i * f;
        S* g = result.grad_rows.ptr() + i * f;
        double dot = 0.0, w2 = 0.0, o2 = 0.0;
        for (std::size_t j = 0; j < f; ++j) {
            dot += static_cast<double>(w[j]) * static_cast<double>(o[j]);
            w2 += static_cast<double>(w[j]) * static_cast<double>(w[j]);
            o2 += static_cast<double>(o[j]) * static_cast<double>(o[j]);
        }
        if (kind == Regularizer::InnerProduct) {
            result.value += dot;
            for (std::size_t j = 0; j < f; ++j) g[j] = o[j];
            continue;
        }
        const double wn = std::sqrt(w2), on = std::sqrt(o2);
        if (wn <= 1e-12 || on <= 1e-12) continue;  // zero-norm guard
        const double inv = 1.0 / (wn * on);
        result.value += dot * inv;
        const double wscale = dot / (w2 * wn * on);
        for (std::size_t j = 0; j < f; ++j)
            g[j] = static_cast<S>(static_cast<double>(o[j]) * inv - static_cast<double>(w[j]) * wscale);
    }
    return result;
}

struct RelearnOutcome {
    Model<float> model;
    std::vector<MetricRow> curve;  // per-epoch composite loss and defense-set accuracy
};

/// Phase 2: momentum-SGD on cross-entropy(D_d) + alpha * similarity penalty for T
/// epochs. The penalty term is applied once per step (a dataset-level term, not
/// scaled by batch size) and its gradient flows only into the flagged rows.
inline RelearnOutcome relearn(const Model<float>& model_after_reinit, const OriginalRowBank<float>& bank,
                              const LabeledDataset& defense, const RelearnConfig& cfg) {
    if (cfg.epochs < 1 || cfg.batch_size < 1)
        throw InputError("relearn: epochs and batch_size must be >= 1");
    if (!(cfg.eta > 0.0f)) throw InputError("relearn: eta must be positive");
    if (cfg.alpha < 0.0f) throw InputError("relearn: alpha must be >= 0");
    if (defense.size() == 0) throw InputError("relearn: defense set is empty");

    const bool penalize = cfg.regularizer != Regularizer::None && cfg.alpha > 0.0f && !bank.neurons.empty();
    RelearnOutcome out;
    out.model = model_after_reinit;
    OptState<float> opt(out.model, cfg.eta, cfg.momentum);

    const std::size_t n = defense.size();
    const std::size_t f = out.model.feature_dim();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        Rng shuffle_rng(derive_seed(cfg.shuffle_seed, static_cast<std::uint64_t>(epoch)));
        shuffle_rng.shuffle(order.begin(), order.end());
        double loss_sum = 0.0;
        std::size_t steps = 0;
        for (std::size_t start = 0; start < n; start += cfg.batch_size, ++steps) {
            const std::size_t count = std::min<std::size_t>(cfg.batch_size, n - start);
            Tensor<float> batch = detail::gather_images(defense, order, start, count);
            std::vector<int> labels = detail::gather_labels(defense, order, start, count);
            ForwardTrace<float> trace = forward_trace(out.model, batch);
            LossResult<float> loss = cross_entropy(trace.logits(), labels);
            Gradients<float> grads = backward(out.model, batch, trace, loss.dlogits);

            double composite = loss.loss;
            if (penalize) {
                PenaltyResult<float> penalty =
                    similarity_penalty(out.model.classifier().weight, bank, cfg.regularizer);
                composite += static_cast<double>(cfg.alpha) * penalty.value;
                Tensor<float>& dw = grads.weight.back();
                for (std::size_t i = 0; i < bank.neurons.size(); ++i) {
                    float* row = dw.ptr() + static_cast<std::size_t>(bank.neurons[i]) * f;
                    const float* g = penalty.grad_rows.ptr() + i * f;
                    for (std::size_t j = 0; j < f; ++j) row[j] += cfg.alpha * g[j];
                }
            }
            if (!std::isfinite(composite))
                throw NumericError("relearn: loss diverged at epoch " + std::to_string(epoch));
            loss_sum += composite;
            step(opt, out.model, grads, StepDirection::Descend);
        }
        out.curve.push_back({"relearn", epoch, loss_sum / static_cast<double>(steps),
                             clean_accuracy(out.model, defense), kMetricNa});
    }
    return out;
}

}  // namespace ulrl
