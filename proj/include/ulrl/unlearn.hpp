#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "ulrl/csv.hpp"
#include "ulrl/data.hpp"
#include "ulrl/loss.hpp"
#include "ulrl/metrics.hpp"
#include "ulrl/model.hpp"
#include "ulrl/nn.hpp"
#include "ulrl/optim.hpp"
#include "ulrl/train.hpp"

namespace ulrl {

struct UnlearnConfig {
    float kappa = 0.01f;      // unlearning rate (gradient ascent step)
    double ca_min = 0.2;      // stop once defense-set accuracy drops to or below this
    int max_epochs = 50;
    int batch_size = 16;
    float momentum = 0.9f;
    std::uint64_t shuffle_seed = 1;
};

/// Classifier weights and biases captured before/after unlearning.
struct WeightSnapshot {
    enum class Tag { Pre, Post };
    Tensor<float> weights;  // [K,F]
    Tensor<float> bias;     // [K]
    Tag tag = Tag::Pre;
};

inline WeightSnapshot snapshot_classifier(const Model<float>& model, WeightSnapshot::Tag tag) {
    return {model.classifier().weight, model.classifier().bias, tag};
}

class NonConvergenceError : public Error {
public:
    NonConvergenceError(std::string what, WeightSnapshot pre_, WeightSnapshot post_, int epochs_)
        : Error(std::move(what)), pre(std::move(pre_)), post(std::move(post_)), epochs_used(epochs_) {}
    WeightSnapshot pre, post;
    int epochs_used;
};

struct UnlearnOutcome {
    WeightSnapshot pre, post;
    int epochs_used = 0;
    Model<float> model;  // bit-identical to the input model
    std::vector<MetricRow> curve;  // per-epoch ascent loss and defense-set accuracy
};

/// Phase 1 ascent: maximize cross-entropy on the defense set over a private copy
/// of the model until its accuracy on the full set drops to CA_min, then capture
/// the post snapshot and hand back the untouched original. Reaching max_epochs
/// without collapsing is a non-convergence error carrying both snapshots.
inline UnlearnOutcome unlearn(const Model<float>& model, const LabeledDataset& defense,
                              const UnlearnConfig& cfg) {
    if (defense.size() == 0) throw InputError("unlearn: defense set is empty");
    if (defense.any_poisoned()) throw InputError("unlearn: defense set must be unpoisoned");
    if (!(cfg.ca_min > 0.0 && cfg.ca_min < 1.0)) throw InputError("unlearn: ca_min must be in (0,1)");
    if (cfg.max_epochs < 1 || cfg.batch_size < 1)
        throw InputError("unlearn: max_epochs and batch_size must be >= 1");

    UnlearnOutcome out;
    out.pre = snapshot_classifier(model, WeightSnapshot::Tag::Pre);

    Model<float> scratch = model;
    OptState<float> opt(scratch, cfg.kappa, cfg.momentum);
    const std::size_t n = defense.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        Rng shuffle_rng(derive_seed(cfg.shuffle_seed, static_cast<std::uint64_t>(epoch)));
        shuffle_rng.shuffle(order.begin(), order.end());
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < n; start += cfg.batch_size) {
            const std::size_t count = std::min<std::size_t>(cfg.batch_size, n - start);
            Tensor<float> batch = detail::gather_images(defense, order, start, count);
            std::vector<int> labels = detail::gather_labels(defense, order, start, count);
            ForwardTrace<float> trace = forward_trace(scratch, batch);
            LossResult<float> loss = cross_entropy(trace.logits(), labels);
            if (!std::isfinite(loss.loss))
                throw NumericError("unlearn: loss diverged at epoch " + std::to_string(epoch));
            loss_sum += loss.loss * static_cast<double>(count);
            Gradients<float> grads = backward(scratch, batch, trace, loss.dlogits);
            step(opt, scratch, grads, StepDirection::Ascend);
        }
        const double acc = clean_accuracy(scratch, defense);
        out.curve.push_back({"unlearn", epoch, loss_sum / static_cast<double>(n), acc, kMetricNa});
        out.epochs_used = epoch;
        if (acc <= cfg.ca_min) {
            out.post = snapshot_classifier(scratch, WeightSnapshot::Tag::Post);
            out.model = model;
            return out;
        }
    }
    throw NonConvergenceError("unlearn: defense accuracy stayed above " + csv_num(cfg.ca_min) + " after " +
                                  std::to_string(cfg.max_epochs) + " epochs",
                              out.pre, snapshot_classifier(scratch, WeightSnapshot::Tag::Post),
                              cfg.max_epochs);
}

/// Per-neuron aggregated change: L1 over the row's incoming weights plus its bias,
/// accumulated in 64-bit.
inline std::vector<double> aggregate_delta(const WeightSnapshot& pre, const WeightSnapshot& post) {
    if (!pre.weights.same_shape(post.weights) || !pre.bias.same_shape(post.bias))
        throw ShapeError("aggregate_delta: snapshot shapes differ");
    const std::size_t k = pre.weights.extent(0), f = pre.weights.extent(1);
    std::vector<double> delta(k, 0.0);
    for (std::size_t i = 0; i < k; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < f; ++j)
            acc += std::abs(static_cast<double>(post.weights.data[i * f + j]) -
                            static_cast<double>(pre.weights.data[i * f + j]));
        acc += std::abs(static_cast<double>(post.bias[i]) - static_cast<double>(pre.bias[i]));
        delta[i] = acc;
    }
    return delta;
}

enum class DispersionMethod { Mad, Sd, Iqr };

inline const char* dispersion_method_name(DispersionMethod m) {
    switch (m) {
        case DispersionMethod::Mad: return "mad";
        case DispersionMethod::Sd: return "sd";
        case DispersionMethod::Iqr: return "iqr";
    }
    return "?";
}

namespace detail {

/// Median as the mean of the two middle order statistics for even length.
inline double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Linear-interpolation quantile over the sorted sample at rank (n-1)*p.
inline double quantile(const std::vector<double>& sorted, double p) {
    const double pos = p * static_cast<double>(sorted.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(pos);
    if (lo + 1 >= sorted.size()) return sorted.back();
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] * (1.0 - frac) + sorted[lo + 1] * frac;
}

}  // namespace detail

struct DispersionStats {
    double center = 0.0;      // median (MAD, IQR) or mean (SD)
    double dispersion = 0.0;  // MAD, population sigma, or Q3-Q1
    std::vector<double> deviations;
};

inline DispersionStats dispersion_stats(const std::vector<double>& delta_agg, DispersionMethod method) {
    if (delta_agg.size() < 2) throw InputError("dispersion_stats: need at least 2 values");
    DispersionStats stats;
    if (method == DispersionMethod::Sd) {
        double mean = 0.0;
        for (double v : delta_agg) mean += v;
        mean /= static_cast<double>(delta_agg.size());
        double var = 0.0;
        for (double v : delta_agg) var += (v - mean) * (v - mean);
        var /= static_cast<double>(delta_agg.size());
        stats.center = mean;
        stats.dispersion = std::sqrt(var);
    } else {
        stats.center = detail::median(delta_agg);
        if (method == DispersionMethod::Iqr) {
            std::vector<double> sorted = delta_agg;
            std::sort(sorted.begin(), sorted.end());
            stats.dispersion = detail::quantile(sorted, 0.75) - detail::quantile(sorted, 0.25);
        }
    }
    stats.deviations.resize(delta_agg.size());
    for (std::size_t i = 0; i < delta_agg.size(); ++i)
        stats.deviations[i] = std::abs(delta_agg[i] - stats.center);
    if (method == DispersionMethod::Mad) stats.dispersion = detail::median(stats.deviations);
    return stats;
}

/// Dispersion at or below this is treated as "no outlier evidence": flag nothing.
inline constexpr double kDispersionEpsilon = 1e-12;

struct SuspicionReport {
    std::vector<double> delta_agg;
    std::vector<double> deviations;
    double center = 0.0;
    double dispersion = 0.0;
    DispersionMethod method = DispersionMethod::Mad;
    double tau = 3.5;
    int hard_threshold = 2;
    std::vector<int> flagged;  // descending deviation, ties to the lower index
    int epochs_used = 0;
    bool random_selection = false;  // set when the ablation bypassed identification

    void write_csv(std::ostream& out) const {
        out << "# method=" << dispersion_method_name(method) << " tau=" << csv_num(tau)
            << " ht=" << hard_threshold << " center=" << csv_num(center)
            << " dispersion=" << csv_num(dispersion) << " epochs_used=" << epochs_used << "\n";
        out << "neuron,delta_agg,deviation,flagged\n";
        for (std::size_t i = 0; i < delta_agg.size(); ++i) {
            const bool hit = std::find(flagged.begin(), flagged.end(), static_cast<int>(i)) != flagged.end();
            out << i << "," << csv_num(delta_agg[i]) << "," << csv_num(deviations[i]) << "," << (hit ? 1 : 0)
                << "\n";
        }
    }
};

/// Flag neurons whose deviation strictly exceeds tau*dispersion, walking in
/// descending deviation order and stopping at the hard threshold. Degenerate
/// dispersion flags nothing.
inline SuspicionReport identify_suspicious(const std::vector<double>& delta_agg, DispersionMethod method,
                                           double tau, int hard_threshold) {
    if (!(tau > 0.0)) throw InputError("identify_suspicious: tau must be positive");
    if (hard_threshold < 1) throw InputError("identify_suspicious: hard threshold must be >= 1");

    DispersionStats stats = dispersion_stats(delta_agg, method);
    SuspicionReport report;
    report.delta_agg = delta_agg;
    report.deviations = stats.deviations;
    report.center = stats.center;
    report.dispersion = stats.dispersion;
    report.method = method;
    report.tau = tau;
    report.hard_threshold = hard_threshold;

    if (stats.dispersion <= kDispersionEpsilon) return report;

    std::vector<int> order(delta_agg.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        if (stats.deviations[a] != stats.deviations[b]) return stats.deviations[a] > stats.deviations[b];
        return a < b;
    });
    const double threshold = tau * stats.dispersion;
    for (int idx : order) {
        if (static_cast<int>(report.flagged.size()) >= hard_threshold) break;
        if (stats.deviations[idx] > threshold)
            report.flagged.push_back(idx);
        else
            break;  // sorted descending: nothing further can pass
    }
    return report;
}

}  // namespace ulrl
