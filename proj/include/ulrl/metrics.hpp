#pragma once

#include <cmath>
#include <cstring>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "ulrl/csv.hpp"
#include "ulrl/data.hpp"
#include "ulrl/errors.hpp"
#include "ulrl/nn.hpp"
#include "ulrl/trigger.hpp"

namespace ulrl {

inline constexpr double kMetricNa = std::numeric_limits<double>::quiet_NaN();

namespace detail {

/// Argmax with ties broken by the lowest class index.
template <typename S>
int argmax_row(const S* row, std::size_t k) {
    int best = 0;
    for (std::size_t j = 1; j < k; ++j)
        if (row[j] > row[best]) best = static_cast<int>(j);
    return best;
}

template <typename S>
std::vector<int> predict(const Model<S>& model, const Tensor<S>& images, std::size_t batch_size = 256) {
    const std::size_t n = images.extent(0);
    const std::size_t d = images.numel() / n;
    std::vector<int> preds(n);
    for (std::size_t start = 0; start < n; start += batch_size) {
        const std::size_t count = std::min(batch_size, n - start);
        Tensor<S> batch({count, images.extent(1), images.extent(2), images.extent(3)});
        std::memcpy(batch.ptr(), images.ptr() + start * d, count * d * sizeof(S));
        ForwardResult<S> fwd = forward(model, batch);
        const std::size_t k = fwd.logits.extent(1);
        for (std::size_t r = 0; r < count; ++r)
            preds[start + r] = argmax_row(fwd.logits.ptr() + r * k, k);
    }
    return preds;
}

}  // namespace detail

/// Fraction of argmax-correct predictions on an unpoisoned set.
template <typename S>
double clean_accuracy(const Model<S>& model, const LabeledDataset& ds) {
    if (ds.size() == 0) throw InputError("clean_accuracy: empty dataset");
    Tensor<S> images = ds.images.template cast<S>();
    std::vector<int> preds = detail::predict(model, images);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < preds.size(); ++i)
        if (preds[i] == ds.labels[i]) ++correct;
    return static_cast<double>(correct) / static_cast<double>(ds.size());
}

/// Apply the trigger to every non-target-class image and report the fraction
/// predicted as the target label. Target-class samples never enter the denominator.
template <typename S>
double attack_success_rate(const Model<S>& model, const LabeledDataset& ds, const TriggerSpec& spec,
                           int target_label) {
    const std::size_t n = ds.size();
    std::vector<std::size_t> keep;
    keep.reserve(n);
    for (std::size_t i = 0; i < n; ++i)
        if (ds.labels[i] != target_label) keep.push_back(i);
    if (keep.empty()) throw InputError("attack_success_rate: no non-target samples");

    const std::size_t c = ds.images.extent(1), h = ds.images.extent(2), w = ds.images.extent(3);
    const std::size_t d = ds.sample_numel();
    Tensor<float> triggered({keep.size(), c, h, w});
    for (std::size_t i = 0; i < keep.size(); ++i) {
        std::memcpy(triggered.ptr() + i * d, ds.sample(keep[i]), d * sizeof(float));
        apply_trigger_inplace(triggered.ptr() + i * d, c, h, w, spec);
    }
    Tensor<S> images = triggered.template cast<S>();
    std::vector<int> preds = detail::predict(model, images);
    std::size_t hits = 0;
    for (int p : preds)
        if (p == target_label) ++hits;
    return static_cast<double>(hits) / static_cast<double>(keep.size());
}

struct MetricRow {
    std::string phase;
    int epoch = 0;
    double loss = kMetricNa;
    double c_acc = kMetricNa;
    double asr = kMetricNa;
};

/// Per-epoch curves plus a summary row; serializes to the
/// `phase,epoch,loss,c_acc,asr` CSV dialect. Warnings become `# ...` lines
/// ahead of the header.
struct MetricsReport {
    std::vector<MetricRow> rows;
    std::vector<std::string> warnings;

    void add(std::string phase, int epoch, double loss, double c_acc = kMetricNa, double asr = kMetricNa) {
        rows.push_back({std::move(phase), epoch, loss, c_acc, asr});
    }

    void write_csv(std::ostream& out) const {
        for (const auto& w : warnings) out << "# warning=" << w << "\n";
        out << "phase,epoch,loss,c_acc,asr\n";
        for (const auto& r : rows)
            out << r.phase << "," << r.epoch << "," << csv_num(r.loss) << "," << csv_num(r.c_acc) << ","
                << csv_num(r.asr) << "\n";
    }
};

}  // namespace ulrl
