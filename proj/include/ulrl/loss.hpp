#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "ulrl/errors.hpp"
#include "ulrl/tensor.hpp"

namespace ulrl {

template <typename S>
struct LossResult {
    double loss = 0.0;    // mean negative log-likelihood over the batch
    Tensor<S> dlogits;    // (softmax - onehot) / N
};

/// Cross-entropy over logits [N,K] with log-sum-exp stabilisation. The batch
/// reduction runs in sequential index order and accumulates in 64-bit.
template <typename S>
LossResult<S> cross_entropy(const Tensor<S>& logits, std::span<const int> labels) {
    if (logits.rank() != 2) throw ShapeError("cross_entropy: logits must be [N,K]");
    const std::size_t n = logits.extent(0), k = logits.extent(1);
    if (labels.size() != n) throw InputError("cross_entropy: label count does not match batch");

    LossResult<S> result;
    result.dlogits = Tensor<S>({n, k});
    double total = 0.0;
    std::vector<double> probs(k);
    for (std::size_t r = 0; r < n; ++r) {
        const int label = labels[r];
        if (label < 0 || static_cast<std::size_t>(label) >= k)
            throw InputError("cross_entropy: label " + std::to_string(label) + " outside [0," +
                             std::to_string(k) + ") at row " + std::to_string(r));
        const S* x = logits.ptr() + r * k;
        double mx = static_cast<double>(x[0]);
        for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, static_cast<double>(x[j]));
        double denom = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            probs[j] = std::exp(static_cast<double>(x[j]) - mx);
            denom += probs[j];
        }
        total += std::log(denom) - (static_cast<double>(x[label]) - mx);
        S* d = result.dlogits.ptr() + r * k;
        for (std::size_t j = 0; j < k; ++j) {
            double p = probs[j] / denom;
            if (j == static_cast<std::size_t>(label)) p -= 1.0;
            d[j] = static_cast<S>(p / static_cast<double>(n));
        }
    }
    result.loss = total / static_cast<double>(n);
    return result;
}

}  // namespace ulrl
