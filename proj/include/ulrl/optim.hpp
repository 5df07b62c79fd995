#pragma once

#include <string>

#include "ulrl/errors.hpp"
#include "ulrl/model.hpp"
#include "ulrl/nn.hpp"

namespace ulrl {

enum class StepDirection { Descend, Ascend };

/// SGD with classic momentum: v <- mu*v + g, p <- p -/+ lr*v. No dampening, no
/// Nesterov. Ascend and descend share the identical update value, sign applied last.
template <typename S>
struct OptState {
    S lr;
    S momentum;
    std::vector<Tensor<S>> vel_w;
    std::vector<Tensor<S>> vel_b;

    OptState(const Model<S>& model, S lr_, S momentum_) : lr(lr_), momentum(momentum_) {
        if (!(lr >= S(0))) throw InputError("OptState: learning rate must be non-negative");
        if (!(momentum >= S(0) && momentum < S(1))) throw InputError("OptState: momentum must be in [0,1)");
        vel_w.reserve(model.layers.size());
        vel_b.reserve(model.layers.size());
        for (const auto& layer : model.layers) {
            vel_w.emplace_back(layer.weight.shape.empty() ? Tensor<S>{} : Tensor<S>(layer.weight.shape));
            vel_b.emplace_back(layer.bias.shape.empty() ? Tensor<S>{} : Tensor<S>(layer.bias.shape));
        }
    }
};

namespace detail {

template <typename S>
void step_tensor(Tensor<S>& param, Tensor<S>& vel, const Tensor<S>& grad, S mu, S lr, S sign) {
    for (std::size_t i = 0; i < param.numel(); ++i) {
        vel[i] = mu * vel[i] + grad[i];
        param[i] += sign * (lr * vel[i]);
    }
}

}  // namespace detail

/// One optimizer step over every parameter tensor. Non-finite gradients abort
/// before any parameter is touched.
template <typename S>
void step(OptState<S>& opt, Model<S>& model, const Gradients<S>& grads, StepDirection direction) {
    if (!grads.all_finite()) throw NumericError("step: non-finite gradient");
    const S sign = direction == StepDirection::Descend ? S(-1) : S(1);
    for (std::size_t li = 0; li < model.layers.size(); ++li) {
        Layer<S>& layer = model.layers[li];
        if (!layer.has_params()) continue;
        if (!layer.weight.same_shape(grads.weight[li]) || !layer.bias.same_shape(grads.bias[li]))
            throw ShapeError("step: gradient shape mismatch at layer " + std::to_string(li));
        detail::step_tensor(layer.weight, opt.vel_w[li], grads.weight[li], opt.momentum, opt.lr, sign);
        detail::step_tensor(layer.bias, opt.vel_b[li], grads.bias[li], opt.momentum, opt.lr, sign);
    }
}

}  // namespace ulrl
