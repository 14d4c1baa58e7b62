#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "q2l/numcore.hpp"

namespace q2l {

/// Adam moments plus hyperparameters; weight decay is applied to the
/// parameters directly rather than through the gradient.
template <class T>
struct OptimState {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.9999;
    double eps = 1e-8;
    double weight_decay = 1e-2;
    std::uint64_t t = 0;
    std::vector<std::vector<T>> m, v;
};

/// One decoupled-weight-decay Adam step:
///   m <- b1 m + (1-b1) g,  v <- b2 v + (1-b2) g^2
///   theta <- theta - lr * m_hat / (sqrt(v_hat) + eps) - lr * wd * theta
template <class T>
void optim_step(std::vector<Tensor<T>>& params, const std::vector<std::vector<T>>& grads, OptimState<T>& s) {
    if (grads.size() != params.size())
        throw ShapeError("optim_step: " + std::to_string(grads.size()) + " gradients for " +
                         std::to_string(params.size()) + " parameters");
    if (s.m.empty()) {
        for (const auto& p : params) {
            s.m.emplace_back(p.numel(), T(0));
            s.v.emplace_back(p.numel(), T(0));
        }
    }
    if (s.m.size() != params.size()) throw ShapeError("optim_step: moment buffers do not match parameter list");
    for (std::size_t i = 0; i < params.size(); ++i)
        if (grads[i].size() != params[i].numel() || s.m[i].size() != params[i].numel())
            throw ShapeError("optim_step: gradient/moment size mismatch for parameter " + std::to_string(i) + " " +
                             shape_str(params[i].shape()));
    if (s.t == std::numeric_limits<std::uint64_t>::max()) throw std::overflow_error("optim_step: step count overflow");
    ++s.t;
    const T b1 = static_cast<T>(s.beta1), b2 = static_cast<T>(s.beta2);
    const T c1 = static_cast<T>(1.0 - std::pow(s.beta1, static_cast<double>(s.t)));
    const T c2 = static_cast<T>(1.0 - std::pow(s.beta2, static_cast<double>(s.t)));
    const T lr = static_cast<T>(s.lr), eps = static_cast<T>(s.eps), decay = static_cast<T>(s.lr * s.weight_decay);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto theta = params[i].mutable_data();
        const auto& g = grads[i];
        auto& m = s.m[i];
        auto& v = s.v[i];
        for (std::size_t j = 0; j < theta.size(); ++j) {
            m[j] = b1 * m[j] + (T(1) - b1) * g[j];
            v[j] = b2 * v[j] + (T(1) - b2) * g[j] * g[j];
            const T mhat = m[j] / c1, vhat = v[j] / c2;
            theta[j] = theta[j] - lr * (mhat / (std::sqrt(vhat) + eps)) - decay * theta[j];
        }
    }
}

/// Exponential moving average of the parameters: shadow <- mu shadow + (1-mu) theta.
template <class T>
struct EmaState {
    double decay = 0.9997;
    std::vector<std::vector<T>> shadow;

    static EmaState from(const std::vector<Tensor<T>>& params, double decay) {
        EmaState e;
        e.decay = decay;
        for (const auto& p : params) e.shadow.emplace_back(p.data().begin(), p.data().end());
        return e;
    }
};

template <class T>
void ema_update(EmaState<T>& ema, const std::vector<Tensor<T>>& params) {
    if (ema.shadow.size() != params.size()) throw ShapeError("ema_update: parameter count mismatch");
    const T mu = static_cast<T>(ema.decay);
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (ema.shadow[i].size() != params[i].numel())
            throw ShapeError("ema_update: shape mismatch for parameter " + shape_str(params[i].shape()));
        const auto theta = params[i].data();
        auto& s = ema.shadow[i];
        for (std::size_t j = 0; j < s.size(); ++j) s[j] = mu * s[j] + (T(1) - mu) * theta[j];
    }
}

enum class Schedule { constant, warmup_cosine };

/// Learning rate for 0-based `step` of `total`: linear warmup over the first
/// warmup_fraction of steps, then cosine decay towards zero.
inline double scheduled_lr(Schedule sched, double base_lr, std::uint64_t step, std::uint64_t total,
                           double warmup_fraction) {
    if (sched == Schedule::constant || total == 0) return base_lr;
    const auto warmup = static_cast<std::uint64_t>(std::llround(warmup_fraction * static_cast<double>(total)));
    if (step < warmup) return base_lr * static_cast<double>(step + 1) / static_cast<double>(warmup);
    const double span = static_cast<double>(std::max<std::uint64_t>(1, total - warmup));
    const double progress = static_cast<double>(step - warmup) / span;
    return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace q2l
