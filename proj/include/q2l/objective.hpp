#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "q2l/numcore.hpp"

namespace q2l {

/// Focusing exponents of the asymmetric focal loss. gamma_pos = 0 and
/// gamma_neg = 1 are the defaults; both zero reduce to binary cross-entropy.
struct LossConfig {
    double gamma_pos = 0.0;
    double gamma_neg = 1.0;
    double prob_clamp_eps = 1e-7;

    void validate() const {
        if (!(gamma_pos >= 0.0) || !(gamma_neg >= 0.0))
            throw std::invalid_argument("loss config: focusing exponents must be nonnegative");
        if (!(prob_clamp_eps > 0.0 && prob_clamp_eps <= 1e-3))
            throw std::invalid_argument("loss config: prob_clamp_eps must lie in (0, 1e-3]");
    }
};

namespace detail {

template <class P, class Y>
void check_loss_inputs(std::span<const P> p, std::span<const Y> y) {
    if (p.size() != y.size())
        throw std::invalid_argument("asymmetric loss: " + std::to_string(p.size()) + " probabilities vs " +
                                    std::to_string(y.size()) + " labels");
    if (p.empty()) throw std::invalid_argument("asymmetric loss: empty input");
    for (auto v : y)
        if (v != Y(0) && v != Y(1)) throw std::invalid_argument("asymmetric loss: labels must be 0 or 1");
}

}  // namespace detail

/// Mean over classes of
///   y=1: -(1-p)^gamma_pos * log(p)
///   y=0: -p^gamma_neg * log(1-p)
/// with p clamped to [eps, 1-eps] before the logs.
template <class T>
T asymmetric_loss(std::span<const T> p, std::span<const T> y, const LossConfig& cfg) {
    detail::check_loss_inputs(p, y);
    const T eps = static_cast<T>(cfg.prob_clamp_eps);
    T total = T(0);
    for (std::size_t k = 0; k < p.size(); ++k) {
        const T pk = std::min(std::max(p[k], eps), T(1) - eps);
        if (y[k] == T(1))
            total -= std::pow(T(1) - pk, static_cast<T>(cfg.gamma_pos)) * std::log(pk);
        else
            total -= std::pow(pk, static_cast<T>(cfg.gamma_neg)) * std::log(T(1) - pk);
    }
    return total / static_cast<T>(p.size());
}

/// Closed-form dL/dp_k of asymmetric_loss (zero where the clamp is active).
template <class T>
std::vector<T> loss_grad_wrt_p(std::span<const T> p, std::span<const T> y, const LossConfig& cfg) {
    detail::check_loss_inputs(p, y);
    const T eps = static_cast<T>(cfg.prob_clamp_eps);
    const T inv_k = T(1) / static_cast<T>(p.size());
    std::vector<T> g(p.size(), T(0));
    for (std::size_t k = 0; k < p.size(); ++k) {
        if (p[k] < eps || p[k] > T(1) - eps) continue;
        const T pk = p[k];
        if (y[k] == T(1)) {
            const T gp = static_cast<T>(cfg.gamma_pos);
            // d/dp [-(1-p)^g log p] = g (1-p)^(g-1) log p - (1-p)^g / p
            const T focal = gp == T(0) ? T(0) : gp * std::pow(T(1) - pk, gp - T(1)) * std::log(pk);
            g[k] = inv_k * (focal - std::pow(T(1) - pk, gp) / pk);
        } else {
            const T gn = static_cast<T>(cfg.gamma_neg);
            // d/dp [-p^g log(1-p)] = -g p^(g-1) log(1-p) + p^g / (1-p)
            const T focal = gn == T(0) ? T(0) : -gn * std::pow(pk, gn - T(1)) * std::log(T(1) - pk);
            g[k] = inv_k * (focal + std::pow(pk, gn) / (T(1) - pk));
        }
    }
    return g;
}

/// Differentiable form of asymmetric_loss built from tape ops; p is a
/// K-vector of probabilities, y a constant multi-hot K-vector.
template <class T>
Tensor<T> asymmetric_loss(const Tensor<T>& p, std::span<const T> y, const LossConfig& cfg) {
    detail::check_loss_inputs(p.data(), y);
    const T eps = static_cast<T>(cfg.prob_clamp_eps);
    const auto pc = clamp(p, eps, T(1) - eps);
    const auto q = one_minus(pc);
    const auto pos_term = mul(pow_scalar(q, static_cast<T>(cfg.gamma_pos)), log(pc));
    const auto neg_term = mul(pow_scalar(pc, static_cast<T>(cfg.gamma_neg)), log(q));
    const std::size_t k = p.numel();
    const Tensor<T> pos_mask(p.shape(), std::vector<T>(y.begin(), y.end()));
    std::vector<T> neg(k);
    for (std::size_t i = 0; i < k; ++i) neg[i] = T(1) - y[i];
    const Tensor<T> neg_mask(p.shape(), std::move(neg));
    return scale(sum(add(mul(pos_mask, pos_term), mul(neg_mask, neg_term))), T(-1) / static_cast<T>(k));
}

}  // namespace q2l
