#pragma once

#include <cmath>
#include <random>
#include <string>

#include "q2l/numcore.hpp"

namespace q2l {

/// Gaussian N(0, stddev^2) matrix initializer; stddev 0 yields zeros.
template <class T, class Rng>
Tensor<T> random_normal(Shape shape, T stddev, Rng& rng) {
    std::vector<T> v(shape_numel(shape), T(0));
    if (stddev > T(0)) {
        std::normal_distribution<T> dist(T(0), stddev);
        for (auto& x : v) x = dist(rng);
    }
    return Tensor<T>(std::move(shape), std::move(v), true);
}

/// Scale used for a fan_in x fan_out weight matrix.
template <class T>
T init_scale(std::size_t fan_in) {
    return T(1) / std::sqrt(static_cast<T>(fan_in));
}

/// x * W (+ b when b is defined).
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    auto y = matmul(x, w);
    return b.defined() ? add_bias(y, b) : y;
}

template <class T>
struct LayerNormParams {
    Tensor<T> gain;
    Tensor<T> bias;
    T eps = T(1e-5);

    static LayerNormParams make(std::size_t d) {
        return {Tensor<T>::full({d}, T(1), true), Tensor<T>::zeros({d}, true)};
    }
    Tensor<T> operator()(const Tensor<T>& x) const { return layer_norm(x, gain, bias, eps); }

    template <class F>
    void visit(const std::string& prefix, F&& f) {
        f(prefix + ".gain", gain);
        f(prefix + ".bias", bias);
    }
};

/// Position-wise feed-forward block: relu(x W1 + b1) W2 + b2.
template <class T>
struct FfnParams {
    Tensor<T> w1, b1, w2, b2;

    template <class Rng>
    static FfnParams make(std::size_t d, std::size_t d_ff, Rng& rng) {
        return {random_normal<T>({d, d_ff}, init_scale<T>(d), rng), Tensor<T>::zeros({d_ff}, true),
                random_normal<T>({d_ff, d}, init_scale<T>(d_ff), rng), Tensor<T>::zeros({d}, true)};
    }

    template <class F>
    void visit(const std::string& prefix, F&& f) {
        f(prefix + ".w1", w1);
        f(prefix + ".b1", b1);
        f(prefix + ".w2", w2);
        f(prefix + ".b2", b2);
    }
};

template <class T>
Tensor<T> ffn(const Tensor<T>& x, const FfnParams<T>& p) {
    if (x.rank() != 2 || p.w1.rank() != 2 || p.w2.rank() != 2 || x.dim(1) != p.w1.dim(0) ||
        p.w1.dim(1) != p.w2.dim(0) || p.w2.dim(1) != x.dim(1))
        throw ShapeError("ffn: input " + shape_str(x.shape()) + " incompatible with W1 " + shape_str(p.w1.shape()) +
                         " / W2 " + shape_str(p.w2.shape()));
    return linear(relu(linear(x, p.w1, p.b1)), p.w2, p.b2);
}

}  // namespace q2l
