#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "q2l/transformer/layers.hpp"

namespace q2l {

/// Projections of one multi-head attention block. Weights are d x d and act on
/// row vectors (x W); biases are optional.
template <class T>
struct MultiHeadParams {
    std::size_t n_heads = 1;
    Tensor<T> w_q, w_k, w_v, w_o;
    Tensor<T> b_q, b_k, b_v, b_o;

    std::size_t width() const { return w_q.dim(0); }
    std::size_t head_width() const { return width() / n_heads; }

    void validate() const {
        const std::size_t d = w_q.dim(0);
        if (n_heads == 0 || d % n_heads != 0)
            throw ShapeError("multi-head attention: width " + std::to_string(d) + " not divisible by " +
                             std::to_string(n_heads) + " heads");
        for (const auto* w : {&w_q, &w_k, &w_v, &w_o})
            if (w->shape() != Shape{d, d})
                throw ShapeError("multi-head attention: projection " + shape_str(w->shape()) + " is not " +
                                 shape_str({d, d}));
        for (const auto* b : {&b_q, &b_k, &b_v, &b_o})
            if (b->defined() && b->shape() != Shape{d})
                throw ShapeError("multi-head attention: bias " + shape_str(b->shape()) + " is not " +
                                 shape_str({d}));
    }

    template <class Rng>
    static MultiHeadParams make(std::size_t d, std::size_t heads, Rng& rng, bool with_bias = true) {
        if (heads == 0 || d % heads != 0)
            throw ShapeError("multi-head attention: width " + std::to_string(d) + " not divisible by " +
                             std::to_string(heads) + " heads");
        MultiHeadParams p;
        p.n_heads = heads;
        const T s = init_scale<T>(d);
        p.w_q = random_normal<T>({d, d}, s, rng);
        p.w_k = random_normal<T>({d, d}, s, rng);
        p.w_v = random_normal<T>({d, d}, s, rng);
        p.w_o = random_normal<T>({d, d}, s, rng);
        if (with_bias) {
            p.b_q = Tensor<T>::zeros({d}, true);
            p.b_k = Tensor<T>::zeros({d}, true);
            p.b_v = Tensor<T>::zeros({d}, true);
            p.b_o = Tensor<T>::zeros({d}, true);
        }
        return p;
    }

    template <class F>
    void visit(const std::string& prefix, F&& f) {
        f(prefix + ".w_q", w_q);
        f(prefix + ".w_k", w_k);
        f(prefix + ".w_v", w_v);
        f(prefix + ".w_o", w_o);
        if (b_q.defined()) {
            f(prefix + ".b_q", b_q);
            f(prefix + ".b_k", b_k);
            f(prefix + ".b_v", b_v);
            f(prefix + ".b_o", b_o);
        }
    }
};

template <class T>
struct AttentionResult {
    Tensor<T> out;      // n_q x d
    Tensor<T> weights;  // n_heads x n_q x n_k, detached copy for inspection
};

/// Scaled dot-product multi-head attention without masking:
/// per head softmax(q_h k_h^T / sqrt(d_h)) v_h, heads concatenated then
/// projected by W_o.
template <class T>
AttentionResult<T> multi_head_attention(const Tensor<T>& query, const Tensor<T>& key, const Tensor<T>& value,
                                        const MultiHeadParams<T>& p) {
    p.validate();
    const std::size_t d = p.width();
    if (query.rank() != 2 || key.rank() != 2 || value.rank() != 2 || query.dim(1) != d || key.dim(1) != d ||
        value.dim(1) != d || key.dim(0) != value.dim(0))
        throw ShapeError("multi_head_attention: query " + shape_str(query.shape()) + ", key " +
                         shape_str(key.shape()) + ", value " + shape_str(value.shape()) + " incompatible with width " +
                         std::to_string(d));
    const std::size_t heads = p.n_heads, dh = p.head_width();
    const std::size_t nq = query.dim(0), nk = key.dim(0);
    const auto q = linear(query, p.w_q, p.b_q);
    const auto k = linear(key, p.w_k, p.b_k);
    const auto v = linear(value, p.w_v, p.b_v);
    const T temperature = T(1) / std::sqrt(static_cast<T>(dh));

    std::vector<Tensor<T>> head_out;
    head_out.reserve(heads);
    std::vector<T> weights;
    weights.reserve(heads * nq * nk);
    for (std::size_t h = 0; h < heads; ++h) {
        const auto qh = heads == 1 ? q : slice(q, 1, h * dh, (h + 1) * dh);
        const auto kh = heads == 1 ? k : slice(k, 1, h * dh, (h + 1) * dh);
        const auto vh = heads == 1 ? v : slice(v, 1, h * dh, (h + 1) * dh);
        const auto a = softmax(scale(matmul(qh, transpose(kh)), temperature), 1);
        weights.insert(weights.end(), a.data().begin(), a.data().end());
        head_out.push_back(matmul(a, vh));
    }
    const auto merged = heads == 1 ? head_out.front() : concat(head_out, 1);
    return {linear(merged, p.w_o, p.b_o), Tensor<T>({heads, nq, nk}, std::move(weights))};
}

}  // namespace q2l
