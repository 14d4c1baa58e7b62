#pragma once

#include <string>

#include "q2l/transformer/attention.hpp"
#include "q2l/transformer/position_encoding.hpp"

namespace q2l {

/// One query-updating decoder layer: self-attention over the label queries,
/// cross-attention into the spatial features, then the FFN. Every sublayer is
/// post-norm (residual add, then layer norm).
template <class T>
struct DecoderLayerParams {
    MultiHeadParams<T> self_attn;
    MultiHeadParams<T> cross_attn;
    FfnParams<T> ffn;
    LayerNormParams<T> norm1, norm2, norm3;
    bool use_self_attention = true;

    std::size_t width() const { return cross_attn.width(); }

    template <class Rng>
    static DecoderLayerParams make(std::size_t d, std::size_t heads, std::size_t d_ff, Rng& rng) {
        DecoderLayerParams p;
        p.self_attn = MultiHeadParams<T>::make(d, heads, rng);
        p.cross_attn = MultiHeadParams<T>::make(d, heads, rng);
        p.ffn = FfnParams<T>::make(d, d_ff, rng);
        p.norm1 = LayerNormParams<T>::make(d);
        p.norm2 = LayerNormParams<T>::make(d);
        p.norm3 = LayerNormParams<T>::make(d);
        return p;
    }

    template <class F>
    void visit(const std::string& prefix, F&& f) {
        self_attn.visit(prefix + ".self_attn", f);
        cross_attn.visit(prefix + ".cross_attn", f);
        ffn.visit(prefix + ".ffn", f);
        norm1.visit(prefix + ".norm1", f);
        norm2.visit(prefix + ".norm2", f);
        norm3.visit(prefix + ".norm3", f);
    }
};

/// Optional observer of the exact tensors fed to cross-attention.
template <class T>
struct CrossAttentionTrace {
    Tensor<T> query, key, value;
};

template <class T>
struct DecoderOutput {
    Tensor<T> queries;     // K x d
    Tensor<T> cross_maps;  // n_heads x K x HW
};

template <class T>
DecoderOutput<T> decoder_layer(const Tensor<T>& q_prev, const Tensor<T>& features,
                               const SpatialPositionEncoding<T>& pe_spatial, const Tensor<T>& pe_query,
                               const DecoderLayerParams<T>& p, CrossAttentionTrace<T>* trace = nullptr) {
    if (features.rank() != 2 || features.dim(0) != pe_spatial.height * pe_spatial.width ||
        features.dim(1) != pe_spatial.channels)
        throw ShapeError("decoder_layer: features " + shape_str(features.shape()) + " do not match position grid " +
                         std::to_string(pe_spatial.height) + "x" + std::to_string(pe_spatial.width) + "x" +
                         std::to_string(pe_spatial.channels));
    if (q_prev.shape() != pe_query.shape() || q_prev.rank() != 2 || q_prev.dim(1) != features.dim(1))
        throw ShapeError("decoder_layer: queries " + shape_str(q_prev.shape()) + ", query encoding " +
                         shape_str(pe_query.shape()) + ", features " + shape_str(features.shape()));

    Tensor<T> q1 = q_prev;
    if (p.use_self_attention) {
        const auto tilde = add(q_prev, pe_query);
        q1 = p.norm1(add(q_prev, multi_head_attention(tilde, tilde, q_prev, p.self_attn).out));
    }

    const auto query = add(q1, pe_query);
    const auto key = add(features, pe_spatial.table);
    if (trace) *trace = {query, key, features};
    auto cross = multi_head_attention(query, key, features, p.cross_attn);
    const auto q2 = p.norm2(add(q1, cross.out));

    return {p.norm3(add(q2, ffn(q2, p.ffn))), std::move(cross.weights)};
}

/// Self-attention layer over the spatial features, run before the decoders.
template <class T>
struct EncoderLayerParams {
    MultiHeadParams<T> self_attn;
    FfnParams<T> ffn;
    LayerNormParams<T> norm1, norm2;

    template <class Rng>
    static EncoderLayerParams make(std::size_t d, std::size_t heads, std::size_t d_ff, Rng& rng) {
        return {MultiHeadParams<T>::make(d, heads, rng), FfnParams<T>::make(d, d_ff, rng),
                LayerNormParams<T>::make(d), LayerNormParams<T>::make(d)};
    }

    template <class F>
    void visit(const std::string& prefix, F&& f) {
        self_attn.visit(prefix + ".self_attn", f);
        ffn.visit(prefix + ".ffn", f);
        norm1.visit(prefix + ".norm1", f);
        norm2.visit(prefix + ".norm2", f);
    }
};

template <class T>
Tensor<T> encoder_layer(const Tensor<T>& features, const SpatialPositionEncoding<T>& pe_spatial,
                        const EncoderLayerParams<T>& p) {
    const auto tilde = add(features, pe_spatial.table);
    const auto x = p.norm1(add(features, multi_head_attention(tilde, tilde, features, p.self_attn).out));
    return p.norm2(add(x, ffn(x, p.ffn)));
}

}  // namespace q2l
