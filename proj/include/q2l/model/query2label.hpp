#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "q2l/model/backbone.hpp"
#include "q2l/model/config.hpp"
#include "q2l/transformer/decoder.hpp"

namespace q2l {

template <class T>
struct ForwardOutput {
    Tensor<T> logits;                   // K
    Tensor<T> probs;                    // K, sigmoid(logits)
    std::vector<Tensor<T>> cross_maps;  // per decoder layer: n_heads x K x HW
};

/// Backbone -> d0->d projection -> decoder stack over learnable label
/// embeddings -> one linear-sigmoid classifier per label query.
template <class T>
class Query2Label {
public:
    static constexpr ModelKind kind = ModelKind::query2label;

    ModelConfig config;
    BackboneParams<T> backbone;
    Tensor<T> proj_weight;       // d0 x d
    Tensor<T> proj_bias;         // d
    Tensor<T> label_embeddings;  // K x d, the initial queries and the query position encoding
    std::vector<EncoderLayerParams<T>> encoders;
    std::vector<DecoderLayerParams<T>> decoders;
    Tensor<T> head_weight;  // K x d, row k scores class k only
    Tensor<T> head_bias;    // K
    SpatialPositionEncoding<T> position;

    std::size_t num_classes() const { return config.num_classes; }

    template <class F>
    void visit(F&& f) {
        backbone.visit("backbone", f);
        f("input_proj.weight", proj_weight);
        f("input_proj.bias", proj_bias);
        f("label_embeddings", label_embeddings);
        for (std::size_t i = 0; i < encoders.size(); ++i) encoders[i].visit("encoder" + std::to_string(i), f);
        for (std::size_t i = 0; i < decoders.size(); ++i) decoders[i].visit("decoder" + std::to_string(i), f);
        f("head.weight", head_weight);
        f("head.bias", head_bias);
    }

    /// Spatial features after projection (and encoder layers): HW x d.
    Tensor<T> memory(const Tensor<T>& image) const {
        auto f = project_features(extract_features(image, backbone), proj_weight, proj_bias);
        for (const auto& e : encoders) f = encoder_layer(f, position, e);
        return f;
    }

    /// Final decoder queries Q_L plus every layer's cross-attention maps.
    DecoderOutput<T> decode(const Tensor<T>& image, std::vector<Tensor<T>>* maps = nullptr) const {
        const auto f = memory(image);
        DecoderOutput<T> out{label_embeddings, {}};
        for (const auto& layer : decoders) {
            out = decoder_layer(out.queries, f, position, label_embeddings, layer);
            if (maps) maps->push_back(out.cross_maps);
        }
        return out;
    }

    Tensor<T> logits(const Tensor<T>& image) const {
        const auto q = decode(image).queries;
        return add(sum_axis(mul(q, head_weight), 1), head_bias);
    }

    ForwardOutput<T> forward(const Tensor<T>& image) const {
        ForwardOutput<T> out;
        const auto q = decode(image, &out.cross_maps).queries;
        out.logits = add(sum_axis(mul(q, head_weight), 1), head_bias);
        out.probs = sigmoid(out.logits);
        return out;
    }
};

/// Deterministic initialization from a seed. Weights are N(0, 1/fan_in),
/// label embeddings N(0, 1), biases zero, layer-norm gains one.
template <class T>
Query2Label<T> init_query2label(const ModelConfig& cfg, std::uint64_t seed) {
    if (cfg.kind != ModelKind::query2label) throw ConfigError("init_query2label: config kind is not q2l");
    cfg.validate();
    std::mt19937_64 rng(seed);
    Query2Label<T> m;
    m.config = cfg;
    m.backbone = BackboneParams<T>::make(cfg.patch, cfg.feature_width, cfg.conv_layers, rng);
    m.proj_weight = random_normal<T>({cfg.feature_width, cfg.width}, init_scale<T>(cfg.feature_width), rng);
    m.proj_bias = Tensor<T>::zeros({cfg.width}, true);
    m.label_embeddings = random_normal<T>({cfg.num_classes, cfg.width}, T(1), rng);
    for (std::size_t i = 0; i < cfg.encoder_layers; ++i)
        m.encoders.push_back(EncoderLayerParams<T>::make(cfg.width, cfg.heads, cfg.ffn_width, rng));
    for (std::size_t i = 0; i < cfg.decoder_layers; ++i) {
        m.decoders.push_back(DecoderLayerParams<T>::make(cfg.width, cfg.heads, cfg.ffn_width, rng));
        m.decoders.back().use_self_attention = cfg.self_attention;
    }
    m.head_weight = random_normal<T>({cfg.num_classes, cfg.width}, init_scale<T>(cfg.width), rng);
    m.head_bias = Tensor<T>::zeros({cfg.num_classes}, true);
    m.position = sincos_2d<T>(cfg.grid_height(), cfg.grid_width(), cfg.width, static_cast<T>(cfg.pe_temperature));
    return m;
}

}  // namespace q2l
