#pragma once

#include <cstdint>
#include <random>

#include "q2l/model/backbone.hpp"
#include "q2l/model/config.hpp"
#include "q2l/model/query2label.hpp"

namespace q2l {

/// Reference classifier on the same backbone: global average pooling of the
/// feature map followed by a linear layer.
template <class T>
class GapBaseline {
public:
    static constexpr ModelKind kind = ModelKind::gap_baseline;

    ModelConfig config;
    BackboneParams<T> backbone;
    Tensor<T> head_weight;  // d0 x K
    Tensor<T> head_bias;    // K

    std::size_t num_classes() const { return config.num_classes; }

    template <class F>
    void visit(F&& f) {
        backbone.visit("backbone", f);
        f("head.weight", head_weight);
        f("head.bias", head_bias);
    }

    Tensor<T> logits(const Tensor<T>& image) const {
        const auto f0 = extract_features(image, backbone);
        const auto pooled = mean_axis(reshape(f0, {f0.dim(0) * f0.dim(1), f0.dim(2)}), 0);
        const auto z = linear(reshape(pooled, {1, pooled.numel()}), head_weight, Tensor<T>{});
        return add(reshape(z, {num_classes()}), head_bias);
    }

    ForwardOutput<T> forward(const Tensor<T>& image) const {
        ForwardOutput<T> out;
        out.logits = logits(image);
        out.probs = sigmoid(out.logits);
        return out;
    }
};

template <class T>
GapBaseline<T> init_gap_baseline(const ModelConfig& cfg, std::uint64_t seed) {
    if (cfg.kind != ModelKind::gap_baseline) throw ConfigError("init_gap_baseline: config kind is not gap_baseline");
    cfg.validate();
    std::mt19937_64 rng(seed);
    GapBaseline<T> m;
    m.config = cfg;
    m.backbone = BackboneParams<T>::make(cfg.patch, cfg.feature_width, cfg.conv_layers, rng);
    m.head_weight = random_normal<T>({cfg.feature_width, cfg.num_classes}, init_scale<T>(cfg.feature_width), rng);
    m.head_bias = Tensor<T>::zeros({cfg.num_classes}, true);
    return m;
}

}  // namespace q2l
