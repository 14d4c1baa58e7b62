#pragma once

#include <string>
#include <vector>

#include "q2l/transformer/layers.hpp"

namespace q2l {

/// Toy convolutional stand-in for a vision backbone: a strided patch
/// embedding followed by a stack of same-padded 3x3 conv + relu layers.
template <class T>
struct BackboneParams {
    struct Conv {
        Tensor<T> weight;  // (9*d0) x d0
        Tensor<T> bias;    // d0
    };

    std::size_t patch = 8;
    Tensor<T> patch_weight;  // (3*P*P) x d0
    Tensor<T> patch_bias;    // d0
    std::vector<Conv> convs;

    std::size_t feature_width() const { return patch_weight.dim(1); }

    template <class Rng>
    static BackboneParams make(std::size_t patch, std::size_t d0, std::size_t conv_layers, Rng& rng) {
        BackboneParams b;
        b.patch = patch;
        const std::size_t fan_in = 3 * patch * patch;
        b.patch_weight = random_normal<T>({fan_in, d0}, init_scale<T>(fan_in), rng);
        b.patch_bias = Tensor<T>::zeros({d0}, true);
        for (std::size_t i = 0; i < conv_layers; ++i)
            b.convs.push_back({random_normal<T>({9 * d0, d0}, init_scale<T>(9 * d0), rng),
                               Tensor<T>::zeros({d0}, true)});
        return b;
    }

    template <class F>
    void visit(const std::string& prefix, F&& f) {
        f(prefix + ".patch_weight", patch_weight);
        f(prefix + ".patch_bias", patch_bias);
        for (std::size_t i = 0; i < convs.size(); ++i) {
            f(prefix + ".conv" + std::to_string(i) + ".weight", convs[i].weight);
            f(prefix + ".conv" + std::to_string(i) + ".bias", convs[i].bias);
        }
    }
};

/// Patch embedding only: H0 x W0 x 3 -> (H*W) x d0.
template <class T>
Tensor<T> embed_patches(const Tensor<T>& image, const BackboneParams<T>& bb) {
    if (image.rank() != 3 || image.dim(2) != 3)
        throw ShapeError("extract_features: expected H0 x W0 x 3 image, got " + shape_str(image.shape()));
    if (image.dim(0) % bb.patch || image.dim(1) % bb.patch)
        throw ShapeError("extract_features: resolution " + std::to_string(image.dim(0)) + "x" +
                         std::to_string(image.dim(1)) + " not divisible by patch size " + std::to_string(bb.patch));
    return add_bias(matmul(patchify(image, bb.patch), bb.patch_weight), bb.patch_bias);
}

/// Spatial feature map F0: H0 x W0 x 3 -> H x W x d0 with H = H0/P, W = W0/P.
template <class T>
Tensor<T> extract_features(const Tensor<T>& image, const BackboneParams<T>& bb) {
    const std::size_t h = image.rank() == 3 ? image.dim(0) / bb.patch : 0;
    const std::size_t w = image.rank() == 3 ? image.dim(1) / bb.patch : 0;
    auto x = relu(reshape(embed_patches(image, bb), {h, w, bb.feature_width()}));
    for (const auto& c : bb.convs) x = relu(conv3x3(x, c.weight, c.bias));
    return x;
}

/// Row-major flatten of H x W x d0 to HW x d0, then the d0 -> d linear map.
template <class T>
Tensor<T> project_features(const Tensor<T>& f0, const Tensor<T>& weight, const Tensor<T>& bias) {
    if (f0.rank() != 3 || weight.rank() != 2 || weight.dim(0) != f0.dim(2))
        throw ShapeError("project_features: features " + shape_str(f0.shape()) + " incompatible with projection " +
                         shape_str(weight.shape()));
    return linear(reshape(f0, {f0.dim(0) * f0.dim(1), f0.dim(2)}), weight, bias);
}

}  // namespace q2l
