#pragma once

#include <algorithm>
#include <cstddef>
#include <stdexcept>
#include <string>

#include "json.hpp"

namespace q2l {

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

enum class ModelKind { query2label, gap_baseline };

inline std::string to_string(ModelKind k) { return k == ModelKind::query2label ? "q2l" : "gap_baseline"; }

inline ModelKind model_kind_from_string(const std::string& s) {
    if (s == "q2l") return ModelKind::query2label;
    if (s == "gap_baseline") return ModelKind::gap_baseline;
    throw ConfigError("unknown model kind '" + s + "' (expected q2l or gap_baseline)");
}

/// Architecture hyperparameters. Defaults are the desk-scale model: 48x48
/// input, 8x8 patches (6x6 grid), width 64, 4 heads, two decoder layers.
struct ModelConfig {
    ModelKind kind = ModelKind::query2label;
    std::size_t num_classes = 12;
    std::size_t image_height = 48;
    std::size_t image_width = 48;
    std::size_t patch = 8;
    std::size_t feature_width = 64;  // d0
    std::size_t conv_layers = 2;
    std::size_t width = 64;  // d
    std::size_t heads = 4;
    std::size_t ffn_width = 128;
    std::size_t decoder_layers = 2;
    std::size_t encoder_layers = 0;
    bool self_attention = true;
    double pe_temperature = 10000.0;

    std::size_t grid_height() const { return image_height / patch; }
    std::size_t grid_width() const { return image_width / patch; }

    void validate() const {
        const auto fail = [](const std::string& m) { throw ConfigError("invalid model config: " + m); };
        if (num_classes < 1) fail("num_classes must be >= 1");
        if (patch < 1) fail("patch must be >= 1");
        if (image_height == 0 || image_width == 0 || image_height % patch || image_width % patch)
            fail("image size " + std::to_string(image_height) + "x" + std::to_string(image_width) +
                 " not divisible by patch " + std::to_string(patch));
        if (feature_width < 1) fail("feature_width must be >= 1");
        if (kind == ModelKind::gap_baseline) return;
        if (decoder_layers < 1) fail("decoder_layers must be >= 1");
        if (heads < 1 || width % heads) fail("width " + std::to_string(width) + " not divisible by heads " +
                                             std::to_string(heads));
        if (width % 4) fail("width must be divisible by 4 for 2-D position encoding");
        if (ffn_width < 1) fail("ffn_width must be >= 1");
        if (!(pe_temperature > 0)) fail("pe_temperature must be positive");
    }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = nlohmann::json{{"kind", to_string(c.kind)},
                       {"num_classes", c.num_classes},
                       {"image_height", c.image_height},
                       {"image_width", c.image_width},
                       {"patch", c.patch},
                       {"feature_width", c.feature_width},
                       {"conv_layers", c.conv_layers},
                       {"width", c.width},
                       {"heads", c.heads},
                       {"ffn_width", c.ffn_width},
                       {"decoder_layers", c.decoder_layers},
                       {"encoder_layers", c.encoder_layers},
                       {"self_attention", c.self_attention},
                       {"pe_temperature", c.pe_temperature}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
    static const char* known[] = {"kind",      "num_classes", "image_height",   "image_width",    "patch",
                                  "feature_width", "conv_layers", "width",      "heads",          "ffn_width",
                                  "decoder_layers", "encoder_layers", "self_attention", "pe_temperature"};
    for (const auto& [key, _] : j.items()) {
        if (std::find(std::begin(known), std::end(known), key) == std::end(known))
            throw ConfigError("unknown model config key '" + key + "'");
    }
    c = ModelConfig{};
    if (j.contains("kind")) c.kind = model_kind_from_string(j.at("kind").get<std::string>());
    const auto get = [&](const char* k, auto& v) {
        if (j.contains(k)) j.at(k).get_to(v);
    };
    get("num_classes", c.num_classes);
    get("image_height", c.image_height);
    get("image_width", c.image_width);
    get("patch", c.patch);
    get("feature_width", c.feature_width);
    get("conv_layers", c.conv_layers);
    get("width", c.width);
    get("heads", c.heads);
    get("ffn_width", c.ffn_width);
    get("decoder_layers", c.decoder_layers);
    get("encoder_layers", c.encoder_layers);
    get("self_attention", c.self_attention);
    get("pe_temperature", c.pe_temperature);
}

}  // namespace q2l
