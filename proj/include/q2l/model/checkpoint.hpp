#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"
#include "q2l/model/gap_baseline.hpp"
#include "q2l/model/query2label.hpp"
#include "q2l/numcore/serialize.hpp"

// Checkpoint layout (little-endian):
//   "Q2LC" | version u32 | config_len u32 | config JSON (config_len bytes)
//   | count u32 | count x manifest entry | tensor blobs
// manifest entry: name_len u32 | name bytes | offset u64 | rank u32 | extents u32[rank]
// Each blob is a complete "Q2LT" tensor record starting at its absolute
// file offset; blobs follow the manifest in manifest order.

namespace q2l {

namespace io {

inline constexpr std::array<char, 4> kCheckpointMagic{'Q', '2', 'L', 'C'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct ManifestEntry {
    std::string name;
    std::uint64_t offset = 0;
    Shape shape;
};

struct CheckpointHeader {
    nlohmann::json config;
    std::vector<ManifestEntry> manifest;
};

template <class T, class Model>
void save_checkpoint(const std::filesystem::path& path, Model model, const nlohmann::json& extra = {}) {
    std::vector<std::pair<std::string, Tensor<T>>> tensors;
    model.visit([&](const std::string& name, Tensor<T>& t) { tensors.emplace_back(name, t); });

    nlohmann::json cfg = {{"model", model.config}};
    if (!extra.is_null()) cfg["extra"] = extra;
    const std::string cfg_text = cfg.dump();

    std::uint64_t header = 4 + 4 + 4 + cfg_text.size() + 4;
    for (const auto& [name, t] : tensors) header += 4 + name.size() + 8 + 4 + 4 * t.rank();

    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw FormatError("cannot open checkpoint for writing: " + path.string());
    os.write(kCheckpointMagic.data(), kCheckpointMagic.size());
    put_le<std::uint32_t>(os, kCheckpointVersion);
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(cfg_text.size()));
    os.write(cfg_text.data(), static_cast<std::streamsize>(cfg_text.size()));
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(tensors.size()));
    std::uint64_t offset = header;
    for (const auto& [name, t] : tensors) {
        put_le<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        put_le<std::uint64_t>(os, offset);
        put_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
        for (auto e : t.shape()) put_le<std::uint32_t>(os, static_cast<std::uint32_t>(e));
        offset += encoded_size(t);
    }
    for (const auto& [name, t] : tensors) write_tensor(os, t);
    if (!os) throw FormatError("failed writing checkpoint " + path.string());
}

inline CheckpointHeader read_checkpoint_header(std::istream& is, const std::string& label) {
    std::array<char, 4> magic{};
    if (!is.read(magic.data(), 4) || magic != kCheckpointMagic) throw FormatError(label + ": not a checkpoint");
    if (get_le<std::uint32_t>(is, "checkpoint version") != kCheckpointVersion)
        throw FormatError(label + ": unsupported checkpoint version");
    const auto cfg_len = get_le<std::uint32_t>(is, "config length");
    std::string cfg_text(cfg_len, '\0');
    if (!is.read(cfg_text.data(), cfg_len)) throw FormatError(label + ": truncated config");
    CheckpointHeader h;
    try {
        h.config = nlohmann::json::parse(cfg_text);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(label + ": malformed config: " + e.what());
    }
    const auto count = get_le<std::uint32_t>(is, "tensor count");
    for (std::uint32_t i = 0; i < count; ++i) {
        ManifestEntry e;
        const auto len = get_le<std::uint32_t>(is, "name length");
        e.name.resize(len);
        if (!is.read(e.name.data(), len)) throw FormatError(label + ": truncated manifest");
        e.offset = get_le<std::uint64_t>(is, "offset");
        const auto rank = get_le<std::uint32_t>(is, "rank");
        for (std::uint32_t r = 0; r < rank; ++r) e.shape.push_back(get_le<std::uint32_t>(is, "extent"));
        h.manifest.push_back(std::move(e));
    }
    return h;
}

/// Reads the stored tensors into an already-initialized model whose parameter
/// names and shapes must match the manifest exactly, in order.
template <class T, class Model>
void load_parameters(std::istream& is, const CheckpointHeader& h, Model& model, const std::string& label) {
    std::size_t i = 0;
    model.visit([&](const std::string& name, Tensor<T>& t) {
        if (i >= h.manifest.size()) throw FormatError(label + ": missing tensor " + name);
        const auto& e = h.manifest[i++];
        if (e.name != name) throw FormatError(label + ": expected tensor " + name + ", found " + e.name);
        if (e.shape != t.shape())
            throw FormatError(label + ": tensor " + name + " has shape " + shape_str(e.shape) + ", model expects " +
                              shape_str(t.shape()));
        is.clear();
        is.seekg(static_cast<std::streamoff>(e.offset));
        const auto loaded = read_tensor<T>(is);
        if (loaded.shape() != e.shape) throw FormatError(label + ": blob shape disagrees with manifest for " + name);
        std::copy(loaded.data().begin(), loaded.data().end(), t.mutable_data().begin());
    });
    if (i != h.manifest.size()) throw FormatError(label + ": unexpected extra tensors");
}

}  // namespace io

template <class T>
using AnyModel = std::variant<Query2Label<T>, GapBaseline<T>>;

template <class T>
AnyModel<T> init_model(const ModelConfig& cfg, std::uint64_t seed) {
    if (cfg.kind == ModelKind::gap_baseline) return init_gap_baseline<T>(cfg, seed);
    return init_query2label<T>(cfg, seed);
}

template <class T>
struct LoadedCheckpoint {
    AnyModel<T> model;
    nlohmann::json extra;
};

template <class T, class Model>
void save_checkpoint(const std::filesystem::path& path, const Model& model, const nlohmann::json& extra = {}) {
    io::save_checkpoint<T>(path, model, extra);
}

template <class T>
LoadedCheckpoint<T> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    const std::string label = path.string();
    if (!is) throw FormatError("cannot open checkpoint " + label);
    const auto h = io::read_checkpoint_header(is, label);
    ModelConfig cfg;
    try {
        cfg = h.config.at("model").get<ModelConfig>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(label + ": bad model config: " + e.what());
    }
    auto model = init_model<T>(cfg, 0);
    std::visit([&](auto& m) { io::load_parameters<T>(is, h, m, label); }, model);
    return {std::move(model), h.config.contains("extra") ? h.config["extra"] : nlohmann::json{}};
}

/// Deep copy of every parameter; position tables stay shared (read-only).
template <class T, class Model>
Model clone_model(const Model& src) {
    Model m = src;
    m.visit([](const std::string&, Tensor<T>& t) {
        t = Tensor<T>(t.shape(), std::vector<T>(t.data().begin(), t.data().end()), t.requires_grad());
    });
    return m;
}

}  // namespace q2l
