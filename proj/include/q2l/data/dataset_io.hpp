#pragma once

#include <cctype>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "q2l/data/synth.hpp"

// On-disk layout of one split directory:
//   images/NNNNNN.ppm   binary PPM (P6, maxval 255), one per sample
//   labels.jsonl        {"id":int,"labels":[int],"boxes":[[x,y,w,h,category]]} per line
//   meta.json           K, canvas size, seed, size thresholds and sample count
// generate_dataset writes a "train" and a "test" split under the root.

namespace q2l::data {

namespace fs = std::filesystem;

struct DatasetMeta {
    std::size_t num_classes = 0;
    std::size_t height = 0, width = 0;
    std::uint64_t seed = 0;
    SizeThresholds thresholds;
    std::string split;
    std::size_t count = 0;
    std::size_t shapes = 0, colors = 0;
};

struct Dataset {
    DatasetMeta meta;
    std::vector<SampleRecord> samples;
};

inline constexpr std::uint64_t kTrainSplit = 0;
inline constexpr std::uint64_t kTestSplit = 1;

inline std::string image_filename(std::size_t id) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%06zu.ppm", id);
    return buf;
}

inline void write_ppm(const fs::path& path, std::size_t height, std::size_t width,
                      const std::vector<std::uint8_t>& rgb) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DatasetError("cannot write " + path.string());
    os << "P6\n" << width << ' ' << height << "\n255\n";
    os.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
    if (!os) throw DatasetError("failed writing " + path.string());
}

/// Strict binary PPM reader: P6, maxval 255, exact pixel payload, no trailing
/// bytes. Returns width/height through the out parameters.
inline std::vector<std::uint8_t> read_ppm(const fs::path& path, std::size_t& height, std::size_t& width) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DatasetError(path.string() + ": cannot open image");
    const std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    std::size_t pos = 0;
    const auto fail = [&](const std::string& why) -> void { throw DatasetError(path.string() + ": " + why); };
    const auto skip_ws = [&] {
        if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) fail("malformed PPM header");
        while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    };
    const auto read_uint = [&] {
        std::size_t v = 0, digits = 0;
        while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
            v = v * 10 + static_cast<std::size_t>(bytes[pos++] - '0');
            if (++digits > 6) fail("malformed PPM header");
        }
        if (digits == 0) fail("malformed PPM header");
        return v;
    };
    if (bytes.compare(0, 2, "P6") != 0) fail("not a binary PPM (P6)");
    pos = 2;
    skip_ws();
    width = read_uint();
    skip_ws();
    height = read_uint();
    skip_ws();
    if (read_uint() != 255) fail("PPM maxval must be 255");
    if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) fail("malformed PPM header");
    ++pos;
    const std::size_t payload = width * height * 3;
    if (width == 0 || height == 0) fail("empty PPM image");
    if (bytes.size() - pos < payload) fail("truncated PPM pixel data");
    if (bytes.size() - pos > payload) fail("trailing bytes after PPM pixel data");
    return {bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end()};
}

inline nlohmann::ordered_json meta_to_json(const DatasetMeta& m) {
    nlohmann::ordered_json j;
    j["K"] = m.num_classes;
    j["canvas"] = {m.height, m.width};
    j["seed"] = m.seed;
    j["thresholds"] = {{"small", m.thresholds.small}, {"medium", m.thresholds.medium}};
    j["split"] = m.split;
    j["count"] = m.count;
    j["shapes"] = m.shapes;
    j["colors"] = m.colors;
    return j;
}

inline std::string label_line(const SampleRecord& s) {
    nlohmann::ordered_json j;
    j["id"] = s.id;
    auto labels = nlohmann::ordered_json::array();
    for (std::size_t k = 0; k < s.labels.size(); ++k)
        if (s.labels[k]) labels.push_back(k);
    j["labels"] = labels;
    auto boxes = nlohmann::ordered_json::array();
    for (const auto& b : s.boxes) boxes.push_back({b.x, b.y, b.w, b.h, b.category});
    j["boxes"] = boxes;
    return j.dump();
}

inline void write_split(const fs::path& dir, const DatasetMeta& meta, const std::vector<SampleRecord>& samples) {
    fs::create_directories(dir / "images");
    {
        std::ofstream os(dir / "meta.json", std::ios::trunc);
        os << meta_to_json(meta).dump(2) << '\n';
        if (!os) throw DatasetError("failed writing " + (dir / "meta.json").string());
    }
    std::ofstream labels(dir / "labels.jsonl", std::ios::trunc);
    for (const auto& s : samples) {
        labels << label_line(s) << '\n';
        write_ppm(dir / "images" / image_filename(s.id), s.height, s.width, s.image);
    }
    if (!labels) throw DatasetError("failed writing " + (dir / "labels.jsonl").string());
}

inline std::vector<SampleRecord> generate_split(const SynthConfig& cfg, std::uint64_t split, std::size_t n) {
    std::vector<SampleRecord> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(make_sample(cfg, split, i));
    return out;
}

inline DatasetMeta split_meta(const SynthConfig& cfg, const std::string& name, std::size_t count) {
    return {cfg.num_classes, cfg.height, cfg.width, cfg.seed, cfg.thresholds, name, count, cfg.shapes, cfg.colors};
}

/// Writes root/train and root/test. Output bytes depend only on cfg.
inline void generate_dataset(const SynthConfig& cfg, const fs::path& root) {
    cfg.validate();
    write_split(root / "train", split_meta(cfg, "train", cfg.n_train), generate_split(cfg, kTrainSplit, cfg.n_train));
    write_split(root / "test", split_meta(cfg, "test", cfg.n_test), generate_split(cfg, kTestSplit, cfg.n_test));
}

namespace detail {

template <class Json>
void require_keys(const Json& j, std::initializer_list<const char*> keys, const std::string& where) {
    if (!j.is_object()) throw DatasetError(where + ": expected a JSON object");
    std::set<std::string> expected(keys.begin(), keys.end());
    std::set<std::string> present;
    for (auto it = j.begin(); it != j.end(); ++it) present.insert(it.key());
    for (const auto& k : present)
        if (!expected.count(k)) throw DatasetError(where + ": unexpected key '" + k + "'");
    for (const auto& k : expected)
        if (!present.count(k)) throw DatasetError(where + ": missing key '" + k + "'");
}

inline std::size_t as_uint(const nlohmann::json& v, const std::string& where) {
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0))
        throw DatasetError(where + ": expected a nonnegative integer");
    return v.get<std::size_t>();
}

}  // namespace detail

inline DatasetMeta load_meta(const fs::path& dir) {
    const auto path = dir / "meta.json";
    std::ifstream is(path);
    if (!is) throw DatasetError(path.string() + ": cannot open");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(is);
    } catch (const nlohmann::json::exception& e) {
        throw DatasetError(path.string() + ": " + e.what());
    }
    const std::string where = path.string();
    detail::require_keys(j, {"K", "canvas", "seed", "thresholds", "split", "count", "shapes", "colors"}, where);
    DatasetMeta m;
    m.num_classes = detail::as_uint(j["K"], where + " K");
    if (!j["canvas"].is_array() || j["canvas"].size() != 2) throw DatasetError(where + ": canvas must be [H, W]");
    m.height = detail::as_uint(j["canvas"][0], where + " canvas");
    m.width = detail::as_uint(j["canvas"][1], where + " canvas");
    m.seed = j["seed"].get<std::uint64_t>();
    detail::require_keys(j["thresholds"], {"small", "medium"}, where + " thresholds");
    m.thresholds.small = detail::as_uint(j["thresholds"]["small"], where + " thresholds");
    m.thresholds.medium = detail::as_uint(j["thresholds"]["medium"], where + " thresholds");
    if (!j["split"].is_string()) throw DatasetError(where + ": split must be a string");
    m.split = j["split"].get<std::string>();
    m.count = detail::as_uint(j["count"], where + " count");
    m.shapes = detail::as_uint(j["shapes"], where + " shapes");
    m.colors = detail::as_uint(j["colors"], where + " colors");
    if (m.num_classes == 0 || m.height == 0 || m.width == 0) throw DatasetError(where + ": empty K or canvas");
    if (m.thresholds.small >= m.thresholds.medium) throw DatasetError(where + ": thresholds out of order");
    return m;
}

/// Parses one labels.jsonl line and validates it against the split metadata.
inline SampleRecord parse_label_line(const std::string& line, const DatasetMeta& meta, std::size_t expected_id,
                                     const std::string& where) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        throw DatasetError(where + ": malformed label line: " + e.what());
    }
    detail::require_keys(j, {"id", "labels", "boxes"}, where);
    SampleRecord s;
    s.id = detail::as_uint(j["id"], where + " id");
    if (s.id != expected_id)
        throw DatasetError(where + ": id " + std::to_string(s.id) + " out of sequence (expected " +
                           std::to_string(expected_id) + ")");
    s.height = meta.height;
    s.width = meta.width;
    s.labels.assign(meta.num_classes, 0);
    if (!j["labels"].is_array()) throw DatasetError(where + ": labels must be an array");
    long long prev = -1;
    for (const auto& v : j["labels"]) {
        const auto k = detail::as_uint(v, where + " labels");
        if (k >= meta.num_classes)
            throw DatasetError(where + ": label " + std::to_string(k) + " is not below K=" +
                               std::to_string(meta.num_classes));
        if (static_cast<long long>(k) <= prev) throw DatasetError(where + ": labels must be strictly increasing");
        prev = static_cast<long long>(k);
        s.labels[k] = 1;
    }
    if (!j["boxes"].is_array()) throw DatasetError(where + ": boxes must be an array");
    std::vector<std::uint8_t> from_boxes(meta.num_classes, 0);
    for (const auto& b : j["boxes"]) {
        if (!b.is_array() || b.size() != 5) throw DatasetError(where + ": box must be [x,y,w,h,category]");
        Box box;
        box.x = static_cast<std::uint32_t>(detail::as_uint(b[0], where + " box"));
        box.y = static_cast<std::uint32_t>(detail::as_uint(b[1], where + " box"));
        box.w = static_cast<std::uint32_t>(detail::as_uint(b[2], where + " box"));
        box.h = static_cast<std::uint32_t>(detail::as_uint(b[3], where + " box"));
        box.category = static_cast<std::uint32_t>(detail::as_uint(b[4], where + " box"));
        if (box.category >= meta.num_classes)
            throw DatasetError(where + ": box category " + std::to_string(box.category) + " is not below K=" +
                               std::to_string(meta.num_classes));
        if (box.w == 0 || box.h == 0 || box.x + box.w > meta.width || box.y + box.h > meta.height)
            throw DatasetError(where + ": box outside canvas");
        from_boxes[box.category] = 1;
        s.boxes.push_back(box);
    }
    if (from_boxes != s.labels) throw DatasetError(where + ": labels disagree with boxes");
    return s;
}

/// Loads one split directory written by generate_dataset.
inline Dataset load_dataset(const fs::path& dir) {
    Dataset ds;
    ds.meta = load_meta(dir);
    const auto labels_path = dir / "labels.jsonl";
    std::ifstream is(labels_path);
    if (!is) throw DatasetError(labels_path.string() + ": cannot open");
    std::string line;
    std::size_t n = 0;
    while (std::getline(is, line)) {
        const std::string where = labels_path.string() + ":" + std::to_string(n + 1);
        if (line.empty()) throw DatasetError(where + ": empty line");
        auto s = parse_label_line(line, ds.meta, n, where);
        std::size_t h = 0, w = 0;
        s.image = read_ppm(dir / "images" / image_filename(s.id), h, w);
        if (h != ds.meta.height || w != ds.meta.width)
            throw DatasetError((dir / "images" / image_filename(s.id)).string() + ": image is " + std::to_string(w) +
                               "x" + std::to_string(h) + ", canvas is " + std::to_string(ds.meta.width) + "x" +
                               std::to_string(ds.meta.height));
        ds.samples.push_back(std::move(s));
        ++n;
    }
    if (n != ds.meta.count)
        throw DatasetError(labels_path.string() + ": " + std::to_string(n) + " records, meta.json declares " +
                           std::to_string(ds.meta.count));
    return ds;
}

}  // namespace q2l::data
