#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace q2l::data {

class DatasetError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class ShapeKind : std::uint8_t { circle = 0, square = 1, triangle = 2 };
inline constexpr std::size_t kMaxShapes = 3;

struct Rgb {
    std::uint8_t r, g, b;
};

inline constexpr std::array<Rgb, 6> kPalette{{
    {220, 40, 40},   // red
    {40, 200, 60},   // green
    {40, 80, 230},   // blue
    {230, 210, 40},  // yellow
    {210, 50, 210},  // magenta
    {40, 210, 210},  // cyan
}};

struct Box {
    std::uint32_t x = 0, y = 0, w = 0, h = 0;
    std::uint32_t category = 0;

    std::uint64_t area() const { return std::uint64_t{w} * h; }
    bool operator==(const Box&) const = default;
};

/// Area thresholds separating small (<= small), medium (<= medium) and large
/// objects, in pixels of box area.
struct SizeThresholds {
    std::uint64_t small = 8 * 8;
    std::uint64_t medium = 20 * 20;
};

/// Category k is shape k / colors painted in palette color k % colors.
struct CategoryScheme {
    std::size_t shapes = 3;
    std::size_t colors = 4;

    ShapeKind shape_of(std::size_t category) const { return static_cast<ShapeKind>(category / colors); }
    std::size_t color_of(std::size_t category) const { return category % colors; }
};

struct SynthConfig {
    std::size_t n_train = 2000;
    std::size_t n_test = 500;
    std::size_t num_classes = 12;
    std::size_t shapes = 3;
    std::size_t colors = 4;
    std::size_t height = 48;
    std::size_t width = 48;
    std::size_t min_objects = 1;
    std::size_t max_objects = 5;
    // Relative frequencies of small / medium / large object draws.
    double mix_small = 0.35;
    double mix_medium = 0.40;
    double mix_large = 0.25;
    std::size_t min_side = 5;
    std::size_t max_side = 28;
    SizeThresholds thresholds;
    double noise_amplitude = 24.0;
    double max_overlap = 0.25;  // of the smaller box's area
    std::uint64_t seed = 0;

    CategoryScheme scheme() const { return {shapes, colors}; }

    void validate() const {
        const auto fail = [](const std::string& m) { throw DatasetError("invalid dataset config: " + m); };
        if (shapes < 1 || shapes > kMaxShapes) fail("shapes must be in [1, 3]");
        if (colors < 1 || colors > kPalette.size()) fail("colors must be in [1, 6]");
        if (num_classes < 1) fail("classes must be >= 1");
        if (num_classes > shapes * colors)
            fail(std::to_string(num_classes) + " classes exceed the " + std::to_string(shapes) + "x" +
                 std::to_string(colors) + " shape/color grid");
        if (min_objects < 1 || max_objects < min_objects) fail("objects-per-image range is empty");
        if (thresholds.small >= thresholds.medium) fail("small threshold must be below medium threshold");
        if (min_side < 1 || min_side * min_side > thresholds.small)
            fail("min_side must produce small objects");
        if (max_side * max_side <= thresholds.medium) fail("max_side must allow large objects");
        if (max_side > std::min(height, width)) fail("max_side exceeds canvas");
        if (!(mix_small >= 0 && mix_medium >= 0 && mix_large >= 0) || mix_small + mix_medium + mix_large <= 0)
            fail("size mix must be nonnegative with positive total");
        if (!(noise_amplitude >= 0 && noise_amplitude <= 100)) fail("noise amplitude must be in [0, 100]");
        if (!(max_overlap >= 0 && max_overlap <= 1)) fail("max_overlap must be in [0, 1]");
    }
};

struct SceneObject {
    std::size_t category = 0;
    ShapeKind shape = ShapeKind::circle;
    Rgb color{};
    Box box;
};

struct SceneSpec {
    std::size_t height = 0, width = 0;
    std::vector<SceneObject> objects;  // drawn in order, later ones on top
    std::uint64_t background_seed = 0;
};

/// Image (H x W x 3, 8-bit, row-major), multi-hot labels and object boxes.
struct SampleRecord {
    std::size_t id = 0;
    std::size_t height = 0, width = 0;
    std::vector<std::uint8_t> image;
    std::vector<std::uint8_t> labels;
    std::vector<Box> boxes;
};

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

/// Independent per-sample seed so samples can be generated in any order.
inline std::uint64_t sample_seed(std::uint64_t seed, std::uint64_t split, std::uint64_t index) {
    return splitmix64(splitmix64(splitmix64(seed) ^ split) ^ index);
}

namespace detail {

inline std::uint64_t overlap_area(const Box& a, const Box& b) {
    const auto x0 = std::max(a.x, b.x), y0 = std::max(a.y, b.y);
    const auto x1 = std::min(a.x + a.w, b.x + b.w), y1 = std::min(a.y + a.h, b.y + b.h);
    if (x1 <= x0 || y1 <= y0) return 0;
    return std::uint64_t{x1 - x0} * (y1 - y0);
}

inline bool covers(ShapeKind s, const Box& b, double px, double py) {
    const double w = b.w, h = b.h;
    const double u = px - b.x, v = py - b.y;  // local coordinates of the pixel centre
    switch (s) {
        case ShapeKind::square:
            return u >= 0 && v >= 0 && u < w && v < h;
        case ShapeKind::circle: {
            const double dx = (u - w / 2) / (w / 2), dy = (v - h / 2) / (h / 2);
            return dx * dx + dy * dy <= 1.0;
        }
        case ShapeKind::triangle: {
            // apex at top centre, base along the bottom edge
            if (v < 0 || v > h) return false;
            const double half = (w / 2) * (v / h);
            return std::abs(u - w / 2) <= half;
        }
    }
    return false;
}

}  // namespace detail

/// Samples the objects of scene `index`. The first object's category cycles
/// through all classes with the index so every class is present in at least
/// floor(n / K) images.
inline SceneSpec generate_scene(const SynthConfig& cfg, std::uint64_t split, std::size_t index) {
    std::mt19937_64 rng(sample_seed(cfg.seed, split, index));
    SceneSpec scene;
    scene.height = cfg.height;
    scene.width = cfg.width;
    scene.background_seed = rng();

    const auto side_limit = [](std::uint64_t area) {
        auto s = static_cast<std::size_t>(std::sqrt(static_cast<double>(area)));
        while ((s + 1) * (s + 1) <= area) ++s;
        while (s * s > area) --s;
        return s;
    };
    const std::size_t small_max = side_limit(cfg.thresholds.small);
    const std::size_t medium_max = side_limit(cfg.thresholds.medium);
    const std::array<std::pair<std::size_t, std::size_t>, 3> side_ranges{
        {{cfg.min_side, small_max}, {small_max + 1, medium_max}, {medium_max + 1, cfg.max_side}}};

    std::uniform_int_distribution<std::size_t> count_dist(cfg.min_objects, cfg.max_objects);
    std::uniform_int_distribution<std::size_t> cat_dist(0, cfg.num_classes - 1);
    std::discrete_distribution<int> bucket_dist({cfg.mix_small, cfg.mix_medium, cfg.mix_large});
    std::uniform_int_distribution<int> jitter(-20, 20);
    const auto scheme = cfg.scheme();

    const std::size_t count = count_dist(rng);
    for (std::size_t i = 0; i < count; ++i) {
        SceneObject obj;
        obj.category = i == 0 ? index % cfg.num_classes : cat_dist(rng);
        obj.shape = scheme.shape_of(obj.category);
        const Rgb base = kPalette[scheme.color_of(obj.category)];
        const auto jit = [&](std::uint8_t c) {
            return static_cast<std::uint8_t>(std::clamp(static_cast<int>(c) + jitter(rng), 0, 255));
        };
        obj.color = {jit(base.r), jit(base.g), jit(base.b)};
        const auto [lo, hi] = side_ranges[static_cast<std::size_t>(bucket_dist(rng))];
        const auto side = std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
        bool placed = false;
        for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
            Box b;
            b.w = b.h = static_cast<std::uint32_t>(side);
            b.x = static_cast<std::uint32_t>(std::uniform_int_distribution<std::size_t>(0, cfg.width - side)(rng));
            b.y = static_cast<std::uint32_t>(std::uniform_int_distribution<std::size_t>(0, cfg.height - side)(rng));
            b.category = static_cast<std::uint32_t>(obj.category);
            placed = std::all_of(scene.objects.begin(), scene.objects.end(), [&](const SceneObject& o) {
                const auto limit = cfg.max_overlap * static_cast<double>(std::min(o.box.area(), b.area()));
                return static_cast<double>(detail::overlap_area(o.box, b)) <= limit;
            });
            if (placed) obj.box = b;
        }
        if (placed) scene.objects.push_back(obj);
    }
    return scene;
}

/// Rasterizes a scene over a noisy low-frequency color gradient.
inline std::vector<std::uint8_t> render_scene(const SceneSpec& scene, double noise_amplitude) {
    const std::size_t h = scene.height, w = scene.width;
    std::vector<std::uint8_t> img(h * w * 3);
    std::mt19937_64 rng(scene.background_seed);
    std::uniform_real_distribution<double> level(70.0, 170.0);
    std::uniform_real_distribution<double> angle(0.0, 2.0 * 3.14159265358979323846);
    std::array<double, 3> c0{}, c1{};
    for (auto& c : c0) c = level(rng);
    for (auto& c : c1) c = level(rng);
    const double theta = angle(rng);
    const double ux = std::cos(theta), uy = std::sin(theta);
    const double span = std::abs(ux) * static_cast<double>(w) + std::abs(uy) * static_cast<double>(h);
    const double origin = std::min(0.0, ux * static_cast<double>(w)) + std::min(0.0, uy * static_cast<double>(h));
    std::uniform_real_distribution<double> noise(-noise_amplitude, noise_amplitude);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            const double t = ((ux * (x + 0.5) + uy * (y + 0.5)) - origin) / span;
            for (std::size_t c = 0; c < 3; ++c) {
                const double v = c0[c] + (c1[c] - c0[c]) * t + noise(rng);
                img[(y * w + x) * 3 + c] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0l, 255l));
            }
        }
    for (const auto& obj : scene.objects) {
        const auto& b = obj.box;
        for (std::size_t y = b.y; y < b.y + b.h; ++y)
            for (std::size_t x = b.x; x < b.x + b.w; ++x) {
                if (!detail::covers(obj.shape, b, x + 0.5, y + 0.5)) continue;
                auto* px = &img[(y * w + x) * 3];
                px[0] = obj.color.r;
                px[1] = obj.color.g;
                px[2] = obj.color.b;
            }
    }
    return img;
}

inline SampleRecord make_sample(const SynthConfig& cfg, std::uint64_t split, std::size_t index) {
    const auto scene = generate_scene(cfg, split, index);
    SampleRecord s;
    s.id = index;
    s.height = scene.height;
    s.width = scene.width;
    s.image = render_scene(scene, cfg.noise_amplitude);
    s.labels.assign(cfg.num_classes, 0);
    for (const auto& o : scene.objects) {
        s.labels[o.category] = 1;
        s.boxes.push_back(o.box);
    }
    return s;
}

}  // namespace q2l::data
