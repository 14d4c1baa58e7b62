#pragma once

// Cross-attention rows rendered as 8-bit grayscale maps.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace q2l::app {

enum class Upsample { nearest, bilinear };

struct GrayImage {
    std::size_t height = 0, width = 0;
    std::vector<std::uint8_t> pixels;
};

/// v / scale clipped to [0, 1].
inline std::vector<double> scale_and_clip(std::span<const double> row, double scale) {
    if (!(scale > 0)) throw std::invalid_argument("attention scale must be positive");
    std::vector<double> out(row.size());
    for (std::size_t i = 0; i < row.size(); ++i) out[i] = std::clamp(row[i] / scale, 0.0, 1.0);
    return out;
}

/// Grid (gh x gw, row-major) to out_h x out_w. Nearest maps pixel y to cell
/// floor(y * gh / out_h). Bilinear samples at pixel centers, edges clamped.
inline std::vector<double> upsample(std::span<const double> grid, std::size_t gh, std::size_t gw, std::size_t out_h,
                                    std::size_t out_w, Upsample mode) {
    if (grid.size() != gh * gw || gh == 0 || gw == 0)
        throw std::invalid_argument("upsample: grid has " + std::to_string(grid.size()) + " values, expected " +
                                    std::to_string(gh) + "x" + std::to_string(gw));
    std::vector<double> out(out_h * out_w);
    for (std::size_t y = 0; y < out_h; ++y)
        for (std::size_t x = 0; x < out_w; ++x) {
            if (mode == Upsample::nearest) {
                out[y * out_w + x] = grid[(y * gh / out_h) * gw + x * gw / out_w];
                continue;
            }
            const double sy = std::clamp((y + 0.5) * gh / out_h - 0.5, 0.0, gh - 1.0);
            const double sx = std::clamp((x + 0.5) * gw / out_w - 0.5, 0.0, gw - 1.0);
            const auto y0 = static_cast<std::size_t>(sy), x0 = static_cast<std::size_t>(sx);
            const std::size_t y1 = std::min(y0 + 1, gh - 1), x1 = std::min(x0 + 1, gw - 1);
            const double fy = sy - y0, fx = sx - x0;
            const double top = grid[y0 * gw + x0] * (1 - fx) + grid[y0 * gw + x1] * fx;
            const double bottom = grid[y1 * gw + x0] * (1 - fx) + grid[y1 * gw + x1] * fx;
            out[y * out_w + x] = top * (1 - fy) + bottom * fy;
        }
    return out;
}

/// round(255 * v) for v in [0, 1].
inline GrayImage quantize(std::span<const double> v, std::size_t height, std::size_t width) {
    if (v.size() != height * width) throw std::invalid_argument("quantize: size mismatch");
    GrayImage img{height, width, std::vector<std::uint8_t>(v.size())};
    for (std::size_t i = 0; i < v.size(); ++i)
        img.pixels[i] = static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(v[i], 0.0, 1.0)));
    return img;
}

struct LabelMaps {
    std::vector<std::vector<double>> heads;  // scaled, clipped, upsampled; before rounding
    std::vector<double> mean;                // pixelwise mean of `heads`
};

/// `maps` is n_heads x K x (gh*gw), row-major, as produced by the decoder.
inline LabelMaps render_label_maps(std::span<const double> maps, std::size_t heads, std::size_t classes,
                                   std::size_t label, std::size_t gh, std::size_t gw, std::size_t out_h,
                                   std::size_t out_w, double scale, Upsample mode) {
    if (label >= classes)
        throw std::invalid_argument("label id " + std::to_string(label) + " out of range for " +
                                    std::to_string(classes) + " categories");
    const std::size_t hw = gh * gw;
    if (maps.size() != heads * classes * hw) throw std::invalid_argument("render_label_maps: map size mismatch");
    LabelMaps out;
    out.mean.assign(out_h * out_w, 0.0);
    for (std::size_t h = 0; h < heads; ++h) {
        const auto row = maps.subspan((h * classes + label) * hw, hw);
        out.heads.push_back(upsample(scale_and_clip(row, scale), gh, gw, out_h, out_w, mode));
        for (std::size_t i = 0; i < out.mean.size(); ++i) out.mean[i] += out.heads.back()[i];
    }
    for (auto& v : out.mean) v /= static_cast<double>(heads);
    return out;
}

/// Binary PGM (P5, maxval 255).
inline void write_pgm(const std::filesystem::path& path, const GrayImage& img) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << "P5\n" << img.width << ' ' << img.height << "\n255\n";
    os.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
    if (!os) throw std::runtime_error("write failed: " + path.string());
}

inline GrayImage read_pgm(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    std::string magic;
    GrayImage img;
    int maxval = 0;
    if (!(is >> magic >> img.width >> img.height >> maxval) || magic != "P5" || maxval != 255)
        throw std::runtime_error(path.string() + ": not an 8-bit binary PGM");
    is.get();
    img.pixels.resize(img.width * img.height);
    is.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
    if (!is) throw std::runtime_error(path.string() + ": truncated PGM");
    return img;
}

}  // namespace q2l::app
