#pragma once

#include <cmath>
#include <numbers>
#include <string>

#include "q2l/numcore.hpp"

namespace q2l {

/// Fixed 2-D sine/cosine encoding of an H x W grid.
///
/// The first d/2 channels encode the row, the last d/2 the column. Within a
/// half, channel i uses frequency temperature^(-2*floor(i/2)/(d/2)) applied
/// to the coordinate scaled into [0, 2*pi); even channels take the sine, odd
/// channels the cosine.
template <class T>
struct SpatialPositionEncoding {
    std::size_t height = 0, width = 0, channels = 0;
    T temperature = T(10000);
    Tensor<T> table;  // (H*W) x d, raster order, never requires grad

    T at(std::size_t y, std::size_t x, std::size_t c) const { return table.data()[(y * width + x) * channels + c]; }
};

template <class T>
SpatialPositionEncoding<T> sincos_2d(std::size_t h, std::size_t w, std::size_t d, T temperature = T(10000)) {
    if (h == 0 || w == 0) throw ShapeError("sincos_2d: empty grid");
    if (d == 0 || d % 4 != 0)
        throw ShapeError("sincos_2d: width " + std::to_string(d) + " is not divisible by 4");
    const std::size_t half = d / 2;
    std::vector<T> table(h * w * d);
    const double two_pi = 2.0 * std::numbers::pi;
    const auto encode = [&](double coord, std::size_t i) {
        const double freq = std::pow(static_cast<double>(temperature),
                                     2.0 * static_cast<double>(i / 2) / static_cast<double>(half));
        const double arg = coord / freq;
        return static_cast<T>(i % 2 == 0 ? std::sin(arg) : std::cos(arg));
    };
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            T* cell = table.data() + (y * w + x) * d;
            const double cy = two_pi * static_cast<double>(y) / static_cast<double>(h);
            const double cx = two_pi * static_cast<double>(x) / static_cast<double>(w);
            for (std::size_t i = 0; i < half; ++i) {
                cell[i] = encode(cy, i);
                cell[half + i] = encode(cx, i);
            }
        }
    return {h, w, d, temperature, Tensor<T>({h * w, d}, std::move(table))};
}

}  // namespace q2l
