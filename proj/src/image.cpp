#include "advpatch/image.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace advpatch {

Image::Image(int height, int width, int channels, double fill)
    : height_(height), width_(width), channels_(channels) {
    if (height < 0 || width < 0 || channels < 0) {
        throw std::invalid_argument("Image: negative dimension");
    }
    data_.assign(static_cast<std::size_t>(height) * width * channels, fill);
}

Image resize_bilinear(const Image& src, int out_height, int out_width) {
    if (out_height <= 0 || out_width <= 0) {
        throw std::invalid_argument("resize_bilinear: output dimensions must be positive");
    }
    if (src.empty()) {
        throw std::invalid_argument("resize_bilinear: empty source image");
    }
    if (out_height == src.height() && out_width == src.width()) {
        return src;
    }
    const int channels = src.channels();
    Image dst(out_height, out_width, channels);
    const double sy = static_cast<double>(src.height()) / out_height;
    const double sx = static_cast<double>(src.width()) / out_width;
    for (int y = 0; y < out_height; ++y) {
        const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, src.height() - 1.0);
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, src.height() - 1);
        const double wy = fy - y0;
        for (int x = 0; x < out_width; ++x) {
            const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, src.width() - 1.0);
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, src.width() - 1);
            const double wx = fx - x0;
            for (int c = 0; c < channels; ++c) {
                const double top = src.at(y0, x0, c) * (1.0 - wx) + src.at(y0, x1, c) * wx;
                const double bot = src.at(y1, x0, c) * (1.0 - wx) + src.at(y1, x1, c) * wx;
                dst.at(y, x, c) = top * (1.0 - wy) + bot * wy;
            }
        }
    }
    return dst;
}

}  // namespace advpatch
