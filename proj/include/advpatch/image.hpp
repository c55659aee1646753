#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace advpatch {

/// Dense interleaved (HWC) image of doubles. Values are color intensities,
/// nominally in [0, 1].
class Image {
public:
    Image() = default;
    Image(int height, int width, int channels = 3, double fill = 0.0);

    int height() const noexcept { return height_; }
    int width() const noexcept { return width_; }
    int channels() const noexcept { return channels_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double& at(int y, int x, int c) noexcept { return data_[index(y, x, c)]; }
    double at(int y, int x, int c) const noexcept { return data_[index(y, x, c)]; }

    std::size_t index(int y, int x, int c) const noexcept {
        return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
    }

    std::span<double> values() noexcept { return data_; }
    std::span<const double> values() const noexcept { return data_; }
    double* data() noexcept { return data_.data(); }
    const double* data() const noexcept { return data_.data(); }

    bool same_shape(const Image& other) const noexcept {
        return height_ == other.height_ && width_ == other.width_ && channels_ == other.channels_;
    }

    friend bool operator==(const Image&, const Image&) = default;

private:
    int height_ = 0;
    int width_ = 0;
    int channels_ = 0;
    std::vector<double> data_;
};

/// Bilinear resize with half-pixel centers. Resizing to the same shape is exact.
Image resize_bilinear(const Image& src, int out_height, int out_width);

}  // namespace advpatch
