#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "advpatch/image.hpp"

namespace advpatch {

/// The optimized variable: an H x W RGB image whose values stay in [0, 1].
/// NaN is mapped to 0 by the clamp.
class Patch {
public:
    Patch() = default;
    Patch(int height, int width, double fill = 0.5);

    /// Clamps `pixels` (must have 3 channels).
    static Patch from_image(Image pixels);

    int height() const noexcept { return pixels_.height(); }
    int width() const noexcept { return pixels_.width(); }
    const Image& pixels() const noexcept { return pixels_; }
    std::span<const double> values() const noexcept { return pixels_.values(); }

    /// Mutates the raw values, then re-establishes the [0, 1] invariant.
    template <typename Fn>
    void update(Fn&& fn) {
        fn(pixels_.values());
        normalize();
    }

    friend bool operator==(const Patch&, const Patch&) = default;

private:
    void normalize();

    Image pixels_;
};

/// Non-empty set of printable RGB colors, stored as planes for the kernels.
class PrintableColorSet {
public:
    explicit PrintableColorSet(std::span<const std::array<double, 3>> colors);

    std::size_t size() const noexcept { return red_.size(); }
    std::array<double, 3> color(std::size_t i) const { return {red_[i], green_[i], blue_[i]}; }

    const double* red() const noexcept { return red_.data(); }
    const double* green() const noexcept { return green_.data(); }
    const double* blue() const noexcept { return blue_.data(); }

private:
    std::vector<double> red_;
    std::vector<double> green_;
    std::vector<double> blue_;
};

struct LossWeights {
    double alpha = 0.01;
    double beta = 2.5;
};

struct LossBreakdown {
    double nps = 0.0;
    double tv = 0.0;
    double obj = 0.0;
    double total = 0.0;
};

enum class InitMode { Random, Gray };

Patch init_patch(int height, int width, InitMode mode, std::uint64_t seed);

/// Sum over pixels of the Euclidean RGB distance to the nearest printable
/// color. When `grad` is non-null it receives d(loss)/d(pixel); pixels that
/// coincide with a printable color get a zero subgradient.
double nps_loss(const Image& pixels, const PrintableColorSet& colors, Image* grad = nullptr);
double nps_loss(const Patch& patch, const PrintableColorSet& colors, Image* grad = nullptr);

/// Isotropic total variation, per channel, summed over channels. Differences
/// that would step past the last row or column are omitted. The value is
/// exact; the gradient uses sqrt(d^2 + 1e-8) so flat regions get 0.
double tv_loss(const Image& pixels, Image* grad = nullptr);
double tv_loss(const Patch& patch, Image* grad = nullptr);

inline constexpr double kTvGradientEpsilon = 1e-8;

LossBreakdown total_loss(double nps, double tv, double obj, const LossWeights& weights);

/// Projects every value to [0, 1].
Patch clamp_patch(Image pixels);

// Sidecar: "APF1", u32 height, u32 width, u32 channels, then float32 values
// in row-major HWC order. All little-endian.
void write_patch_block(std::vector<std::uint8_t>& out, const Image& values);
Image read_patch_block(std::span<const std::uint8_t> bytes, std::size_t& offset);

void save_patch_sidecar(const std::filesystem::path& path, const Patch& patch);
Patch load_patch_sidecar(const std::filesystem::path& path);

/// One "r g b" triple per line; blank lines and '#' comments are skipped.
PrintableColorSet load_printable_colors(const std::filesystem::path& path);

}  // namespace advpatch
