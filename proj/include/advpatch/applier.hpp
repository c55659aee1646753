#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "advpatch/geometry.hpp"
#include "advpatch/image.hpp"
#include "advpatch/patch.hpp"
#include "advpatch/rng.hpp"

namespace advpatch {

struct TransformConfig {
    double max_rotation_deg = 20.0;
    double scale_lo = 0.8;
    double scale_hi = 1.2;
    double noise_amplitude = 0.1;
    double brightness_lo = -0.1;
    double brightness_hi = 0.1;
    double contrast_lo = 0.8;
    double contrast_hi = 1.2;
    double base_scale = 0.25;  // patch side as a fraction of sqrt(box area)

    /// Throws std::invalid_argument on a negative rotation bound, an inverted
    /// range, noise outside [0, 1] or a non-positive base scale.
    void validate() const;
};

struct TransformParams {
    double rotation_deg = 0.0;
    double scale = 1.0;
    double brightness = 0.0;
    double contrast = 1.0;
    std::uint64_t noise_seed = 0;

    friend bool operator==(const TransformParams&, const TransformParams&) = default;
};

/// Identity photometric and geometric parameters.
inline TransformParams identity_transform() { return {}; }

TransformParams sample_transform(const TransformConfig& config, Rng& rng);

struct Placement {
    double center_x;  // pixels
    double center_y;  // pixels
    double side;      // pixels
};

/// Patch centered on the box, side = base_scale * sqrt(box_w_px * box_h_px).
Placement compute_placement(const BoundingBox& box, double base_scale, int image_width,
                            int image_height);

/// Per-box state of one compositing pass, kept for the backward pass.
struct CompositeRecord {
    Placement placement;
    TransformParams params;
    Image photometric;  // patch after contrast, brightness, noise and clamp
    Image pass_through;  // 1 where the clamp was inactive, else 0
};

struct AppliedPatch {
    Image image;
    std::vector<CompositeRecord> records;
};

/// Composites the transformed patch over every box, in list order. For each
/// box the patch is contrast-scaled, brightness-shifted, noise-added and
/// clamped, then rotated and scaled about the placement center and resampled
/// bilinearly. The footprint fully occludes the image and is clipped at the
/// borders; all other pixels are untouched.
AppliedPatch apply_patch(const Image& image, const Patch& patch, std::span<const BoundingBox> boxes,
                         std::span<const TransformParams> params, const TransformConfig& config);

/// d(loss)/d(patch) given d(loss)/d(output image) from the same pass.
Image apply_patch_backward(const AppliedPatch& applied, const Patch& patch, const Image& grad_output);

/// Uniform noise field in [-amplitude, amplitude] for one patch.
Image patch_noise(int height, int width, double amplitude, std::uint64_t seed);

}  // namespace advpatch
