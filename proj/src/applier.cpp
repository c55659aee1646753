#include "advpatch/applier.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace advpatch {
namespace {

void check_range(double lo, double hi, const char* name) {
    if (!(lo <= hi)) {
        throw std::invalid_argument(std::string("transform range ") + name + " has lo > hi");
    }
}

// Maps image pixels to continuous patch coordinates for one composite.
struct Footprint {
    double cx, cy;
    double cos_t, sin_t;
    double inv_k;  // patch pixels per image pixel
    int patch_w, patch_h;
    int x_begin, x_end, y_begin, y_end;

    Footprint(const Placement& pl, const TransformParams& tp, int patch_h_, int patch_w_, int img_w,
              int img_h)
        : cx(pl.center_x), cy(pl.center_y), patch_w(patch_w_), patch_h(patch_h_) {
        const double theta = tp.rotation_deg * std::numbers::pi / 180.0;
        cos_t = std::cos(theta);
        sin_t = std::sin(theta);
        const double k = pl.side * tp.scale / patch_h;
        inv_k = 1.0 / k;
        const double hw = 0.5 * k * patch_w;
        const double hh = 0.5 * k * patch_h;
        const double ext_x = std::abs(cos_t) * hw + std::abs(sin_t) * hh;
        const double ext_y = std::abs(sin_t) * hw + std::abs(cos_t) * hh;
        x_begin = std::clamp(static_cast<int>(std::floor(cx - ext_x)), 0, img_w);
        x_end = std::clamp(static_cast<int>(std::ceil(cx + ext_x)) + 1, 0, img_w);
        y_begin = std::clamp(static_cast<int>(std::floor(cy - ext_y)), 0, img_h);
        y_end = std::clamp(static_cast<int>(std::ceil(cy + ext_y)) + 1, 0, img_h);
    }

    // Bilinear taps for pixel (x, y); false when the pixel lies outside.
    bool taps(int x, int y, int& x0, int& x1, int& y0, int& y1, double& wx, double& wy) const {
        const double dx = x + 0.5 - cx;
        const double dy = y + 0.5 - cy;
        const double u = (cos_t * dx + sin_t * dy) * inv_k + 0.5 * patch_w - 0.5;
        const double v = (-sin_t * dx + cos_t * dy) * inv_k + 0.5 * patch_h - 0.5;
        if (!(u >= -0.5 && u < patch_w - 0.5 && v >= -0.5 && v < patch_h - 0.5)) {
            return false;
        }
        const double uc = std::clamp(u, 0.0, patch_w - 1.0);
        const double vc = std::clamp(v, 0.0, patch_h - 1.0);
        x0 = static_cast<int>(uc);
        y0 = static_cast<int>(vc);
        x1 = std::min(x0 + 1, patch_w - 1);
        y1 = std::min(y0 + 1, patch_h - 1);
        wx = uc - x0;
        wy = vc - y0;
        return true;
    }
};

}  // namespace

void TransformConfig::validate() const {
    if (!(max_rotation_deg >= 0.0)) {
        throw std::invalid_argument("transform max_rotation_deg must be >= 0");
    }
    check_range(scale_lo, scale_hi, "scale");
    check_range(brightness_lo, brightness_hi, "brightness");
    check_range(contrast_lo, contrast_hi, "contrast");
    if (!(scale_lo > 0.0)) {
        throw std::invalid_argument("transform scale_lo must be > 0");
    }
    if (!(noise_amplitude >= 0.0 && noise_amplitude <= 1.0)) {
        throw std::invalid_argument("transform noise_amplitude must be in [0, 1]");
    }
    if (!(base_scale > 0.0)) {
        throw std::invalid_argument("transform base_scale must be > 0");
    }
}

TransformParams sample_transform(const TransformConfig& config, Rng& rng) {
    config.validate();
    TransformParams p;
    p.rotation_deg = uniform(rng, -config.max_rotation_deg, config.max_rotation_deg);
    p.scale = uniform(rng, config.scale_lo, config.scale_hi);
    p.brightness = uniform(rng, config.brightness_lo, config.brightness_hi);
    p.contrast = uniform(rng, config.contrast_lo, config.contrast_hi);
    p.noise_seed = rng();
    return p;
}

Placement compute_placement(const BoundingBox& box, double base_scale, int image_width,
                            int image_height) {
    if (!(base_scale > 0.0)) {
        throw std::invalid_argument("placement base_scale must be > 0");
    }
    const double w_px = box.w * image_width;
    const double h_px = box.h * image_height;
    if (!(w_px > 0.0 && h_px > 0.0)) {
        throw std::invalid_argument("placement box has zero area");
    }
    return {box.cx * image_width, box.cy * image_height, base_scale * std::sqrt(w_px * h_px)};
}

Image patch_noise(int height, int width, double amplitude, std::uint64_t seed) {
    Image noise(height, width, 3);
    if (amplitude > 0.0) {
        Rng rng(seed);
        for (double& v : noise.values()) {
            v = uniform(rng, -amplitude, amplitude);
        }
    }
    return noise;
}

AppliedPatch apply_patch(const Image& image, const Patch& patch, std::span<const BoundingBox> boxes,
                         std::span<const TransformParams> params, const TransformConfig& config) {
    if (boxes.size() != params.size()) {
        throw std::invalid_argument("apply_patch: " + std::to_string(boxes.size()) + " boxes but " +
                                    std::to_string(params.size()) + " transform params");
    }
    if (image.channels() != 3) {
        throw std::invalid_argument("apply_patch: image must be RGB");
    }
    AppliedPatch out{image, {}};
    out.records.reserve(boxes.size());
    const int ph = patch.height();
    const int pw = patch.width();
    for (std::size_t b = 0; b < boxes.size(); ++b) {
        const TransformParams& tp = params[b];
        CompositeRecord rec;
        rec.placement = compute_placement(boxes[b], config.base_scale, image.width(), image.height());
        rec.params = tp;
        rec.photometric = Image(ph, pw, 3);
        rec.pass_through = Image(ph, pw, 3);
        const Image noise = patch_noise(ph, pw, config.noise_amplitude, tp.noise_seed);
        const auto src = patch.values();
        auto dst = rec.photometric.values();
        auto pass = rec.pass_through.values();
        for (std::size_t i = 0; i < src.size(); ++i) {
            const double v = tp.contrast * src[i] + tp.brightness + noise.data()[i];
            const bool inside = v >= 0.0 && v <= 1.0;
            dst[i] = std::clamp(v, 0.0, 1.0);
            pass[i] = inside ? 1.0 : 0.0;
        }

        const Footprint fp(rec.placement, tp, ph, pw, image.width(), image.height());
        const Image& q = rec.photometric;
        for (int y = fp.y_begin; y < fp.y_end; ++y) {
            for (int x = fp.x_begin; x < fp.x_end; ++x) {
                int x0, x1, y0, y1;
                double wx, wy;
                if (!fp.taps(x, y, x0, x1, y0, y1, wx, wy)) {
                    continue;
                }
                for (int c = 0; c < 3; ++c) {
                    const double top = q.at(y0, x0, c) + wx * (q.at(y0, x1, c) - q.at(y0, x0, c));
                    const double bot = q.at(y1, x0, c) + wx * (q.at(y1, x1, c) - q.at(y1, x0, c));
                    out.image.at(y, x, c) = top + wy * (bot - top);
                }
            }
        }
        out.records.push_back(std::move(rec));
    }
    return out;
}

Image apply_patch_backward(const AppliedPatch& applied, const Patch& patch, const Image& grad_output) {
    if (!grad_output.same_shape(applied.image)) {
        throw std::invalid_argument("apply_patch_backward: gradient shape mismatch");
    }
    const int ph = patch.height();
    const int pw = patch.width();
    const int img_w = applied.image.width();
    const int img_h = applied.image.height();
    Image grad_patch(ph, pw, 3);
    // Later composites overwrite earlier ones, so walk them in reverse and let
    // each output pixel feed only the last box that wrote it.
    std::vector<unsigned char> claimed(static_cast<std::size_t>(img_w) * img_h, 0);
    for (std::size_t b = applied.records.size(); b-- > 0;) {
        const CompositeRecord& rec = applied.records[b];
        Image grad_q(ph, pw, 3);
        const Footprint fp(rec.placement, rec.params, ph, pw, img_w, img_h);
        for (int y = fp.y_begin; y < fp.y_end; ++y) {
            for (int x = fp.x_begin; x < fp.x_end; ++x) {
                unsigned char& mark = claimed[static_cast<std::size_t>(y) * img_w + x];
                if (mark) {
                    continue;
                }
                int x0, x1, y0, y1;
                double wx, wy;
                if (!fp.taps(x, y, x0, x1, y0, y1, wx, wy)) {
                    continue;
                }
                mark = 1;
                for (int c = 0; c < 3; ++c) {
                    const double g = grad_output.at(y, x, c);
                    if (g == 0.0) {
                        continue;
                    }
                    grad_q.at(y0, x0, c) += g * (1.0 - wy) * (1.0 - wx);
                    grad_q.at(y0, x1, c) += g * (1.0 - wy) * wx;
                    grad_q.at(y1, x0, c) += g * wy * (1.0 - wx);
                    grad_q.at(y1, x1, c) += g * wy * wx;
                }
            }
        }
        const auto gq = grad_q.values();
        const auto pass = rec.pass_through.values();
        auto gp = grad_patch.values();
        for (std::size_t i = 0; i < gp.size(); ++i) {
            gp[i] += gq[i] * pass[i] * rec.params.contrast;
        }
    }
    return grad_patch;
}

}  // namespace advpatch
