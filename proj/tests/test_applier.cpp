#include <algorithm>
#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "advpatch/applier.hpp"
#include "test_support.hpp"

namespace advpatch {
namespace {

using testing::random_image;
using testing::relative_error;

TransformConfig no_noise() {
    TransformConfig c;
    c.noise_amplitude = 0.0;
    return c;
}

// Reference sampler for an unrotated, unscaled composite: the patch square of
// side `side` centred at (cx, cy), sampled at pixel centres with bilinear
// interpolation and edge clamping.
double reference_sample(const Image& patch, double side, double cx, double cy, int x, int y, int c,
                        bool& inside) {
    const int n = patch.height();
    const double px_per_img = n / side;
    const double u = (x + 0.5 - (cx - side / 2)) * px_per_img - 0.5;
    const double v = (y + 0.5 - (cy - side / 2)) * px_per_img - 0.5;
    inside = u >= -0.5 && u < n - 0.5 && v >= -0.5 && v < n - 0.5;
    if (!inside) {
        return 0.0;
    }
    auto at = [&](int yy, int xx) {
        return patch.at(std::clamp(yy, 0, n - 1), std::clamp(xx, 0, n - 1), c);
    };
    const double fu = std::floor(u);
    const double fv = std::floor(v);
    const double a = u - fu;
    const double b = v - fv;
    const int iu = static_cast<int>(fu);
    const int iv = static_cast<int>(fv);
    return (1 - a) * (1 - b) * at(iv, iu) + a * (1 - b) * at(iv, iu + 1) + (1 - a) * b * at(iv + 1, iu) +
           a * b * at(iv + 1, iu + 1);
}

TEST(SampleTransform, CollapsedRangesGiveExactValues) {
    TransformConfig c;
    c.max_rotation_deg = 0.0;
    c.scale_lo = c.scale_hi = 1.1;
    c.brightness_lo = c.brightness_hi = -0.05;
    c.contrast_lo = c.contrast_hi = 0.9;
    Rng rng(1);
    const TransformParams p = sample_transform(c, rng);
    EXPECT_EQ(p.rotation_deg, 0.0);
    EXPECT_EQ(p.scale, 1.1);
    EXPECT_EQ(p.brightness, -0.05);
    EXPECT_EQ(p.contrast, 0.9);
}

TEST(SampleTransform, DefaultDrawsStayInRange) {
    const TransformConfig c;
    EXPECT_EQ(c.max_rotation_deg, 20.0);
    Rng rng(2);
    double min_rot = 0.0;
    double max_rot = 0.0;
    for (int i = 0; i < 10000; ++i) {
        const TransformParams p = sample_transform(c, rng);
        ASSERT_GE(p.rotation_deg, -20.0);
        ASSERT_LE(p.rotation_deg, 20.0);
        ASSERT_GE(p.scale, c.scale_lo);
        ASSERT_LE(p.scale, c.scale_hi);
        ASSERT_GE(p.brightness, c.brightness_lo);
        ASSERT_LE(p.brightness, c.brightness_hi);
        ASSERT_GE(p.contrast, c.contrast_lo);
        ASSERT_LE(p.contrast, c.contrast_hi);
        min_rot = std::min(min_rot, p.rotation_deg);
        max_rot = std::max(max_rot, p.rotation_deg);
    }
    // Both directions are actually used.
    EXPECT_LT(min_rot, -19.0);
    EXPECT_GT(max_rot, 19.0);
}

TEST(SampleTransform, SameStateSameDraw) {
    Rng a(77);
    Rng b(77);
    EXPECT_EQ(sample_transform(TransformConfig{}, a), sample_transform(TransformConfig{}, b));
}

TEST(SampleTransform, InvalidConfigIsRejected) {
    TransformConfig c;
    c.scale_lo = 1.3;
    Rng rng(0);
    EXPECT_THROW(sample_transform(c, rng), std::invalid_argument);
    c = TransformConfig{};
    c.max_rotation_deg = -1.0;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = TransformConfig{};
    c.base_scale = 0.0;
    EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(ComputePlacement, CenterAndAreaScaledSide) {
    const Placement p = compute_placement({0.5, 0.5, 0.4, 0.8}, 0.25, 416, 416);
    EXPECT_DOUBLE_EQ(p.center_x, 208.0);
    EXPECT_DOUBLE_EQ(p.center_y, 208.0);
    EXPECT_NEAR(p.side, 0.25 * std::sqrt(166.4 * 332.8), 1e-12);
    EXPECT_NEAR(p.side, 58.83, 0.005);
}

TEST(ComputePlacement, SquareBoxGivesExactSide) {
    EXPECT_EQ(compute_placement({0.5, 0.5, 0.5, 0.5}, 1.0, 100, 100).side, 50.0);
}

TEST(ComputePlacement, RejectsDegenerateInputs) {
    EXPECT_THROW(compute_placement({0.5, 0.5, 0.4, 0.8}, 0.0, 416, 416), std::invalid_argument);
    EXPECT_THROW(compute_placement({0.5, 0.5, 0.0, 0.8}, 0.25, 416, 416), std::invalid_argument);
}

TEST(ApplyPatch, NoBoxesLeavesImageUnchanged) {
    const Image img = random_image(32, 32, 3, 1);
    const AppliedPatch out = apply_patch(img, init_patch(8, 8, InitMode::Random, 2), {}, {}, TransformConfig{});
    EXPECT_EQ(out.image, img);
    EXPECT_TRUE(out.records.empty());
}

TEST(ApplyPatch, MismatchedParamsAreRejected) {
    const std::vector<BoundingBox> boxes{{0.5, 0.5, 0.5, 0.5}};
    EXPECT_THROW(apply_patch(Image(32, 32, 3), Patch(4, 4), boxes, {}, TransformConfig{}), std::invalid_argument);
}

TEST(ApplyPatch, IdentityMatchesReferenceCompositor) {
    const Image img = random_image(32, 32, 3, 3);
    const Patch patch = init_patch(6, 6, InitMode::Random, 4);
    const std::vector<BoundingBox> boxes{{0.5, 0.5, 0.5, 0.5}};
    const std::vector<TransformParams> params{identity_transform()};
    TransformConfig cfg = no_noise();
    cfg.base_scale = 1.0;  // side 16 px
    const AppliedPatch out = apply_patch(img, patch, boxes, params, cfg);
    int inside_count = 0;
    for (int y = 0; y < 32; ++y) {
        for (int x = 0; x < 32; ++x) {
            for (int c = 0; c < 3; ++c) {
                bool inside = false;
                const double expect = reference_sample(patch.pixels(), 16.0, 16.0, 16.0, x, y, c, inside);
                if (inside) {
                    EXPECT_NEAR(out.image.at(y, x, c), expect, 1e-12) << x << "," << y;
                    inside_count += c == 0;
                } else {
                    EXPECT_EQ(out.image.at(y, x, c), img.at(y, x, c)) << x << "," << y;
                }
            }
        }
    }
    EXPECT_EQ(inside_count, 16 * 16);
    EXPECT_EQ(out.image.at(0, 0, 0), img.at(0, 0, 0));
}

TEST(ApplyPatch, BoxOffLeftEdgeIsClipped) {
    const Image img = random_image(32, 32, 3, 5);
    const Patch patch = init_patch(6, 6, InitMode::Random, 6);
    const std::vector<BoundingBox> boxes{{0.05, 0.5, 0.5, 0.5}};
    const std::vector<TransformParams> params{identity_transform()};
    TransformConfig cfg = no_noise();
    cfg.base_scale = 1.0;
    const AppliedPatch out = apply_patch(img, patch, boxes, params, cfg);
    ASSERT_TRUE(out.image.same_shape(img));
    for (int y = 0; y < 32; ++y) {
        for (int x = 0; x < 32; ++x) {
            for (int c = 0; c < 3; ++c) {
                const double v = out.image.at(y, x, c);
                ASSERT_GE(v, 0.0);
                ASSERT_LE(v, 1.0);
                bool inside = false;
                const double expect = reference_sample(patch.pixels(), 16.0, 1.6, 16.0, x, y, c, inside);
                if (inside) {
                    EXPECT_NEAR(v, expect, 1e-12);
                } else {
                    EXPECT_EQ(v, img.at(y, x, c));
                }
            }
        }
    }
}

TEST(ApplyPatch, ConstantPatchGivesConstantInterior) {
    const Image img = random_image(64, 64, 3, 7);
    const Patch patch(10, 10, 0.3);
    const std::vector<BoundingBox> boxes{{0.5, 0.5, 0.5, 0.5}};
    TransformParams p = identity_transform();
    p.rotation_deg = 13.0;
    p.scale = 1.1;
    TransformConfig cfg = no_noise();
    cfg.base_scale = 0.8;
    const std::vector<TransformParams> params{p};
    const AppliedPatch out = apply_patch(img, patch, boxes, params, cfg);
    // Disc well inside the rotated square footprint (side 28.16 px).
    for (int y = 0; y < 64; ++y) {
        for (int x = 0; x < 64; ++x) {
            if (std::hypot(x + 0.5 - 32.0, y + 0.5 - 32.0) < 12.0) {
                for (int c = 0; c < 3; ++c) {
                    EXPECT_EQ(out.image.at(y, x, c), 0.3);
                }
            }
        }
    }
}

TEST(ApplyPatch, PhotometricOrderContrastBrightnessClamp) {
    const Patch patch(4, 4, 0.6);
    const std::vector<BoundingBox> boxes{{0.5, 0.5, 1.0, 1.0}};
    TransformParams p = identity_transform();
    p.contrast = 1.5;
    p.brightness = 0.05;
    TransformConfig cfg = no_noise();
    cfg.base_scale = 0.5;
    const std::vector<TransformParams> params{p};
    const AppliedPatch out = apply_patch(Image(32, 32, 3), patch, boxes, params, cfg);
    EXPECT_DOUBLE_EQ(out.image.at(16, 16, 0), 0.6 * 1.5 + 0.05);
    p.brightness = 0.2;
    const std::vector<TransformParams> hot{p};
    const AppliedPatch clipped = apply_patch(Image(32, 32, 3), patch, boxes, hot, cfg);
    EXPECT_EQ(clipped.image.at(16, 16, 0), 1.0);
    EXPECT_EQ(clipped.records[0].pass_through.at(0, 0, 0), 0.0);
}

TEST(ApplyPatch, NoiseIsBoundedAndSeeded) {
    const Image n1 = patch_noise(8, 8, 0.1, 5);
    EXPECT_EQ(n1, patch_noise(8, 8, 0.1, 5));
    EXPECT_NE(n1, patch_noise(8, 8, 0.1, 6));
    for (double v : n1.values()) {
        EXPECT_LE(std::abs(v), 0.1);
    }
}

TEST(ApplyPatch, RandomTransformsKeepRangeAndUntouchedPixels) {
    const TransformConfig cfg;
    Rng rng(8);
    for (int trial = 0; trial < 20; ++trial) {
        const Image img = random_image(64, 96, 3, 100 + trial);
        const Patch patch = init_patch(12, 12, InitMode::Random, 200 + trial);
        std::vector<BoundingBox> boxes;
        std::vector<TransformParams> params;
        for (int b = 0; b < 3; ++b) {
            boxes.push_back({uniform01(rng), uniform01(rng), uniform(rng, 0.1, 0.5), uniform(rng, 0.1, 0.5)});
            params.push_back(sample_transform(cfg, rng));
        }
        const AppliedPatch out = apply_patch(img, patch, boxes, params, cfg);
        for (int y = 0; y < img.height(); ++y) {
            for (int x = 0; x < img.width(); ++x) {
                bool near_any = false;
                for (const auto& rec : out.records) {
                    const double reach = rec.placement.side * rec.params.scale * std::sqrt(0.5) + 1.5;
                    near_any = near_any || std::hypot(x + 0.5 - rec.placement.center_x,
                                                      y + 0.5 - rec.placement.center_y) <= reach;
                }
                for (int c = 0; c < 3; ++c) {
                    const double v = out.image.at(y, x, c);
                    ASSERT_GE(v, 0.0);
                    ASSERT_LE(v, 1.0);
                    if (!near_any) {
                        ASSERT_EQ(v, img.at(y, x, c));
                    }
                }
            }
        }
    }
}

TEST(ApplyPatch, LaterBoxesOcclude) {
    const std::vector<BoundingBox> boxes{{0.5, 0.5, 0.5, 0.5}, {0.5, 0.5, 0.5, 0.5}};
    const std::vector<TransformParams> params{identity_transform(), identity_transform()};
    TransformConfig cfg = no_noise();
    cfg.base_scale = 1.0;
    TransformParams bright = identity_transform();
    bright.brightness = 0.1;
    const std::vector<TransformParams> mixed{identity_transform(), bright};
    const AppliedPatch out = apply_patch(Image(32, 32, 3), Patch(4, 4, 0.5), boxes, mixed, cfg);
    EXPECT_DOUBLE_EQ(out.image.at(16, 16, 0), 0.6);
}

TEST(ApplyPatchBackward, MatchesFiniteDifferences) {
    const Image img = random_image(48, 48, 3, 9);
    const Patch patch = init_patch(8, 8, InitMode::Random, 10);
    Rng rng(11);
    const TransformConfig cfg;
    const std::vector<BoundingBox> boxes{{0.45, 0.5, 0.5, 0.6}, {0.6, 0.55, 0.4, 0.5}};
    const std::vector<TransformParams> params{sample_transform(cfg, rng), sample_transform(cfg, rng)};
    const Image weights = random_image(48, 48, 3, 12, -1.0, 1.0);
    auto objective = [&](const Patch& p) {
        const AppliedPatch out = apply_patch(img, p, boxes, params, cfg);
        double s = 0.0;
        for (std::size_t i = 0; i < out.image.size(); ++i) {
            s += out.image.values()[i] * weights.values()[i];
        }
        return s;
    };
    const AppliedPatch applied = apply_patch(img, patch, boxes, params, cfg);
    const Image grad = apply_patch_backward(applied, patch, weights);
    ASSERT_EQ(grad.height(), 8);
    const double h = 1e-6;
    int checked = 0;
    for (std::size_t i = 0; i < patch.values().size() && checked < 40; ++i) {
        const double base = patch.values()[i];
        if (base < 2 * h || base > 1 - 2 * h) {
            continue;
        }
        Patch plus = patch;
        Patch minus = patch;
        plus.update([&](std::span<double> v) { v[i] += h; });
        minus.update([&](std::span<double> v) { v[i] -= h; });
        const double fd = (objective(plus) - objective(minus)) / (2 * h);
        if (std::abs(fd) < 1e-9 && std::abs(grad.values()[i]) < 1e-9) {
            continue;
        }
        EXPECT_LT(relative_error(grad.values()[i], fd), 1e-5) << "index " << i;
        ++checked;
    }
    EXPECT_GT(checked, 10);
}

}  // namespace
}  // namespace advpatch
