#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "advpatch/detector.hpp"
#include "advpatch/image.hpp"

namespace advpatch {

/// Procedural test scenes: a smooth near-gray background with a few upright
/// high-contrast "figures" that the fixture detector responds to.
struct SceneOptions {
    int width = 128;
    int height = 128;
    int min_figures = 1;
    int max_figures = 1;
    // Figure height as a fraction of the image height.
    double figure_height_lo = 0.2;
    double figure_height_hi = 0.35;
};

/// Values are quantized to 8 bits so a PNG round trip is lossless.
Image synthetic_scene(std::uint64_t seed, const SceneOptions& options = {});

/// Writes scene_000.png ... into `dir`; scene i uses derive_seed(seed, {i}).
std::vector<std::filesystem::path> write_synthetic_scenes(const std::filesystem::path& dir, int count,
                                                          std::uint64_t seed, const SceneOptions& options = {});

/// Like write_synthetic_scenes, but keeps only scenes on which `detector`
/// (letterboxed to `square_size`) finds at least one person at
/// `conf_threshold`. Throws std::runtime_error after `max_attempts` draws.
std::vector<std::filesystem::path> write_detectable_scenes(const DetectorAdapter& detector,
                                                           const std::filesystem::path& dir, int count,
                                                           std::uint64_t seed, const SceneOptions& options,
                                                           int square_size, double conf_threshold, double nms_iou,
                                                           int max_attempts = 100000);

}  // namespace advpatch
