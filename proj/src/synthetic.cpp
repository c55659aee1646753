#include "advpatch/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>

#include <fmt/format.h>

#include "advpatch/data.hpp"
#include "advpatch/image_io.hpp"
#include "advpatch/rng.hpp"

namespace advpatch {

Image synthetic_scene(std::uint64_t seed, const SceneOptions& options) {
    if (options.width < 16 || options.height < 16 || options.min_figures < 0 ||
        options.max_figures < options.min_figures || !(options.figure_height_lo > 0.0) ||
        options.figure_height_hi < options.figure_height_lo || options.figure_height_hi > 1.0) {
        throw std::invalid_argument("invalid scene options");
    }
    Rng rng(seed);
    Image img(options.height, options.width, 3);

    // Low-amplitude gradient background.
    std::array<double, 3> base{};
    std::array<double, 3> slope{};
    for (int c = 0; c < 3; ++c) {
        base[c] = uniform(rng, 0.45, 0.55);
        slope[c] = uniform(rng, -0.05, 0.05);
    }
    for (int y = 0; y < img.height(); ++y) {
        for (int x = 0; x < img.width(); ++x) {
            const double t = (static_cast<double>(x) / img.width() + static_cast<double>(y) / img.height()) * 0.5;
            for (int c = 0; c < 3; ++c) {
                img.at(y, x, c) = base[c] + slope[c] * (t - 0.5);
            }
        }
    }

    const int n = options.min_figures +
                  static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(options.max_figures - options.min_figures + 1)));
    for (int f = 0; f < n; ++f) {
        const int fh = static_cast<int>(uniform(rng, options.figure_height_lo, options.figure_height_hi) * img.height());
        const int fw = std::max(4, static_cast<int>(fh * uniform(rng, 0.35, 0.5)));
        const int x0 = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(img.width() - fw)));
        const int y0 = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(img.height() - fh)));
        // Horizontal bands of saturated color with per-pixel speckle.
        const int bands = 3 + static_cast<int>(uniform_index(rng, 3));
        std::vector<std::array<double, 3>> colors(static_cast<std::size_t>(bands));
        for (auto& col : colors) {
            for (double& v : col) {
                v = uniform01(rng) < 0.5 ? uniform(rng, 0.0, 0.2) : uniform(rng, 0.8, 1.0);
            }
        }
        for (int y = y0; y < y0 + fh; ++y) {
            const auto& col = colors[static_cast<std::size_t>((y - y0) * bands / fh)];
            for (int x = x0; x < x0 + fw; ++x) {
                for (int c = 0; c < 3; ++c) {
                    img.at(y, x, c) = std::clamp(col[c] + uniform(rng, -0.15, 0.15), 0.0, 1.0);
                }
            }
        }
    }
    for (double& v : img.values()) {
        v = std::round(v * 255.0) / 255.0;
    }
    return img;
}

std::vector<std::filesystem::path> write_synthetic_scenes(const std::filesystem::path& dir, int count,
                                                          std::uint64_t seed, const SceneOptions& options) {
    std::vector<std::filesystem::path> paths;
    for (int i = 0; i < count; ++i) {
        const auto path = dir / fmt::format("scene_{:03d}.png", i);
        write_png(path, synthetic_scene(derive_seed(seed, {static_cast<std::uint64_t>(i)}), options));
        paths.push_back(path);
    }
    return paths;
}

std::vector<std::filesystem::path> write_detectable_scenes(const DetectorAdapter& detector,
                                                           const std::filesystem::path& dir, int count,
                                                           std::uint64_t seed, const SceneOptions& options,
                                                           int square_size, double conf_threshold, double nms_iou,
                                                           int max_attempts) {
    const Letterbox lb = letterbox_geometry(options.width, options.height, square_size);
    std::vector<std::filesystem::path> paths;
    for (int i = 0; static_cast<int>(paths.size()) < count; ++i) {
        if (i >= max_attempts) {
            throw std::runtime_error(fmt::format("only {} of {} detectable scenes after {} attempts", paths.size(),
                                                 count, max_attempts));
        }
        const Image img = synthetic_scene(derive_seed(seed, {static_cast<std::uint64_t>(i)}), options);
        if (detect_persons(detector, letterbox_image(img, lb), lb, conf_threshold, nms_iou).empty()) {
            continue;
        }
        const auto path = dir / fmt::format("scene_{:03d}.png", paths.size());
        write_png(path, img);
        paths.push_back(path);
    }
    return paths;
}

}  // namespace advpatch
