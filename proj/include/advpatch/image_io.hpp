#pragma once

#include <filesystem>
#include <optional>

#include "advpatch/image.hpp"

namespace advpatch {

/// Reads an 8-bit PNG or baseline JPEG as RGB in [0, 1]. Grayscale and
/// alpha inputs are converted (alpha is dropped). Throws std::runtime_error
/// on unreadable or unsupported files.
Image read_image(const std::filesystem::path& path);

/// Writes an 8-bit RGB PNG; values are clamped and rounded to k/255. When
/// `dpi` is set a pHYs chunk is embedded. The write is atomic.
void write_png(const std::filesystem::path& path, const Image& image, std::optional<double> dpi = {});

/// Dots per inch from a PNG's pHYs chunk, if present.
std::optional<double> read_png_dpi(const std::filesystem::path& path);

bool is_image_file(const std::filesystem::path& path);

}  // namespace advpatch
