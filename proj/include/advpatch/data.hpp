#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "advpatch/detector.hpp"
#include "advpatch/geometry.hpp"
#include "advpatch/image.hpp"

namespace advpatch {

struct LabeledBox {
    BoundingBox box;
    double confidence = 1.0;
    int class_index = 0;

    friend bool operator==(const LabeledBox&, const LabeledBox&) = default;
};

struct LabeledImage {
    std::filesystem::path path;
    Image image;  // letterboxed, square
    std::vector<LabeledBox> boxes;  // letterboxed normalized coordinates
};

enum class Split { Train, Test };

struct Dataset {
    std::vector<LabeledImage> images;
    Split split = Split::Train;

    std::size_t size() const noexcept { return images.size(); }
    bool empty() const noexcept { return images.empty(); }
};

/// Aspect-preserving fit of a src_w x src_h image into a square, centered,
/// padded with mid-gray.
struct Letterbox {
    int square = 0;
    int src_w = 0;
    int src_h = 0;
    int content_w = 0;
    int content_h = 0;
    int pad_x = 0;
    int pad_y = 0;

    BoundingBox to_letterbox(const BoundingBox& b) const;
    BoundingBox from_letterbox(const BoundingBox& b) const;
};

inline constexpr double kLetterboxPad = 0.5;

Letterbox letterbox_geometry(int src_w, int src_h, int square);
Image letterbox_image(const Image& src, const Letterbox& lb);

/// Label lines are "class cx cy w h conf", coordinates normalized to the
/// original image. Numbers use the shortest round-trip representation.
std::string format_labels(std::span<const LabeledBox> boxes);
std::vector<LabeledBox> parse_labels(std::string_view text);
std::vector<LabeledBox> read_label_file(const std::filesystem::path& path);

/// PNG/JPEG files directly inside `dir`, sorted by filename.
std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir);

struct LabelSummary {
    std::size_t images = 0;
    std::size_t boxes = 0;
    std::size_t warnings = 0;
    std::vector<std::string> warning_messages;

    /// {"images":N,"boxes":M,"warnings":K}
    std::string to_json() const;
};

/// Runs the detector over every image in `image_dir` (letterboxed to
/// `square_size`) and writes one "<stem>.txt" of person detections per image
/// into `label_dir`. Unreadable images are skipped and counted as warnings.
LabelSummary generate_pseudo_labels(const DetectorAdapter& detector, const std::filesystem::path& image_dir,
                                    const std::filesystem::path& label_dir, double conf_threshold,
                                    double nms_iou, int square_size);

/// Person detections of one letterboxed image, mapped back to `lb`'s source
/// coordinates.
std::vector<LabeledBox> detect_persons(const DetectorAdapter& detector, const Image& letterboxed,
                                       const Letterbox& lb, double conf_threshold, double nms_iou);

/// Loads and letterboxes every image with its label file. Train splits are
/// shuffled with `seed`; test splits keep filename order. Throws
/// std::runtime_error naming the first missing label file.
Dataset load_dataset(const std::filesystem::path& image_dir, const std::filesystem::path& label_dir,
                     int square_size, std::uint64_t seed, Split split);

/// Consecutive batches covering the dataset once; the last may be partial.
std::vector<std::span<const LabeledImage>> batches(const Dataset& dataset, std::size_t batch_size);

}  // namespace advpatch
