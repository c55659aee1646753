#include "advpatch/data.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "advpatch/image_io.hpp"
#include "advpatch/io_util.hpp"
#include "advpatch/rng.hpp"

namespace advpatch {

BoundingBox Letterbox::to_letterbox(const BoundingBox& b) const {
    const double s = square;
    return {(b.cx * content_w + pad_x) / s, (b.cy * content_h + pad_y) / s, b.w * content_w / s,
            b.h * content_h / s};
}

BoundingBox Letterbox::from_letterbox(const BoundingBox& b) const {
    const double s = square;
    return {(b.cx * s - pad_x) / content_w, (b.cy * s - pad_y) / content_h, b.w * s / content_w,
            b.h * s / content_h};
}

Letterbox letterbox_geometry(int src_w, int src_h, int square) {
    if (src_w < 1 || src_h < 1 || square < 1) {
        throw std::invalid_argument("letterbox: dimensions must be positive");
    }
    const double scale = std::min(static_cast<double>(square) / src_w, static_cast<double>(square) / src_h);
    Letterbox lb;
    lb.square = square;
    lb.src_w = src_w;
    lb.src_h = src_h;
    lb.content_w = std::clamp(static_cast<int>(std::lround(src_w * scale)), 1, square);
    lb.content_h = std::clamp(static_cast<int>(std::lround(src_h * scale)), 1, square);
    lb.pad_x = (square - lb.content_w) / 2;
    lb.pad_y = (square - lb.content_h) / 2;
    return lb;
}

Image letterbox_image(const Image& src, const Letterbox& lb) {
    if (src.width() != lb.src_w || src.height() != lb.src_h) {
        throw std::invalid_argument("letterbox: geometry does not match image");
    }
    const Image content = resize_bilinear(src, lb.content_h, lb.content_w);
    Image out(lb.square, lb.square, src.channels(), kLetterboxPad);
    for (int y = 0; y < lb.content_h; ++y) {
        for (int x = 0; x < lb.content_w; ++x) {
            for (int c = 0; c < src.channels(); ++c) {
                out.at(y + lb.pad_y, x + lb.pad_x, c) = content.at(y, x, c);
            }
        }
    }
    return out;
}

std::string format_labels(std::span<const LabeledBox> boxes) {
    std::string out;
    for (const auto& b : boxes) {
        out += fmt::format("{} {} {} {} {} {}\n", b.class_index, b.box.cx, b.box.cy, b.box.w, b.box.h,
                           b.confidence);
    }
    return out;
}

std::vector<LabeledBox> parse_labels(std::string_view text) {
    std::vector<LabeledBox> boxes;
    std::istringstream in{std::string(text)};
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::istringstream ss(line);
        std::vector<double> fields;
        double v;
        while (ss >> v) {
            fields.push_back(v);
        }
        if (!ss.eof()) {
            throw std::invalid_argument("label line " + std::to_string(line_no) + ": not numeric");
        }
        if (fields.empty()) {
            continue;
        }
        if (fields.size() != 5 && fields.size() != 6) {
            throw std::invalid_argument("label line " + std::to_string(line_no) +
                                        ": expected 'class cx cy w h [conf]'");
        }
        LabeledBox b;
        b.class_index = static_cast<int>(fields[0]);
        b.box = {fields[1], fields[2], fields[3], fields[4]};
        b.confidence = fields.size() == 6 ? fields[5] : 1.0;
        if (!b.box.valid() || !(b.confidence >= 0.0 && b.confidence <= 1.0)) {
            throw std::invalid_argument("label line " + std::to_string(line_no) + ": invalid box");
        }
        boxes.push_back(b);
    }
    return boxes;
}

std::vector<LabeledBox> read_label_file(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    try {
        return parse_labels(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
    } catch (const std::invalid_argument& e) {
        throw std::runtime_error(path.string() + ": " + e.what());
    }
}

std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) {
        throw std::runtime_error("image directory '" + dir.string() + "' does not exist");
    }
    std::vector<std::filesystem::path> out;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (entry.is_regular_file() && is_image_file(entry.path())) {
            out.push_back(entry.path());
        }
    }
    std::sort(out.begin(), out.end(),
              [](const auto& a, const auto& b) { return a.filename().string() < b.filename().string(); });
    return out;
}

std::string LabelSummary::to_json() const {
    nlohmann::ordered_json j;
    j["images"] = images;
    j["boxes"] = boxes;
    j["warnings"] = warnings;
    return j.dump();
}

std::vector<LabeledBox> detect_persons(const DetectorAdapter& detector, const Image& letterboxed,
                                       const Letterbox& lb, double conf_threshold, double nms_iou) {
    const auto grid = detector.forward(letterboxed);
    std::vector<LabeledBox> out;
    for (const auto& d : decode_detections(grid, conf_threshold, nms_iou)) {
        if (d.class_index != detector.person_class_index()) {
            continue;
        }
        out.push_back({lb.from_letterbox(d.box), d.confidence, d.class_index});
    }
    return out;
}

LabelSummary generate_pseudo_labels(const DetectorAdapter& detector, const std::filesystem::path& image_dir,
                                    const std::filesystem::path& label_dir, double conf_threshold,
                                    double nms_iou, int square_size) {
    LabelSummary summary;
    std::filesystem::create_directories(label_dir);
    for (const auto& path : list_images(image_dir)) {
        Image img;
        try {
            img = read_image(path);
        } catch (const std::exception& e) {
            ++summary.warnings;
            summary.warning_messages.push_back(e.what());
            continue;
        }
        const Letterbox lb = letterbox_geometry(img.width(), img.height(), square_size);
        const auto boxes = detect_persons(detector, letterbox_image(img, lb), lb, conf_threshold, nms_iou);
        std::filesystem::path out = label_dir / path.stem();
        out += ".txt";
        write_file_atomic(out, format_labels(boxes));
        ++summary.images;
        summary.boxes += boxes.size();
    }
    return summary;
}

Dataset load_dataset(const std::filesystem::path& image_dir, const std::filesystem::path& label_dir,
                     int square_size, std::uint64_t seed, Split split) {
    Dataset ds;
    ds.split = split;
    for (const auto& path : list_images(image_dir)) {
        std::filesystem::path label = label_dir / path.stem();
        label += ".txt";
        if (!std::filesystem::exists(label)) {
            throw std::runtime_error("missing label file '" + label.string() + "' for image '" +
                                     path.string() + "'");
        }
        const Image img = read_image(path);
        const Letterbox lb = letterbox_geometry(img.width(), img.height(), square_size);
        LabeledImage item;
        item.path = path;
        item.image = letterbox_image(img, lb);
        for (LabeledBox b : read_label_file(label)) {
            b.box = lb.to_letterbox(b.box);
            item.boxes.push_back(b);
        }
        ds.images.push_back(std::move(item));
    }
    if (split == Split::Train) {
        Rng rng(derive_seed(seed, {0xda7a}));
        for (std::size_t i = ds.images.size(); i > 1; --i) {
            const std::size_t j = uniform_index(rng, i);
            std::swap(ds.images[i - 1], ds.images[j]);
        }
    }
    return ds;
}

std::vector<std::span<const LabeledImage>> batches(const Dataset& dataset, std::size_t batch_size) {
    if (batch_size < 1) {
        throw std::invalid_argument("batch_size must be >= 1");
    }
    std::vector<std::span<const LabeledImage>> out;
    const std::span<const LabeledImage> all(dataset.images);
    for (std::size_t i = 0; i < all.size(); i += batch_size) {
        out.push_back(all.subspan(i, std::min(batch_size, all.size() - i)));
    }
    return out;
}

}  // namespace advpatch
