#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "advpatch/geometry.hpp"
#include "advpatch/image.hpp"

namespace advpatch {

/// Raw single-shot detector output: rows x cols cells, each holding `anchors`
/// vectors of [x_offset, y_offset, w, h, p_obj, p_cls1..p_clsC].
///
/// Offsets are the box center within the cell in [0, 1]; w and h are the box
/// size in cell units; probabilities are already squashed to [0, 1].
class DetectionGrid {
public:
    static constexpr int kX = 0;
    static constexpr int kY = 1;
    static constexpr int kW = 2;
    static constexpr int kH = 3;
    static constexpr int kObj = 4;
    static constexpr int kCls = 5;

    DetectionGrid() = default;
    DetectionGrid(int rows, int cols, int anchors, int classes, int person_class_index);

    int rows() const noexcept { return rows_; }
    int cols() const noexcept { return cols_; }
    int anchors() const noexcept { return anchors_; }
    int classes() const noexcept { return classes_; }
    int person_class_index() const noexcept { return person_; }
    int vector_length() const noexcept { return kCls + classes_; }
    std::size_t cell_count() const noexcept {
        return static_cast<std::size_t>(rows_) * cols_ * anchors_;
    }

    double* anchor(int row, int col, int a) noexcept { return values_.data() + offset(row, col, a); }
    const double* anchor(int row, int col, int a) const noexcept {
        return values_.data() + offset(row, col, a);
    }
    /// Anchor vector by flat index in row-major (row, col, anchor) order.
    double* anchor(std::size_t flat) noexcept { return values_.data() + flat * vector_length(); }
    const double* anchor(std::size_t flat) const noexcept {
        return values_.data() + flat * vector_length();
    }

    double objectness(std::size_t flat) const noexcept { return anchor(flat)[kObj]; }
    double person_prob(std::size_t flat) const noexcept { return anchor(flat)[kCls + person_]; }

    std::span<double> values() noexcept { return values_; }
    std::span<const double> values() const noexcept { return values_; }

    bool same_shape(const DetectionGrid& o) const noexcept {
        return rows_ == o.rows_ && cols_ == o.cols_ && anchors_ == o.anchors_ &&
               classes_ == o.classes_;
    }

    friend bool operator==(const DetectionGrid&, const DetectionGrid&) = default;

private:
    std::size_t offset(int row, int col, int a) const noexcept {
        return ((static_cast<std::size_t>(row) * cols_ + col) * anchors_ + a) * vector_length();
    }

    int rows_ = 0;
    int cols_ = 0;
    int anchors_ = 0;
    int classes_ = 0;
    int person_ = 0;
    std::vector<double> values_;
};

struct Detection {
    BoundingBox box;
    double objectness = 0.0;
    int class_index = 0;
    double class_prob = 0.0;
    double confidence = 0.0;  // objectness * class_prob

    friend bool operator==(const Detection&, const Detection&) = default;
};

enum class ScoreMode { Obj, Cls, ObjCls };

std::string_view to_string(ScoreMode mode);
/// Accepts OBJ, CLS, OBJ_CLS and OBJ-CLS (case-sensitive).
ScoreMode parse_score_mode(std::string_view text);

/// Differentiable, frozen single-shot detector.
///
/// Implementations are immutable after construction; forward and backward
/// may be called concurrently.
class DetectorAdapter {
public:
    virtual ~DetectorAdapter() = default;

    virtual int stride() const = 0;
    virtual int num_anchors() const = 0;
    virtual int num_classes() const = 0;
    virtual int person_class_index() const = 0;

    /// Throws std::invalid_argument unless the image is RGB with sides
    /// divisible by stride().
    DetectionGrid forward(const Image& image) const;
    std::vector<DetectionGrid> forward(std::span<const Image> images) const;

    /// Vector-Jacobian product: given d(loss)/d(grid values), returns
    /// d(loss)/d(image pixels).
    Image backward(const Image& image, const DetectionGrid& grad_output) const;

protected:
    virtual DetectionGrid forward_impl(const Image& image) const = 0;
    virtual Image backward_impl(const Image& image, const DetectionGrid& grad_output) const = 0;

private:
    void check_input(const Image& image) const;
};

/// Max over all cells and anchors of the mode's score. If `grad` is non-null
/// it receives the gradient with respect to the grid values, which is
/// nonzero only at the (first) argmax anchor.
double extraction_score(const DetectionGrid& grid, ScoreMode mode, DetectionGrid* grad = nullptr);

/// Decodes every anchor, drops those below `conf_threshold`, then applies
/// greedy per-class NMS (a box is suppressed by a kept box of the same class
/// with IoU >= nms_iou). Sorted by descending confidence.
std::vector<Detection> decode_detections(const DetectionGrid& grid, double conf_threshold,
                                         double nms_iou);

/// Greedy NMS over already-decoded detections; returns survivors sorted by
/// descending confidence (stable for ties).
std::vector<Detection> non_max_suppression(std::vector<Detection> detections, double nms_iou);

enum class Activation : std::uint32_t { Linear = 0, Tanh = 1, Leaky = 2 };

struct ConvLayer {
    int kernel = 1;
    int stride = 1;
    int padding = 0;
    int in_channels = 0;
    int out_channels = 0;
    Activation activation = Activation::Linear;
    std::vector<double> weights;  // [out][ky][kx][in]
    std::vector<double> bias;     // [out]
};

struct AnchorShape {
    double width;   // cells
    double height;  // cells
};

/// Small fully convolutional detector: a stack of strided convolutions whose
/// last layer emits anchors * (5 + classes) channels, decoded YOLOv2-style
/// (sigmoid offsets, anchor * exp(t) sizes, sigmoid objectness, softmax
/// class scores).
class ConvDetector final : public DetectorAdapter {
public:
    ConvDetector(std::vector<ConvLayer> layers, std::vector<AnchorShape> anchors,
                 std::vector<std::string> class_names);

    int stride() const override { return stride_; }
    int num_anchors() const override { return static_cast<int>(anchors_.size()); }
    int num_classes() const override { return static_cast<int>(class_names_.size()); }
    int person_class_index() const override { return person_; }

    const std::vector<ConvLayer>& layers() const noexcept { return layers_; }
    const std::vector<AnchorShape>& anchor_shapes() const noexcept { return anchors_; }
    const std::vector<std::string>& class_names() const noexcept { return class_names_; }

    /// Weights file: "APW1", u32 layer count, per layer six u32 fields
    /// (kernel, stride, padding, in, out, activation) followed by float64
    /// weights and biases, then u32 anchor count and float64 (w, h) pairs.
    /// The class-name file has one name per line and must contain "person".
    static ConvDetector load(const std::filesystem::path& weights_path,
                             const std::filesystem::path& class_names_path);
    void save_weights(const std::filesystem::path& weights_path) const;

protected:
    DetectionGrid forward_impl(const Image& image) const override;
    Image backward_impl(const Image& image, const DetectionGrid& grad_output) const override;

private:
    std::vector<Image> run_layers(const Image& image) const;
    DetectionGrid decode_head(const Image& head) const;

    std::vector<ConvLayer> layers_;
    std::vector<AnchorShape> anchors_;
    std::vector<std::string> class_names_;
    int person_ = 0;
    int stride_ = 1;
};

/// Deterministic stride-32 test double: three tanh/linear strided convolutions
/// with seeded weights, three person-shaped anchors and classes
/// {"person", "clutter"}. The objectness bias is calibrated so that a uniform
/// mid-gray input scores sigmoid(-4) at every anchor.
ConvDetector fixture_detector(std::uint64_t seed);

}  // namespace advpatch
