#include "advpatch/detector.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>

#include "advpatch/errors.hpp"
#include "advpatch/io_util.hpp"
#include "advpatch/rng.hpp"
#include "advpatch/simd/kernels.hpp"

namespace advpatch {
namespace {

double sigmoid(double t) { return 1.0 / (1.0 + std::exp(-t)); }

int conv_out_size(int in, const ConvLayer& l) { return (in + 2 * l.padding - l.kernel) / l.stride + 1; }

Image conv_forward(const Image& in, const ConvLayer& l, const simd::KernelTable& k) {
    const int oh = conv_out_size(in.height(), l);
    const int ow = conv_out_size(in.width(), l);
    Image out(oh, ow, l.out_channels);
    const int ic = l.in_channels;
    for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
            const int x0 = ox * l.stride - l.padding;
            const int kx_lo = std::max(0, -x0);
            const int kx_hi = std::min(l.kernel, in.width() - x0);
            if (kx_hi <= kx_lo) {
                continue;
            }
            const std::size_t len = static_cast<std::size_t>(kx_hi - kx_lo) * ic;
            for (int oc = 0; oc < l.out_channels; ++oc) {
                double acc = l.bias[oc];
                for (int ky = 0; ky < l.kernel; ++ky) {
                    const int iy = oy * l.stride + ky - l.padding;
                    if (iy < 0 || iy >= in.height()) {
                        continue;
                    }
                    const double* w = l.weights.data() +
                                      ((static_cast<std::size_t>(oc) * l.kernel + ky) * l.kernel + kx_lo) * ic;
                    acc += k.dot(in.data() + in.index(iy, x0 + kx_lo, 0), w, len);
                }
                switch (l.activation) {
                    case Activation::Linear:
                        break;
                    case Activation::Tanh:
                        acc = std::tanh(acc);
                        break;
                    case Activation::Leaky:
                        acc = acc > 0.0 ? acc : 0.1 * acc;
                        break;
                }
                out.at(oy, ox, oc) = acc;
            }
        }
    }
    return out;
}

// grad_out is d/d(post-activation output); `out` is the forward output.
Image conv_backward(const Image& in_shape, const Image& out, const Image& grad_out, const ConvLayer& l,
                    const simd::KernelTable& k) {
    Image grad_in(in_shape.height(), in_shape.width(), in_shape.channels());
    const int ic = l.in_channels;
    for (int oy = 0; oy < out.height(); ++oy) {
        for (int ox = 0; ox < out.width(); ++ox) {
            const int x0 = ox * l.stride - l.padding;
            const int kx_lo = std::max(0, -x0);
            const int kx_hi = std::min(l.kernel, in_shape.width() - x0);
            if (kx_hi <= kx_lo) {
                continue;
            }
            const std::size_t len = static_cast<std::size_t>(kx_hi - kx_lo) * ic;
            for (int oc = 0; oc < l.out_channels; ++oc) {
                double g = grad_out.at(oy, ox, oc);
                const double y = out.at(oy, ox, oc);
                switch (l.activation) {
                    case Activation::Linear:
                        break;
                    case Activation::Tanh:
                        g *= 1.0 - y * y;
                        break;
                    case Activation::Leaky:
                        g *= y > 0.0 ? 1.0 : 0.1;
                        break;
                }
                if (g == 0.0) {
                    continue;
                }
                for (int ky = 0; ky < l.kernel; ++ky) {
                    const int iy = oy * l.stride + ky - l.padding;
                    if (iy < 0 || iy >= in_shape.height()) {
                        continue;
                    }
                    const double* w = l.weights.data() +
                                      ((static_cast<std::size_t>(oc) * l.kernel + ky) * l.kernel + kx_lo) * ic;
                    k.axpy(g, w, &grad_in.at(iy, x0 + kx_lo, 0), len);
                }
            }
        }
    }
    return grad_in;
}

void validate_layers(const std::vector<ConvLayer>& layers) {
    if (layers.empty()) {
        throw std::invalid_argument("detector needs at least one layer");
    }
    int channels = 3;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto& l = layers[i];
        if (l.kernel < 1 || l.stride < 1 || l.padding < 0 || l.out_channels < 1) {
            throw std::invalid_argument("layer " + std::to_string(i) + ": bad geometry");
        }
        if (l.in_channels != channels) {
            throw std::invalid_argument("layer " + std::to_string(i) + ": expected " +
                                        std::to_string(channels) + " input channels");
        }
        const std::size_t expected = static_cast<std::size_t>(l.out_channels) * l.kernel * l.kernel * l.in_channels;
        if (l.weights.size() != expected || l.bias.size() != static_cast<std::size_t>(l.out_channels)) {
            throw std::invalid_argument("layer " + std::to_string(i) + ": weight count mismatch");
        }
        channels = l.out_channels;
    }
}

}  // namespace

DetectionGrid::DetectionGrid(int rows, int cols, int anchors, int classes, int person_class_index)
    : rows_(rows), cols_(cols), anchors_(anchors), classes_(classes), person_(person_class_index) {
    if (rows < 1 || cols < 1 || anchors < 1 || classes < 1) {
        throw std::invalid_argument("DetectionGrid: dimensions must be positive");
    }
    if (person_class_index < 0 || person_class_index >= classes) {
        throw std::invalid_argument("DetectionGrid: person class index out of range");
    }
    values_.assign(cell_count() * vector_length(), 0.0);
}

std::string_view to_string(ScoreMode mode) {
    switch (mode) {
        case ScoreMode::Obj:
            return "OBJ";
        case ScoreMode::Cls:
            return "CLS";
        case ScoreMode::ObjCls:
            return "OBJ_CLS";
    }
    return "?";
}

ScoreMode parse_score_mode(std::string_view text) {
    if (text == "OBJ") {
        return ScoreMode::Obj;
    }
    if (text == "CLS") {
        return ScoreMode::Cls;
    }
    if (text == "OBJ_CLS" || text == "OBJ-CLS") {
        return ScoreMode::ObjCls;
    }
    throw std::invalid_argument("unknown score mode '" + std::string(text) + "'");
}

void DetectorAdapter::check_input(const Image& image) const {
    const int s = stride();
    if (image.channels() != 3 || image.height() < s || image.width() < s ||
        image.height() % s != 0 || image.width() % s != 0) {
        throw std::invalid_argument("detector input must be RGB with sides divisible by " +
                                    std::to_string(s) + ", got " + std::to_string(image.height()) +
                                    "x" + std::to_string(image.width()) + "x" +
                                    std::to_string(image.channels()));
    }
}

DetectionGrid DetectorAdapter::forward(const Image& image) const {
    check_input(image);
    return forward_impl(image);
}

std::vector<DetectionGrid> DetectorAdapter::forward(std::span<const Image> images) const {
    std::vector<DetectionGrid> grids;
    grids.reserve(images.size());
    for (const auto& img : images) {
        grids.push_back(forward(img));
    }
    return grids;
}

Image DetectorAdapter::backward(const Image& image, const DetectionGrid& grad_output) const {
    check_input(image);
    return backward_impl(image, grad_output);
}

double extraction_score(const DetectionGrid& grid, ScoreMode mode, DetectionGrid* grad) {
    double best = -1.0;
    std::size_t arg = 0;
    const std::size_t n = grid.cell_count();
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        switch (mode) {
            case ScoreMode::Obj:
                s = grid.objectness(i);
                break;
            case ScoreMode::Cls:
                s = grid.person_prob(i);
                break;
            case ScoreMode::ObjCls:
                s = grid.objectness(i) * grid.person_prob(i);
                break;
        }
        if (std::isnan(s)) {
            // Propagate so callers can report the non-finite loss.
            best = s;
            arg = i;
            break;
        }
        if (s > best) {
            best = s;
            arg = i;
        }
    }
    if (grad != nullptr) {
        *grad = DetectionGrid(grid.rows(), grid.cols(), grid.anchors(), grid.classes(),
                              grid.person_class_index());
        double* g = grad->anchor(arg);
        const int person = DetectionGrid::kCls + grid.person_class_index();
        switch (mode) {
            case ScoreMode::Obj:
                g[DetectionGrid::kObj] = 1.0;
                break;
            case ScoreMode::Cls:
                g[person] = 1.0;
                break;
            case ScoreMode::ObjCls:
                g[DetectionGrid::kObj] = grid.person_prob(arg);
                g[person] = grid.objectness(arg);
                break;
        }
    }
    return best;
}

std::vector<Detection> non_max_suppression(std::vector<Detection> detections, double nms_iou) {
    std::stable_sort(detections.begin(), detections.end(),
                     [](const Detection& a, const Detection& b) { return a.confidence > b.confidence; });
    std::vector<Detection> kept;
    for (const auto& d : detections) {
        const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](const Detection& k) {
            return k.class_index == d.class_index && iou(k.box, d.box) >= nms_iou;
        });
        if (!suppressed) {
            kept.push_back(d);
        }
    }
    return kept;
}

std::vector<Detection> decode_detections(const DetectionGrid& grid, double conf_threshold,
                                         double nms_iou) {
    std::vector<Detection> candidates;
    for (int r = 0; r < grid.rows(); ++r) {
        for (int c = 0; c < grid.cols(); ++c) {
            for (int a = 0; a < grid.anchors(); ++a) {
                const double* v = grid.anchor(r, c, a);
                int best_class = 0;
                for (int k = 1; k < grid.classes(); ++k) {
                    if (v[DetectionGrid::kCls + k] > v[DetectionGrid::kCls + best_class]) {
                        best_class = k;
                    }
                }
                Detection d;
                d.box = {(c + v[DetectionGrid::kX]) / grid.cols(), (r + v[DetectionGrid::kY]) / grid.rows(),
                         v[DetectionGrid::kW] / grid.cols(), v[DetectionGrid::kH] / grid.rows()};
                d.objectness = v[DetectionGrid::kObj];
                d.class_index = best_class;
                d.class_prob = v[DetectionGrid::kCls + best_class];
                d.confidence = d.objectness * d.class_prob;
                if (d.confidence >= conf_threshold && d.box.w > 0.0 && d.box.h > 0.0) {
                    candidates.push_back(d);
                }
            }
        }
    }
    return non_max_suppression(std::move(candidates), nms_iou);
}

ConvDetector::ConvDetector(std::vector<ConvLayer> layers, std::vector<AnchorShape> anchors,
                           std::vector<std::string> class_names)
    : layers_(std::move(layers)), anchors_(std::move(anchors)), class_names_(std::move(class_names)) {
    validate_layers(layers_);
    if (anchors_.empty() || class_names_.empty()) {
        throw std::invalid_argument("detector needs at least one anchor and one class");
    }
    const auto it = std::find(class_names_.begin(), class_names_.end(), "person");
    if (it == class_names_.end()) {
        throw std::invalid_argument("class list has no 'person' entry");
    }
    person_ = static_cast<int>(it - class_names_.begin());
    const int expected = num_anchors() * (DetectionGrid::kCls + num_classes());
    if (layers_.back().out_channels != expected) {
        throw std::invalid_argument("last layer must emit anchors * (5 + classes) = " +
                                    std::to_string(expected) + " channels");
    }
    stride_ = 1;
    for (const auto& l : layers_) {
        stride_ *= l.stride;
    }
}

std::vector<Image> ConvDetector::run_layers(const Image& image) const {
    const auto& k = simd::active_kernels();
    std::vector<Image> acts;
    acts.reserve(layers_.size());
    const Image* cur = &image;
    for (const auto& l : layers_) {
        acts.push_back(conv_forward(*cur, l, k));
        cur = &acts.back();
    }
    return acts;
}

DetectionGrid ConvDetector::decode_head(const Image& head) const {
    DetectionGrid grid(head.height(), head.width(), num_anchors(), num_classes(), person_);
    const int len = grid.vector_length();
    for (int r = 0; r < head.height(); ++r) {
        for (int c = 0; c < head.width(); ++c) {
            for (int a = 0; a < num_anchors(); ++a) {
                const double* t = head.data() + head.index(r, c, a * len);
                double* v = grid.anchor(r, c, a);
                v[DetectionGrid::kX] = sigmoid(t[0]);
                v[DetectionGrid::kY] = sigmoid(t[1]);
                v[DetectionGrid::kW] = anchors_[a].width * std::exp(t[2]);
                v[DetectionGrid::kH] = anchors_[a].height * std::exp(t[3]);
                v[DetectionGrid::kObj] = sigmoid(t[4]);
                const double mx = *std::max_element(t + DetectionGrid::kCls, t + len);
                double z = 0.0;
                for (int j = DetectionGrid::kCls; j < len; ++j) {
                    v[j] = std::exp(t[j] - mx);
                    z += v[j];
                }
                for (int j = DetectionGrid::kCls; j < len; ++j) {
                    v[j] /= z;
                }
            }
        }
    }
    return grid;
}

DetectionGrid ConvDetector::forward_impl(const Image& image) const {
    const auto acts = run_layers(image);
    return decode_head(acts.back());
}

Image ConvDetector::backward_impl(const Image& image, const DetectionGrid& grad_output) const {
    const auto acts = run_layers(image);
    const DetectionGrid grid = decode_head(acts.back());
    if (!grid.same_shape(grad_output)) {
        throw std::invalid_argument("backward: gradient grid shape mismatch");
    }
    const int len = grid.vector_length();
    Image grad(acts.back().height(), acts.back().width(), acts.back().channels());
    for (int r = 0; r < grid.rows(); ++r) {
        for (int c = 0; c < grid.cols(); ++c) {
            for (int a = 0; a < num_anchors(); ++a) {
                const double* v = grid.anchor(r, c, a);
                const double* g = grad_output.anchor(r, c, a);
                double* gt = &grad.at(r, c, a * len);
                gt[0] = g[0] * v[0] * (1.0 - v[0]);
                gt[1] = g[1] * v[1] * (1.0 - v[1]);
                gt[2] = g[2] * v[2];
                gt[3] = g[3] * v[3];
                gt[4] = g[4] * v[4] * (1.0 - v[4]);
                double dot = 0.0;
                for (int j = DetectionGrid::kCls; j < len; ++j) {
                    dot += g[j] * v[j];
                }
                for (int j = DetectionGrid::kCls; j < len; ++j) {
                    gt[j] = v[j] * (g[j] - dot);
                }
            }
        }
    }
    const auto& k = simd::active_kernels();
    for (std::size_t i = layers_.size(); i-- > 0;) {
        const Image& in = i == 0 ? image : acts[i - 1];
        grad = conv_backward(in, acts[i], grad, layers_[i], k);
    }
    return grad;
}

namespace {
constexpr char kWeightsMagic[4] = {'A', 'P', 'W', '1'};

void put_f64(std::vector<std::uint8_t>& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}
    std::uint32_t u32() {
        need(4);
        const auto v = get_u32(bytes_.data() + pos_);
        pos_ += 4;
        return v;
    }
    double f64() {
        need(8);
        const auto v = std::bit_cast<double>(get_u64(bytes_.data() + pos_));
        pos_ += 8;
        return v;
    }
    std::size_t pos() const { return pos_; }
    std::size_t size() const { return bytes_.size(); }

private:
    void need(std::size_t n) const {
        if (pos_ + n > bytes_.size()) {
            throw FormatError("truncated weights file", bytes_.size());
        }
    }
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};
}  // namespace

void ConvDetector::save_weights(const std::filesystem::path& weights_path) const {
    std::vector<std::uint8_t> out(std::begin(kWeightsMagic), std::end(kWeightsMagic));
    put_u32(out, static_cast<std::uint32_t>(layers_.size()));
    for (const auto& l : layers_) {
        for (int v : {l.kernel, l.stride, l.padding, l.in_channels, l.out_channels}) {
            put_u32(out, static_cast<std::uint32_t>(v));
        }
        put_u32(out, static_cast<std::uint32_t>(l.activation));
        for (double w : l.weights) {
            put_f64(out, w);
        }
        for (double b : l.bias) {
            put_f64(out, b);
        }
    }
    put_u32(out, static_cast<std::uint32_t>(anchors_.size()));
    for (const auto& a : anchors_) {
        put_f64(out, a.width);
        put_f64(out, a.height);
    }
    write_file_atomic(weights_path, out);
}

ConvDetector ConvDetector::load(const std::filesystem::path& weights_path,
                                const std::filesystem::path& class_names_path) {
    const auto bytes = read_file_bytes(weights_path);
    if (bytes.size() < 4 || !std::equal(std::begin(kWeightsMagic), std::end(kWeightsMagic), bytes.begin())) {
        throw FormatError("bad weights magic, expected APW1", 0);
    }
    Reader rd(std::span<const std::uint8_t>(bytes).subspan(4));
    const std::uint32_t n_layers = rd.u32();
    if (n_layers == 0 || n_layers > 64) {
        throw FormatError("implausible layer count", 4);
    }
    std::vector<ConvLayer> layers(n_layers);
    for (auto& l : layers) {
        const std::size_t at = 4 + rd.pos();
        l.kernel = static_cast<int>(rd.u32());
        l.stride = static_cast<int>(rd.u32());
        l.padding = static_cast<int>(rd.u32());
        l.in_channels = static_cast<int>(rd.u32());
        l.out_channels = static_cast<int>(rd.u32());
        const std::uint32_t act = rd.u32();
        if (act > 2 || l.kernel > 64 || l.in_channels > 4096 || l.out_channels > 4096) {
            throw FormatError("bad layer header", at);
        }
        l.activation = static_cast<Activation>(act);
        l.weights.resize(static_cast<std::size_t>(l.out_channels) * l.kernel * l.kernel * l.in_channels);
        for (double& w : l.weights) {
            w = rd.f64();
        }
        l.bias.resize(static_cast<std::size_t>(l.out_channels));
        for (double& b : l.bias) {
            b = rd.f64();
        }
    }
    const std::uint32_t n_anchors = rd.u32();
    std::vector<AnchorShape> anchors(n_anchors);
    for (auto& a : anchors) {
        a.width = rd.f64();
        a.height = rd.f64();
    }
    if (rd.pos() != rd.size()) {
        throw FormatError("trailing bytes in weights file", 4 + rd.pos());
    }

    std::ifstream in(class_names_path);
    if (!in) {
        throw std::runtime_error("cannot open class-name file '" + class_names_path.string() + "'");
    }
    std::vector<std::string> names;
    std::string line;
    while (std::getline(in, line)) {
        while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) {
            line.pop_back();
        }
        if (!line.empty()) {
            names.push_back(line);
        }
    }
    return ConvDetector(std::move(layers), std::move(anchors), std::move(names));
}

ConvDetector fixture_detector(std::uint64_t seed) {
    Rng rng(derive_seed(seed, {0xf1c7}));
    const std::vector<std::string> names{"person", "clutter"};
    const std::vector<AnchorShape> anchors{{0.75, 1.5}, {1.0, 2.0}, {1.5, 3.0}};
    const int head_len = DetectionGrid::kCls + static_cast<int>(names.size());
    const int head_channels = static_cast<int>(anchors.size()) * head_len;

    auto make = [&](int kernel, int in, int out, Activation act, double gain) {
        ConvLayer l{kernel, kernel, 0, in, out, act, {}, {}};
        const double bound = gain * std::sqrt(3.0 / (kernel * kernel * in));
        l.weights.resize(static_cast<std::size_t>(out) * kernel * kernel * in);
        for (double& w : l.weights) {
            w = uniform(rng, -bound, bound);
        }
        l.bias.assign(static_cast<std::size_t>(out), 0.0);
        return l;
    };

    std::vector<ConvLayer> layers;
    layers.push_back(make(4, 3, 8, Activation::Tanh, 3.0));
    layers.push_back(make(4, 8, 16, Activation::Tanh, 2.0));
    layers.push_back(make(2, 16, head_channels, Activation::Linear, 1.0));

    // Center the first layer on mid-gray so a flat 0.5 image has zero features.
    ConvLayer& first = layers.front();
    const std::size_t fan_in = first.weights.size() / first.out_channels;
    for (int oc = 0; oc < first.out_channels; ++oc) {
        const double* w = first.weights.data() + oc * fan_in;
        first.bias[oc] = -0.5 * std::accumulate(w, w + fan_in, 0.0);
    }

    ConvLayer& head = layers.back();
    const std::size_t head_fan_in = head.weights.size() / head.out_channels;
    for (int a = 0; a < static_cast<int>(anchors.size()); ++a) {
        for (int j = 0; j < head_len; ++j) {
            const int oc = a * head_len + j;
            double scale = 1.0;
            if (j < DetectionGrid::kObj) {
                scale = 0.25;  // keep decoded boxes near their anchor shapes
            } else if (j == DetectionGrid::kObj) {
                scale = 4.0;
                head.bias[oc] = -4.0;
            }
            double* w = head.weights.data() + oc * head_fan_in;
            for (std::size_t i = 0; i < head_fan_in; ++i) {
                w[i] *= scale;
            }
        }
    }
    return ConvDetector(std::move(layers), anchors, names);
}

}  // namespace advpatch
