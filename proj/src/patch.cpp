#include "advpatch/patch.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "advpatch/errors.hpp"
#include "advpatch/io_util.hpp"
#include "advpatch/rng.hpp"
#include "advpatch/simd/kernels.hpp"

namespace advpatch {
namespace {

constexpr char kSidecarMagic[4] = {'A', 'P', 'F', '1'};
constexpr std::size_t kSidecarHeader = 16;

double clamp01(double v) { return std::isnan(v) ? 0.0 : std::clamp(v, 0.0, 1.0); }

void check_patch_dims(int height, int width) {
    if (height < 1 || width < 1) {
        throw std::invalid_argument("patch dimensions must be positive, got " +
                                    std::to_string(height) + "x" + std::to_string(width));
    }
}

}  // namespace

Patch::Patch(int height, int width, double fill) {
    check_patch_dims(height, width);
    pixels_ = Image(height, width, 3, clamp01(fill));
}

Patch Patch::from_image(Image pixels) {
    if (pixels.channels() != 3) {
        throw std::invalid_argument("patch must have 3 channels");
    }
    check_patch_dims(pixels.height(), pixels.width());
    Patch p;
    p.pixels_ = std::move(pixels);
    p.normalize();
    return p;
}

void Patch::normalize() {
    for (double& v : pixels_.values()) {
        v = clamp01(v);
    }
}

PrintableColorSet::PrintableColorSet(std::span<const std::array<double, 3>> colors) {
    if (colors.empty()) {
        throw std::invalid_argument("printable color set must not be empty");
    }
    for (const auto& c : colors) {
        for (double v : c) {
            if (!(v >= 0.0 && v <= 1.0)) {
                throw std::invalid_argument("printable color component outside [0, 1]");
            }
        }
        red_.push_back(c[0]);
        green_.push_back(c[1]);
        blue_.push_back(c[2]);
    }
}

Patch init_patch(int height, int width, InitMode mode, std::uint64_t seed) {
    Patch patch(height, width, 0.5);
    if (mode == InitMode::Random) {
        Rng rng(seed);
        patch.update([&](std::span<double> v) {
            // float32-representable so the sidecar holds the exact initial state
            for (double& x : v) {
                x = static_cast<float>(uniform01(rng));
            }
        });
    }
    return patch;
}

double nps_loss(const Image& pixels, const PrintableColorSet& colors, Image* grad) {
    if (pixels.channels() != 3) {
        throw std::invalid_argument("nps_loss expects an RGB image");
    }
    const auto& k = simd::active_kernels();
    if (grad != nullptr) {
        *grad = Image(pixels.height(), pixels.width(), 3);
    }
    const std::size_t n_pixels = static_cast<std::size_t>(pixels.height()) * pixels.width();
    const double* px = pixels.data();
    double total = 0.0;
    for (std::size_t i = 0; i < n_pixels; ++i) {
        const double* p = px + 3 * i;
        const auto nearest =
            k.nearest_color(p, colors.red(), colors.green(), colors.blue(), colors.size());
        const double dist = std::sqrt(nearest.distance_sq);
        total += dist;
        if (grad != nullptr && dist > 0.0) {
            const auto c = colors.color(nearest.index);
            double* g = grad->data() + 3 * i;
            for (int ch = 0; ch < 3; ++ch) {
                g[ch] = (p[ch] - c[ch]) / dist;
            }
        }
    }
    return total;
}

double nps_loss(const Patch& patch, const PrintableColorSet& colors, Image* grad) {
    return nps_loss(patch.pixels(), colors, grad);
}

double tv_loss(const Image& pixels, Image* grad) {
    const int h = pixels.height();
    const int w = pixels.width();
    const int channels = pixels.channels();
    if (grad != nullptr) {
        *grad = Image(h, w, channels);
    }
    double total = 0.0;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int c = 0; c < channels; ++c) {
                const double p = pixels.at(y, x, c);
                const double dy = y + 1 < h ? p - pixels.at(y + 1, x, c) : 0.0;
                const double dx = x + 1 < w ? p - pixels.at(y, x + 1, c) : 0.0;
                const double sq = dy * dy + dx * dx;
                total += std::sqrt(sq);
                if (grad != nullptr) {
                    const double inv = 1.0 / std::sqrt(sq + kTvGradientEpsilon);
                    grad->at(y, x, c) += (dy + dx) * inv;
                    if (y + 1 < h) {
                        grad->at(y + 1, x, c) -= dy * inv;
                    }
                    if (x + 1 < w) {
                        grad->at(y, x + 1, c) -= dx * inv;
                    }
                }
            }
        }
    }
    return total;
}

double tv_loss(const Patch& patch, Image* grad) { return tv_loss(patch.pixels(), grad); }

LossBreakdown total_loss(double nps, double tv, double obj, const LossWeights& weights) {
    return {nps, tv, obj, weights.alpha * nps + weights.beta * tv + obj};
}

Patch clamp_patch(Image pixels) { return Patch::from_image(std::move(pixels)); }

void write_patch_block(std::vector<std::uint8_t>& out, const Image& values) {
    out.insert(out.end(), std::begin(kSidecarMagic), std::end(kSidecarMagic));
    put_u32(out, static_cast<std::uint32_t>(values.height()));
    put_u32(out, static_cast<std::uint32_t>(values.width()));
    put_u32(out, static_cast<std::uint32_t>(values.channels()));
    for (double v : values.values()) {
        put_f32(out, static_cast<float>(v));
    }
}

Image read_patch_block(std::span<const std::uint8_t> bytes, std::size_t& offset) {
    const std::size_t start = offset;
    if (bytes.size() < start + kSidecarHeader) {
        throw FormatError("truncated patch header", bytes.size());
    }
    if (!std::equal(std::begin(kSidecarMagic), std::end(kSidecarMagic), bytes.begin() + start)) {
        throw FormatError("bad patch magic, expected APF1", start);
    }
    const std::uint32_t h = get_u32(bytes.data() + start + 4);
    const std::uint32_t w = get_u32(bytes.data() + start + 8);
    const std::uint32_t c = get_u32(bytes.data() + start + 12);
    if (h == 0 || w == 0 || c == 0 || h > 65536 || w > 65536 || c > 4) {
        throw FormatError("implausible patch dimensions", start + 4);
    }
    const std::size_t count = static_cast<std::size_t>(h) * w * c;
    const std::size_t data_start = start + kSidecarHeader;
    if (bytes.size() < data_start + 4 * count) {
        throw FormatError("truncated patch data", bytes.size());
    }
    Image img(static_cast<int>(h), static_cast<int>(w), static_cast<int>(c));
    double* dst = img.data();
    for (std::size_t i = 0; i < count; ++i) {
        dst[i] = get_f32(bytes.data() + data_start + 4 * i);
    }
    offset = data_start + 4 * count;
    return img;
}

void save_patch_sidecar(const std::filesystem::path& path, const Patch& patch) {
    std::vector<std::uint8_t> out;
    write_patch_block(out, patch.pixels());
    write_file_atomic(path, out);
}

Patch load_patch_sidecar(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    std::size_t offset = 0;
    Image img = read_patch_block(bytes, offset);
    if (offset != bytes.size()) {
        throw FormatError("trailing bytes after patch data", offset);
    }
    if (img.channels() != 3) {
        throw FormatError("patch sidecar must have 3 channels", 12);
    }
    for (double v : img.values()) {
        if (!(v >= 0.0 && v <= 1.0)) {
            throw FormatError("patch value outside [0, 1]", kSidecarHeader);
        }
    }
    return Patch::from_image(std::move(img));
}

PrintableColorSet load_printable_colors(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open color file '" + path.string() + "'");
    }
    std::vector<std::array<double, 3>> colors;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (auto hash = line.find('#'); hash != std::string::npos) {
            line.erase(hash);
        }
        std::istringstream ss(line);
        std::array<double, 3> c{};
        if (!(ss >> c[0])) {
            continue;
        }
        std::string rest;
        if (!(ss >> c[1] >> c[2]) || (ss >> rest)) {
            throw std::invalid_argument(path.string() + ":" + std::to_string(line_no) +
                                        ": expected 'r g b'");
        }
        colors.push_back(c);
    }
    return PrintableColorSet(colors);
}

}  // namespace advpatch
