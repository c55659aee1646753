#include <array>
#include <cmath>
#include <cstdint>
#include <cstdlib>

#include "advpatch/evaluator.hpp"

namespace advpatch {
namespace {

constexpr int kSize = 480;
constexpr int kMargin = 48;
constexpr int kPlot = kSize - 2 * kMargin;

using Rgb = std::array<double, 3>;

constexpr Rgb kPalette[] = {
    {0.0, 0.0, 0.0},     // CLEAN
    {0.55, 0.55, 0.55},  // NOISE
    {0.85, 0.45, 0.05},  // OBJ-CLS
    {0.80, 0.10, 0.10},  // OBJ
    {0.10, 0.35, 0.80},  // CLS
};

// 3x5 glyphs, rows top to bottom, bit 2 = left column.
struct Glyph {
    char c;
    std::uint8_t rows[5];
};

constexpr Glyph kFont[] = {
    {'A', {2, 5, 7, 5, 5}}, {'B', {6, 5, 6, 5, 6}}, {'C', {3, 4, 4, 4, 3}}, {'E', {7, 4, 6, 4, 7}},
    {'I', {7, 2, 2, 2, 7}}, {'J', {1, 1, 1, 5, 2}}, {'L', {4, 4, 4, 4, 7}}, {'N', {6, 5, 5, 5, 5}},
    {'O', {2, 5, 5, 5, 2}}, {'P', {6, 5, 6, 4, 4}}, {'R', {6, 5, 6, 5, 5}}, {'S', {3, 4, 2, 1, 6}},
    {'-', {0, 0, 7, 0, 0}}, {'0', {7, 5, 5, 5, 7}}, {'1', {2, 6, 2, 2, 7}}, {'.', {0, 0, 0, 0, 2}},
};

void put(Image& img, int x, int y, const Rgb& c) {
    if (x < 0 || y < 0 || x >= img.width() || y >= img.height()) {
        return;
    }
    for (int ch = 0; ch < 3; ++ch) {
        img.at(y, x, ch) = c[ch];
    }
}

void line(Image& img, int x0, int y0, int x1, int y1, const Rgb& c, int dash = 0, int thick = 1) {
    const int dx = std::abs(x1 - x0);
    const int dy = -std::abs(y1 - y0);
    const int sx = x0 < x1 ? 1 : -1;
    const int sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    int n = 0;
    while (true) {
        if (dash == 0 || (n / dash) % 2 == 0) {
            for (int t = 0; t < thick; ++t) {
                put(img, x0 + t, y0, c);
                put(img, x0, y0 + t, c);
            }
        }
        ++n;
        if (x0 == x1 && y0 == y1) {
            break;
        }
        const int e2 = 2 * err;
        if (e2 >= dy) {
            err += dy;
            x0 += sx;
        }
        if (e2 <= dx) {
            err += dx;
            y0 += sy;
        }
    }
}

void text(Image& img, int x, int y, std::string_view s, const Rgb& c, int scale = 2) {
    for (char ch : s) {
        for (const auto& g : kFont) {
            if (g.c != ch) {
                continue;
            }
            for (int r = 0; r < 5; ++r) {
                for (int col = 0; col < 3; ++col) {
                    if (g.rows[r] & (4 >> col)) {
                        for (int a = 0; a < scale; ++a) {
                            for (int b = 0; b < scale; ++b) {
                                put(img, x + col * scale + a, y + r * scale + b, c);
                            }
                        }
                    }
                }
            }
        }
        x += 4 * scale;
    }
}

int to_px_x(double recall) { return kMargin + static_cast<int>(std::lround(recall * kPlot)); }
int to_px_y(double precision) { return kSize - kMargin - static_cast<int>(std::lround(precision * kPlot)); }

}  // namespace

Image render_pr_plot(std::span<const std::pair<ConditionKind, PRCurve>> curves) {
    Image img(kSize, kSize, 3, 1.0);
    const Rgb axis{0.2, 0.2, 0.2};
    const Rgb grid{0.88, 0.88, 0.88};
    for (int i = 1; i < 10; ++i) {
        const int gx = kMargin + kPlot * i / 10;
        const int gy = kSize - kMargin - kPlot * i / 10;
        line(img, gx, kMargin, gx, kSize - kMargin, grid);
        line(img, kMargin, gy, kSize - kMargin, gy, grid);
    }
    line(img, kMargin, kSize - kMargin, kSize - kMargin, kSize - kMargin, axis);
    line(img, kMargin, kMargin, kMargin, kSize - kMargin, axis);
    line(img, to_px_x(0), to_px_y(0), to_px_x(1), to_px_y(1), {0.4, 0.4, 0.4}, 6);
    text(img, kSize / 2 - 24, kSize - kMargin + 20, "RECALL", axis);
    text(img, 6, kMargin - 20, "PRECISION", axis);
    text(img, kMargin - 4, kSize - kMargin + 6, "0", axis);
    text(img, kSize - kMargin - 4, kSize - kMargin + 6, "1", axis);
    text(img, kMargin - 14, kMargin - 4, "1", axis);

    int legend_y = kMargin + 8;
    for (const auto& [kind, curve] : curves) {
        const Rgb color = kPalette[static_cast<int>(kind)];
        // Step plot from the high-threshold end (low recall) to the low end.
        double prev_r = 0.0;
        double prev_p = curve.points.empty() ? 0.0 : curve.points.back().precision;
        for (auto it = curve.points.rbegin(); it != curve.points.rend(); ++it) {
            line(img, to_px_x(prev_r), to_px_y(prev_p), to_px_x(it->recall), to_px_y(it->precision), color, 0, 2);
            prev_r = it->recall;
            prev_p = it->precision;
        }
        line(img, kSize - kMargin - 110, legend_y + 4, kSize - kMargin - 90, legend_y + 4, color, 0, 2);
        text(img, kSize - kMargin - 84, legend_y, condition_name(kind), color);
        legend_y += 16;
    }
    return img;
}

}  // namespace advpatch
