#pragma once

#include <algorithm>

namespace advpatch {

/// Center-format box in normalized [0, 1] image coordinates.
struct BoundingBox {
    double cx = 0.0;
    double cy = 0.0;
    double w = 0.0;
    double h = 0.0;

    double left() const noexcept { return cx - 0.5 * w; }
    double right() const noexcept { return cx + 0.5 * w; }
    double top() const noexcept { return cy - 0.5 * h; }
    double bottom() const noexcept { return cy + 0.5 * h; }
    double area() const noexcept { return w * h; }

    /// Positive size and nonempty overlap with the unit square.
    bool valid() const noexcept {
        return w > 0.0 && h > 0.0 && right() > 0.0 && left() < 1.0 && bottom() > 0.0 && top() < 1.0;
    }

    friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

inline double iou(const BoundingBox& a, const BoundingBox& b) noexcept {
    const double iw = std::min(a.right(), b.right()) - std::max(a.left(), b.left());
    const double ih = std::min(a.bottom(), b.bottom()) - std::max(a.top(), b.top());
    if (iw <= 0.0 || ih <= 0.0) {
        return 0.0;
    }
    const double inter = iw * ih;
    const double uni = a.area() + b.area() - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

}  // namespace advpatch
