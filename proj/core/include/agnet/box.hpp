#pragma once

#include <algorithm>
#include <string>

namespace agnet {

/// Axis-aligned pixel box, half-open: covers x0 <= x < x1, y0 <= y < y1.
struct BoundingBox {
    int x0 = 0;
    int y0 = 0;
    int x1 = 0;
    int y1 = 0;

    int width() const { return x1 - x0; }
    int height() const { return y1 - y0; }
    long area() const { return empty() ? 0 : static_cast<long>(width()) * height(); }
    bool empty() const { return x1 <= x0 || y1 <= y0; }
    bool within(int w, int h) const { return !empty() && x0 >= 0 && y0 >= 0 && x1 <= w && y1 <= h; }
    double center_x() const { return 0.5 * (x0 + x1); }
    double center_y() const { return 0.5 * (y0 + y1); }

    friend bool operator==(const BoundingBox &, const BoundingBox &) = default;
};

/// |a ∩ b| / |a ∪ b| over pixel counts.
inline double iou(const BoundingBox &a, const BoundingBox &b)
{
    const BoundingBox in{std::max(a.x0, b.x0), std::max(a.y0, b.y0), std::min(a.x1, b.x1), std::min(a.y1, b.y1)};
    const long inter = in.area();
    const long uni = a.area() + b.area() - inter;
    return uni > 0 ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

inline std::string to_string(const BoundingBox &b)
{
    return std::to_string(b.x0) + "," + std::to_string(b.y0) + "," + std::to_string(b.x1) + "," + std::to_string(b.y1);
}

} // namespace agnet
