#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <tuple>
#include <vector>

#include "comptrack/errors.hpp"

namespace comptrack {

constexpr double kPi = 3.14159265358979323846;

struct Vec3 {
    double x = 0.0, y = 0.0, z = 0.0;
};

// Wrap to (-pi, pi]. Values already in range pass through unchanged.
inline double wrap_angle(double a) {
    if (a > -kPi && a <= kPi) return a;
    double r = std::fmod(a + kPi, 2.0 * kPi);
    if (r <= 0.0) r += 2.0 * kPi;
    return r - kPi;
}

// Oriented 3D box: center (x, y, z), sizes (w, h, l) = extent along the
// lateral, vertical and heading axes, yaw theta in (-pi, pi].
struct Box3D {
    double x = 0.0, y = 0.0, z = 0.0;
    double w = 1.0, h = 1.0, l = 1.0;
    double theta = 0.0;

    void validate() const {
        if (!(w > 0.0 && h > 0.0 && l > 0.0)) throw DataError("Box3D: sizes must be positive");
    }

    Box3D normalized() const {
        Box3D b = *this;
        b.theta = wrap_angle(theta);
        return b;
    }

    // World -> box-local coordinates (heading axis becomes +x).
    Vec3 to_local(const Vec3& p) const {
        const double c = std::cos(theta), s = std::sin(theta);
        const double dx = p.x - x, dy = p.y - y;
        return {c * dx + s * dy, -s * dx + c * dy, p.z - z};
    }

    Vec3 to_world(const Vec3& p) const {
        const double c = std::cos(theta), s = std::sin(theta);
        return {x + c * p.x - s * p.y, y + s * p.x + c * p.y, z + p.z};
    }

    bool contains(const Vec3& p, double margin = 0.0) const {
        const Vec3 q = to_local(p);
        return std::abs(q.x) <= l / 2 + margin && std::abs(q.y) <= w / 2 + margin &&
               std::abs(q.z) <= h / 2 + margin;
    }

    // CCW BEV footprint corners in world coordinates.
    std::array<std::array<double, 2>, 4> corners_bev() const {
        const double c = std::cos(theta), s = std::sin(theta);
        const double hx = l / 2, hy = w / 2;
        const std::array<std::array<double, 2>, 4> local = {
            {{hx, hy}, {-hx, hy}, {-hx, -hy}, {hx, -hy}}};
        std::array<std::array<double, 2>, 4> out{};
        for (int i = 0; i < 4; ++i) {
            out[i][0] = x + c * local[i][0] - s * local[i][1];
            out[i][1] = y + s * local[i][0] + c * local[i][1];
        }
        return out;
    }

    double volume() const { return w * h * l; }

    auto key() const { return std::tie(x, y, z, w, h, l, theta); }
};

namespace detail {

using Poly = std::vector<std::array<double, 2>>;

inline double polygon_area(const Poly& p) {
    if (p.size() < 3) return 0.0;
    double a = 0.0;
    for (size_t i = 0; i < p.size(); ++i) {
        const auto& u = p[i];
        const auto& v = p[(i + 1) % p.size()];
        a += u[0] * v[1] - v[0] * u[1];
    }
    return std::abs(a) / 2.0;
}

// Sutherland-Hodgman clip of a convex subject polygon by a CCW convex clip
// polygon.
inline Poly clip_polygon(const Poly& subject, const Poly& clip) {
    Poly poly = subject;
    for (size_t e = 0; e < clip.size() && !poly.empty(); ++e) {
        const auto& p1 = clip[e];
        const auto& p2 = clip[(e + 1) % clip.size()];
        const double ex = p2[0] - p1[0], ey = p2[1] - p1[1];
        auto inside = [&](const std::array<double, 2>& pt) {
            return ex * (pt[1] - p1[1]) - ey * (pt[0] - p1[0]) >= 0.0;
        };
        auto intersect = [&](const std::array<double, 2>& a, const std::array<double, 2>& b) {
            const double dax = ex * (a[1] - p1[1]) - ey * (a[0] - p1[0]);
            const double dbx = ex * (b[1] - p1[1]) - ey * (b[0] - p1[0]);
            const double t = dax / (dax - dbx);
            return std::array<double, 2>{a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])};
        };
        Poly out;
        for (size_t i = 0; i < poly.size(); ++i) {
            const auto& cur = poly[i];
            const auto& nxt = poly[(i + 1) % poly.size()];
            const bool cin = inside(cur), nin = inside(nxt);
            if (cin) out.push_back(cur);
            if (cin != nin) out.push_back(intersect(cur, nxt));
        }
        poly = std::move(out);
    }
    return poly;
}

inline double iou3d_ordered(const Box3D& a, const Box3D& b) {
    const auto ca = a.corners_bev();
    const auto cb = b.corners_bev();
    const Poly pa(ca.begin(), ca.end());
    const Poly pb(cb.begin(), cb.end());
    const double inter_area = polygon_area(clip_polygon(pa, pb));
    const double zlo = std::max(a.z - a.h / 2, b.z - b.h / 2);
    const double zhi = std::min(a.z + a.h / 2, b.z + b.h / 2);
    const double inter = inter_area * std::max(0.0, zhi - zlo);
    const double uni = a.volume() + b.volume() - inter;
    if (uni <= 0.0) return 0.0;
    return std::clamp(inter / uni, 0.0, 1.0);
}

}  // namespace detail

// Rotated-box IoU: BEV polygon-clipped intersection area times vertical
// overlap over the union of volumes. Arguments are ordered by a canonical
// key first so iou3d(a, b) == iou3d(b, a) bitwise.
inline double iou3d(const Box3D& a, const Box3D& b) {
    a.validate();
    b.validate();
    if (a.key() == b.key()) return 1.0;
    if (b.key() < a.key()) return detail::iou3d_ordered(b, a);
    return detail::iou3d_ordered(a, b);
}

inline double center_distance(const Box3D& a, const Box3D& b) {
    const double dx = a.x - b.x, dy = a.y - b.y, dz = a.z - b.z;
    return std::sqrt(dx * dx + dy * dy + dz * dz);
}

}  // namespace comptrack
