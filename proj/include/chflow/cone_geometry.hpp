#pragma once
/**
 * @file  cone_geometry.hpp
 * @brief Metric geometry of the cone over the unit interval.
 *
 * Points are [x, r] with x in [0, 1] and r >= 0; every point with r = 0 is the
 * apex. The metric is r^2 dx^2 + dr^2, and because the base has diameter 1 < pi
 * the cone develops isometrically onto a planar sector via (x, r) -> r e^{ix}.
 */

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <utility>

namespace chflow
{

class GeometryError : public std::domain_error
{
public:
    using std::domain_error::domain_error;
};

/// Default absolute tolerance used when comparing cone points.
inline constexpr double kPointTolerance = 1e-12;

/// Canonical base coordinate of the apex.
inline constexpr double kApexBase = 0.0;

class ConePoint
{
public:
    constexpr ConePoint() = default;

    ConePoint(double x, double r) : x_(x), r_(r)
    {
        if (!(r >= 0.0) || !std::isfinite(r))
            throw GeometryError("cone point radius must be finite and >= 0, got " + std::to_string(r));
        if (!(x >= 0.0 && x <= 1.0))
            throw GeometryError("cone point base coordinate must lie in [0,1], got " + std::to_string(x));
        if (r == 0.0)
            x_ = kApexBase;
    }

    static ConePoint apex() { return ConePoint(kApexBase, 0.0); }

    [[nodiscard]] double x() const noexcept { return x_; }
    [[nodiscard]] double r() const noexcept { return r_; }
    [[nodiscard]] bool is_apex() const noexcept { return r_ == 0.0; }

private:
    double x_ = kApexBase;
    double r_ = 0.0;
};

struct ConeVelocity
{
    double dx = 0.0;
    double dr = 0.0;
};

struct PlanarPoint
{
    double u = 0.0;
    double v = 0.0;
};

/// Apex-aware comparison: all apex representatives are equal, otherwise both
/// coordinates must agree to within `tol`.
[[nodiscard]] inline bool approx_equal(const ConePoint& p, const ConePoint& q, double tol = kPointTolerance) noexcept
{
    if (p.is_apex() || q.is_apex())
        return p.is_apex() && q.is_apex();
    return std::abs(p.x() - q.x()) <= tol && std::abs(p.r() - q.r()) <= tol;
}

[[nodiscard]] inline bool operator==(const ConePoint& p, const ConePoint& q) noexcept { return approx_equal(p, q); }

[[nodiscard]] inline double base_distance(double x1, double x2)
{
    if (!(x1 >= 0.0 && x1 <= 1.0) || !(x2 >= 0.0 && x2 <= 1.0))
        throw GeometryError("base coordinates must lie in [0,1]");
    return std::abs(x1 - x2);
}

/// Squared cone distance from raw coordinates; the base coordinates are not
/// range-checked so trajectories leaving [0,1] can still be measured.
[[nodiscard]] inline double cone_distance_sq(double x1, double r1, double x2, double r2) noexcept
{
    const double angle = std::min(std::abs(x1 - x2), std::numbers::pi);
    // r1^2 + r2^2 - 2 r1 r2 cos(a) = (r1 - r2)^2 + 4 r1 r2 sin^2(a/2), which
    // stays accurate when the two points nearly coincide.
    const double s = std::sin(0.5 * angle);
    const double d2 = (r1 - r2) * (r1 - r2) + 4.0 * r1 * r2 * s * s;
    return d2 > 0.0 ? d2 : 0.0;
}

[[nodiscard]] inline double cone_distance_sq(const ConePoint& p, const ConePoint& q) noexcept
{
    return cone_distance_sq(p.x(), p.r(), q.x(), q.r());
}

[[nodiscard]] inline double cone_distance(const ConePoint& p, const ConePoint& q) noexcept
{
    return std::sqrt(cone_distance_sq(p, q));
}

[[nodiscard]] inline PlanarPoint develop(const ConePoint& p) noexcept
{
    return {p.r() * std::cos(p.x()), p.r() * std::sin(p.x())};
}

[[nodiscard]] inline double metric_norm_sq(const ConePoint& p, const ConeVelocity& v) noexcept
{
    return p.r() * p.r() * v.dx * v.dx + v.dr * v.dr;
}

/**
 * Constant-speed geodesic from p (s = 0) to q (s = 1).
 *
 * Evaluated as the straight segment between the developed images. Endpoints
 * are returned exactly. Base separations >= pi have no unique geodesic and
 * are rejected; a segment through the planar origin yields the apex at the
 * crossing parameter.
 */
[[nodiscard]] inline ConePoint cone_geodesic(const ConePoint& p, const ConePoint& q, double s)
{
    if (!(s >= 0.0 && s <= 1.0))
        throw GeometryError("geodesic parameter must lie in [0,1]");
    if (!p.is_apex() && !q.is_apex() && std::abs(p.x() - q.x()) >= std::numbers::pi)
        throw GeometryError("geodesic undefined: base separation >= pi");
    if (s == 0.0)
        return p;
    if (s == 1.0)
        return q;
    if (p.is_apex() && q.is_apex())
        return ConePoint::apex();
    if (p.is_apex())
        return ConePoint(q.x(), s * q.r());
    if (q.is_apex())
        return ConePoint(p.x(), (1.0 - s) * p.r());

    const PlanarPoint a = develop(p);
    const PlanarPoint b = develop(q);
    const double u = (1.0 - s) * a.u + s * b.u;
    const double v = (1.0 - s) * a.v + s * b.v;
    const double r = std::hypot(u, v);
    if (r == 0.0)
        return ConePoint::apex();
    // The developed sector spans angles within [0, 1], so atan2 is unambiguous.
    const double x = std::clamp(std::atan2(v, u), std::min(p.x(), q.x()), std::max(p.x(), q.x()));
    return ConePoint(x, r);
}

} // namespace chflow
