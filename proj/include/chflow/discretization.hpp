#pragma once
/**
 * @file  discretization.hpp
 * @brief Tensor grids on the truncated cone, boundary maps, cost arrays and
 *        Gibbs kernels of the entropically regularized multi-marginal problem.
 *
 * Flattened cone index: j = ix * nr + ir, so the nr radii of one base node are
 * contiguous. The first time slice is restricted to the unit-radius nodes,
 * hence only nx starting states exist.
 */

#include "cone_geometry.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace chflow
{

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

class ConfigError : public std::invalid_argument
{
public:
    using std::invalid_argument::invalid_argument;
};

struct GridConfig
{
    int nx = 16;
    int nr = 17;
    double r_lo = 0.55;
    double r_hi = 1.45;
    int levels = 9; ///< number of time levels K
    double horizon = 1.0; ///< final time T
};

class Grid
{
public:
    explicit Grid(const GridConfig& cfg) : cfg_(cfg)
    {
        if (cfg.nx < 2 || cfg.nr < 2)
            throw ConfigError("grid needs nx >= 2 and nr >= 2");
        if (!(cfg.r_lo > 0.0))
            throw ConfigError("grid needs r_lo > 0");
        if (!(cfg.r_lo < cfg.r_hi))
            throw ConfigError("grid needs r_lo < r_hi");
        if (!(cfg.r_lo <= 1.0 && 1.0 <= cfg.r_hi))
            throw ConfigError("radius range must contain 1");
        if (cfg.levels < 2)
            throw ConfigError("grid needs at least two time levels");
        if (!(cfg.horizon > 0.0) || !std::isfinite(cfg.horizon))
            throw ConfigError("time horizon must be positive");

        xs_.resize(cfg.nx);
        for (int i = 0; i < cfg.nx; ++i)
            xs_[i] = static_cast<double>(i) / static_cast<double>(cfg.nx - 1);

        rs_.resize(cfg.nr);
        const double dr = (cfg.r_hi - cfg.r_lo) / static_cast<double>(cfg.nr - 1);
        for (int j = 0; j < cfg.nr; ++j)
            rs_[j] = (j + 1 == cfg.nr) ? cfg.r_hi : cfg.r_lo + dr * static_cast<double>(j);
        // snap the node nearest to 1 onto 1 exactly
        int best = 0;
        for (int j = 1; j < cfg.nr; ++j)
            if (std::abs(rs_[j] - 1.0) < std::abs(rs_[best] - 1.0))
                best = j;
        rs_[best] = 1.0;
        unit_ = best;

        ts_.resize(cfg.levels);
        for (int k = 0; k < cfg.levels; ++k)
            ts_[k] = cfg.horizon * static_cast<double>(k) / static_cast<double>(cfg.levels - 1);
    }

    [[nodiscard]] const GridConfig& config() const noexcept { return cfg_; }
    [[nodiscard]] int nx() const noexcept { return cfg_.nx; }
    [[nodiscard]] int nr() const noexcept { return cfg_.nr; }
    [[nodiscard]] int size() const noexcept { return cfg_.nx * cfg_.nr; }
    [[nodiscard]] int levels() const noexcept { return cfg_.levels; }
    [[nodiscard]] double horizon() const noexcept { return cfg_.horizon; }
    [[nodiscard]] double time_step() const noexcept { return cfg_.horizon / static_cast<double>(cfg_.levels - 1); }
    [[nodiscard]] int unit_radius_index() const noexcept { return unit_; }

    [[nodiscard]] const std::vector<double>& xs() const noexcept { return xs_; }
    [[nodiscard]] const std::vector<double>& rs() const noexcept { return rs_; }
    [[nodiscard]] const std::vector<double>& ts() const noexcept { return ts_; }

    [[nodiscard]] int index(int ix, int ir) const noexcept { return ix * cfg_.nr + ir; }
    [[nodiscard]] int base_of(int j) const noexcept { return j / cfg_.nr; }
    [[nodiscard]] int radius_of(int j) const noexcept { return j % cfg_.nr; }
    [[nodiscard]] ConePoint node(int j) const { return ConePoint(xs_[base_of(j)], rs_[radius_of(j)]); }

    /// Flat index of the unit-radius node above base node ix.
    [[nodiscard]] int slice_node(int ix) const noexcept { return index(ix, unit_); }

    /// r_j^2 for every flat index.
    [[nodiscard]] Vector radius_sq() const
    {
        Vector w(size());
        for (int j = 0; j < size(); ++j)
            w[j] = rs_[radius_of(j)] * rs_[radius_of(j)];
        return w;
    }

private:
    GridConfig cfg_;
    std::vector<double> xs_;
    std::vector<double> rs_;
    std::vector<double> ts_;
    int unit_ = 0;
};

struct MapValue
{
    double h = 0.0;
    double jac = 1.0; ///< |h'(x)|
};

/**
 * Boundary map h : [0,1] -> [0,1]. Piecewise-linear maps are continuous and
 * described by interior breakpoints, one slope per piece and h(0). At a
 * breakpoint the Jacobian of the left piece is reported.
 */
class BoundaryMap
{
public:
    enum class Kind
    {
        PiecewiseLinear,
        Reflection,
        Identity
    };

    static BoundaryMap identity() { return BoundaryMap(Kind::Identity, {}, {1.0}, 0.0, "identity"); }

    static BoundaryMap reflection() { return BoundaryMap(Kind::Reflection, {}, {-1.0}, 1.0, "reflection"); }

    static BoundaryMap peakon() { return piecewise_linear({0.5}, {1.4, 0.6}, 0.0, "peakon"); }

    static BoundaryMap piecewise_linear(std::vector<double> breakpoints, std::vector<double> slopes, double h0,
                                        std::string name = "piecewise")
    {
        return BoundaryMap(Kind::PiecewiseLinear, std::move(breakpoints), std::move(slopes), h0, std::move(name));
    }

    [[nodiscard]] Kind kind() const noexcept { return kind_; }
    [[nodiscard]] const std::string& name() const noexcept { return name_; }
    [[nodiscard]] const std::vector<double>& breakpoints() const noexcept { return breaks_; }
    [[nodiscard]] const std::vector<double>& slopes() const noexcept { return slopes_; }
    [[nodiscard]] double offset() const noexcept { return h0_; }

    [[nodiscard]] MapValue operator()(double x) const
    {
        if (!(x >= 0.0 && x <= 1.0))
            throw GeometryError("boundary map argument outside [0,1]");
        switch (kind_)
        {
        case Kind::Identity:
            return {x, 1.0};
        case Kind::Reflection:
            return {1.0 - x, 1.0};
        case Kind::PiecewiseLinear:
            break;
        }
        double h = h0_;
        double left = 0.0;
        std::size_t piece = 0;
        for (; piece < breaks_.size() && x > breaks_[piece]; ++piece)
        {
            h += slopes_[piece] * (breaks_[piece] - left);
            left = breaks_[piece];
        }
        h += slopes_[piece] * (x - left);
        return {h, std::abs(slopes_[piece])};
    }

private:
    BoundaryMap(Kind kind, std::vector<double> breaks, std::vector<double> slopes, double h0, std::string name)
        : kind_(kind), breaks_(std::move(breaks)), slopes_(std::move(slopes)), h0_(h0), name_(std::move(name))
    {
        if (slopes_.size() != breaks_.size() + 1)
            throw ConfigError("boundary map needs exactly one more slope than breakpoints");
        double prev = 0.0;
        for (double b : breaks_)
        {
            if (!(b > prev && b < 1.0))
                throw ConfigError("breakpoints must be strictly increasing inside (0,1)");
            prev = b;
        }
        for (double s : slopes_)
            if (!(s != 0.0) || !std::isfinite(s))
                throw ConfigError("boundary map slopes must be finite and non-zero");
        // piecewise linear: the image of [0,1] is spanned by the knot values
        double h = h0_;
        double left = 0.0;
        auto check = [](double v) {
            if (v < -1e-12 || v > 1.0 + 1e-12)
                throw ConfigError("boundary map must send [0,1] into [0,1]");
        };
        check(h);
        for (std::size_t p = 0; p < slopes_.size(); ++p)
        {
            const double right = p < breaks_.size() ? breaks_[p] : 1.0;
            h += slopes_[p] * (right - left);
            check(h);
            left = right;
        }
    }

    Kind kind_;
    std::vector<double> breaks_;
    std::vector<double> slopes_;
    double h0_;
    std::string name_;
};

[[nodiscard]] inline MapValue boundary_eval(const BoundaryMap& map, double x) { return map(x); }

struct CostMatrices
{
    Matrix d0; ///< squared cone distances between grid nodes (N x N)
    Matrix d1; ///< squared distance from node i to the mapped endpoint of node j (N x N)
    std::vector<ConePoint> targets; ///< [h(x_i), sqrt(Jac h)(x_i)] per base node
    std::vector<std::string> warnings;
};

[[nodiscard]] inline CostMatrices build_cost_matrices(const Grid& grid, const BoundaryMap& map)
{
    const int n = grid.size();
    CostMatrices c;
    c.d0.resize(n, n);
    c.d1.resize(n, n);
    const auto& xs = grid.xs();
    const auto& rs = grid.rs();

    c.targets.reserve(grid.nx());
    for (int i = 0; i < grid.nx(); ++i)
    {
        const MapValue m = map(xs[i]);
        const double radius = std::sqrt(m.jac);
        if (radius < rs.front() || radius > rs.back())
            c.warnings.push_back("mapped radius " + std::to_string(radius) + " at x=" + std::to_string(xs[i]) +
                                 " lies outside the radial grid [" + std::to_string(rs.front()) + ", " +
                                 std::to_string(rs.back()) + "]");
        c.targets.emplace_back(std::min(std::max(m.h, 0.0), 1.0), radius);
    }
    if (map.kind() == BoundaryMap::Kind::PiecewiseLinear)
        for (double b : map.breakpoints())
            for (double x : xs)
                if (x == b)
                    c.warnings.push_back("grid node x=" + std::to_string(x) +
                                         " sits on a map breakpoint; using the left-piece Jacobian");

    for (int j = 0; j < n; ++j)
    {
        const double xj = xs[grid.base_of(j)];
        const double rj = rs[grid.radius_of(j)];
        for (int i = 0; i < n; ++i)
            c.d0(i, j) = cone_distance_sq(xs[grid.base_of(i)], rs[grid.radius_of(i)], xj, rj);
        c.d0(j, j) = 0.0;
    }
    for (int j = 0; j < n; ++j)
    {
        const ConePoint& t = c.targets[grid.base_of(j)];
        for (int i = 0; i < n; ++i)
            c.d1(i, j) = cone_distance_sq(xs[grid.base_of(i)], rs[grid.radius_of(i)], t.x(), t.r());
    }
    return c;
}

/**
 * Log-kernels of the cycle. The transition kernel is exp(-(K-1)/(T eps) D0);
 * the closing kernel exp(-(alpha/eps) D1) is stored only for columns in the
 * unit-radius first slice (N x nx), which encodes the initial condition.
 */
struct GibbsFactors
{
    Matrix log_xi; ///< N x N
    Matrix log_xi_close; ///< N x nx, column s is first-slice node slice_node(s)
    Matrix d0; ///< copy of D0 for action diagnostics
    Matrix d1_close; ///< D1 restricted like log_xi_close
    double epsilon = 1.0;
    double alpha = 1.0;
    double time_weight = 1.0; ///< (K-1)/T

    [[nodiscard]] Matrix xi() const { return log_xi.array().exp().matrix(); }
    [[nodiscard]] Matrix xi_close() const { return log_xi_close.array().exp().matrix(); }

    /// Largest magnitude of any log-kernel entry; dense kernels lose entries
    /// once this approaches the double exponent range.
    [[nodiscard]] double dynamic_range() const
    {
        return std::max(-log_xi.minCoeff(), -log_xi_close.minCoeff());
    }
};

[[nodiscard]] inline GibbsFactors build_gibbs(const CostMatrices& costs, const Grid& grid, double epsilon, double alpha)
{
    if (!(epsilon > 0.0) || !std::isfinite(epsilon))
        throw ConfigError("epsilon must be positive");
    if (!(alpha > 0.0) || !std::isfinite(alpha))
        throw ConfigError("alpha must be positive");
    GibbsFactors g;
    g.epsilon = epsilon;
    g.alpha = alpha;
    g.time_weight = static_cast<double>(grid.levels() - 1) / grid.horizon();
    g.d0 = costs.d0;
    g.log_xi = (-(g.time_weight / epsilon)) * costs.d0;
    g.d1_close.resize(grid.size(), grid.nx());
    for (int s = 0; s < grid.nx(); ++s)
        g.d1_close.col(s) = costs.d1.col(grid.slice_node(s));
    g.log_xi_close = (-(alpha / epsilon)) * g.d1_close;
    return g;
}

} // namespace chflow
