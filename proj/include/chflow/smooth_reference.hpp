#pragma once
/**
 * @file  smooth_reference.hpp
 * @brief Deterministic reference flows on the cone for a prescribed pressure.
 *
 * Each base atom carries (phi, lambda) and obeys
 *
 *   lambda phi'' + 2 lambda' phi' + 1/2 lambda P_x(t, phi) = 0
 *   lambda''     - lambda phi'^2  + lambda P(t, phi)       = 0
 *
 * integrated with the implicit midpoint rule.
 */

#include "cone_geometry.hpp"
#include "generalized_flows.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

namespace chflow
{

class BlowUpError : public std::runtime_error
{
public:
    BlowUpError(int atom, double t, double lambda)
        : std::runtime_error("lambda reached the floor for atom " + std::to_string(atom) + " at t = " +
                             std::to_string(t) + " (lambda = " + std::to_string(lambda) + ")"),
          atom_(atom), time_(t)
    {
    }
    [[nodiscard]] int atom() const noexcept { return atom_; }
    [[nodiscard]] double time() const noexcept { return time_; }

private:
    int atom_;
    double time_;
};

inline constexpr double kLambdaFloor = 1e-8;

struct LagrangianState
{
    double phi = 0.0;
    double lambda = 1.0;
    double dphi = 0.0;
    double dlambda = 0.0;
};

/// P(t, x) with its first and second spatial derivatives.
struct Pressure
{
    ScalarField value;
    ScalarField gradient;
    ScalarField hessian; ///< may be empty; then differenced from `gradient`

    static Pressure zero() { return constant(0.0); }

    static Pressure constant(double c)
    {
        return {[c](double, double) { return c; }, [](double, double) { return 0.0; },
                [](double, double) { return 0.0; }};
    }

    [[nodiscard]] double second(double t, double x) const
    {
        if (hessian)
            return hessian(t, x);
        constexpr double h = 1e-5;
        return (gradient(t, x + h) - gradient(t, x - h)) / (2.0 * h);
    }
};

struct Trajectory
{
    std::vector<double> ts;
    std::vector<std::vector<LagrangianState>> states; ///< states[n][atom]

    [[nodiscard]] int atoms() const { return states.empty() ? 0 : static_cast<int>(states.front().size()); }
};

namespace detail
{

using Vec4 = std::array<double, 4>;

inline Vec4 geodesic_rhs(double t, const Vec4& y, const Pressure& p)
{
    const double phi = y[0];
    const double lam = y[1];
    const double dphi = y[2];
    const double dlam = y[3];
    const double pv = p.value(t, phi);
    const double pg = p.gradient(t, phi);
    if (!std::isfinite(pv) || !std::isfinite(pg))
        throw std::domain_error("pressure is not finite at t = " + std::to_string(t) + ", x = " + std::to_string(phi));
    return {dphi, dlam, -2.0 * dlam * dphi / lam - 0.5 * pg, lam * dphi * dphi - lam * pv};
}

/// One implicit-midpoint step, solved by fixed-point iteration.
inline Vec4 midpoint_step(double t, double h, const Vec4& y, const Pressure& p)
{
    Vec4 next = y;
    const Vec4 f0 = geodesic_rhs(t, y, p);
    for (std::size_t i = 0; i < 4; ++i)
        next[i] = y[i] + h * f0[i];
    for (int it = 0; it < 100; ++it)
    {
        Vec4 mid;
        for (std::size_t i = 0; i < 4; ++i)
            mid[i] = 0.5 * (y[i] + next[i]);
        const Vec4 f = geodesic_rhs(t + 0.5 * h, mid, p);
        double change = 0.0;
        for (std::size_t i = 0; i < 4; ++i)
        {
            const double v = y[i] + h * f[i];
            change = std::max(change, std::abs(v - next[i]));
            next[i] = v;
        }
        if (change <= 1e-15 * (1.0 + std::abs(next[1])))
            break;
    }
    return next;
}

} // namespace detail

/// Integrate every atom from t = 0 to `horizon` with `steps` equal steps.
[[nodiscard]] inline Trajectory integrate_geodesic(const std::vector<LagrangianState>& state0, const Pressure& pressure,
                                                   double horizon, int steps, double lambda_floor = kLambdaFloor)
{
    if (steps < 1 || !(horizon > 0.0))
        throw std::invalid_argument("integrate_geodesic: need steps >= 1 and a positive horizon");
    for (const auto& s : state0)
        if (!(s.lambda > 0.0))
            throw std::invalid_argument("integrate_geodesic: initial lambda must be positive");
    const double h = horizon / steps;
    Trajectory tr;
    tr.ts.resize(steps + 1);
    tr.states.assign(steps + 1, state0);
    for (int n = 0; n <= steps; ++n)
        tr.ts[n] = h * n;
    for (std::size_t a = 0; a < state0.size(); ++a)
    {
        detail::Vec4 y{state0[a].phi, state0[a].lambda, state0[a].dphi, state0[a].dlambda};
        for (int n = 0; n < steps; ++n)
        {
            y = detail::midpoint_step(tr.ts[n], h, y, pressure);
            if (!(y[1] > lambda_floor))
                throw BlowUpError(static_cast<int>(a), tr.ts[n + 1], y[1]);
            tr.states[n + 1][a] = {y[0], y[1], y[2], y[3]};
        }
    }
    return tr;
}

/// Initial state of the constant-speed cone geodesic from p to q over [0, T].
[[nodiscard]] inline LagrangianState geodesic_initial_state(const ConePoint& p, const ConePoint& q, double horizon)
{
    if (p.is_apex())
        throw std::invalid_argument("geodesic_initial_state: the start must not be the apex");
    const PlanarPoint a = develop(p);
    const PlanarPoint b = develop(q);
    const double du = (b.u - a.u) / horizon;
    const double dv = (b.v - a.v) / horizon;
    const double r2 = a.u * a.u + a.v * a.v;
    LagrangianState s;
    s.phi = p.x();
    s.lambda = p.r();
    s.dlambda = (a.u * du + a.v * dv) / p.r();
    s.dphi = (a.u * dv - a.v * du) / r2;
    return s;
}

/// lambda^2 phi'^2 + lambda'^2 + P lambda^2
[[nodiscard]] inline double atom_energy(const LagrangianState& s, double t, const Pressure& p)
{
    return s.lambda * s.lambda * s.dphi * s.dphi + s.dlambda * s.dlambda + p.value(t, s.phi) * s.lambda * s.lambda;
}

/// Largest |E(t) - E(0)| over all atoms and times.
[[nodiscard]] inline double energy_drift(const Trajectory& tr, const Pressure& p)
{
    double drift = 0.0;
    for (int a = 0; a < tr.atoms(); ++a)
    {
        const double e0 = atom_energy(tr.states.front()[a], tr.ts.front(), p);
        for (std::size_t n = 1; n < tr.states.size(); ++n)
            drift = std::max(drift, std::abs(atom_energy(tr.states[n][a], tr.ts[n], p) - e0));
    }
    return drift;
}

[[nodiscard]] inline ConePoint position(const LagrangianState& s) { return ConePoint(s.phi, s.lambda); }

struct EulerianReport
{
    bool invertible = true;
    double max_residual = 0.0; ///< max |2 alpha - u_x| over interior nodes and times
    double worst_time = 0.0;
    double worst_x = 0.0;
};

/**
 * Rebuild u = phi' o phi^{-1} and alpha = (lambda'/lambda) o phi^{-1} by
 * linear interpolation between atoms and compare 2 alpha with the central
 * difference of u on `nodes` uniform points spanning the atoms' range.
 * Atoms must stay strictly ordered in phi; otherwise `invertible` is false.
 */
[[nodiscard]] inline EulerianReport eulerian_consistency(const Trajectory& tr, int nodes = 41)
{
    if (nodes < 3)
        throw std::invalid_argument("eulerian_consistency: need at least three nodes");
    EulerianReport rep;
    const int atoms = tr.atoms();
    if (atoms < 2)
        throw std::invalid_argument("eulerian_consistency: need at least two atoms");
    std::vector<double> xs(atoms), u(atoms), al(atoms);
    for (std::size_t n = 0; n < tr.states.size(); ++n)
    {
        for (int a = 0; a < atoms; ++a)
        {
            const auto& s = tr.states[n][a];
            xs[a] = s.phi;
            u[a] = s.dphi;
            al[a] = s.dlambda / s.lambda;
            if (a > 0 && !(xs[a] > xs[a - 1]))
            {
                rep.invertible = false;
                rep.max_residual = std::numeric_limits<double>::infinity();
                rep.worst_time = tr.ts[n];
                return rep;
            }
        }
        const auto interp = [&](const std::vector<double>& v, double x) {
            const auto it = std::upper_bound(xs.begin(), xs.end(), x);
            const auto hi = std::clamp<std::ptrdiff_t>(it - xs.begin(), 1, atoms - 1);
            const double t = (x - xs[hi - 1]) / (xs[hi] - xs[hi - 1]);
            return (1.0 - t) * v[hi - 1] + t * v[hi];
        };
        const double lo = xs.front();
        const double dx = (xs.back() - lo) / (nodes - 1);
        for (int i = 1; i + 1 < nodes; ++i)
        {
            const double x = lo + dx * i;
            const double div = (interp(u, x + dx) - interp(u, x - dx)) / (2.0 * dx);
            const double res = std::abs(2.0 * interp(al, x) - div);
            if (res > rep.max_residual)
            {
                rep.max_residual = res;
                rep.worst_time = tr.ts[n];
                rep.worst_x = x;
            }
        }
    }
    return rep;
}

struct GvReport
{
    double r_min = 0.0;
    double r_max = 0.0;
    double rho = 0.0; ///< 2 r_max / r_min
    double pressure_sup = 0.0;
    bool rho_condition = false; ///< [rho^2 + (rho + 1)^2] |P| < 3 / (2 T^2)
    double margin = 0.0; ///< right side minus left side
    double hessian_bound_required = 0.0; ///< pi^2 C0 / T^2
    double hessian_bound_observed = 0.0; ///< max operator norm of the 2x2 block
    bool oscillation_ok = false; ///< every atom stays within r_min / 4 of itself
    double max_oscillation = 0.0;
};

/// Left side of the rho condition.
[[nodiscard]] inline double rho_condition_lhs(double rho, double pressure_sup)
{
    return (rho * rho + (rho + 1.0) * (rho + 1.0)) * pressure_sup;
}

/**
 * Short-time optimality conditions along a trajectory. |P| is sampled on the
 * trajectory times at the atom positions and on a uniform 101-point base grid;
 * the Hessian block [[2P + P_xx, P_x], [P_x, 2P]] at the atom positions.
 */
[[nodiscard]] inline GvReport gv_condition_check(const Trajectory& tr, const Pressure& p, double horizon,
                                                 double c0 = 1.0)
{
    if (!(horizon > 0.0) || !(c0 > 0.0))
        throw std::invalid_argument("gv_condition_check: horizon and C0 must be positive");
    GvReport rep;
    rep.r_min = std::numeric_limits<double>::infinity();
    for (const auto& row : tr.states)
        for (const auto& s : row)
        {
            rep.r_min = std::min(rep.r_min, s.lambda);
            rep.r_max = std::max(rep.r_max, s.lambda);
        }
    rep.rho = 2.0 * rep.r_max / rep.r_min;

    for (std::size_t n = 0; n < tr.states.size(); ++n)
    {
        const double t = tr.ts[n];
        for (int i = 0; i <= 100; ++i)
            rep.pressure_sup = std::max(rep.pressure_sup, std::abs(p.value(t, i / 100.0)));
        for (const auto& s : tr.states[n])
        {
            const double pv = p.value(t, s.phi);
            const double pg = p.gradient(t, s.phi);
            const double ph = p.second(t, s.phi);
            rep.pressure_sup = std::max(rep.pressure_sup, std::abs(pv));
            const Eigen::Matrix2d hess{{2.0 * pv + ph, pg}, {pg, 2.0 * pv}};
            const double norm = hess.selfadjointView<Eigen::Lower>().eigenvalues().cwiseAbs().maxCoeff();
            rep.hessian_bound_observed = std::max(rep.hessian_bound_observed, norm);
        }
    }
    const double rhs = 3.0 / (2.0 * horizon * horizon);
    const double lhs = rho_condition_lhs(rep.rho, rep.pressure_sup);
    rep.rho_condition = lhs < rhs;
    rep.margin = rhs - lhs;
    rep.hessian_bound_required = std::numbers::pi * std::numbers::pi * c0 / (horizon * horizon);

    for (int a = 0; a < tr.atoms(); ++a)
        for (std::size_t n0 = 0; n0 < tr.states.size(); ++n0)
            for (std::size_t n1 = n0 + 1; n1 < tr.states.size(); ++n1)
                rep.max_oscillation = std::max(rep.max_oscillation, cone_distance(position(tr.states[n0][a]),
                                                                                  position(tr.states[n1][a])));
    rep.oscillation_ok = rep.max_oscillation <= rep.r_min / 4.0;
    return rep;
}

/// Sample a trajectory onto the generalized-flow representation.
[[nodiscard]] inline DiscretePathMeasure lift_trajectory(const Trajectory& tr, std::vector<double> masses)
{
    std::vector<std::vector<double>> phi(tr.atoms()), lam(tr.atoms());
    for (int a = 0; a < tr.atoms(); ++a)
        for (const auto& row : tr.states)
        {
            phi[a].push_back(row[a].phi);
            lam[a].push_back(row[a].lambda);
        }
    return lift_deterministic(phi, lam, std::move(masses), tr.ts);
}

} // namespace chflow
