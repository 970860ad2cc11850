#pragma once
/**
 * @file  verification.hpp
 * @brief Self-checks runnable from the command line: cone geometry, the
 *        path-measure sandbox, the tiny-grid exhaustive oracle and the smooth
 *        reference integrator. Every randomized check is seeded.
 */

#include "cone_geometry.hpp"
#include "diagnostics.hpp"
#include "discretization.hpp"
#include "generalized_flows.hpp"
#include "mmot_solver.hpp"
#include "smooth_reference.hpp"
#include "testing/exhaustive_oracle.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace chflow
{

struct CheckResult
{
    std::string name;
    bool passed = false;
    std::string detail;
};

struct VerificationReport
{
    std::string suite;
    std::uint64_t seed = 0;
    std::vector<CheckResult> checks;

    [[nodiscard]] bool passed() const
    {
        return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.passed; });
    }
};

namespace verify_detail
{

inline std::string fmt(double v)
{
    std::ostringstream s;
    s.imbue(std::locale::classic());
    s.precision(6);
    s << std::scientific << v;
    return s.str();
}

inline CheckResult bound(std::string name, double observed, double limit)
{
    return {std::move(name), observed <= limit, "observed " + fmt(observed) + ", limit " + fmt(limit)};
}

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

inline ConePoint random_point(std::mt19937_64& rng, double r_max = 2.0)
{
    std::uniform_real_distribution<double> ux(0.0, 1.0);
    std::uniform_real_distribution<double> ur(0.0, r_max);
    return ConePoint(ux(rng), ur(rng));
}

} // namespace verify_detail

/// A random path measure: charged paths start away from the apex, interior
/// samples sometimes sit at the apex, some weights are zero.
[[nodiscard]] inline DiscretePathMeasure random_measure(std::mt19937_64& rng)
{
    std::uniform_int_distribution<int> samples(2, 12);
    std::uniform_int_distribution<int> count(1, 20);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const int k = samples(rng);
    const double horizon = 0.5 + 1.5 * unit(rng);
    const int n = count(rng);
    std::vector<ConePath> paths;
    std::vector<double> weights;
    for (int p = 0; p < n; ++p)
    {
        ConePath z;
        for (int s = 0; s < k; ++s)
        {
            const bool apex = s > 0 && unit(rng) < 0.05;
            z.emplace_back(unit(rng), apex ? 0.0 : 0.05 + 1.95 * unit(rng));
        }
        paths.push_back(std::move(z));
        weights.push_back(unit(rng) < 0.1 ? 0.0 : unit(rng));
    }
    return DiscretePathMeasure(uniform_times(k, horizon), std::move(paths), std::move(weights));
}

[[nodiscard]] inline VerificationReport verify_geometry(std::uint64_t seed)
{
    using namespace verify_detail;
    VerificationReport rep{"geometry", seed, {}};
    std::mt19937_64 rng(seed);

    const ConePoint a(0.0, 1.0);
    const ConePoint b(1.0, 1.0);
    rep.checks.push_back(bound("worked_distance", std::abs(cone_distance(a, b) - 0.958851), 1e-6));
    const ConePoint mid = cone_geodesic(a, b, 0.5);
    rep.checks.push_back(
        bound("worked_midpoint", std::max(std::abs(mid.x() - 0.5), std::abs(mid.r() - 0.877583)), 1e-6));

    double tri = 0.0;
    for (int i = 0; i < 10000; ++i)
    {
        const ConePoint p = random_point(rng), q = random_point(rng), r = random_point(rng);
        tri = std::max(tri, cone_distance(p, r) - cone_distance(p, q) - cone_distance(q, r));
    }
    rep.checks.push_back(bound("triangle_inequality", std::max(tri, 0.0), 1e-12));

    double iso = 0.0;
    double sym = 0.0;
    double geo = 0.0;
    double ends = 0.0;
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int i = 0; i < 2000; ++i)
    {
        const ConePoint p = random_point(rng), q = random_point(rng);
        const PlanarPoint dp = develop(p), dq = develop(q);
        const double d = cone_distance(p, q);
        iso = std::max(iso, std::abs(std::hypot(dp.u - dq.u, dp.v - dq.v) - d));
        sym = std::max(sym, std::abs(d - cone_distance(q, p)));
        const double s = unit(rng);
        const ConePoint g = cone_geodesic(p, q, s);
        geo = std::max(geo, std::abs(cone_distance(p, g) - s * d));
        geo = std::max(geo, std::abs(cone_distance(g, q) - (1.0 - s) * d));
        ends = std::max(ends, approx_equal(cone_geodesic(p, q, 0.0), p, 0.0) &&
                                      approx_equal(cone_geodesic(p, q, 1.0), q, 0.0)
                                  ? 0.0
                                  : 1.0);
    }
    rep.checks.push_back(bound("development_isometry", iso, 1e-12));
    rep.checks.push_back(bound("symmetry", sym, 1e-12));
    rep.checks.push_back(bound("geodesic_length_split", geo, 1e-12));
    rep.checks.push_back(bound("geodesic_endpoints_exact", ends, 0.0));
    rep.checks.push_back(bound("apex_distance", std::abs(cone_distance(ConePoint::apex(), ConePoint(0.7, 1.3)) - 1.3), 1e-15));
    return rep;
}

[[nodiscard]] inline VerificationReport verify_sandbox(std::uint64_t seed, int measures = 200)
{
    using namespace verify_detail;
    VerificationReport rep{"sandbox", seed, {}};
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    double homog = 0.0, dil_action = 0.0, dil_marg = 0.0, res_mass = 0.0, res_sigma = 0.0;
    for (int m = 0; m < measures; ++m)
    {
        const DiscretePathMeasure mu = random_measure(rng);
        const double lam = 0.1 + 3.0 * unit(rng);
        for (const auto& z : mu.paths())
        {
            ConePath scaled;
            for (const auto& pt : z)
                scaled.emplace_back(pt.x(), lam * pt.r());
            const double a = path_action(z, mu.horizon());
            homog = std::max(homog, rel_err(path_action(scaled, mu.horizon()), lam * lam * a));
        }
        const bool use_r0 = unit(rng) < 0.5;
        const PathFunctional sigma = use_r0 ? PathFunctional(sigma_initial_radius) : PathFunctional(sigma_energy);
        const double c = 0.2 + 2.0 * unit(rng);
        std::vector<double> theta = evaluate(mu, sigma);
        for (double& t : theta)
            t /= c;
        const DiscretePathMeasure d = dilate(mu, theta);
        dil_action = std::max(dil_action, rel_err(total_action(d), total_action(mu)));
        const int bins = 1 + static_cast<int>(unit(rng) * 10);
        for (int k = 0; k < mu.samples(); ++k)
        {
            const auto h0 = homogeneous_marginal(mu, k, bins);
            const auto h1 = homogeneous_marginal(d, k, bins);
            for (int b = 0; b < bins; ++b)
                dil_marg = std::max(dil_marg, rel_err(h1[b], h0[b]));
        }
        if (mu.mass() > 0.0)
        {
            const Rescaled r = rescale_to_unit(mu, sigma);
            res_mass = std::max(res_mass, std::abs(r.measure.mass() - 1.0));
            const auto s = evaluate(r.measure, sigma);
            for (std::size_t p = 0; p < s.size(); ++p)
                if (r.measure.weights()[p] > 0.0)
                    res_sigma = std::max(res_sigma, rel_err(s[p], r.scale));
        }
    }
    rep.checks.push_back(bound("action_2_homogeneity", homog, 1e-12));
    rep.checks.push_back(bound("dilation_action_invariance", dil_action, 1e-12));
    rep.checks.push_back(bound("dilation_marginal_invariance", dil_marg, 1e-12));
    rep.checks.push_back(bound("rescale_unit_mass", res_mass, 1e-12));
    rep.checks.push_back(bound("rescale_sigma_constant", res_sigma, 1e-12));

    // two constant paths r = 1 and r = 3 with weights 1/2 rescaled by sigma = r_0
    const auto ts = uniform_times(3, 1.0);
    const DiscretePathMeasure two(ts, {ConePath(3, ConePoint(0.2, 1.0)), ConePath(3, ConePoint(0.6, 3.0))}, {0.5, 0.5});
    const Rescaled r = rescale_to_unit(two, sigma_initial_radius);
    const double err = std::max({std::abs(r.measure.weights()[0] - 0.1), std::abs(r.measure.weights()[1] - 0.9),
                                 std::abs(r.scale - std::sqrt(5.0)),
                                 std::abs(r.measure.path(0)[1].r() - std::sqrt(5.0)),
                                 std::abs(r.measure.path(1)[1].r() - std::sqrt(5.0))});
    rep.checks.push_back(bound("two_path_rescaling", err, 1e-12));
    return rep;
}

[[nodiscard]] inline VerificationReport verify_oracle(std::uint64_t seed)
{
    using namespace verify_detail;
    VerificationReport rep{"oracle", seed, {}};
    const GridConfig gc{3, 2, 0.5, 1.0, 3, 1.0};
    const double eps = 0.1;
    const double alpha = 1.0;
    const Grid grid(gc);
    const GibbsFactors f = build_gibbs(build_cost_matrices(grid, BoundaryMap::identity()), grid, eps, alpha);

    testing::OracleProblem pb;
    pb.epsilon = eps;
    pb.alpha = alpha;
    const testing::ExhaustiveOracle oracle(pb);
    const testing::OracleResult ref = oracle.solve();

    SolverOptions opt;
    opt.tolerance = 1e-13;
    opt.max_sweeps = 10000;
    const SolveResult res = sinkhorn_solve(f, grid, opt);
    const PlanView view(f, grid, res.duals);

    double marg = 0.0, m2 = 0.0;
    for (int k = 0; k < grid.levels(); ++k)
    {
        const Vector s = view.marginal(k);
        const Vector mm = moment_M(s, grid, 2);
        for (int j = 0; j < grid.size(); ++j)
            marg = std::max(marg, std::abs(s[j] - ref.marginals[k][j]));
        for (int i = 0; i < grid.nx(); ++i)
            m2 = std::max(m2, std::abs(mm[i] - ref.m2[k][i]));
    }
    const ActionParts act = view.action();
    rep.checks.push_back(bound("marginals", marg, 1e-8));
    rep.checks.push_back(bound("moments", m2, 1e-8));
    rep.checks.push_back(bound("action", std::abs(act.total() - (ref.transport + ref.coupling)), 1e-8));
    rep.checks.push_back(bound("entropy", std::abs(view.entropy() - ref.entropy), 1e-8));
    rep.checks.push_back(bound("objective", std::abs(view.regularized_objective() - ref.objective), 1e-6));

    // zero duals: message passing against plain enumeration
    const DualPotentials zero(grid.levels(), grid.nx());
    const testing::OracleResult z = oracle.evaluate(std::vector<std::vector<double>>(3, std::vector<double>(3, 0.0)));
    const PlanView zv(f, grid, zero);
    double zerr = 0.0;
    for (int k = 0; k < grid.levels(); ++k)
    {
        const Vector s = zv.marginal(k);
        for (int j = 0; j < grid.size(); ++j)
            zerr = std::max(zerr, std::abs(s[j] - z.marginals[k][j]));
    }
    rep.checks.push_back(bound("zero_dual_marginals", zerr, 1e-12));
    return rep;
}

/// Global error at t = T of the P = 0 geodesic from [0,1] to [1,1].
[[nodiscard]] inline double free_geodesic_error(int steps)
{
    const ConePoint p(0.0, 1.0), q(1.0, 1.0);
    const Trajectory tr = integrate_geodesic({geodesic_initial_state(p, q, 1.0)}, Pressure::zero(), 1.0, steps);
    double err = 0.0;
    for (std::size_t n = 0; n < tr.ts.size(); ++n)
        err = std::max(err, cone_distance(position(tr.states[n][0]), cone_geodesic(p, q, tr.ts[n])));
    return err;
}

/// Max error of lambda against lambda_0 cos(sqrt(c) t) for the P = c radial case.
[[nodiscard]] inline double radial_cosine_error(int steps, double c = 2.0, double horizon = 1.0)
{
    LagrangianState s0;
    s0.phi = 0.3;
    s0.lambda = 1.2;
    const Trajectory tr = integrate_geodesic({s0}, Pressure::constant(c), horizon, steps);
    double err = 0.0;
    for (std::size_t n = 0; n < tr.ts.size(); ++n)
    {
        err = std::max(err, std::abs(tr.states[n][0].lambda - 1.2 * std::cos(std::sqrt(c) * tr.ts[n])));
        err = std::max(err, std::abs(tr.states[n][0].phi - 0.3));
    }
    return err;
}

/// A time-independent, spatially varying test pressure.
[[nodiscard]] inline Pressure sample_pressure()
{
    return {[](double, double x) { return 0.3 + 0.2 * std::cos(std::numbers::pi * x); },
            [](double, double x) { return -0.2 * std::numbers::pi * std::sin(std::numbers::pi * x); },
            [](double, double x) { return -0.2 * std::numbers::pi * std::numbers::pi * std::cos(std::numbers::pi * x); }};
}

[[nodiscard]] inline double energy_drift_at(int steps)
{
    std::vector<LagrangianState> atoms;
    for (int a = 0; a < 5; ++a)
        atoms.push_back({0.1 + 0.2 * a, 1.0, 0.3 - 0.1 * a, 0.2});
    const Pressure p = sample_pressure();
    return energy_drift(integrate_geodesic(atoms, p, 1.0, steps), p);
}

[[nodiscard]] inline VerificationReport verify_smooth(std::uint64_t seed)
{
    using namespace verify_detail;
    VerificationReport rep{"smooth", seed, {}};
    const double e1 = free_geodesic_error(40), e2 = free_geodesic_error(80), e3 = free_geodesic_error(160);
    const double order = std::log2(std::sqrt((e1 / e2) * (e2 / e3)));
    rep.checks.push_back({"free_geodesic_order", std::abs(order - 2.0) <= 0.2, "observed order " + fmt(order)});
    const double c1 = radial_cosine_error(40), c2 = radial_cosine_error(80);
    const double corder = std::log2(c1 / c2);
    rep.checks.push_back({"radial_cosine_order", std::abs(corder - 2.0) <= 0.2, "observed order " + fmt(corder)});
    const double d1 = energy_drift_at(40), d2 = energy_drift_at(80);
    const double dorder = std::log2(d1 / d2);
    rep.checks.push_back({"energy_drift_order", dorder >= 1.8, "observed order " + fmt(dorder)});

    // constant radius gives rho = 2; threshold 3/26 on |P|
    const Trajectory still = integrate_geodesic({LagrangianState{0.5, 1.0, 0.0, 0.0}}, Pressure::zero(), 1.0, 4);
    const double thr = 3.0 / 26.0;
    const bool below = gv_condition_check(still, Pressure::constant(thr * (1.0 - 1e-12)), 1.0).rho_condition;
    const bool at = gv_condition_check(still, Pressure::constant(thr), 1.0).rho_condition;
    const bool above = gv_condition_check(still, Pressure::constant(thr * (1.0 + 1e-12)), 1.0).rho_condition;
    rep.checks.push_back({"rho_threshold", below && !at && !above, "threshold 3/26 = " + fmt(thr)});

    // linear compression phi = x (1 - t/2), lambda = sqrt(1 - t/2)
    Trajectory comp;
    for (int n = 0; n <= 20; ++n)
    {
        const double t = n / 20.0;
        comp.ts.push_back(t);
        std::vector<LagrangianState> row;
        for (int a = 0; a <= 20; ++a)
        {
            const double x = a / 20.0;
            const double l = std::sqrt(1.0 - 0.5 * t);
            row.push_back({x * (1.0 - 0.5 * t), l, -0.5 * x, -0.25 / l});
        }
        comp.states.push_back(std::move(row));
    }
    rep.checks.push_back(bound("eulerian_linear_compression", eulerian_consistency(comp).max_residual, 1e-10));
    return rep;
}

[[nodiscard]] inline VerificationReport run_verification(const std::string& suite, std::uint64_t seed)
{
    if (suite == "geometry")
        return verify_geometry(seed);
    if (suite == "sandbox")
        return verify_sandbox(seed);
    if (suite == "oracle")
        return verify_oracle(seed);
    if (suite == "smooth")
        return verify_smooth(seed);
    throw std::invalid_argument("unknown verification suite '" + suite + "'");
}

} // namespace chflow
