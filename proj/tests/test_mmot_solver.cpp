#include <chflow/mmot_solver.hpp>
#include <chflow/testing/exhaustive_oracle.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace chflow;

namespace
{

struct Tiny
{
    Grid grid{GridConfig{3, 2, 0.5, 1.0, 3, 1.0}};
    GibbsFactors factors;
    explicit Tiny(double eps = 0.1, double alpha = 1.0, const BoundaryMap& map = BoundaryMap::identity())
        : factors(build_gibbs(build_cost_matrices(grid, map), grid, eps, alpha))
    {
    }
};

DualPotentials random_duals(const Grid& g, std::mt19937_64& rng, double scale = 1.0)
{
    std::normal_distribution<double> n(0.0, scale);
    DualPotentials d(g.levels(), g.nx());
    for (int k = 0; k < g.levels(); ++k)
        for (int i = 0; i < g.nx(); ++i)
            d.values(k, i) = n(rng);
    return d;
}

std::vector<std::vector<double>> as_rows(const DualPotentials& d)
{
    std::vector<std::vector<double>> out(d.levels(), std::vector<double>(d.nx()));
    for (int k = 0; k < d.levels(); ++k)
        for (int i = 0; i < d.nx(); ++i)
            out[k][i] = d.values(k, i);
    return out;
}

double bisect(const std::function<double(double)>& f, double lo, double hi)
{
    for (int it = 0; it < 300; ++it)
    {
        const double mid = 0.5 * (lo + hi);
        (f(mid) < 0.0 ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

SolverOptions plain(double tol = 1e-10, int sweeps = 20000)
{
    SolverOptions o;
    o.tolerance = tol;
    o.max_sweeps = sweeps;
    o.anderson_depth = 0;
    o.newton_every = 0;
    return o;
}

} // namespace

TEST(MomentM, Examples)
{
    const Grid g(GridConfig{3, 2, 1.0, 2.0, 2, 1.0}); // radii {1, 2}
    Vector a(g.size());
    for (int j = 0; j < g.size(); ++j)
        a[j] = j + 1.0;
    const Vector m0 = moment_M(a, g, 0);
    EXPECT_EQ(m0[0], 1.0 + 2.0);
    EXPECT_EQ(m0[2], 5.0 + 6.0);

    Vector single = Vector::Zero(g.size());
    single[g.index(1, 1)] = 0.3;
    const Vector m2 = moment_M(single, g, 2);
    EXPECT_DOUBLE_EQ(m2[1], 1.2);
    EXPECT_EQ(m2[0], 0.0);
    EXPECT_EQ(m2[2], 0.0);

    const Vector uni = Vector::Constant(g.size(), 1.0 / g.size());
    const Vector mu = moment_M(uni, g, 2);
    for (int i = 0; i < g.nx(); ++i)
        EXPECT_NEAR(mu[i], 5.0 / g.size(), 1e-15);

    EXPECT_THROW((void)moment_M(uni, g, 3), std::invalid_argument);
}

TEST(NewtonDualUpdate, SingleTermClosedForm)
{
    Matrix b(1, 1);
    b << 0.5;
    const std::vector<double> r{1.0};
    EXPECT_NEAR(newton_dual_update(b, r, 0.25)[0], std::log(0.5), 1e-15);
}

TEST(NewtonDualUpdate, MatchesBisection)
{
    Matrix b(1, 2);
    b << 1.0, 1.0;
    const std::vector<double> r{1.0, 2.0};
    const double p = newton_dual_update(b, r, 1.0)[0];
    const double ref = bisect([](double q) { return std::exp(q) + 4.0 * std::exp(4.0 * q) - 1.0; }, -10.0, 10.0);
    EXPECT_NEAR(p, ref, 1e-10);
}

TEST(NewtonDualUpdate, ScalingShiftsRootAtUnitRadius)
{
    Matrix b(1, 2);
    b << 0.3, 0.7;
    const std::vector<double> r{1.0, 1.0};
    const double p = newton_dual_update(b, r, 0.2)[0];
    for (double c : {0.01, 3.0, 1e5})
        EXPECT_NEAR(newton_dual_update(c * b, r, 0.2)[0], p - std::log(c), 1e-12);
}

TEST(NewtonDualUpdate, ResidualAndUniquenessProperty)
{
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const std::vector<double> r{0.5, 0.9, 1.0, 1.4};
    for (int t = 0; t < 200; ++t)
    {
        Matrix b(1, 4);
        for (int j = 0; j < 4; ++j)
            b(0, j) = u(rng) < 0.3 ? 0.0 : std::exp(40.0 * (u(rng) - 0.5));
        if (b.maxCoeff() == 0.0)
            b(0, 2) = 1.0;
        const double target = std::exp(10.0 * (u(rng) - 0.5));
        const double p = newton_dual_update(b, r, target)[0];
        double f = 0.0;
        for (int j = 0; j < 4; ++j)
            f += b(0, j) * std::exp(p * r[j] * r[j]) * r[j] * r[j];
        EXPECT_LE(std::abs(f - target), 1e-12 * target);
    }
}

TEST(NewtonDualUpdate, StarvedRowReported)
{
    Matrix b(2, 2);
    b << 0.0, 0.0, 1.0, 1.0;
    const std::vector<double> r{1.0, 2.0};
    try
    {
        (void)newton_dual_update(b, r, 1.0);
        FAIL() << "expected a starved node";
    }
    catch (const StarvedNodeError& e)
    {
        ASSERT_EQ(e.nodes().size(), 1U);
        EXPECT_EQ(e.nodes()[0], 0);
    }
}

TEST(NewtonDualUpdate, RejectsBadInput)
{
    Matrix b(1, 2);
    b << -1.0, 1.0;
    const std::vector<double> r{1.0, 2.0};
    EXPECT_THROW((void)newton_dual_update(b, r, 1.0), std::invalid_argument);
    b << 1.0, 1.0;
    EXPECT_THROW((void)newton_dual_update(b, r, 0.0), std::invalid_argument);
}

TEST(WeightedKernels, ZeroDualsGiveBareKernels)
{
    const Tiny t;
    const WeightedKernels w = weighted_kernels(t.factors, t.grid, DualPotentials(3, 3));
    ASSERT_EQ(w.transitions.size(), 2U);
    EXPECT_TRUE(w.transitions[0].isApprox(t.factors.xi(), 1e-15));
    EXPECT_TRUE(w.closing.isApprox(t.factors.xi_close(), 1e-15));
}

TEST(WeightedKernels, SingleDualScalesRows)
{
    const Tiny t;
    DualPotentials d(3, 3);
    d.values(1, 2) = 0.7;
    const WeightedKernels w = weighted_kernels(t.factors, t.grid, d);
    const Matrix xi = t.factors.xi();
    for (int j = 0; j < t.grid.size(); ++j)
    {
        const double r = t.grid.rs()[t.grid.radius_of(j)];
        const double s = t.grid.base_of(j) == 2 ? std::exp(0.7 * r * r) : 1.0;
        EXPECT_TRUE(w.transitions[1].row(j).isApprox(s * xi.row(j), 1e-14));
        EXPECT_TRUE(w.transitions[0].row(j).isApprox(xi.row(j), 1e-15));
    }
    // on the unit-radius slice the factor is exactly e^c
    const int j = t.grid.slice_node(2);
    EXPECT_NEAR(w.transitions[1](j, 0) / xi(j, 0), std::exp(0.7), 1e-14);
}

TEST(WeightedKernels, PlanEntriesMatchClosedForm)
{
    const Tiny t;
    std::mt19937_64 rng(29);
    const DualPotentials d = random_duals(t.grid, rng);
    const WeightedKernels w = weighted_kernels(t.factors, t.grid, d);
    const auto& xs = t.grid.xs();
    const auto& rs = t.grid.rs();
    auto d2 = [&](int a, int b) {
        const double x1 = xs[t.grid.base_of(a)], x2 = xs[t.grid.base_of(b)];
        const double r1 = rs[t.grid.radius_of(a)], r2 = rs[t.grid.radius_of(b)];
        return r1 * r1 + r2 * r2 - 2 * r1 * r2 * std::cos(std::abs(x1 - x2));
    };
    for (int s = 0; s < 3; ++s)
        for (int j2 = 0; j2 < t.grid.size(); ++j2)
            for (int j3 = 0; j3 < t.grid.size(); ++j3)
            {
                const int j1 = t.grid.slice_node(s);
                const double xe = xs[t.grid.base_of(j3)], re = rs[t.grid.radius_of(j3)];
                const double end = re * re + 1.0 - 2 * re * std::cos(std::abs(xe - xs[s]));
                const double cost = 2.0 * (d2(j1, j2) + d2(j2, j3)) + 1.0 * end;
                double e = -cost / 0.1;
                for (int k = 0; k < 3; ++k)
                {
                    const int j = k == 0 ? j1 : (k == 1 ? j2 : j3);
                    const double r = rs[t.grid.radius_of(j)];
                    e += d.values(k, t.grid.base_of(j)) * r * r;
                }
                const double mu = w.transitions[0](j1, j2) * w.transitions[1](j2, j3) * w.closing(j3, s);
                EXPECT_NEAR(mu, std::exp(e), 1e-12 * std::max(1.0, std::exp(e)));
            }
}

TEST(MarginalS, MatchesExhaustiveTensor)
{
    const Tiny t;
    const chflow::testing::ExhaustiveOracle oracle(chflow::testing::OracleProblem{});
    std::mt19937_64 rng(31);
    for (int trial = 0; trial < 6; ++trial)
    {
        const DualPotentials d = trial == 0 ? DualPotentials(3, 3) : random_duals(t.grid, rng, 0.5);
        const chflow::testing::OracleResult ref = oracle.evaluate(as_rows(d));
        for (int k = 0; k < 3; ++k)
        {
            const Vector s = marginal_S(t.factors, t.grid, d, k);
            for (int j = 0; j < t.grid.size(); ++j)
                EXPECT_NEAR(s[j], ref.marginals[k][j], 1e-12 * std::max(1.0, ref.mass));
        }
    }
}

TEST(MarginalS, SingleKernelChain)
{
    const Grid g(GridConfig{4, 3, 0.5, 1.5, 2, 1.0});
    GibbsFactors f = build_gibbs(build_cost_matrices(g, BoundaryMap::identity()), g, 0.3, 1.0);
    f.log_xi_close.setZero();
    const Vector s = marginal_S(f, g, DualPotentials(2, 4), 0);
    const Matrix xi = f.xi();
    for (int i = 0; i < 4; ++i)
        EXPECT_NEAR(s[g.slice_node(i)], xi.row(g.slice_node(i)).sum(), 1e-12);
}

TEST(MarginalS, MassIndependentOfLevelAndFirstSliceSupport)
{
    const Grid g(GridConfig{5, 4, 0.5, 1.5, 5, 1.0});
    const GibbsFactors f = build_gibbs(build_cost_matrices(g, BoundaryMap::peakon()), g, 0.05, 5.0);
    std::mt19937_64 rng(37);
    for (int trial = 0; trial < 5; ++trial)
    {
        const DualPotentials d = random_duals(g, rng, 0.3);
        const double m0 = marginal_S(f, g, d, 0).sum();
        for (int k = 1; k < g.levels(); ++k)
            EXPECT_NEAR(marginal_S(f, g, d, k).sum(), m0, 1e-12 * m0);
        const Vector s1 = marginal_S(f, g, d, 0);
        for (int j = 0; j < g.size(); ++j)
            if (g.radius_of(j) != g.unit_radius_index())
                EXPECT_EQ(s1[j], 0.0);
    }
    EXPECT_THROW((void)marginal_S(f, g, DualPotentials(5, 5), 5), std::out_of_range);
}

TEST(DualObjective, ZeroDualsGiveMinusMass)
{
    const Tiny t;
    const chflow::testing::ExhaustiveOracle oracle(chflow::testing::OracleProblem{});
    const double mass = oracle.evaluate(std::vector<std::vector<double>>(3, std::vector<double>(3, 0.0))).mass;
    EXPECT_NEAR(dual_objective(t.factors, t.grid, DualPotentials(3, 3)), -mass, 1e-12 * mass);
}

TEST(SinkhornSolve, MatchesOracleOnTinyGrid)
{
    const Tiny t;
    const chflow::testing::OracleResult ref = chflow::testing::ExhaustiveOracle(chflow::testing::OracleProblem{}).solve();
    SolverOptions opt;
    opt.tolerance = 1e-13;
    const SolveResult res = sinkhorn_solve(t.factors, t.grid, opt);
    ASSERT_TRUE(res.report.converged);
    const DualPotentials a = gauge_fixed(res.duals);
    DualPotentials b(3, 3);
    for (int k = 0; k < 3; ++k)
        for (int i = 0; i < 3; ++i)
            b.values(k, i) = ref.duals[k][i];
    b = gauge_fixed(b);
    EXPECT_LT((a.values - b.values).cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_NEAR(dual_objective(t.factors, t.grid, res.duals), ref.dual_objective, 1e-10);
}

TEST(SinkhornSolve, ConvergedStateSatisfiesConstraints)
{
    const Grid g(GridConfig{6, 5, 0.6, 1.4, 4, 1.0});
    const GibbsFactors f = build_gibbs(build_cost_matrices(g, BoundaryMap::peakon()), g, 0.05, 10.0);
    const SolveResult res = sinkhorn_solve(f, g, SolverOptions{});
    ASSERT_TRUE(res.report.converged);
    EXPECT_LT(res.report.final_violation, 1e-7);
    for (int k = 0; k < g.levels(); ++k)
    {
        const Vector m2 = moment_M(marginal_S(f, g, res.duals, k), g, 2);
        for (int i = 0; i < g.nx(); ++i)
            EXPECT_NEAR(m2[i] * g.nx(), 1.0, 1e-7);
    }
    for (double v : res.report.violation_history)
        EXPECT_TRUE(std::isfinite(v));
    EXPECT_LE(res.report.max_newton_residual, 1e-12);
}

TEST(SinkhornSolve, ConvergedFlagTracksFinalViolation)
{
    const Grid g(GridConfig{6, 5, 0.6, 1.4, 4, 1.0});
    const GibbsFactors f = build_gibbs(build_cost_matrices(g, BoundaryMap::peakon()), g, 0.05, 10.0);
    const SolveResult res = sinkhorn_solve(f, g, plain(1e-12, 3));
    EXPECT_FALSE(res.report.converged);
    EXPECT_EQ(res.report.iterations, 3);
    EXPECT_GE(res.report.final_violation, 1e-12);
    EXPECT_EQ(res.report.violation_history.size(), 3U);
}

TEST(SinkhornSolve, DualAscentIsMonotone)
{
    const Grid g(GridConfig{6, 5, 0.6, 1.4, 5, 1.0});
    const GibbsFactors f = build_gibbs(build_cost_matrices(g, BoundaryMap::reflection()), g, 0.02, 20.0);
    for (const SolverOptions& opt : {plain(1e-9, 3000), SolverOptions{}})
    {
        const SolveResult res = sinkhorn_solve(f, g, opt);
        const auto& h = res.report.dual_objective_history;
        for (std::size_t n = 1; n < h.size(); ++n)
            EXPECT_GE(h[n], h[n - 1] - 1e-10);
    }
}

TEST(SinkhornSolve, SingleBlockUpdateDoesNotDecreaseObjective)
{
    const Grid g(GridConfig{4, 3, 0.6, 1.4, 4, 1.0});
    const GibbsFactors f = build_gibbs(build_cost_matrices(g, BoundaryMap::peakon()), g, 0.1, 5.0);
    std::mt19937_64 rng(41);
    for (int trial = 0; trial < 10; ++trial)
    {
        DualPotentials d = random_duals(g, rng, 0.5);
        const double before = dual_objective(f, g, d);
        const int k = trial % g.levels();
        // exact block update of level k from the marginal without its own weight
        const Vector s = marginal_S(f, g, d, k);
        Matrix b(g.nx(), g.nr());
        for (int j = 0; j < g.size(); ++j)
        {
            const double r = g.rs()[g.radius_of(j)];
            b(g.base_of(j), g.radius_of(j)) = s[j] * std::exp(-d.values(k, g.base_of(j)) * r * r);
        }
        if (k == 0)
            for (int j = 0; j < g.size(); ++j)
                if (g.radius_of(j) != g.unit_radius_index())
                    b(g.base_of(j), g.radius_of(j)) = 0.0;
        d.values.row(k) = newton_dual_update(b, g.rs(), 1.0 / g.nx()).transpose();
        EXPECT_GE(dual_objective(f, g, d), before - 1e-10);
        const Vector m2 = moment_M(marginal_S(f, g, d, k), g, 2);
        for (int i = 0; i < g.nx(); ++i)
            EXPECT_NEAR(m2[i], 1.0 / g.nx(), 1e-12);
    }
}

TEST(SinkhornSolve, AccelerationDoesNotChangeTheFixedPoint)
{
    const Grid g(GridConfig{6, 5, 0.6, 1.4, 5, 1.0});
    const GibbsFactors f = build_gibbs(build_cost_matrices(g, BoundaryMap::peakon()), g, 0.02, 20.0);
    const SolveResult a = sinkhorn_solve(f, g, plain(1e-11, 50000));
    SolverOptions o;
    o.tolerance = 1e-11;
    const SolveResult b = sinkhorn_solve(f, g, o);
    ASSERT_TRUE(a.report.converged);
    ASSERT_TRUE(b.report.converged);
    EXPECT_LT((a.duals.values - b.duals.values).cwiseAbs().maxCoeff(), 1e-7);
    EXPECT_LE(b.report.iterations, a.report.iterations);
}

TEST(SinkhornSolve, DenseAndLogDomainsAgree)
{
    const Grid g(GridConfig{5, 4, 0.6, 1.4, 4, 1.0});
    const GibbsFactors f = build_gibbs(build_cost_matrices(g, BoundaryMap::peakon()), g, 0.05, 10.0);
    SolverOptions o;
    o.tolerance = 1e-11;
    o.log_domain = LogDomainMode::Off;
    const SolveResult dense = sinkhorn_solve(f, g, o);
    o.log_domain = LogDomainMode::On;
    const SolveResult logd = sinkhorn_solve(f, g, o);
    EXPECT_EQ(dense.report.domain, "dense");
    EXPECT_EQ(logd.report.domain, "log");
    EXPECT_LT((dense.duals.values - logd.duals.values).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(SinkhornSolve, AutoModeChoosesLogForSmallEpsilon)
{
    const Grid g(GridConfig{5, 4, 0.6, 1.4, 4, 1.0});
    const GibbsFactors f = build_gibbs(build_cost_matrices(g, BoundaryMap::peakon()), g, 1e-3, 10.0);
    EXPECT_TRUE(prefers_log_domain(f));
    SolverOptions o;
    o.max_sweeps = 2;
    EXPECT_EQ(sinkhorn_solve(f, g, o).report.domain, "log");
    const GibbsFactors mild = build_gibbs(build_cost_matrices(g, BoundaryMap::peakon()), g, 0.5, 1.0);
    EXPECT_FALSE(prefers_log_domain(mild));
    EXPECT_EQ(sinkhorn_solve(mild, g, o).report.domain, "dense");
}

TEST(SinkhornSolve, DenseModeUnderflowIsReported)
{
    const Grid g(GridConfig{6, 5, 0.6, 1.4, 4, 1.0});
    const GibbsFactors f = build_gibbs(build_cost_matrices(g, BoundaryMap::reflection()), g, 1e-4, 40.0);
    SolverOptions o;
    o.log_domain = LogDomainMode::Off;
    o.max_sweeps = 5;
    bool signalled = false;
    try
    {
        (void)sinkhorn_solve(f, g, o);
    }
    catch (const StarvedNodeError&)
    {
        signalled = true;
    }
    catch (const NumericalOverflow&)
    {
        signalled = true;
    }
    EXPECT_TRUE(signalled);
    o.log_domain = LogDomainMode::Auto;
    EXPECT_NO_THROW((void)sinkhorn_solve(f, g, o));
}

TEST(SinkhornSolve, LogsOneLinePerSweep)
{
    const Tiny t;
    std::ostringstream log;
    SolverOptions o = plain(1e-9, 4);
    o.log = &log;
    (void)sinkhorn_solve(t.factors, t.grid, o);
    const std::string s = log.str();
    EXPECT_NE(s.find("sweep=1 violation="), std::string::npos);
    EXPECT_NE(s.find("sweep=4 violation="), std::string::npos);
    EXPECT_NE(s.find(" dual_obj="), std::string::npos);
    EXPECT_NE(s.find(" elapsed="), std::string::npos);
}

TEST(SinkhornSolve, RejectsNonPositiveTolerance)
{
    const Tiny t;
    SolverOptions o;
    o.tolerance = 0.0;
    EXPECT_THROW((void)sinkhorn_solve(t.factors, t.grid, o), std::invalid_argument);
}

TEST(GaugeFixed, ZeroMeanPerLevel)
{
    std::mt19937_64 rng(43);
    const Grid g(GridConfig{5, 3, 0.5, 1.5, 4, 1.0});
    const DualPotentials d = gauge_fixed(random_duals(g, rng));
    for (int k = 0; k < 4; ++k)
        EXPECT_NEAR(d.values.row(k).sum(), 0.0, 1e-14);
}

TEST(MassHessian, MatchesFiniteDifferenceOfMoments)
{
    const Grid g(GridConfig{3, 3, 0.6, 1.4, 3, 1.0});
    const GibbsFactors f = build_gibbs(build_cost_matrices(g, BoundaryMap::peakon()), g, 0.2, 2.0);
    std::mt19937_64 rng(47);
    const DualPotentials d = random_duals(g, rng, 0.3);
    Chain<LogDomain> chain(f, g, d);
    chain.refresh();
    const Matrix h = mass_hessian(chain);
    const int n = g.levels() * g.nx();
    ASSERT_EQ(h.rows(), n);
    EXPECT_LT((h - h.transpose()).cwiseAbs().maxCoeff(), 1e-14);
    auto moments = [&](const DualPotentials& q) {
        Vector out(n);
        for (int k = 0; k < g.levels(); ++k)
            out.segment(k * g.nx(), g.nx()) = moment_M(marginal_S(f, g, q, k), g, 2);
        return out;
    };
    const double e = 1e-6;
    for (int c = 0; c < n; ++c)
    {
        DualPotentials up = d, dn = d;
        up.values(c / g.nx(), c % g.nx()) += e;
        dn.values(c / g.nx(), c % g.nx()) -= e;
        const Vector col = (moments(up) - moments(dn)) / (2 * e);
        EXPECT_LT((col - h.col(c)).cwiseAbs().maxCoeff(), 1e-7 * std::max(1.0, col.cwiseAbs().maxCoeff()));
    }
}

TEST(NumericDomain, LogProductMatchesDense)
{
    std::mt19937_64 rng(53);
    std::normal_distribution<double> n(0.0, 3.0);
    Matrix a(4, 5), b(5, 3);
    for (auto* m : {&a, &b})
        for (Eigen::Index i = 0; i < m->size(); ++i)
            m->data()[i] = n(rng);
    const Matrix dense = a.array().exp().matrix() * b.array().exp().matrix();
    const Matrix viaLog = LogDomain::product(a, b).array().exp().matrix();
    EXPECT_TRUE(viaLog.isApprox(dense, 1e-13));
    const LogDomain::Kernel kb(b);
    EXPECT_TRUE(LogDomain::product(a, kb).array().exp().matrix().isApprox(dense, 1e-13));
}

TEST(NumericDomain, LogProductSurvivesDeepUnderflow)
{
    // each row of a peaks where b is tiny, so the shifted sums underflow
    Matrix a(2, 2), b(2, 1);
    a << 0.0, -2000.0, -2000.0, 0.0;
    b << -2000.0, 0.0;
    const Matrix p = LogDomain::product(a, b);
    EXPECT_NEAR(p(0, 0), std::log(2.0) - 2000.0, 1e-9);
    EXPECT_NEAR(p(1, 0), 0.0, 1e-12);
    const Matrix all_neg = LogDomain::product(Matrix::Constant(1, 1, kNegInf), Matrix::Constant(1, 1, 0.0));
    EXPECT_EQ(all_neg(0, 0), kNegInf);
}
