#pragma once
/**
 * @file  mmot_solver.hpp
 * @brief Cycle-structured multi-marginal Sinkhorn solver with homogeneous
 *        second-moment constraints.
 *
 * The implied plan over index tuples (s, j_2, ..., j_K), s a unit-radius start
 * node, is
 *
 *   mu = a_1(s) xi(s, j_2) a_2(j_2) xi(j_2, j_3) ... a_K(j_K) xi_close(j_K, s),
 *   a_k(j) = exp(p^k_{x(j)} r_j^2),
 *
 * and is never materialized. Conditioning on the start s turns the cycle into
 * nx chains; forward messages F_k (nx x N) and backward messages G_k (N x nx)
 * give every time marginal in O(K nx N^2) work.
 *
 * Time levels are 0-based throughout the library (k = 0 is t = 0).
 */

#include "discretization.hpp"
#include "numeric_domain.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

namespace chflow
{

/// Raised when some base nodes receive no mass at a level, so no dual can
/// satisfy their moment constraint.
class StarvedNodeError : public std::runtime_error
{
public:
    StarvedNodeError(int level, std::vector<int> nodes)
        : std::runtime_error(describe(level, nodes)), level_(level), nodes_(std::move(nodes))
    {
    }

    [[nodiscard]] int level() const noexcept { return level_; }
    [[nodiscard]] const std::vector<int>& nodes() const noexcept { return nodes_; }

private:
    static std::string describe(int level, const std::vector<int>& nodes)
    {
        std::string s = "starved base nodes at level " + std::to_string(level) + ":";
        for (int n : nodes)
            s += " " + std::to_string(n);
        return s;
    }

    int level_;
    std::vector<int> nodes_;
};

/// One dual vector p^k (length nx) per time level, stored as rows.
struct DualPotentials
{
    Matrix values; ///< K x nx

    DualPotentials() = default;
    DualPotentials(int levels, int nx) : values(Matrix::Zero(levels, nx)) {}

    [[nodiscard]] int levels() const noexcept { return static_cast<int>(values.rows()); }
    [[nodiscard]] int nx() const noexcept { return static_cast<int>(values.cols()); }
};

/// Per-level zero-mean representative used whenever duals are exported.
[[nodiscard]] inline DualPotentials gauge_fixed(const DualPotentials& d)
{
    DualPotentials out = d;
    for (Eigen::Index k = 0; k < out.values.rows(); ++k)
        out.values.row(k).array() -= out.values.row(k).mean();
    return out;
}

/// log a_k(j) = p^k_{x(j)} r_j^2 for every flat node j.
[[nodiscard]] inline Vector level_log_weights(const Grid& grid, const DualPotentials& duals, int k)
{
    Vector out(grid.size());
    const auto& rs = grid.rs();
    for (int j = 0; j < grid.size(); ++j)
    {
        const double r = rs[grid.radius_of(j)];
        out[j] = duals.values(k, grid.base_of(j)) * r * r;
    }
    return out;
}

/// M_n[A]_i = sum over nodes j above base node i of r_j^n A_j.
[[nodiscard]] inline Vector moment_M(const Vector& values, const Grid& grid, int order)
{
    if (order < 0 || order > 2)
        throw std::invalid_argument("moment order must be 0, 1 or 2");
    if (values.size() != grid.size())
        throw std::invalid_argument("moment_M: vector length does not match the grid");
    Vector out = Vector::Zero(grid.nx());
    for (int j = 0; j < grid.size(); ++j)
        out[grid.base_of(j)] += std::pow(grid.rs()[grid.radius_of(j)], order) * values[j];
    return out;
}

// ---------------------------------------------------------------------------
// scalar dual update

struct MomentRoot
{
    double value = 0.0;
    double residual = 0.0; ///< |F(p)| / target
    int iterations = 0;
};

/**
 * Root of F(p) = sum_j exp(log_b_j + p w_j) w_j - target with w_j > 0.
 *
 * Solved as g(p) = log(sum_j ...) - log(target) = 0; g is convex and
 * increasing with slope in [min w, max w], so Newton is safeguarded by a
 * closed-form bracket and falls back to bisection. Returns nullopt when every
 * log_b_j is -inf (no mass can reach the node).
 */
[[nodiscard]] inline std::optional<MomentRoot> solve_moment_equation(std::span<const double> log_b,
                                                                     std::span<const double> weights, double target,
                                                                     double warm_start = 0.0)
{
    const double log_target = std::log(target);
    std::vector<double> c;
    std::vector<double> w;
    c.reserve(log_b.size());
    w.reserve(log_b.size());
    for (std::size_t j = 0; j < log_b.size(); ++j)
    {
        if (log_b[j] == kNegInf)
            continue;
        c.push_back(log_b[j] + std::log(weights[j]));
        w.push_back(weights[j]);
    }
    if (c.empty())
        return std::nullopt;

    const double log_count = std::log(static_cast<double>(c.size()));
    double lo = std::numeric_limits<double>::infinity();
    double hi = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c.size(); ++j)
    {
        lo = std::min(lo, (log_target - log_count - c[j]) / w[j]);
        hi = std::min(hi, (log_target - c[j]) / w[j]);
    }

    auto eval = [&](double p, double& slope) {
        double m = kNegInf;
        for (std::size_t j = 0; j < c.size(); ++j)
            m = std::max(m, c[j] + p * w[j]);
        double sum = 0.0;
        double dsum = 0.0;
        for (std::size_t j = 0; j < c.size(); ++j)
        {
            const double e = std::exp(c[j] + p * w[j] - m);
            sum += e;
            dsum += e * w[j];
        }
        slope = dsum / sum;
        return m + std::log(sum) - log_target;
    };

    double p = std::isfinite(warm_start) ? std::clamp(warm_start, lo, hi) : hi;
    MomentRoot root;
    double slope = 1.0;
    double g = eval(p, slope);
    for (int it = 0; it < 200 && std::abs(g) > 1e-15; ++it)
    {
        root.iterations = it + 1;
        if (g > 0.0)
            hi = p;
        else
            lo = p;
        double next = p - g / slope;
        if (!(next > lo && next < hi))
            next = 0.5 * (lo + hi);
        if (next == p)
            break;
        p = next;
        g = eval(p, slope);
    }
    root.value = p;
    root.residual = std::abs(std::expm1(g));
    return root;
}

/**
 * Per-base-node dual update: for each row i of B (nx x nr, entries >= 0) the
 * unique p with sum_j B(i,j) exp(p r_j^2) r_j^2 = target.
 */
[[nodiscard]] inline Vector newton_dual_update(const Matrix& b, std::span<const double> radii, double target)
{
    if (static_cast<std::size_t>(b.cols()) != radii.size())
        throw std::invalid_argument("newton_dual_update: B columns must match the radii");
    if (!(target > 0.0))
        throw std::invalid_argument("newton_dual_update: target must be positive");
    if ((b.array() < 0.0).any())
        throw std::invalid_argument("newton_dual_update: B must be non-negative");
    std::vector<double> w(radii.size());
    for (std::size_t j = 0; j < radii.size(); ++j)
        w[j] = radii[j] * radii[j];
    Vector out(b.rows());
    std::vector<int> starved;
    std::vector<double> logs(radii.size());
    for (Eigen::Index i = 0; i < b.rows(); ++i)
    {
        for (std::size_t j = 0; j < radii.size(); ++j)
            logs[j] = std::log(b(i, static_cast<Eigen::Index>(j)));
        const auto root = solve_moment_equation(logs, w, target);
        if (!root)
        {
            starved.push_back(static_cast<int>(i));
            continue;
        }
        out[i] = root->value;
    }
    if (!starved.empty())
        throw StarvedNodeError(-1, starved);
    return out;
}

// ---------------------------------------------------------------------------
// message passing

/**
 * Forward/backward messages of the cycle for a fixed set of duals.
 *
 * ft(k): forward message arriving at level k without the level-k weight
 * f(k):  ft(k) with the level-k weight applied
 * g(k):  backward message leaving level k, excluding the level-k weight
 */
template <class Domain> class Chain
{
public:
    Chain(const GibbsFactors& factors, const Grid& grid, const DualPotentials& duals)
        : factors_(&factors), grid_(&grid), xi_(factors.log_xi),
          close_(Domain::from_log(factors.log_xi_close))
    {
        if (duals.levels() != grid.levels() || duals.nx() != grid.nx())
            throw std::invalid_argument("dual potentials do not match the grid");
        if (factors.log_xi.rows() != grid.size() || factors.log_xi_close.cols() != grid.nx())
            throw std::invalid_argument("Gibbs factors do not match the grid");
        loga_.reserve(grid.levels());
        for (int k = 0; k < grid.levels(); ++k)
            loga_.push_back(level_log_weights(grid, duals, k));
        ft_.resize(grid.levels());
        f_.resize(grid.levels());
        g_.resize(grid.levels());
    }

    [[nodiscard]] const Grid& grid() const noexcept { return *grid_; }
    [[nodiscard]] const GibbsFactors& factors() const noexcept { return *factors_; }
    [[nodiscard]] const typename Domain::Kernel& xi() const noexcept { return xi_; }
    [[nodiscard]] const Matrix& closing() const noexcept { return close_; }
    [[nodiscard]] const Vector& log_weights(int k) const { return loga_.at(k); }

    void set_level(int k, const Vector& p)
    {
        const auto& rs = grid_->rs();
        for (int j = 0; j < grid_->size(); ++j)
        {
            const double r = rs[grid_->radius_of(j)];
            loga_[k][j] = p[grid_->base_of(j)] * r * r;
        }
    }

    /// nx x N start block: unit weight on the first-slice node of each start.
    [[nodiscard]] Matrix initial() const
    {
        Matrix f = Matrix::Constant(grid_->nx(), grid_->size(), Domain::zero);
        for (int s = 0; s < grid_->nx(); ++s)
            f(s, grid_->slice_node(s)) = Domain::one;
        return f;
    }

    void backward()
    {
        const int levels = grid_->levels();
        g_[levels - 1] = close_;
        for (int k = levels - 2; k >= 0; --k)
        {
            Matrix h = g_[k + 1];
            Domain::scale_rows(h, loga_[k + 1]);
            g_[k] = Domain::product(xi_, h);
            Domain::check_finite(g_[k]);
        }
    }

    void forward()
    {
        const int levels = grid_->levels();
        ft_[0] = initial();
        for (int k = 0; k < levels; ++k)
        {
            f_[k] = ft_[k];
            Domain::scale_cols(f_[k], loga_[k]);
            Domain::check_finite(f_[k]);
            if (k + 1 < levels)
                ft_[k + 1] = Domain::product(f_[k], xi_);
        }
    }

    void refresh()
    {
        backward();
        forward();
    }

    [[nodiscard]] const Matrix& ft(int k) const { return ft_.at(k); }
    [[nodiscard]] const Matrix& f(int k) const { return f_.at(k); }
    [[nodiscard]] const Matrix& g(int k) const { return g_.at(k); }

    /// log S_k (length N); requires refresh() since the last dual change.
    [[nodiscard]] Vector log_marginal(int k) const { return Domain::contract_log(f_.at(k), g_.at(k)); }

    /// log of the total mass of the implied plan.
    [[nodiscard]] double log_mass() const { return detail::log_sum_exp(log_marginal(grid_->levels() - 1)); }

private:
    const GibbsFactors* factors_;
    const Grid* grid_;
    typename Domain::Kernel xi_;
    Matrix close_;
    std::vector<Vector> loga_;
    std::vector<Matrix> ft_;
    std::vector<Matrix> f_;
    std::vector<Matrix> g_;
};

/**
 * Second derivatives of the plan mass with respect to the duals, for a
 * refreshed chain: entry ((k,i), (l,i')) is the mass-weighted sum of
 * r_k^2 r_l^2 over paths above base i at level k and base i' at level l.
 * Rows and columns are ordered k-major. Pairwise level marginals come from
 * propagating per-(start, base) rows forward; cost O(K^2 nx^2 N^2).
 */
template <class Domain> [[nodiscard]] Matrix mass_hessian(const Chain<Domain>& chain)
{
    const Grid& grid = chain.grid();
    const int levels = grid.levels();
    const int nx = grid.nx();
    const int n = grid.size();
    const Vector w = grid.radius_sq();
    Matrix h = Matrix::Zero(levels * nx, levels * nx);
    for (int k = 0; k < levels; ++k)
    {
        const Vector s = detail::exp_exact(chain.log_marginal(k));
        for (int j = 0; j < n; ++j)
            h(k * nx + grid.base_of(j), k * nx + grid.base_of(j)) += s[j] * w[j] * w[j];
        if (k + 1 == levels)
            break;

        // row s * nx + i: forward message of start s restricted to base i, times r^2
        Matrix v = Matrix::Constant(nx * nx, n, Domain::zero);
        const Matrix& f = chain.f(k);
        for (int st = 0; st < nx; ++st)
            for (int j = 0; j < n; ++j)
            {
                const double wj = std::is_same_v<Domain, LogDomain> ? std::log(w[j]) : w[j];
                v(st * nx + grid.base_of(j), j) = std::is_same_v<Domain, LogDomain> ? f(st, j) + wj : f(st, j) * wj;
            }
        for (int l = k + 1; l < levels; ++l)
        {
            v = Domain::product(v, chain.xi());
            Domain::scale_cols(v, chain.log_weights(l));
            const Matrix& g = chain.g(l);
            for (int st = 0; st < nx; ++st)
                for (int i = 0; i < nx; ++i)
                    for (int j = 0; j < n; ++j)
                    {
                        const double m = Domain::times_value(v(st * nx + i, j), g(j, st)) * w[j];
                        h(k * nx + i, l * nx + grid.base_of(j)) += m;
                    }
        }
    }
    return h.selfadjointView<Eigen::Upper>();
}

// ---------------------------------------------------------------------------
// solver

enum class LogDomainMode
{
    Auto,
    On,
    Off
};

struct SolverOptions
{
    double tolerance = 1e-7; ///< on max_{k,i} |nx M_2[S_k]_i - 1|
    int max_sweeps = 5000;
    LogDomainMode log_domain = LogDomainMode::Auto;
    std::ostream* log = nullptr; ///< receives one line per logged sweep
    int log_every = 1;
    int anderson_depth = 8; ///< 0 disables extrapolation
    /// Sweeps before the first full Newton attempt; a rejected attempt doubles
    /// the wait, an accepted one retries on the next sweep. 0 disables.
    int newton_every = 10;
};

struct SolverReport
{
    int iterations = 0;
    int accelerated = 0; ///< sweeps whose extrapolated point was accepted
    int newton_steps = 0; ///< accepted full Newton steps
    std::vector<double> violation_history; ///< max pre-update violation seen in each sweep
    std::vector<double> dual_objective_history; ///< dual objective after each sweep
    double final_violation = std::numeric_limits<double>::infinity();
    double max_newton_residual = 0.0; ///< relative residual, worst over all updates
    double wall_seconds = 0.0;
    bool converged = false;
    std::string domain; ///< "dense" or "log"
};

struct SolveResult
{
    DualPotentials duals; ///< raw duals; see gauge_fixed() for export
    SolverReport report;
};

/// Dense kernels stay usable while their log-range is below this bound.
inline constexpr double kDenseDynamicRange = 600.0;

[[nodiscard]] inline bool prefers_log_domain(const GibbsFactors& factors)
{
    return factors.epsilon <= 1e-3 || factors.dynamic_range() > kDenseDynamicRange;
}

namespace detail
{

/// max_{k,i} |nx M_2[S_k]_i - 1| for a refreshed chain.
template <class Domain> [[nodiscard]] double max_violation(const Chain<Domain>& chain)
{
    const Grid& grid = chain.grid();
    double worst = 0.0;
    for (int k = 0; k < grid.levels(); ++k)
    {
        const Vector s = detail::exp_exact(chain.log_marginal(k));
        const Vector m2 = moment_M(s, grid, 2);
        worst = std::max(worst, ((m2.array() * grid.nx()) - 1.0).abs().maxCoeff());
    }
    return worst;
}

/// Total plan mass from a chain whose backward messages are current.
template <class Domain> [[nodiscard]] double mass_from_backward(const Chain<Domain>& chain)
{
    const Grid& grid = chain.grid();
    Matrix f = chain.initial();
    Domain::scale_cols(f, chain.log_weights(0));
    return std::exp(detail::log_sum_exp(Domain::contract_log(f, chain.g(0))));
}

/**
 * Anderson mixing over whole sweeps. The sweep map p -> GS(p) is treated as
 * a fixed-point iteration; a short history of its residuals yields an
 * extrapolated point that the caller accepts only if it raises the dual
 * objective.
 */
class AndersonMixer
{
public:
    explicit AndersonMixer(int depth) : depth_(depth) {}

    void reset()
    {
        gs_.clear();
        res_.clear();
    }

    /// `before` is the sweep input and `after` its output, both flattened.
    [[nodiscard]] std::optional<Vector> propose(const Vector& before, const Vector& after)
    {
        gs_.push_back(after);
        res_.push_back(after - before);
        if (static_cast<int>(gs_.size()) > depth_ + 1)
        {
            gs_.erase(gs_.begin());
            res_.erase(res_.begin());
        }
        const auto m = static_cast<Eigen::Index>(gs_.size()) - 1;
        if (m < 1)
            return std::nullopt;
        Matrix dr(res_.back().size(), m);
        Matrix dg(gs_.back().size(), m);
        for (Eigen::Index c = 0; c < m; ++c)
        {
            dr.col(c) = res_[c + 1] - res_[c];
            dg.col(c) = gs_[c + 1] - gs_[c];
        }
        const Vector gamma = dr.colPivHouseholderQr().solve(res_.back());
        if (!gamma.allFinite())
            return std::nullopt;
        return Vector(gs_.back() - dg * gamma);
    }

private:
    int depth_;
    std::vector<Vector> gs_;
    std::vector<Vector> res_;
};

/**
 * Damped Newton step on all duals at once. Accepted only with an Armijo
 * increase of the dual objective; on success the chain holds the new duals
 * with current backward messages.
 */
template <class Domain, class Load, class Objective>
bool newton_step(Chain<Domain>& chain, DualPotentials& duals, double& objective, const Load& load,
                 const Objective& objective_of)
{
    const Grid& grid = chain.grid();
    const int levels = grid.levels();
    const int nx = grid.nx();
    load(duals);
    chain.forward();
    Vector grad(levels * nx);
    for (int k = 0; k < levels; ++k)
        grad.segment(k * nx, nx) =
            Vector::Constant(nx, 1.0 / nx) - moment_M(detail::exp_exact(chain.log_marginal(k)), grid, 2);
    const Matrix h = mass_hessian(chain);
    const Eigen::LDLT<Matrix> ldlt(h);
    Vector step = ldlt.solve(grad);
    if (ldlt.info() != Eigen::Success || !step.allFinite())
        return false;
    const double slope = grad.dot(step);
    if (!(slope > 0.0))
        return false;
    for (double t = 1.0; t > 1e-6; t *= 0.5)
    {
        DualPotentials trial = duals;
        for (int k = 0; k < levels; ++k)
            trial.values.row(k) += t * step.segment(k * nx, nx).transpose();
        try
        {
            load(trial);
            const double obj = objective_of(trial);
            if (std::isfinite(obj) && obj >= objective + 1e-4 * t * slope && obj > objective)
            {
                duals = std::move(trial);
                objective = obj;
                return true;
            }
        }
        catch (const NumericalOverflow&)
        {
        }
    }
    load(duals);
    return false;
}

template <class Domain>
[[nodiscard]] SolveResult solve_in(const GibbsFactors& factors, const Grid& grid, const SolverOptions& opt,
                                   DualPotentials duals)
{
    using Clock = std::chrono::steady_clock;
    const auto start = Clock::now();
    const int levels = grid.levels();
    const int nx = grid.nx();
    const int nr = grid.nr();
    const double target = 1.0 / static_cast<double>(nx);

    Chain<Domain> chain(factors, grid, duals);
    std::vector<double> w(nr);
    for (int r = 0; r < nr; ++r)
        w[r] = grid.rs()[r] * grid.rs()[r];

    SolveResult result;
    result.report.domain = Domain::name;
    std::vector<double> logs(nr);
    Vector p(nx);

    const auto objective_of = [&](const DualPotentials& d) {
        return d.values.sum() / static_cast<double>(nx) - mass_from_backward(chain);
    };
    const auto load = [&](const DualPotentials& d) {
        for (int k = 0; k < levels; ++k)
            chain.set_level(k, d.values.row(k).transpose());
        chain.backward();
    };
    const auto flat = [](const DualPotentials& d) {
        return Vector(Eigen::Map<const Vector>(d.values.data(), d.values.size()));
    };

    AndersonMixer mixer(opt.anderson_depth);
    chain.backward();
    int newton_wait = opt.newton_every;
    int next_newton = opt.newton_every;

    for (int sweep = 1; sweep <= opt.max_sweeps; ++sweep)
    {
        // chain.g(.) is current for `duals` on entry
        const DualPotentials before = duals;
        Matrix ft = chain.initial();
        double violation = 0.0;
        double log_mass = kNegInf;
        for (int k = 0; k < levels; ++k)
        {
            const Vector log_b = Domain::contract_log(ft, chain.g(k));
            const Vector& loga = chain.log_weights(k);
            std::vector<int> starved;
            for (int i = 0; i < nx; ++i)
            {
                double m2 = 0.0;
                for (int r = 0; r < nr; ++r)
                {
                    const int j = grid.index(i, r);
                    logs[r] = log_b[j];
                    if (log_b[j] != kNegInf)
                        m2 += std::exp(log_b[j] + loga[j]) * w[r];
                }
                violation = std::max(violation, std::abs(m2 * nx - 1.0));
                const auto root = solve_moment_equation(logs, w, target, duals.values(k, i));
                if (!root)
                {
                    starved.push_back(i);
                    continue;
                }
                p[i] = root->value;
                result.report.max_newton_residual = std::max(result.report.max_newton_residual, root->residual);
            }
            if (!starved.empty())
                throw StarvedNodeError(k, starved);
            if (!p.allFinite())
                throw NumericalOverflow("dual update produced non-finite potentials");
            duals.values.row(k) = p.transpose();
            chain.set_level(k, p);
            Matrix f = ft;
            Domain::scale_cols(f, chain.log_weights(k));
            Domain::check_finite(f);
            if (k + 1 < levels)
                ft = Domain::product(f, chain.xi());
            else
                log_mass = detail::log_sum_exp(log_b + chain.log_weights(k));
        }
        double objective = duals.values.sum() / static_cast<double>(nx) - std::exp(log_mass);
        result.report.iterations = sweep;
        result.report.violation_history.push_back(violation);

        bool verify = violation < opt.tolerance;
        if (verify)
        {
            chain.refresh();
            result.report.final_violation = max_violation(chain);
            result.report.converged = result.report.final_violation < opt.tolerance;
        }
        if (!result.report.converged)
        {
            bool accepted = false;
            if (opt.newton_every > 0 && sweep >= next_newton)
            {
                accepted = newton_step(chain, duals, objective, load, objective_of);
                if (accepted)
                {
                    ++result.report.newton_steps;
                    newton_wait = opt.newton_every;
                    next_newton = sweep + 1;
                }
                else
                {
                    newton_wait *= 2;
                    next_newton = sweep + newton_wait;
                }
                mixer.reset();
            }
            else if (opt.anderson_depth > 0)
            {
                if (auto cand = mixer.propose(flat(before), flat(duals)))
                {
                    DualPotentials trial(levels, nx);
                    trial.values = Eigen::Map<const Matrix>(cand->data(), levels, nx);
                    try
                    {
                        load(trial);
                        const double obj = objective_of(trial);
                        if (std::isfinite(obj) && obj > objective)
                        {
                            ++result.report.accelerated;
                            duals = std::move(trial);
                            objective = obj;
                            accepted = true;
                        }
                    }
                    catch (const NumericalOverflow&)
                    {
                    }
                    if (!accepted)
                        mixer.reset();
                }
            }
            if (!accepted)
                load(duals);
        }
        result.report.dual_objective_history.push_back(objective);

        const double elapsed = std::chrono::duration<double>(Clock::now() - start).count();
        if (opt.log != nullptr && (sweep % std::max(1, opt.log_every) == 0 || sweep == 1))
        {
            char line[160];
            std::snprintf(line, sizeof line, "sweep=%d violation=%.6e dual_obj=%.12e elapsed=%.3f", sweep, violation,
                          objective, elapsed);
            *opt.log << line << '\n';
        }
        if (result.report.converged)
            break;
    }
    if (!result.report.converged)
    {
        load(duals);
        chain.forward();
        result.report.final_violation = max_violation(chain);
        result.report.converged = result.report.final_violation < opt.tolerance;
    }
    result.report.wall_seconds = std::chrono::duration<double>(Clock::now() - start).count();
    if (opt.log != nullptr)
    {
        char line[200];
        std::snprintf(line, sizeof line, "done sweeps=%d accelerated=%d newton=%d converged=%d final_violation=%.6e domain=%s elapsed=%.3f",
                      result.report.iterations, result.report.accelerated, result.report.newton_steps, result.report.converged ? 1 : 0, result.report.final_violation,
                      Domain::name, result.report.wall_seconds);
        *opt.log << line << '\n';
    }
    result.duals = std::move(duals);
    return result;
}

} // namespace detail

/**
 * Block-coordinate ascent on the dual: levels are updated in order 0..K-1,
 * each by an exact per-node Newton solve. Stops once a verified end-of-sweep
 * state satisfies every moment constraint to `tolerance`, or after
 * `max_sweeps`. In Auto mode a dense run that overflows or starves is retried
 * in the log domain.
 */
[[nodiscard]] inline SolveResult sinkhorn_solve(const GibbsFactors& factors, const Grid& grid,
                                                const SolverOptions& opt = {},
                                                std::optional<DualPotentials> initial = std::nullopt)
{
    if (!(opt.tolerance > 0.0))
        throw std::invalid_argument("solver tolerance must be positive");
    DualPotentials duals = initial.value_or(DualPotentials(grid.levels(), grid.nx()));
    switch (opt.log_domain)
    {
    case LogDomainMode::On:
        return detail::solve_in<LogDomain>(factors, grid, opt, duals);
    case LogDomainMode::Off:
        return detail::solve_in<LinearDomain>(factors, grid, opt, duals);
    case LogDomainMode::Auto:
        break;
    }
    if (prefers_log_domain(factors))
        return detail::solve_in<LogDomain>(factors, grid, opt, duals);
    try
    {
        return detail::solve_in<LinearDomain>(factors, grid, opt, duals);
    }
    catch (const NumericalOverflow&)
    {
    }
    catch (const StarvedNodeError&)
    {
    }
    if (opt.log != nullptr)
        *opt.log << "dense mode failed; restarting in log domain\n";
    return detail::solve_in<LogDomain>(factors, grid, opt, duals);
}

// ---------------------------------------------------------------------------
// plain-value views of the implied plan

struct WeightedKernels
{
    std::vector<Matrix> transitions; ///< K-1 matrices W_k = diag(a_k) xi (N x N)
    Matrix closing; ///< diag(a_K) xi_close (N x nx)
};

/// Kernels whose cyclic product defines the plan:
/// mu(s, j_2..j_K) = W_1(slice(s), j_2) W_2(j_2, j_3) ... W_{K-1}(j_{K-1}, j_K) H(j_K, s).
[[nodiscard]] inline WeightedKernels weighted_kernels(const GibbsFactors& factors, const Grid& grid,
                                                      const DualPotentials& duals)
{
    WeightedKernels out;
    const Matrix xi = factors.xi();
    for (int k = 0; k + 1 < grid.levels(); ++k)
    {
        const Vector a = level_log_weights(grid, duals, k).array().exp().matrix();
        out.transitions.push_back(a.asDiagonal() * xi);
        if (!out.transitions.back().allFinite())
            throw NumericalOverflow("weighted kernel overflow; use the log domain");
    }
    const Vector a = level_log_weights(grid, duals, grid.levels() - 1).array().exp().matrix();
    out.closing = a.asDiagonal() * factors.xi_close();
    if (!out.closing.allFinite())
        throw NumericalOverflow("weighted kernel overflow; use the log domain");
    return out;
}

/// Cone marginal S_k of the implied plan (length N), computed in the log domain.
[[nodiscard]] inline Vector marginal_S(const GibbsFactors& factors, const Grid& grid, const DualPotentials& duals,
                                       int k)
{
    if (k < 0 || k >= grid.levels())
        throw std::out_of_range("marginal_S: level out of range");
    Chain<LogDomain> chain(factors, grid, duals);
    chain.refresh();
    return detail::exp_exact(chain.log_marginal(k));
}

/// Dual objective divided by epsilon: sum_{k,i} p^k_i / nx - mass(mu).
/// Concave; each exact level update cannot decrease it.
[[nodiscard]] inline double dual_objective(const GibbsFactors& factors, const Grid& grid, const DualPotentials& duals)
{
    Chain<LogDomain> chain(factors, grid, duals);
    chain.refresh();
    return duals.values.sum() / static_cast<double>(grid.nx()) - std::exp(chain.log_mass());
}

} // namespace chflow
