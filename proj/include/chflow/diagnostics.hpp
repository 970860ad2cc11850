#pragma once
/**
 * @file  diagnostics.hpp
 * @brief Read-only views of a solved plan: base transport plans, cone
 *        marginals, action and entropy, pressure, and determinism metrics.
 *
 * Everything is computed from forward/backward messages in the log domain;
 * the plan tensor is never formed.
 */

#include "mmot_solver.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace chflow
{

struct PlanSlice
{
    Matrix values;
    int level = 0; ///< 0-based time level
    double mass = 0.0; ///< sum of entries
    std::string row_axis;
    std::string col_axis;
};

[[nodiscard]] inline PlanSlice make_slice(Matrix values, int level, std::string rows, std::string cols)
{
    PlanSlice s;
    s.mass = values.sum();
    s.values = std::move(values);
    s.level = level;
    s.row_axis = std::move(rows);
    s.col_axis = std::move(cols);
    return s;
}

struct ActionParts
{
    double transport = 0.0; ///< (K-1)/T sum of squared chord lengths
    double coupling = 0.0; ///< alpha times the endpoint cost D1
    [[nodiscard]] double total() const noexcept { return transport + coupling; }
};

/// Messages of one dual state, refreshed once and queried many times.
class PlanView
{
public:
    PlanView(const GibbsFactors& factors, const Grid& grid, const DualPotentials& duals)
        : factors_(&factors), grid_(&grid), duals_(duals), chain_(factors, grid, duals)
    {
        chain_.refresh();
    }

    [[nodiscard]] const Grid& grid() const noexcept { return *grid_; }
    [[nodiscard]] const DualPotentials& duals() const noexcept { return duals_; }

    /// Entry (s, i): mass of paths starting above base node s and sitting
    /// above base node i at level k.
    [[nodiscard]] PlanSlice base_transport_plan(int k) const
    {
        check_level(k);
        const int nx = grid_->nx();
        const Matrix& f = chain_.f(k);
        const Matrix& g = chain_.g(k);
        Matrix out = Matrix::Zero(nx, nx);
        for (int s = 0; s < nx; ++s)
            for (int j = 0; j < grid_->size(); ++j)
                out(s, grid_->base_of(j)) += std::exp(f(s, j) + g(j, s));
        return make_slice(std::move(out), k, "x0", "x");
    }

    /// S_k reshaped to base x radius.
    [[nodiscard]] PlanSlice cone_marginal(int k) const
    {
        check_level(k);
        const Vector s = marginal(k);
        Matrix out(grid_->nx(), grid_->nr());
        for (int j = 0; j < grid_->size(); ++j)
            out(grid_->base_of(j), grid_->radius_of(j)) = s[j];
        return make_slice(std::move(out), k, "x", "r");
    }

    /// S_k as a flat vector of length N.
    [[nodiscard]] Vector marginal(int k) const
    {
        check_level(k);
        return detail::exp_exact(chain_.log_marginal(k));
    }

    [[nodiscard]] double mass() const { return std::exp(chain_.log_mass()); }

    [[nodiscard]] ActionParts action() const
    {
        const int levels = grid_->levels();
        const int nx = grid_->nx();
        ActionParts out;

        // log(xi * D0) entrywise; coincident nodes carry no cost
        const Matrix log_xd = factors_->log_xi.array() + factors_->d0.array().log();
        double chords = 0.0;
        for (int k = 0; k + 1 < levels; ++k)
        {
            Matrix h = chain_.g(k + 1);
            LogDomain::scale_rows(h, chain_.log_weights(k + 1));
            const Matrix m = LogDomain::product(chain_.f(k), log_xd);
            for (int s = 0; s < nx; ++s)
                for (int j = 0; j < grid_->size(); ++j)
                    chords += std::exp(m(s, j) + h(j, s));
        }
        out.transport = factors_->time_weight * chords;

        const Matrix& f = chain_.f(levels - 1);
        double ends = 0.0;
        for (int s = 0; s < nx; ++s)
            for (int j = 0; j < grid_->size(); ++j)
                ends += std::exp(f(s, j) + factors_->log_xi_close(j, s)) * factors_->d1_close(j, s);
        out.coupling = factors_->alpha * ends;
        return out;
    }

    /**
     * E(mu) = -<mu, log mu - 1>. Because log mu = sum_k p^k r^2 - C/eps on
     * every tuple, E = mass + <C, mu>/eps - sum_k <p^k, M_2[S_k]>.
     */
    [[nodiscard]] double entropy() const
    {
        double dual_term = 0.0;
        for (int k = 0; k < grid_->levels(); ++k)
            dual_term += duals_.values.row(k).dot(moment_M(marginal(k), *grid_, 2));
        return mass() + action().total() / factors_->epsilon - dual_term;
    }

    /// <C, mu> - eps E(mu).
    [[nodiscard]] double regularized_objective() const
    {
        return action().total() - factors_->epsilon * entropy();
    }

    [[nodiscard]] double max_violation() const { return detail::max_violation(chain_); }

private:
    void check_level(int k) const
    {
        if (k < 0 || k >= grid_->levels())
            throw std::out_of_range("time level out of range: " + std::to_string(k));
    }

    const GibbsFactors* factors_;
    const Grid* grid_;
    DualPotentials duals_;
    Chain<LogDomain> chain_;
};

[[nodiscard]] inline PlanSlice base_transport_plan(const GibbsFactors& factors, const Grid& grid,
                                                   const DualPotentials& duals, int k)
{
    return PlanView(factors, grid, duals).base_transport_plan(k);
}

[[nodiscard]] inline PlanSlice cone_marginal(const GibbsFactors& factors, const Grid& grid,
                                             const DualPotentials& duals, int k)
{
    return PlanView(factors, grid, duals).cone_marginal(k);
}

[[nodiscard]] inline ActionParts plan_action(const GibbsFactors& factors, const Grid& grid,
                                             const DualPotentials& duals)
{
    return PlanView(factors, grid, duals).action();
}

[[nodiscard]] inline double plan_entropy(const GibbsFactors& factors, const Grid& grid, const DualPotentials& duals)
{
    return PlanView(factors, grid, duals).entropy();
}

/**
 * Discrete pressure P(t_k, x_i) = eps p^k_i / dt after the zero-mean gauge.
 * An approximation of the continuous multiplier up to discretization.
 */
[[nodiscard]] inline Matrix extract_pressure(const DualPotentials& duals, const Grid& grid, double epsilon)
{
    if (duals.levels() != grid.levels() || duals.nx() != grid.nx())
        throw std::invalid_argument("extract_pressure: duals do not match the grid");
    return gauge_fixed(duals).values * (epsilon / grid.time_step());
}

/**
 * 1 minus the mass-weighted mean row entropy, each normalized by
 * log(columns). Rows without mass are skipped.
 */
[[nodiscard]] inline double determinism_index(const PlanSlice& plan)
{
    const Matrix& m = plan.values;
    if ((m.array() < 0.0).any())
        throw std::invalid_argument("determinism_index: negative plan entry");
    if (m.cols() <= 1)
        return 1.0;
    const double norm = std::log(static_cast<double>(m.cols()));
    double total = 0.0;
    double weighted = 0.0;
    for (Eigen::Index i = 0; i < m.rows(); ++i)
    {
        const double row = m.row(i).sum();
        if (!(row > 0.0))
            continue;
        double h = 0.0;
        for (Eigen::Index j = 0; j < m.cols(); ++j)
        {
            const double q = m(i, j) / row;
            if (q > 0.0)
                h -= q * std::log(q);
        }
        total += row;
        weighted += row * h / norm;
    }
    if (total == 0.0)
        return 1.0;
    return std::clamp(1.0 - weighted / total, 0.0, 1.0);
}

/// Mass per radius node (column sums of a base x radius slice).
[[nodiscard]] inline Vector radial_profile(const PlanSlice& cone) { return cone.values.colwise().sum().transpose(); }

/// Indices of strict local maxima (plateaus count once) whose height is at
/// least `rel` times the global maximum.
[[nodiscard]] inline std::vector<int> profile_peaks(const Vector& v, double rel = 0.05)
{
    std::vector<int> out;
    if (v.size() == 0)
        return out;
    const double floor = rel * v.maxCoeff();
    const auto n = static_cast<int>(v.size());
    int i = 0;
    while (i < n)
    {
        int j = i;
        while (j + 1 < n && v[j + 1] == v[i])
            ++j;
        const bool left = i == 0 || v[i - 1] < v[i];
        const bool right = j == n - 1 || v[j + 1] < v[i];
        if (left && right && v[i] >= floor && v[i] > 0.0)
            out.push_back((i + j) / 2);
        i = j + 1;
    }
    return out;
}

} // namespace chflow
