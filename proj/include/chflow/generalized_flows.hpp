#pragma once
/**
 * @file  generalized_flows.hpp
 * @brief Finite path measures on the cone and the calculus acting on them:
 *        action, B functional, homogeneous marginals, dilations and lifts of
 *        deterministic flows.
 *
 * A DiscretePathMeasure is a weighted list of cone paths sampled on one
 * uniform time ladder. Weights need not sum to one.
 */

#include "cone_geometry.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace chflow
{

class MeasureError : public std::invalid_argument
{
public:
    using std::invalid_argument::invalid_argument;
};

using ConePath = std::vector<ConePoint>;

[[nodiscard]] inline std::vector<double> uniform_times(int samples, double horizon)
{
    if (samples < 2 || !(horizon > 0.0))
        throw MeasureError("a time ladder needs at least two samples and a positive horizon");
    std::vector<double> ts(samples);
    for (int k = 0; k < samples; ++k)
        ts[k] = horizon * static_cast<double>(k) / static_cast<double>(samples - 1);
    return ts;
}

class DiscretePathMeasure
{
public:
    DiscretePathMeasure(std::vector<double> ts, std::vector<ConePath> paths, std::vector<double> weights)
        : ts_(std::move(ts)), paths_(std::move(paths)), weights_(std::move(weights))
    {
        if (ts_.size() < 2)
            throw MeasureError("paths need at least two time samples");
        if (paths_.size() != weights_.size())
            throw MeasureError("one weight per path is required");
        for (std::size_t p = 0; p < paths_.size(); ++p)
        {
            if (paths_[p].size() != ts_.size())
                throw MeasureError("path " + std::to_string(p) + " is not sampled on the time ladder");
            if (!(weights_[p] >= 0.0) || !std::isfinite(weights_[p]))
                throw MeasureError("path weights must be finite and non-negative");
        }
    }

    [[nodiscard]] const std::vector<double>& times() const noexcept { return ts_; }
    [[nodiscard]] double horizon() const noexcept { return ts_.back() - ts_.front(); }
    [[nodiscard]] int samples() const noexcept { return static_cast<int>(ts_.size()); }
    [[nodiscard]] std::size_t size() const noexcept { return paths_.size(); }
    [[nodiscard]] const std::vector<ConePath>& paths() const noexcept { return paths_; }
    [[nodiscard]] const ConePath& path(std::size_t p) const { return paths_.at(p); }
    [[nodiscard]] const std::vector<double>& weights() const noexcept { return weights_; }

    [[nodiscard]] double mass() const
    {
        double m = 0.0;
        for (double w : weights_)
            m += w;
        return m;
    }

private:
    std::vector<double> ts_;
    std::vector<ConePath> paths_;
    std::vector<double> weights_;
};

/// (K-1)/T times the sum of squared chord lengths between consecutive samples.
[[nodiscard]] inline double path_action(std::span<const ConePoint> path, double horizon)
{
    if (path.size() < 2)
        throw MeasureError("path_action needs at least two samples");
    double sum = 0.0;
    for (std::size_t k = 0; k + 1 < path.size(); ++k)
        sum += cone_distance_sq(path[k], path[k + 1]);
    return static_cast<double>(path.size() - 1) / horizon * sum;
}

[[nodiscard]] inline double total_action(const DiscretePathMeasure& mu)
{
    double a = 0.0;
    for (std::size_t p = 0; p < mu.size(); ++p)
        a += mu.weights()[p] * path_action(mu.path(p), mu.horizon());
    return a;
}

/// Pressure as a function of (t, x).
using ScalarField = std::function<double(double, double)>;

/// path_action minus the trapezoid quadrature of P(t, x) r^2 along the path.
[[nodiscard]] inline double b_functional(std::span<const ConePoint> path, std::span<const double> ts,
                                         const ScalarField& pressure)
{
    if (path.size() != ts.size())
        throw MeasureError("b_functional: path and time ladder differ in length");
    double integral = 0.0;
    for (std::size_t k = 0; k + 1 < path.size(); ++k)
    {
        const double a = pressure(ts[k], path[k].x()) * path[k].r() * path[k].r();
        const double b = pressure(ts[k + 1], path[k + 1].x()) * path[k + 1].r() * path[k + 1].r();
        integral += 0.5 * (ts[k + 1] - ts[k]) * (a + b);
    }
    return path_action(path, ts.back() - ts.front()) - integral;
}

/// Bin of x in the uniform partition of [0,1] into `bins` cells; x = 1 falls in the last.
[[nodiscard]] inline int base_bin(double x, int bins)
{
    return std::clamp(static_cast<int>(std::floor(x * bins)), 0, bins - 1);
}

/// Per-bin sum of weight * r_k^2 at sample k; apex samples contribute nothing.
[[nodiscard]] inline std::vector<double> homogeneous_marginal(const DiscretePathMeasure& mu, int k, int bins)
{
    if (k < 0 || k >= mu.samples())
        throw MeasureError("homogeneous_marginal: sample index out of range");
    if (bins < 1)
        throw MeasureError("homogeneous_marginal: need at least one bin");
    std::vector<double> out(bins, 0.0);
    for (std::size_t p = 0; p < mu.size(); ++p)
    {
        const ConePoint& z = mu.path(p)[k];
        if (z.is_apex())
            continue;
        out[base_bin(z.x(), bins)] += mu.weights()[p] * z.r() * z.r();
    }
    return out;
}

/// Radii divided by theta(z), weights multiplied by theta(z)^2.
[[nodiscard]] inline DiscretePathMeasure dilate(const DiscretePathMeasure& mu, std::span<const double> theta)
{
    if (theta.size() != mu.size())
        throw MeasureError("dilate: one theta value per path is required");
    std::vector<ConePath> paths = mu.paths();
    std::vector<double> weights = mu.weights();
    for (std::size_t p = 0; p < paths.size(); ++p)
    {
        if (weights[p] == 0.0)
            continue;
        if (!(theta[p] > 0.0) || !std::isfinite(theta[p]))
            throw MeasureError("dilate: theta must be positive on charged paths (path " + std::to_string(p) + ")");
        for (auto& z : paths[p])
            z = ConePoint(z.x(), z.r() / theta[p]);
        weights[p] *= theta[p] * theta[p];
    }
    return DiscretePathMeasure(mu.times(), std::move(paths), std::move(weights));
}

/// A 1-homogeneous per-path functional.
using PathFunctional = std::function<double(const ConePath&, std::span<const double>)>;

/// sigma(z) = r_0
[[nodiscard]] inline double sigma_initial_radius(const ConePath& z, std::span<const double> /*ts*/)
{
    return z.front().r();
}

/// sigma(z) = (r_0^2 + r_T^2 + int r^2 dt)^{1/2}, trapezoid in time.
[[nodiscard]] inline double sigma_energy(const ConePath& z, std::span<const double> ts)
{
    double integral = 0.0;
    for (std::size_t k = 0; k + 1 < z.size(); ++k)
        integral += 0.5 * (ts[k + 1] - ts[k]) * (z[k].r() * z[k].r() + z[k + 1].r() * z[k + 1].r());
    return std::sqrt(z.front().r() * z.front().r() + z.back().r() * z.back().r() + integral);
}

[[nodiscard]] inline std::vector<double> evaluate(const DiscretePathMeasure& mu, const PathFunctional& sigma)
{
    std::vector<double> out(mu.size());
    for (std::size_t p = 0; p < mu.size(); ++p)
        out[p] = sigma(mu.path(p), mu.times());
    return out;
}

struct Rescaled
{
    DiscretePathMeasure measure;
    double scale; ///< C = (sum w sigma^2)^{1/2}
};

/// dil_{sigma/C, 2}(mu): unit mass, and sigma = C on every charged path.
[[nodiscard]] inline Rescaled rescale_to_unit(const DiscretePathMeasure& mu, const PathFunctional& sigma)
{
    const std::vector<double> s = evaluate(mu, sigma);
    double c2 = 0.0;
    for (std::size_t p = 0; p < mu.size(); ++p)
    {
        if (mu.weights()[p] == 0.0)
            continue;
        if (!(s[p] > 0.0))
            throw MeasureError("rescale_to_unit: sigma must be positive on charged paths");
        c2 += mu.weights()[p] * s[p] * s[p];
    }
    if (!(c2 > 0.0) || !std::isfinite(c2))
        throw MeasureError("rescale_to_unit: normalizing constant is zero");
    const double c = std::sqrt(c2);
    std::vector<double> theta(s.size());
    for (std::size_t p = 0; p < s.size(); ++p)
        theta[p] = s[p] / c;
    return {dilate(mu, theta), c};
}

struct StrongCouplingReport
{
    double apex_start_mass = 0.0; ///< mass of paths with r_0 = 0
    double apex_both_mass = 0.0; ///< mass of paths with r_0 = r_T = 0
    bool rescalable = false; ///< true when no mass starts at the apex
};

[[nodiscard]] inline StrongCouplingReport strong_coupling_check(const DiscretePathMeasure& mu)
{
    StrongCouplingReport rep;
    for (std::size_t p = 0; p < mu.size(); ++p)
    {
        const ConePath& z = mu.path(p);
        if (!z.front().is_apex())
            continue;
        rep.apex_start_mass += mu.weights()[p];
        if (z.back().is_apex())
            rep.apex_both_mass += mu.weights()[p];
    }
    rep.rescalable = rep.apex_start_mass == 0.0;
    return rep;
}

/**
 * One path per atom a: t_k -> [phi(a, k), lambda(a, k)], weighted by the atom
 * mass. phi and lambda are atom-major, samples per atom equal to ts.size().
 */
[[nodiscard]] inline DiscretePathMeasure lift_deterministic(const std::vector<std::vector<double>>& phi,
                                                            const std::vector<std::vector<double>>& lambda,
                                                            std::vector<double> masses, std::vector<double> ts)
{
    if (phi.size() != lambda.size() || phi.size() != masses.size())
        throw MeasureError("lift_deterministic: phi, lambda and masses must have one entry per atom");
    std::vector<ConePath> paths;
    paths.reserve(phi.size());
    for (std::size_t a = 0; a < phi.size(); ++a)
    {
        if (phi[a].size() != ts.size() || lambda[a].size() != ts.size())
            throw MeasureError("lift_deterministic: atom " + std::to_string(a) + " is not sampled on the ladder");
        ConePath z;
        z.reserve(ts.size());
        for (std::size_t k = 0; k < ts.size(); ++k)
        {
            if (!(lambda[a][k] > 0.0))
                throw MeasureError("lift_deterministic: lambda must be positive");
            z.emplace_back(phi[a][k], lambda[a][k]);
        }
        paths.push_back(std::move(z));
    }
    return DiscretePathMeasure(std::move(ts), std::move(paths), std::move(masses));
}

/// sum over paths of weight * f(z_0, z_T)
[[nodiscard]] inline double endpoint_pairing(const DiscretePathMeasure& mu,
                                             const std::function<double(const ConePoint&, const ConePoint&)>& f)
{
    double s = 0.0;
    for (std::size_t p = 0; p < mu.size(); ++p)
        s += mu.weights()[p] * f(mu.path(p).front(), mu.path(p).back());
    return s;
}

/// One row per path sample: path,k,t,x,r,weight.
inline void write_csv(std::ostream& os, const DiscretePathMeasure& mu)
{
    os << "path,k,t,x,r,weight\n";
    for (std::size_t p = 0; p < mu.size(); ++p)
        for (int k = 0; k < mu.samples(); ++k)
        {
            const ConePoint& z = mu.path(p)[k];
            os << p << ',' << k << ',' << mu.times()[k] << ',' << z.x() << ',' << z.r() << ',' << mu.weights()[p]
               << '\n';
        }
}

} // namespace chflow
