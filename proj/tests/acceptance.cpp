// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any
// failure. Usage: chflow_acceptance [output-dir]

#include <chflow/chflow.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

using namespace chflow;
namespace fs = std::filesystem;

namespace
{

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string sci(double v)
{
    std::ostringstream s;
    s.precision(3);
    s << std::scientific << v;
    return s.str();
}

int failures = 0;

void report(int id, const std::string& title, bool ok, const std::string& detail)
{
    std::cout << (ok ? "PASS" : "FAIL") << " criterion " << id << ": " << title << " | " << detail << std::endl;
    if (!ok)
        ++failures;
}

/// Passing flag plus the failing checks of a verification report.
std::pair<bool, std::string> summarize(const VerificationReport& rep)
{
    std::string detail;
    for (const auto& c : rep.checks)
        if (!c.passed)
            detail += c.name + " (" + c.detail + ") ";
    if (detail.empty())
        detail = std::to_string(rep.checks.size()) + " checks passed";
    return {rep.passed(), detail};
}

struct SolvedRun
{
    ExperimentConfig cfg;
    RunOutcome outcome;
    double seconds = 0.0;
};

SolvedRun solve_preset(const std::string& name, const fs::path& dir)
{
    SolvedRun r;
    r.cfg = preset_config(name);
    r.cfg.out_dir = dir.string();
    const auto t0 = Clock::now();
    r.outcome = run_experiment(r.cfg);
    r.seconds = seconds_since(t0);
    return r;
}

/// Largest drop between consecutive dual objective values.
double worst_descent(const SolverReport& rep)
{
    double worst = 0.0;
    const auto& h = rep.dual_objective_history;
    for (std::size_t i = 1; i < h.size(); ++i)
        worst = std::max(worst, h[i - 1] - h[i]);
    return worst;
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

} // namespace

int main(int argc, char** argv)
{
    const fs::path out = argc > 1 ? fs::path(argv[1]) : fs::path("acceptance_out");
    constexpr std::uint64_t seed = 20240611;
    std::vector<std::pair<std::string, SolverReport>> converged_runs;
    int solver_runs = 0;

    // 1. tiny-grid oracle
    {
        const auto t0 = Clock::now();
        const auto [ok, detail] = summarize(verify_oracle(seed));
        const double secs = seconds_since(t0);
        report(1, "oracle equivalence on the 3x2x3 identity problem", ok && secs < 10.0,
               detail + ", " + sci(secs) + " s");
    }

    // 2. peakon at reduced scale
    const SolvedRun peakon = solve_preset("peakon", out / "peakon");
    {
        const SolverReport& rep = peakon.outcome.report;
        const Grid grid(peakon.cfg.grid);
        const GibbsFactors f = build_gibbs(build_cost_matrices(grid, peakon.cfg.map.build()), grid,
                                           peakon.cfg.epsilon, peakon.cfg.alpha);
        const PlanView view(f, grid, peakon.outcome.duals);
        double min_det = 1.0;
        for (const auto& s : peakon.outcome.snapshots)
            min_det = std::min(min_det, s.determinism);
        const Vector profile = radial_profile(view.cone_marginal(grid.levels() - 1));
        const std::size_t peaks = profile_peaks(profile).size();
        const bool ok = rep.converged && rep.final_violation < 1e-6 && rep.iterations <= 5000 &&
                        peakon.seconds < 300.0 && min_det > 0.8 && peaks >= 2;
        report(2, "peakon constraints, determinism and bimodal final profile", ok,
               "violation " + sci(rep.final_violation) + " after " + std::to_string(rep.iterations) + " sweeps in " +
                   sci(peakon.seconds) + " s, min determinism " + sci(min_det) + ", radial peaks " +
                   std::to_string(peaks));
        ++solver_runs;
        if (rep.converged)
            converged_runs.emplace_back("peakon", rep);
    }

    // 3. reflection symmetry
    {
        const SolvedRun refl = solve_preset("reflection", out / "reflection");
        const Grid grid(refl.cfg.grid);
        const GibbsFactors f = build_gibbs(build_cost_matrices(grid, refl.cfg.map.build()), grid, refl.cfg.epsilon,
                                           refl.cfg.alpha);
        const PlanView view(f, grid, refl.outcome.duals);
        const int n = grid.nx();
        double plan_err = 0.0;
        for (int k = 0; k < grid.levels(); ++k)
        {
            const Matrix p = view.base_transport_plan(k).values;
            for (int s = 0; s < n; ++s)
                for (int i = 0; i < n; ++i)
                    plan_err = std::max(plan_err, std::abs(p(s, i) - p(n - 1 - s, n - 1 - i)));
        }
        const Matrix cone = view.cone_marginal((grid.levels() - 1) / 2).values;
        double cone_err = 0.0;
        for (int i = 0; i < n; ++i)
            for (int r = 0; r < grid.nr(); ++r)
                cone_err = std::max(cone_err, std::abs(cone(i, r) - cone(n - 1 - i, r)));
        const bool ok = refl.outcome.report.converged && plan_err < 1e-6 && cone_err < 1e-6;
        report(3, "reflection symmetry of base plans and middle cone marginal", ok,
               "plan asymmetry " + sci(plan_err) + ", cone asymmetry " + sci(cone_err) + ", " +
                   std::to_string(refl.outcome.report.iterations) + " sweeps");
        ++solver_runs;
        if (refl.outcome.report.converged)
            converged_runs.emplace_back("reflection", refl.outcome.report);
    }

    // 4. deterministic limit
    {
        const SolvedRun id = solve_preset("identity", out / "identity");
        double min_det = 1.0;
        for (const auto& s : id.outcome.snapshots)
            min_det = std::min(min_det, s.determinism);
        const double transport = id.outcome.action.transport;
        const bool ok = id.outcome.report.converged && transport < 10.0 * id.cfg.epsilon && min_det > 0.9;
        report(4, "identity map stays deterministic", ok,
               "transport " + sci(transport) + " (limit " + sci(10.0 * id.cfg.epsilon) + "), min determinism " +
                   sci(min_det));
        ++solver_runs;
        if (id.outcome.report.converged)
            converged_runs.emplace_back("identity", id.outcome.report);
    }

    // 5. homogeneity suite
    {
        const auto [ok, detail] = summarize(verify_sandbox(seed, 200));
        report(5, "homogeneity, dilation and rescaling on 200 random measures", ok, detail);
    }

    // 6. geometry suite
    {
        const auto [ok, detail] = summarize(verify_geometry(seed));
        report(6, "cone geometry", ok, detail);
    }

    // 7. smooth reference
    {
        const auto [ok, detail] = summarize(verify_smooth(seed));
        report(7, "smooth reference orders and the 3/26 threshold", ok, detail);
    }

    // 8. monotone dual ascent, including a tight-tolerance tiny solve
    {
        const Grid grid(GridConfig{3, 2, 0.5, 1.0, 3, 1.0});
        const GibbsFactors f = build_gibbs(build_cost_matrices(grid, BoundaryMap::identity()), grid, 0.1, 1.0);
        SolverOptions opt;
        opt.tolerance = 1e-13;
        const SolveResult tiny = sinkhorn_solve(f, grid, opt);
        ++solver_runs;
        if (tiny.report.converged)
            converged_runs.emplace_back("tiny", tiny.report);
        double worst = 0.0;
        std::string detail;
        for (const auto& [name, rep] : converged_runs)
        {
            const double d = worst_descent(rep);
            worst = std::max(worst, d);
            detail += name + " " + sci(d) + " ";
        }
        report(8, "dual objective never decreases by more than 1e-10",
               static_cast<int>(converged_runs.size()) == solver_runs && worst <= 1e-10,
               std::to_string(converged_runs.size()) + " of " + std::to_string(solver_runs) + " runs converged, largest drop: " + detail);
    }

    // 9. bitwise reproducibility
    {
        const SolvedRun again = solve_preset("peakon", out / "peakon_rerun");
        int compared = 0;
        std::string mismatched;
        for (const auto& entry : fs::directory_iterator(out / "peakon"))
        {
            if (entry.path().extension() != ".csv")
                continue;
            ++compared;
            if (slurp(entry.path()) != slurp(out / "peakon_rerun" / entry.path().filename()))
                mismatched += entry.path().filename().string() + " ";
        }
        report(9, "identical reruns give bitwise-identical CSVs", compared > 0 && mismatched.empty(),
               std::to_string(compared) + " CSV files compared" + (mismatched.empty() ? "" : ", differ: " + mismatched));
        (void)again;
    }

    std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
    return failures == 0 ? 0 : 1;
}
