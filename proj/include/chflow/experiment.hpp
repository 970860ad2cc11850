#pragma once
/**
 * @file  experiment.hpp
 * @brief End-to-end runs: INI configuration, solve, and artifact files
 *        (CSV matrices, PGM heatmaps, pressure, convergence log, manifest).
 */

#include "diagnostics.hpp"
#include "discretization.hpp"
#include "mmot_solver.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <system_error>
#include <type_traits>
#include <vector>

namespace chflow
{

inline constexpr const char* kVersion = "0.1.0";

struct MapSpec
{
    std::string preset = "peakon"; ///< peakon | reflection | identity | piecewise
    std::vector<double> breakpoints;
    std::vector<double> slopes;
    double offset = 0.0;

    [[nodiscard]] BoundaryMap build() const
    {
        if (preset == "peakon")
            return BoundaryMap::peakon();
        if (preset == "reflection")
            return BoundaryMap::reflection();
        if (preset == "identity")
            return BoundaryMap::identity();
        if (preset == "piecewise")
            return BoundaryMap::piecewise_linear(breakpoints, slopes, offset, "piecewise");
        throw ConfigError("unknown boundary map '" + preset + "'");
    }
};

struct ExperimentConfig
{
    GridConfig grid;
    double epsilon = 5e-3;
    double alpha = 40.0;
    MapSpec map;
    double tolerance = 1e-7;
    int max_sweeps = 5000;
    int anderson_depth = 8;
    int newton_every = 10;
    LogDomainMode log_domain = LogDomainMode::Auto;
    std::string out_dir = "out";
    std::vector<int> snapshots; ///< 1-based levels; empty means the default set
    std::uint64_t seed = 20240611;
};

[[nodiscard]] inline std::string to_string(LogDomainMode m)
{
    switch (m)
    {
    case LogDomainMode::On:
        return "on";
    case LogDomainMode::Off:
        return "off";
    case LogDomainMode::Auto:
        break;
    }
    return "auto";
}

[[nodiscard]] inline LogDomainMode parse_log_domain(const std::string& s)
{
    if (s == "auto")
        return LogDomainMode::Auto;
    if (s == "on")
        return LogDomainMode::On;
    if (s == "off")
        return LogDomainMode::Off;
    throw ConfigError("log_domain must be auto, on or off, got '" + s + "'");
}

/// Snapshot levels of the reference 35-level figures mapped onto K levels.
[[nodiscard]] inline std::vector<int> default_snapshots(int levels)
{
    static constexpr int reference[] = {1, 6, 11, 16, 20, 25, 30, 35};
    std::vector<int> out;
    for (int k : reference)
        out.push_back((k - 1) * (levels - 1) / 34 + 1);
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

[[nodiscard]] inline std::vector<int> snapshot_levels(const ExperimentConfig& cfg)
{
    return cfg.snapshots.empty() ? default_snapshots(cfg.grid.levels) : cfg.snapshots;
}

inline void validate(const ExperimentConfig& cfg)
{
    (void)Grid(cfg.grid);
    if (!(cfg.epsilon > 0.0) || !(cfg.alpha > 0.0))
        throw ConfigError("epsilon and alpha must be positive");
    if (!(cfg.tolerance > 0.0) || cfg.max_sweeps < 1)
        throw ConfigError("tolerance must be positive and max_sweeps at least 1");
    if (cfg.anderson_depth < 0)
        throw ConfigError("anderson_depth must be non-negative");
    if (cfg.newton_every < 0)
        throw ConfigError("newton_every must be non-negative");
    for (int k : cfg.snapshots)
        if (k < 1 || k > cfg.grid.levels)
            throw ConfigError("snapshot level " + std::to_string(k) + " outside [1, K]");
    (void)cfg.map.build();
}

namespace detail
{

template <class T> std::vector<T> parse_list(const std::string& text)
{
    std::string s = text;
    std::replace(s.begin(), s.end(), ',', ' ');
    std::istringstream in(s);
    in.imbue(std::locale::classic());
    std::vector<T> out;
    T v{};
    while (in >> v)
        out.push_back(v);
    if (!in.eof())
        throw ConfigError("cannot parse list '" + text + "'");
    return out;
}

/// Value at `key` if present, else `fallback`; unparsable text is an error.
template <class T> T read_key(const boost::property_tree::ptree& tree, const std::string& key, T fallback)
{
    const auto text = tree.get_optional<std::string>(key);
    if (!text)
        return fallback;
    if constexpr (std::is_same_v<T, std::string>)
        return *text;
    else
    {
        std::istringstream in(*text);
        in.imbue(std::locale::classic());
        T v{};
        if (!(in >> v) || !(in >> std::ws).eof())
            throw ConfigError("config: cannot parse " + key + " = '" + *text + "'");
        return v;
    }
}

} // namespace detail

/// Named presets at reduced scale; `peakon-full` and `reflection-full`
/// carry the full-size parameters.
[[nodiscard]] inline ExperimentConfig preset_config(const std::string& name)
{
    ExperimentConfig c;
    c.grid = GridConfig{16, 17, 0.55, 1.45, 9, 1.0};
    c.epsilon = 5e-3;
    c.alpha = 40.0;
    if (name == "peakon" || name == "identity")
        c.map.preset = name;
    else if (name == "reflection")
    {
        c.map.preset = "reflection";
        c.grid.r_lo = 0.6;
        c.grid.r_hi = 1.4;
    }
    else if (name == "peakon-full" || name == "reflection-full")
    {
        c = preset_config(name.substr(0, name.size() - 5));
        c.grid.nx = 40;
        c.grid.nr = 41;
        c.grid.levels = 35;
        c.epsilon = 5e-4;
    }
    else
        throw ConfigError("unknown preset '" + name + "'");
    return c;
}

/**
 * INI file with sections [grid] [problem] [solver] [output] [verify].
 * `problem.preset` seeds every field from a named preset; explicit keys
 * override it.
 */
[[nodiscard]] inline ExperimentConfig parse_config(std::istream& in)
{
    namespace pt = boost::property_tree;
    pt::ptree tree;
    try
    {
        pt::read_ini(in, tree);
    }
    catch (const pt::ini_parser_error& e)
    {
        throw ConfigError(std::string("config: ") + e.what());
    }
    ExperimentConfig c;
    try
    {
        if (auto p = tree.get_optional<std::string>("problem.preset"))
            c = preset_config(*p);
        GridConfig& g = c.grid;
        g.nx = detail::read_key(tree, "grid.nx", g.nx);
        g.nr = detail::read_key(tree, "grid.nr", g.nr);
        g.r_lo = detail::read_key(tree, "grid.r_lo", g.r_lo);
        g.r_hi = detail::read_key(tree, "grid.r_hi", g.r_hi);
        g.levels = detail::read_key(tree, "grid.levels", g.levels);
        g.horizon = detail::read_key(tree, "grid.horizon", g.horizon);
        c.epsilon = detail::read_key(tree, "problem.epsilon", c.epsilon);
        c.alpha = detail::read_key(tree, "problem.alpha", c.alpha);
        c.map.preset = detail::read_key(tree, "problem.map", c.map.preset);
        if (auto b = tree.get_optional<std::string>("problem.breakpoints"))
            c.map.breakpoints = detail::parse_list<double>(*b);
        if (auto s = tree.get_optional<std::string>("problem.slopes"))
            c.map.slopes = detail::parse_list<double>(*s);
        c.map.offset = detail::read_key(tree, "problem.offset", c.map.offset);
        c.tolerance = detail::read_key(tree, "solver.tolerance", c.tolerance);
        c.max_sweeps = detail::read_key(tree, "solver.max_sweeps", c.max_sweeps);
        c.anderson_depth = detail::read_key(tree, "solver.anderson_depth", c.anderson_depth);
        c.newton_every = detail::read_key(tree, "solver.newton_every", c.newton_every);
        c.log_domain = parse_log_domain(detail::read_key(tree, "solver.log_domain", to_string(c.log_domain)));
        c.out_dir = detail::read_key(tree, "output.dir", c.out_dir);
        if (auto s = tree.get_optional<std::string>("output.snapshots"))
            c.snapshots = detail::parse_list<int>(*s);
        c.seed = detail::read_key(tree, "verify.seed", c.seed);
    }
    catch (const pt::ptree_bad_data& e)
    {
        throw ConfigError(std::string("config: bad value: ") + e.what());
    }
    validate(c);
    return c;
}

[[nodiscard]] inline ExperimentConfig load_config(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw ConfigError("cannot open config " + path.string());
    return parse_config(in);
}

// ---------------------------------------------------------------------------
// writers

/// Shortest round-trip decimal, independent of the global locale.
[[nodiscard]] inline std::string format_number(double v)
{
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

/// First row: corner label and column coordinates; then one row per row
/// coordinate.
inline void write_matrix_csv(std::ostream& os, const Matrix& m, const std::string& corner,
                             const std::vector<double>& rows, const std::vector<double>& cols)
{
    os << corner;
    for (double c : cols)
        os << ',' << format_number(c);
    os << '\n';
    for (Eigen::Index i = 0; i < m.rows(); ++i)
    {
        os << format_number(rows[i]);
        for (Eigen::Index j = 0; j < m.cols(); ++j)
            os << ',' << format_number(m(i, j));
        os << '\n';
    }
}

struct HeatmapRange
{
    double min = 0.0;
    double max = 0.0;
};

/// Binary 8-bit PGM, linearly normalized to [0, 255] over the matrix range.
inline HeatmapRange write_pgm(std::ostream& os, const Matrix& m)
{
    HeatmapRange range{m.minCoeff(), m.maxCoeff()};
    const double span = range.max - range.min;
    os << "P5\n" << m.cols() << ' ' << m.rows() << "\n255\n";
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j)
        {
            const double t = span > 0.0 ? (m(i, j) - range.min) / span : 0.0;
            os.put(static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * t))));
        }
    return range;
}

// ---------------------------------------------------------------------------
// run

struct SnapshotSummary
{
    int level = 0; ///< 1-based
    double determinism = 0.0;
    double mass = 0.0;
};

struct RunOutcome
{
    int exit_code = 0; ///< 0 ok, 2 not converged, 3 starved node
    std::string message;
    SolverReport report;
    DualPotentials duals;
    std::vector<SnapshotSummary> snapshots;
    ActionParts action;
    std::vector<std::string> warnings;
};

namespace detail
{

inline void write_file(const std::filesystem::path& path, const std::string& text, bool binary = false)
{
    std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
    if (!out)
        throw std::runtime_error("cannot write " + path.string());
    out << text;
}

inline void write_manifest(const std::filesystem::path& dir, const ExperimentConfig& cfg, const RunOutcome& run)
{
    std::ostringstream m;
    m.imbue(std::locale::classic());
    const GridConfig& g = cfg.grid;
    m << "# chflow run manifest\n";
    m << "version = " << kVersion << "\n\n";
    m << "[grid]\nnx = " << g.nx << "\nnr = " << g.nr << "\nr_lo = " << format_number(g.r_lo)
      << "\nr_hi = " << format_number(g.r_hi) << "\nlevels = " << g.levels
      << "\nhorizon = " << format_number(g.horizon) << "\n\n";
    m << "[problem]\nepsilon = " << format_number(cfg.epsilon) << "\nalpha = " << format_number(cfg.alpha)
      << "\nmap = " << cfg.map.preset << '\n';
    if (cfg.map.preset == "piecewise")
    {
        m << "breakpoints =";
        for (double b : cfg.map.breakpoints)
            m << ' ' << format_number(b);
        m << "\nslopes =";
        for (double s : cfg.map.slopes)
            m << ' ' << format_number(s);
        m << "\noffset = " << format_number(cfg.map.offset) << '\n';
    }
    m << "\n[solver]\ntolerance = " << format_number(cfg.tolerance) << "\nmax_sweeps = " << cfg.max_sweeps
      << "\nanderson_depth = " << cfg.anderson_depth << "\nnewton_every = " << cfg.newton_every << "\nlog_domain = " << to_string(cfg.log_domain) << "\n\n";
    m << "[output]\nsnapshots =";
    for (int k : snapshot_levels(cfg))
        m << ' ' << k;
    m << "\n\n[verify]\nseed = " << cfg.seed << "\n\n";
    m << "[result]\nexit_code = " << run.exit_code << "\nsweeps = " << run.report.iterations
      << "\nconverged = " << (run.report.converged ? "true" : "false")
      << "\nfinal_violation = " << format_number(run.report.final_violation) << "\ndomain = " << run.report.domain
      << "\ntransport_action = " << format_number(run.action.transport)
      << "\ncoupling_action = " << format_number(run.action.coupling) << '\n';
    for (const auto& s : run.snapshots)
        m << "determinism_k" << s.level << " = " << format_number(s.determinism) << '\n';
    if (!run.message.empty())
        m << "message = " << run.message << '\n';
    for (const auto& w : run.warnings)
        m << "warning = " << w << '\n';
    m << "\n# pressure.csv holds eps * p / dt after removing the per-level mean of the duals;\n"
         "# it approximates the continuous pressure only up to discretization.\n";
    write_file(dir / "manifest.txt", m.str());
}

inline void write_heatmap(const std::filesystem::path& dir, const std::string& stem, const Matrix& m)
{
    std::ostringstream img;
    const HeatmapRange range = write_pgm(img, m);
    write_file(dir / (stem + ".pgm"), img.str(), true);
    write_file(dir / (stem + ".pgm.range"),
               "min = " + format_number(range.min) + "\nmax = " + format_number(range.max) + "\n");
}

} // namespace detail

/**
 * Solve the configured problem and write every artifact into cfg.out_dir.
 * `log` (optional) receives progress lines as they happen.
 */
[[nodiscard]] inline RunOutcome run_experiment(const ExperimentConfig& cfg, std::ostream* log = nullptr)
{
    validate(cfg);
    namespace fs = std::filesystem;
    const fs::path dir(cfg.out_dir);
    fs::create_directories(dir);

    const Grid grid(cfg.grid);
    const CostMatrices costs = build_cost_matrices(grid, cfg.map.build());
    const GibbsFactors factors = build_gibbs(costs, grid, cfg.epsilon, cfg.alpha);

    RunOutcome run;
    run.warnings = costs.warnings;
    if (log != nullptr)
        for (const auto& w : costs.warnings)
            *log << "warning: " << w << '\n';

    std::ostringstream conv;
    conv.imbue(std::locale::classic());
    SolverOptions opt;
    opt.tolerance = cfg.tolerance;
    opt.max_sweeps = cfg.max_sweeps;
    opt.log_domain = cfg.log_domain;
    opt.anderson_depth = cfg.anderson_depth;
    opt.newton_every = cfg.newton_every;
    opt.log = &conv;
    opt.log_every = 1;
    try
    {
        SolveResult res = sinkhorn_solve(factors, grid, opt);
        run.report = std::move(res.report);
        run.duals = std::move(res.duals);
    }
    catch (const StarvedNodeError& e)
    {
        run.exit_code = 3;
        run.message = e.what();
        conv << "error: " << e.what() << '\n';
        detail::write_file(dir / "convergence.log", conv.str());
        detail::write_manifest(dir, cfg, run);
        return run;
    }
    detail::write_file(dir / "convergence.log", conv.str());
    if (log != nullptr)
    {
        const std::string text = conv.str();
        const auto last = text.rfind("done");
        *log << (last == std::string::npos ? text : text.substr(last));
    }
    if (!run.report.converged)
    {
        run.exit_code = 2;
        run.message = "not converged after " + std::to_string(run.report.iterations) + " sweeps";
    }

    const PlanView view(factors, grid, run.duals);
    run.action = view.action();
    const std::vector<double> ts = grid.ts();
    for (int k1 : snapshot_levels(cfg))
    {
        const int k = k1 - 1;
        const PlanSlice plan = view.base_transport_plan(k);
        const PlanSlice cone = view.cone_marginal(k);
        const std::string tag = "_k" + std::to_string(k1);
        std::ostringstream a;
        write_matrix_csv(a, plan.values, "x0\\x", grid.xs(), grid.xs());
        detail::write_file(dir / ("plan" + tag + ".csv"), a.str());
        std::ostringstream b;
        write_matrix_csv(b, cone.values, "x\\r", grid.xs(), grid.rs());
        detail::write_file(dir / ("cone" + tag + ".csv"), b.str());
        detail::write_heatmap(dir, "plan" + tag, plan.values);
        detail::write_heatmap(dir, "cone" + tag, cone.values);
        run.snapshots.push_back({k1, determinism_index(plan), plan.mass});
    }
    std::ostringstream p;
    write_matrix_csv(p, extract_pressure(run.duals, grid, cfg.epsilon), "t\\x", ts, grid.xs());
    detail::write_file(dir / "pressure.csv", p.str());
    detail::write_manifest(dir, cfg, run);
    return run;
}

} // namespace chflow
