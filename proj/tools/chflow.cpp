// Command-line front end: run experiments, run verification suites, and
// describe presets.

#include <chflow/chflow.hpp>

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

namespace
{

int cmd_run(const std::string& config_path, const std::string& preset, const std::string& out,
            const std::string& log_domain, std::optional<std::uint64_t> seed)
{
    chflow::ExperimentConfig cfg =
        config_path.empty() ? chflow::preset_config(preset) : chflow::load_config(config_path);
    if (!out.empty())
        cfg.out_dir = out;
    if (!log_domain.empty())
        cfg.log_domain = chflow::parse_log_domain(log_domain);
    if (seed)
        cfg.seed = *seed;
    const chflow::RunOutcome run = chflow::run_experiment(cfg, &std::cerr);
    for (const auto& s : run.snapshots)
        std::cout << "k=" << s.level << " determinism=" << s.determinism << " mass=" << s.mass << '\n';
    std::cout << "transport_action=" << run.action.transport << " coupling_action=" << run.action.coupling << '\n';
    if (!run.message.empty())
        std::cerr << "error: " << run.message << '\n';
    std::cout << "artifacts written to " << cfg.out_dir << '\n';
    return run.exit_code;
}

int cmd_verify(const std::string& suite, std::uint64_t seed, const std::string& out)
{
    const std::vector<std::string> suites =
        suite == "all" ? std::vector<std::string>{"geometry", "sandbox", "oracle", "smooth"}
                       : std::vector<std::string>{suite};
    nlohmann::json summary = nlohmann::json::array();
    bool ok = true;
    for (const auto& name : suites)
    {
        const chflow::VerificationReport rep = chflow::run_verification(name, seed);
        nlohmann::json checks = nlohmann::json::array();
        for (const auto& c : rep.checks)
        {
            std::cout << (c.passed ? "PASS " : "FAIL ") << rep.suite << '.' << c.name << "  " << c.detail << '\n';
            checks.push_back({{"name", c.name}, {"passed", c.passed}, {"detail", c.detail}});
        }
        summary.push_back({{"suite", rep.suite}, {"seed", rep.seed}, {"passed", rep.passed()}, {"checks", checks}});
        ok = ok && rep.passed();
    }
    if (!out.empty())
    {
        std::filesystem::create_directories(out);
        std::ofstream(std::filesystem::path(out) / "verify.json") << summary.dump(2) << '\n';
    }
    std::cout << summary.dump() << '\n';
    return ok ? 0 : 1;
}

int cmd_info(const std::string& config_path, const std::string& preset)
{
    const chflow::ExperimentConfig cfg =
        config_path.empty() ? chflow::preset_config(preset) : chflow::load_config(config_path);
    const chflow::Grid grid(cfg.grid);
    std::cout << "chflow " << chflow::kVersion << '\n'
              << "grid: nx=" << grid.nx() << " nr=" << grid.nr() << " r=[" << cfg.grid.r_lo << ", "
              << cfg.grid.r_hi << "] K=" << grid.levels() << " T=" << grid.horizon() << '\n'
              << "unit radius index: " << grid.unit_radius_index() << '\n'
              << "map: " << cfg.map.preset << "  epsilon=" << cfg.epsilon << "  alpha=" << cfg.alpha << '\n'
              << "solver: tolerance=" << cfg.tolerance << " max_sweeps=" << cfg.max_sweeps
              << " log_domain=" << chflow::to_string(cfg.log_domain) << '\n'
              << "snapshots:";
    for (int k : chflow::snapshot_levels(cfg))
        std::cout << ' ' << k;
    const std::size_t n = static_cast<std::size_t>(grid.size());
    std::cout << "\nwork per sweep ~ " << 2 * grid.levels() * grid.nx() * n * n << " multiply-adds\n";
    return 0;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Multi-marginal entropic solver for generalized Camassa-Holm flows on the cone"};
    app.require_subcommand(1);

    std::string config;
    std::string preset = "peakon";
    std::string out;
    std::string log_domain;
    std::uint64_t seed = 20240611;
    std::string suite = "all";

    auto* run = app.add_subcommand("run", "solve a configured problem and write artifacts");
    run->add_option("--config", config, "INI configuration file");
    run->add_option("--preset", preset, "named preset used when no config is given")
        ->check(CLI::IsMember({"peakon", "reflection", "identity", "peakon-full", "reflection-full"}));
    run->add_option("--out", out, "output directory (overrides the config)");
    run->add_option("--log-domain", log_domain, "auto | on | off")->check(CLI::IsMember({"auto", "on", "off"}));
    auto* run_seed = run->add_option("--seed", seed, "seed recorded in the manifest");

    auto* ver = app.add_subcommand("verify", "run self-check suites");
    ver->add_option("--suite", suite, "geometry | sandbox | oracle | smooth | all")
        ->check(CLI::IsMember({"geometry", "sandbox", "oracle", "smooth", "all"}));
    ver->add_option("--seed", seed, "seed for randomized checks");
    ver->add_option("--out", out, "directory for verify.json");

    auto* info = app.add_subcommand("info", "print the resolved configuration");
    info->add_option("--config", config, "INI configuration file");
    info->add_option("--preset", preset, "named preset used when no config is given");

    CLI11_PARSE(app, argc, argv);

    try
    {
        if (run->parsed())
            return cmd_run(config, preset, out, log_domain,
                           run_seed->count() > 0 ? std::optional<std::uint64_t>(seed) : std::nullopt);
        if (ver->parsed())
            return cmd_verify(suite, seed, out);
        if (info->parsed())
            return cmd_info(config, preset);
    }
    catch (const chflow::ConfigError& e)
    {
        std::cerr << "configuration error: " << e.what() << '\n';
        return 1;
    }
    catch (const std::exception& e)
    {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
