#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "mase/harness/config.hpp"
#include "mase/harness/experiment.hpp"
#include "mase/harness/report.hpp"
#include "mase/harness/sweep.hpp"

namespace {

constexpr int kConfigError = 2;
constexpr int kRuntimeError = 3;

namespace fs = std::filesystem;
using namespace mase;
using namespace mase::harness;

void print_summary(const ExperimentResult& result, const fs::path& csv)
{
    int violations = 0;
    long stops = 0;
    for (const auto& run : result.runs) {
        violations += run.metrics.violation_episodes();
        stops += run.metrics.emergency_stops();
    }
    std::cout << result.name << ": " << result.runs.size() << " seed(s), " << violations << " violation episode(s), "
              << stops << " emergency stop(s)";
    if (result.calibration)
        std::cout << ", calibrated B = " << result.norm_bound << " after " << result.calibration->doublings << " doubling(s)"
                  << (result.calibration->passed ? "" : " (coverage target not met)");
    std::cout << "\nwrote " << csv.string() << '\n';
}

int cmd_run(const std::string& config_path)
{
    const auto cfg = load_config(config_path);
    const auto result = run_experiment(cfg);
    print_summary(result, write_experiment(result, cfg.output));
    return 0;
}

int cmd_sweep(const std::string& config_path, const std::vector<std::string>& grid)
{
    const auto cfg = load_config(config_path);
    std::vector<SweepAxis> axes;
    for (const auto& g : grid)
        axes.push_back(parse_sweep_axis(g));
    const auto cells = sweep(cfg, axes, cfg.output);
    for (const auto& cell : cells)
        print_summary(cell.result, cell.directory / (cell.result.name + ".csv"));
    std::cout << "wrote " << (fs::path(cfg.output) / "summary.csv").string() << '\n';
    return 0;
}

int cmd_report(const std::string& dir, const std::string& baseline, double window)
{
    const auto report = report_directory(dir, baseline, window);
    std::cout << render_report(report);
    std::cout << "wrote " << (fs::path(dir) / "report.txt").string() << " and " << (fs::path(dir) / "plot.svg").string() << '\n';
    return 0;
}

int cmd_gen_env(const std::string& spec_text, const std::string& out_path)
{
    const auto [spec, seed] = parse_env_spec(spec_text);
    const auto env = generate_environment(spec, seed);
    std::ofstream out(out_path, std::ios::binary);
    if (!out)
        throw std::runtime_error("cannot write '" + out_path + "'");
    write_environment(out, env);
    std::cout << "wrote " << out_path << " (" << env.kind << ", S=" << env.cmdp.num_states() << ", A=" << env.cmdp.num_actions()
              << ", H=" << env.cmdp.horizon() << ", xi=" << env.xi << ")\n";
    return 0;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"mase-lab: safe exploration experiments"};
    app.require_subcommand(1);

    std::string config_path;
    auto* run = app.add_subcommand("run", "train every seed of a config and write <output>/<name>.csv");
    run->add_option("config", config_path, "experiment config file")->required();

    std::vector<std::string> grid;
    auto* sw = app.add_subcommand("sweep", "run the cross product of parameter values");
    sw->add_option("config", config_path, "experiment config file")->required();
    sw->add_option("--grid", grid, "key=v1,v2 with key in {c, delta, Cg, lengthscale}; repeatable")->required();

    std::string dir;
    std::string baseline;
    double window = 0.2;
    auto* rep = app.add_subcommand("report", "aggregate the CSVs in a directory");
    rep->add_option("dir", dir, "directory of <algorithm>.csv files")->required();
    rep->add_option("--baseline", baseline, "algorithm used for reward normalization")->required();
    rep->add_option("--window", window, "fraction of episodes in the emergency-stop windows")->check(CLI::Range(0.01, 0.5));

    std::string spec;
    std::string out_path;
    auto* gen = app.add_subcommand("gen-env", "write a generated environment in the text format");
    gen->add_option("spec", spec, "grid:side=10:seed=3 or linear:states=5:actions=3:dimension=4:seed=1")->required();
    gen->add_option("-o,--output", out_path, "output file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kConfigError;
    }

    try {
        if (*run)
            return cmd_run(config_path);
        if (*sw)
            return cmd_sweep(config_path, grid);
        if (*rep)
            return cmd_report(dir, baseline, window);
        if (*gen)
            return cmd_gen_env(spec, out_path);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfigError;
    } catch (const ParseError& e) {
        std::cerr << "parse error: " << e.what() << '\n';
        return kConfigError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kRuntimeError;
    }
    return 0;
}
