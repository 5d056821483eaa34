#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "mase/harness/config.hpp"
#include "mase/harness/experiment.hpp"

namespace mase::harness {

struct SweepAxis {
    std::string key;
    std::vector<std::string> values;
};

/// `key=v1,v2,...` for key in {c, delta, Cg, lengthscale}.
inline SweepAxis parse_sweep_axis(std::string_view text)
{
    const auto eq = text.find('=');
    if (eq == std::string_view::npos)
        throw ConfigError("grid", "expected key=v1,v2 in '" + std::string(text) + "'");
    SweepAxis axis;
    axis.key = std::string(mase::detail::trim(text.substr(0, eq)));
    if (axis.key != "c" && axis.key != "delta" && axis.key != "Cg" && axis.key != "lengthscale")
        throw ConfigError("grid", "unknown sweep key '" + axis.key + "' (allowed: c, delta, Cg, lengthscale)");
    for (auto v : mase::detail::split(text.substr(eq + 1), ',')) {
        v = mase::detail::trim(v);
        mase::detail::parse_double(v, "grid." + axis.key);
        axis.values.emplace_back(v);
    }
    if (axis.values.empty() || axis.values.front().empty())
        throw ConfigError("grid", "no values for '" + axis.key + "'");
    return axis;
}

inline void apply_sweep_value(ExperimentConfig& cfg, const std::string& key, const std::string& value)
{
    const double v = mase::detail::parse_double(value, "grid." + key);
    if (key == "c")
        cfg.mase.penalty_coefficient = v;
    else if (key == "delta")
        cfg.mase.delta = v;
    else if (key == "Cg") {
        if (cfg.quantifier.kind != QuantifierKind::glm)
            throw ConfigError("grid.Cg", "Cg applies to the glm quantifier only");
        cfg.quantifier.width_constant = v;
    } else if (key == "lengthscale") {
        if (cfg.quantifier.kind != QuantifierKind::gp)
            throw ConfigError("grid.lengthscale", "lengthscale applies to the gp quantifier only");
        cfg.quantifier.lengthscale = v;
    }
    validate(cfg);
}

struct SweepCell {
    std::vector<std::pair<std::string, std::string>> assignment;
    std::filesystem::path directory;
    ExperimentResult result;
};

/// Cross product of the axes. Each cell runs in its own subdirectory; summary.csv lists one row
/// per cell.
inline std::vector<SweepCell> sweep(const ExperimentConfig& base, const std::vector<SweepAxis>& axes, const std::filesystem::path& out_dir)
{
    std::vector<std::vector<std::pair<std::string, std::string>>> cells{{}};
    for (const auto& axis : axes) {
        std::vector<std::vector<std::pair<std::string, std::string>>> next;
        for (const auto& cell : cells)
            for (const auto& v : axis.values) {
                auto c = cell;
                c.emplace_back(axis.key, v);
                next.push_back(std::move(c));
            }
        cells = std::move(next);
    }
    // Validate every cell before running any of them.
    std::vector<ExperimentConfig> configs;
    for (const auto& cell : cells) {
        auto cfg = base;
        for (const auto& [k, v] : cell)
            apply_sweep_value(cfg, k, v);
        configs.push_back(std::move(cfg));
    }
    std::filesystem::create_directories(out_dir);
    std::vector<SweepCell> out;
    std::ofstream summary(out_dir / "summary.csv", std::ios::binary);
    for (const auto& axis : axes)
        summary << axis.key << ',';
    summary << "directory,violation_episodes,emergency_stops,mean_return\n";
    for (std::size_t i = 0; i < cells.size(); ++i) {
        std::string name;
        for (const auto& [k, v] : cells[i])
            name += (name.empty() ? "" : "_") + k + "-" + v;
        if (name.empty())
            name = "cell";
        SweepCell cell{cells[i], out_dir / name, run_experiment(configs[i])};
        write_experiment(cell.result, cell.directory);
        int violations = 0;
        long stops = 0;
        double total = 0.0;
        std::size_t episodes = 0;
        for (const auto& run : cell.result.runs) {
            violations += run.metrics.violation_episodes();
            stops += run.metrics.emergency_stops();
            for (const auto& e : run.metrics.episodes)
                total += e.total_return;
            episodes += run.metrics.episodes.size();
        }
        for (const auto& [k, v] : cells[i])
            summary << v << ',';
        summary << name << ',' << violations << ',' << stops << ',' << format_number(episodes ? total / static_cast<double>(episodes) : 0.0) << '\n';
        out.push_back(std::move(cell));
    }
    return out;
}

} // namespace mase::harness
