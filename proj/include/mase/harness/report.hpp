#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "mase/error.hpp"
#include "mase/harness/experiment.hpp"

namespace mase::harness {

struct MetricsRow {
    std::uint64_t seed = 0;
    int episode = 0;
    int steps = 0;
    double total_return = 0.0;
    double cumulative_cost = 0.0;
    double max_step_cost = 0.0;
    bool violated = false;
    int emergency_stops = 0;
    std::size_t buffer_size = 0;
};

inline std::vector<MetricsRow> parse_metrics_csv(std::istream& in)
{
    std::vector<MetricsRow> rows;
    std::string line;
    std::size_t line_no = 0;
    if (!std::getline(in, line))
        throw ParseError(0, "empty metrics file");
    ++line_no;
    if (mase::detail::trim(line) != kCsvHeader)
        throw ParseError(1, "unexpected header '" + line + "'");
    while (std::getline(in, line)) {
        ++line_no;
        if (mase::detail::trim(line).empty())
            continue;
        const auto f = mase::detail::split(mase::detail::trim(line), ',');
        if (f.size() != 9)
            throw ParseError(line_no, "expected 9 fields, got " + std::to_string(f.size()));
        auto num = [&](std::size_t i) {
            try {
                return mase::detail::parse_double(f[i], "csv");
            } catch (const ConfigError& e) {
                throw ParseError(line_no, e.what());
            }
        };
        MetricsRow r;
        r.seed = static_cast<std::uint64_t>(num(0));
        r.episode = static_cast<int>(num(1));
        r.steps = static_cast<int>(num(2));
        r.total_return = num(3);
        r.cumulative_cost = num(4);
        r.max_step_cost = num(5);
        r.violated = num(6) != 0.0;
        r.emergency_stops = static_cast<int>(num(7));
        r.buffer_size = static_cast<std::size_t>(num(8));
        rows.push_back(r);
    }
    return rows;
}

inline std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw std::runtime_error("cannot open '" + path.string() + "'");
    return parse_metrics_csv(in);
}

struct AlgorithmSummary {
    std::string name;
    double normalized_mean = 0.0;
    double normalized_std = 0.0;
    double ratio_of_means = 0.0;
    int normalized_envs = 0;
    double mean_return = 0.0;
    int seeds = 0;
    int violation_episodes = 0;
    int envs_with_violation = 0;
    long emergency_total = 0;
    long emergency_first_window = 0;
    long emergency_last_window = 0;
    int seeds_not_increasing = 0; // last-window stops <= first-window stops
};

struct AggregateReport {
    std::string baseline;
    double window = 0.2;
    std::vector<AlgorithmSummary> algorithms;
    std::vector<std::uint64_t> skipped_seeds; // baseline return ~ 0

    const AlgorithmSummary& at(const std::string& name) const
    {
        for (const auto& a : algorithms)
            if (a.name == name)
                return a;
        throw std::out_of_range("no algorithm named '" + name + "'");
    }
};

using MetricsByAlgorithm = std::map<std::string, std::vector<MetricsRow>>;

namespace detail {

    inline std::map<std::uint64_t, std::vector<const MetricsRow*>> by_seed(const std::vector<MetricsRow>& rows)
    {
        std::map<std::uint64_t, std::vector<const MetricsRow*>> out;
        for (const auto& r : rows)
            out[r.seed].push_back(&r);
        for (auto& [seed, v] : out)
            std::sort(v.begin(), v.end(), [](const auto* a, const auto* b) { return a->episode < b->episode; });
        return out;
    }

    inline double mean_return(const std::vector<const MetricsRow*>& rows)
    {
        double total = 0.0;
        for (const auto* r : rows)
            total += r->total_return;
        return rows.empty() ? 0.0 : total / static_cast<double>(rows.size());
    }

    inline int window_size(std::size_t episodes, double window)
    {
        return std::max(1, static_cast<int>(std::lround(window * static_cast<double>(episodes))));
    }

} // namespace detail

/// Pure function of the metrics: per-environment reward ratios against the baseline (averaged),
/// violation-episode counts and first/last-window emergency-stop counts.
inline AggregateReport aggregate(const MetricsByAlgorithm& metrics, const std::string& baseline, double window = 0.2)
{
    const auto base_it = metrics.find(baseline);
    if (base_it == metrics.end())
        throw ConfigError("baseline", "no metrics for baseline '" + baseline + "'");
    AggregateReport report;
    report.baseline = baseline;
    report.window = window;
    const auto base = detail::by_seed(base_it->second);
    std::map<std::uint64_t, double> base_mean;
    for (const auto& [seed, rows] : base) {
        const double m = detail::mean_return(rows);
        if (std::abs(m) < 1e-12)
            report.skipped_seeds.push_back(seed);
        else
            base_mean[seed] = m;
    }
    for (const auto& [name, rows] : metrics) {
        AlgorithmSummary s;
        s.name = name;
        const auto seeds = detail::by_seed(rows);
        s.seeds = static_cast<int>(seeds.size());
        std::vector<double> ratios;
        double algo_total = 0.0;
        double base_total = 0.0;
        double all_total = 0.0;
        for (const auto& [seed, eps] : seeds) {
            const double m = detail::mean_return(eps);
            all_total += m;
            if (const auto it = base_mean.find(seed); it != base_mean.end()) {
                ratios.push_back(m / it->second);
                algo_total += m;
                base_total += it->second;
            }
            bool any = false;
            const int w = detail::window_size(eps.size(), window);
            long first = 0;
            long last = 0;
            for (std::size_t i = 0; i < eps.size(); ++i) {
                const auto* r = eps[i];
                s.violation_episodes += r->violated ? 1 : 0;
                any = any || r->violated;
                s.emergency_total += r->emergency_stops;
                if (static_cast<int>(i) < w)
                    first += r->emergency_stops;
                if (static_cast<int>(i) >= static_cast<int>(eps.size()) - w)
                    last += r->emergency_stops;
            }
            s.emergency_first_window += first;
            s.emergency_last_window += last;
            s.seeds_not_increasing += last <= first ? 1 : 0;
            s.envs_with_violation += any ? 1 : 0;
        }
        s.mean_return = seeds.empty() ? 0.0 : all_total / static_cast<double>(seeds.size());
        s.normalized_envs = static_cast<int>(ratios.size());
        if (!ratios.empty()) {
            s.normalized_mean = std::accumulate(ratios.begin(), ratios.end(), 0.0) / static_cast<double>(ratios.size());
            double ss = 0.0;
            for (double r : ratios)
                ss += (r - s.normalized_mean) * (r - s.normalized_mean);
            s.normalized_std = ratios.size() > 1 ? std::sqrt(ss / static_cast<double>(ratios.size() - 1)) : 0.0;
            s.ratio_of_means = base_total != 0.0 ? algo_total / base_total : 0.0;
        }
        report.algorithms.push_back(s);
    }
    return report;
}

inline std::string render_report(const AggregateReport& report)
{
    std::ostringstream out;
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-20s %18s %8s %10s %10s %10s %10s %10s %12s\n", "algorithm", "reward (norm.)", "seeds",
        "viol.eps", "viol.envs", "stops", "first-win", "last-win", "last<=first");
    out << buf;
    for (const auto& s : report.algorithms) {
        char reward[64];
        std::snprintf(reward, sizeof reward, "%.3f +- %.3f", s.normalized_mean, s.normalized_std);
        std::snprintf(buf, sizeof buf, "%-20s %18s %8d %10d %10d %10ld %10ld %10ld %12d\n", s.name.c_str(), reward, s.seeds,
            s.violation_episodes, s.envs_with_violation, s.emergency_total, s.emergency_first_window, s.emergency_last_window,
            s.seeds_not_increasing);
        out << buf;
    }
    out << "\nbaseline: " << report.baseline << '\n';
    out << "reward normalization: mean over environments of (mean episode return / baseline mean episode return)\n";
    out << "alternative (ratio of summed means):";
    for (const auto& s : report.algorithms) {
        std::snprintf(buf, sizeof buf, " %s=%.3f", s.name.c_str(), s.ratio_of_means);
        out << buf;
    }
    out << '\n';
    std::snprintf(buf, sizeof buf, "emergency-stop windows: first and last %.0f%% of episodes per seed\n", report.window * 100.0);
    out << buf;
    if (!report.skipped_seeds.empty()) {
        out << "environments skipped for normalization (baseline return 0):";
        for (auto s : report.skipped_seeds)
            out << ' ' << s;
        out << '\n';
    }
    return out.str();
}

/// Two panels: mean episode return over seeds, and cumulative violation episodes summed over seeds.
inline std::string render_svg(const MetricsByAlgorithm& metrics)
{
    static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
    constexpr double W = 480, Hh = 300, pad = 50;
    struct Curves {
        std::vector<double> mean_return;
        std::vector<double> cum_violations;
    };
    std::map<std::string, Curves> curves;
    int max_ep = 1;
    for (const auto& [name, rows] : metrics) {
        for (const auto& r : rows)
            max_ep = std::max(max_ep, r.episode);
    }
    double r_lo = 0.0, r_hi = 1e-9, v_hi = 1.0;
    for (const auto& [name, rows] : metrics) {
        Curves c;
        std::vector<double> sum(static_cast<std::size_t>(max_ep), 0.0), count(static_cast<std::size_t>(max_ep), 0.0), viol(static_cast<std::size_t>(max_ep), 0.0);
        for (const auto& r : rows) {
            const auto i = static_cast<std::size_t>(r.episode - 1);
            sum[i] += r.total_return;
            count[i] += 1.0;
            viol[i] += r.violated ? 1.0 : 0.0;
        }
        double acc = 0.0;
        for (std::size_t i = 0; i < sum.size(); ++i) {
            c.mean_return.push_back(count[i] > 0 ? sum[i] / count[i] : 0.0);
            acc += viol[i];
            c.cum_violations.push_back(acc);
            r_lo = std::min(r_lo, c.mean_return.back());
            r_hi = std::max(r_hi, c.mean_return.back());
        }
        v_hi = std::max(v_hi, acc);
        curves[name] = std::move(c);
    }
    std::ostringstream out;
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << 2 * W << "\" height=\"" << Hh + 40 << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    auto panel = [&](double x0, const char* title, double lo, double hi, auto select) {
        out << "<g transform=\"translate(" << x0 << ",10)\">\n";
        out << "<text x=\"" << W / 2 << "\" y=\"12\" text-anchor=\"middle\">" << title << "</text>\n";
        out << "<rect x=\"" << pad << "\" y=\"20\" width=\"" << W - 1.5 * pad << "\" height=\"" << Hh - pad - 20 << "\" fill=\"none\" stroke=\"#444\"/>\n";
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.3g", hi);
        out << "<text x=\"" << pad - 4 << "\" y=\"26\" text-anchor=\"end\">" << buf << "</text>\n";
        std::snprintf(buf, sizeof buf, "%.3g", lo);
        out << "<text x=\"" << pad - 4 << "\" y=\"" << Hh - pad << "\" text-anchor=\"end\">" << buf << "</text>\n";
        out << "<text x=\"" << W / 2 << "\" y=\"" << Hh - pad + 16 << "\" text-anchor=\"middle\">episode (1.." << max_ep << ")</text>\n";
        int k = 0;
        for (const auto& [name, c] : curves) {
            const auto& ys = select(c);
            out << "<polyline fill=\"none\" stroke-width=\"1.5\" stroke=\"" << palette[k % 6] << "\" points=\"";
            for (std::size_t i = 0; i < ys.size(); ++i) {
                const double x = pad + (W - 1.5 * pad) * (max_ep > 1 ? static_cast<double>(i) / (max_ep - 1) : 0.5);
                const double y = 20 + (Hh - pad - 20) * (1.0 - (ys[i] - lo) / (hi - lo));
                std::snprintf(buf, sizeof buf, "%.2f,%.2f ", x, y);
                out << buf;
            }
            out << "\"/>\n";
            out << "<text x=\"" << pad + 6 << "\" y=\"" << 36 + 13 * k << "\" fill=\"" << palette[k % 6] << "\">" << name << "</text>\n";
            ++k;
        }
        out << "</g>\n";
    };
    panel(0, "mean episode return", r_lo, r_hi, [](const Curves& c) -> const std::vector<double>& { return c.mean_return; });
    panel(W, "cumulative violation episodes", 0.0, v_hi, [](const Curves& c) -> const std::vector<double>& { return c.cum_violations; });
    out << "</svg>\n";
    return out.str();
}

inline MetricsByAlgorithm read_metrics_directory(const std::filesystem::path& dir)
{
    if (!std::filesystem::is_directory(dir))
        throw ConfigError("report", "'" + dir.string() + "' is not a directory");
    MetricsByAlgorithm metrics;
    for (const auto& entry : std::filesystem::directory_iterator(dir))
        if (entry.is_regular_file() && entry.path().extension() == ".csv" && entry.path().stem() != "summary")
            metrics[entry.path().stem().string()] = read_metrics_csv(entry.path());
    return metrics;
}

/// Aggregates every <name>.csv in `dir` and writes report.txt and plot.svg next to them.
inline AggregateReport report_directory(const std::filesystem::path& dir, const std::string& baseline, double window = 0.2)
{
    const auto metrics = read_metrics_directory(dir);
    auto report = aggregate(metrics, baseline, window);
    std::ofstream(dir / "report.txt", std::ios::binary) << render_report(report);
    std::ofstream(dir / "plot.svg", std::ios::binary) << render_svg(metrics);
    return report;
}

} // namespace mase::harness
