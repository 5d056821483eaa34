#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <functional>
#include <numbers>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mase/cmdp.hpp"
#include "mase/error.hpp"

namespace mase {

enum class ThresholdKind {
    instantaneous,
    cumulative_budget,
    state_constraint,
    chance_constraint,
    sinusoid,
};

inline const char* to_string(ThresholdKind kind)
{
    switch (kind) {
    case ThresholdKind::instantaneous: return "instantaneous";
    case ThresholdKind::cumulative_budget: return "budget";
    case ThresholdKind::state_constraint: return "state";
    case ThresholdKind::chance_constraint: return "chance";
    case ThresholdKind::sinusoid: return "sinusoid";
    }
    return "?";
}

/// Periodic time-varying threshold b_h = clip(base + amplitude * sin(2 pi h / period), 0, 1).
struct SinusoidSchedule {
    double base = 0.5;
    double amplitude = 0.2;
    double period = 10.0;

    double at(int h) const
    {
        const double raw = base + amplitude * std::sin(2.0 * std::numbers::pi * static_cast<double>(h) / period);
        return std::clamp(raw, 0.0, 1.0);
    }
};

/// Streams the time-varying threshold b_h for one episode.
///
/// Budget-type kinds follow b_1 = xi and b_{h+1} = (b_h - g_h) / gamma_g. The stream may go
/// negative once the budget is exhausted; it is never clamped. The chance-constraint kind is
/// the state-constraint recursion with gamma_g = 1.
class ThresholdProvider {
public:
    static ThresholdProvider instantaneous(double xi3) { return ThresholdProvider(ThresholdKind::instantaneous, xi3, 1.0); }
    static ThresholdProvider cumulative_budget(double xi1, double gamma_g) { return ThresholdProvider(ThresholdKind::cumulative_budget, xi1, gamma_g); }
    static ThresholdProvider state_constraint(double xi2, double gamma_g) { return ThresholdProvider(ThresholdKind::state_constraint, xi2, gamma_g); }
    static ThresholdProvider chance_constraint(double xi5) { return ThresholdProvider(ThresholdKind::chance_constraint, xi5, 1.0); }
    static ThresholdProvider sinusoid(SinusoidSchedule schedule)
    {
        ThresholdProvider p(ThresholdKind::sinusoid, schedule.base, 1.0);
        p.schedule_ = schedule;
        return p;
    }

    ThresholdKind kind() const noexcept { return kind_; }
    double budget() const noexcept { return budget_; }
    double discount() const noexcept { return discount_; }
    const SinusoidSchedule& schedule() const noexcept { return schedule_; }

    /// Number of costs consumed since the last reset.
    int step() const noexcept { return h_; }
    double current() const noexcept { return eta_; }

    /// True when b_h depends on h only, not on realized costs.
    bool is_markov() const noexcept { return kind_ == ThresholdKind::instantaneous || kind_ == ThresholdKind::sinusoid; }

    /// Threshold at step h for Markov kinds.
    double threshold_at(int h) const
    {
        if (kind_ == ThresholdKind::sinusoid)
            return schedule_.at(h);
        if (kind_ == ThresholdKind::instantaneous)
            return budget_;
        throw PreconditionError("threshold_at: threshold depends on the realized cost history");
    }

    double reset()
    {
        h_ = 0;
        eta_ = kind_ == ThresholdKind::sinusoid ? schedule_.at(1) : budget_;
        return eta_;
    }

    double next_threshold(double observed_cost)
    {
        if (!(observed_cost >= 0.0 && observed_cost <= 1.0))
            throw PreconditionError("next_threshold: observed cost outside [0,1]");
        ++h_;
        switch (kind_) {
        case ThresholdKind::instantaneous:
            break;
        case ThresholdKind::sinusoid:
            eta_ = schedule_.at(h_ + 1);
            break;
        case ThresholdKind::cumulative_budget:
        case ThresholdKind::state_constraint:
        case ThresholdKind::chance_constraint:
            eta_ = (eta_ - observed_cost) / discount_;
            break;
        }
        return eta_;
    }

    std::string describe() const
    {
        std::string out = to_string(kind_);
        out += ":" + std::to_string(budget_);
        if (kind_ == ThresholdKind::cumulative_budget || kind_ == ThresholdKind::state_constraint)
            out += ":" + std::to_string(discount_);
        if (kind_ == ThresholdKind::sinusoid)
            out += ":" + std::to_string(schedule_.amplitude) + ":" + std::to_string(schedule_.period);
        return out;
    }

private:
    ThresholdProvider(ThresholdKind kind, double budget, double discount)
        : kind_(kind)
        , budget_(budget)
        , discount_(discount)
        , eta_(budget)
    {
        if (!std::isfinite(budget))
            throw PreconditionError("threshold: budget must be finite");
        if (!(discount > 0.0 && discount <= 1.0))
            throw PreconditionError("threshold: gamma_g must lie in (0,1]");
    }

    ThresholdKind kind_;
    double budget_;
    double discount_;
    SinusoidSchedule schedule_{};
    double eta_;
    int h_ = 0;
};

using ThresholdFactory = std::function<ThresholdProvider()>;

/// Whether the source-problem constraint holds on a realized cost sequence.
///
/// Instantaneous: max_h g_h <= xi. Budget and state kinds: sum_h gamma_g^(h-1) g_h <= xi, i.e.
/// the discount exponent counts from zero at the first step. Chance kind: sum_h g_h <= xi.
/// Sinusoid: g_h <= b_h pointwise.
inline bool feasible_trajectory_check(std::span<const double> costs, const ThresholdProvider& prototype)
{
    switch (prototype.kind()) {
    case ThresholdKind::instantaneous:
        return std::all_of(costs.begin(), costs.end(),
            [&](double g) { return g <= prototype.budget() + kSafetyTolerance; });
    case ThresholdKind::sinusoid: {
        for (std::size_t i = 0; i < costs.size(); ++i)
            if (costs[i] > prototype.schedule().at(static_cast<int>(i) + 1) + kSafetyTolerance)
                return false;
        return true;
    }
    case ThresholdKind::cumulative_budget:
    case ThresholdKind::state_constraint:
    case ThresholdKind::chance_constraint: {
        double total = 0.0;
        double weight = 1.0;
        for (double g : costs) {
            total += weight * g;
            weight *= prototype.discount();
        }
        return total <= prototype.budget() + kSafetyTolerance;
    }
    }
    return false;
}

/// Whether g_h <= b_h at every step when the provider is driven by the same sequence.
inline bool stepwise_satisfied(std::span<const double> costs, ThresholdProvider provider)
{
    double b = provider.reset();
    for (double g : costs) {
        if (g > b + kSafetyTolerance)
            return false;
        b = provider.next_threshold(g);
    }
    return true;
}

namespace detail {

    inline std::vector<std::string_view> split(std::string_view text, char sep)
    {
        std::vector<std::string_view> parts;
        std::size_t start = 0;
        while (true) {
            const auto pos = text.find(sep, start);
            parts.push_back(text.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
            if (pos == std::string_view::npos)
                break;
            start = pos + 1;
        }
        return parts;
    }

    inline std::string_view trim(std::string_view s)
    {
        while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r'))
            s.remove_prefix(1);
        while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
            s.remove_suffix(1);
        return s;
    }

    inline double parse_double(std::string_view text, const std::string& what)
    {
        text = trim(text);
        double value = 0.0;
        const auto* end = text.data() + text.size();
        const auto [ptr, ec] = std::from_chars(text.data(), end, value);
        if (ec != std::errc() || ptr != end || text.empty())
            throw ConfigError(what, "expected a number, got '" + std::string(text) + "'");
        return value;
    }

} // namespace detail

/// Parsed `threshold = ...` value. A base of "auto" defers xi to the environment.
struct ThresholdSpec {
    ThresholdKind kind = ThresholdKind::instantaneous;
    bool auto_base = false;
    double base = 0.5;
    double discount = 1.0;
    double amplitude = 0.2;
    double period = 0.0; // 0 -> H / 2

    ThresholdProvider make(double env_base, int horizon) const
    {
        const double xi = auto_base ? env_base : base;
        switch (kind) {
        case ThresholdKind::instantaneous: return ThresholdProvider::instantaneous(xi);
        case ThresholdKind::cumulative_budget: return ThresholdProvider::cumulative_budget(xi, discount);
        case ThresholdKind::state_constraint: return ThresholdProvider::state_constraint(xi, discount);
        case ThresholdKind::chance_constraint: return ThresholdProvider::chance_constraint(xi);
        case ThresholdKind::sinusoid:
            return ThresholdProvider::sinusoid({xi, amplitude, period > 0.0 ? period : std::max(1.0, horizon / 2.0)});
        }
        throw PreconditionError("threshold: unknown kind");
    }
};

/// Parses `instantaneous:0.5 | budget:20:1.0 | state:3:0.99 | chance:0.1 | sinusoid:0.5[:A[:P]]`.
inline ThresholdSpec parse_threshold(std::string_view text)
{
    const auto parts = detail::split(detail::trim(text), ':');
    const auto head = detail::trim(parts[0]);
    ThresholdSpec spec;
    auto need = [&](std::size_t lo, std::size_t hi) {
        if (parts.size() < lo || parts.size() > hi)
            throw ConfigError("threshold", "wrong number of fields in '" + std::string(text) + "'");
    };
    auto base = [&]() {
        if (detail::trim(parts[1]) == "auto") {
            spec.auto_base = true;
            return;
        }
        spec.base = detail::parse_double(parts[1], "threshold");
    };
    if (head == "instantaneous") {
        need(2, 2);
        spec.kind = ThresholdKind::instantaneous;
        base();
    } else if (head == "budget" || head == "state") {
        need(3, 3);
        spec.kind = head == "budget" ? ThresholdKind::cumulative_budget : ThresholdKind::state_constraint;
        base();
        spec.discount = detail::parse_double(parts[2], "threshold");
        if (!(spec.discount > 0.0 && spec.discount <= 1.0))
            throw ConfigError("threshold", "gamma_g must lie in (0,1]");
    } else if (head == "chance") {
        need(2, 2);
        spec.kind = ThresholdKind::chance_constraint;
        base();
    } else if (head == "sinusoid") {
        need(2, 4);
        spec.kind = ThresholdKind::sinusoid;
        base();
        if (parts.size() > 2)
            spec.amplitude = detail::parse_double(parts[2], "threshold");
        if (parts.size() > 3)
            spec.period = detail::parse_double(parts[3], "threshold");
    } else {
        throw ConfigError("threshold", "unknown threshold kind '" + std::string(head) + "'");
    }
    return spec;
}

} // namespace mase
