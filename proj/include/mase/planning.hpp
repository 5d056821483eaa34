#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <utility>
#include <vector>

#include "mase/cmdp.hpp"
#include "mase/threshold.hpp"

namespace mase {

/// Dense backward recursion with the step-h reward weighted by gamma_r^h:
/// Q_h(s,a) = gamma_r^h r(s,a) + sum_s' P(s'|s,a) max_a' Q_{h+1}(s',a'), Q_{H+1} = 0.
/// For H = 1 this gives Q_1 = gamma_r r.
inline ActionValueTable value_iteration(const Cmdp& cmdp, const std::vector<double>& reward_table, int horizon)
{
    const int S = cmdp.num_states();
    const int A = cmdp.num_actions();
    detail::require(reward_table.size() == static_cast<std::size_t>(S * A), "value_iteration: reward table has wrong size");
    for (double r : reward_table)
        detail::require(std::isfinite(r), "value_iteration: reward table must be finite");

    ActionValueTable q(horizon, S, A);
    std::vector<double> next_value(static_cast<std::size_t>(S), 0.0);
    for (int h = horizon; h >= 1; --h) {
        const double weight = std::pow(cmdp.gamma_r(), h);
        for (int s = 0; s < S; ++s) {
            for (int a = 0; a < A; ++a) {
                double expected = 0.0;
                const auto row = cmdp.transition_row(s, a);
                for (int k = 0; k < S; ++k)
                    expected += row[static_cast<std::size_t>(k)] * next_value[static_cast<std::size_t>(k)];
                q.at(h, s, a) = weight * reward_table[cmdp.pair_index(s, a)] + expected;
            }
        }
        for (int s = 0; s < S; ++s)
            next_value[static_cast<std::size_t>(s)] = q.max_value(h, s);
    }
    return q;
}

inline ActionValueTable value_iteration(const Cmdp& cmdp) { return value_iteration(cmdp, cmdp.reward_table(), cmdp.horizon()); }

inline DeterministicPolicy greedy_policy(const ActionValueTable& q)
{
    DeterministicPolicy policy(q.horizon(), q.num_states());
    for (int h = 1; h <= q.horizon(); ++h)
        for (int s = 0; s < q.num_states(); ++s)
            policy.set(h, s, argmax_lowest(q.row(h, s)));
    return policy;
}

/// Expected sum_h gamma_r^h r(s_h, a_h) from s_1 under a fixed policy.
inline double policy_value(const Cmdp& cmdp, const DeterministicPolicy& policy)
{
    const int S = cmdp.num_states();
    std::vector<double> next_value(static_cast<std::size_t>(S), 0.0);
    std::vector<double> value(static_cast<std::size_t>(S), 0.0);
    for (int h = cmdp.horizon(); h >= 1; --h) {
        const double weight = std::pow(cmdp.gamma_r(), h);
        for (int s = 0; s < S; ++s) {
            const int a = policy.action(h, s);
            double expected = 0.0;
            const auto row = cmdp.transition_row(s, a);
            for (int k = 0; k < S; ++k)
                expected += row[static_cast<std::size_t>(k)] * next_value[static_cast<std::size_t>(k)];
            value[static_cast<std::size_t>(s)] = weight * cmdp.reward(s, a) + expected;
        }
        std::swap(value, next_value);
    }
    return next_value[static_cast<std::size_t>(cmdp.initial_state())];
}

/// States reachable at each step h in [1, H] under some action sequence.
inline std::vector<std::vector<int>> reachable_states(const Cmdp& cmdp)
{
    const int S = cmdp.num_states();
    std::vector<std::vector<int>> layers;
    std::vector<char> current(static_cast<std::size_t>(S), 0);
    current[static_cast<std::size_t>(cmdp.initial_state())] = 1;
    for (int h = 1; h <= cmdp.horizon(); ++h) {
        std::vector<int> layer;
        std::vector<char> next(static_cast<std::size_t>(S), 0);
        for (int s = 0; s < S; ++s) {
            if (!current[static_cast<std::size_t>(s)])
                continue;
            layer.push_back(s);
            for (int a = 0; a < cmdp.num_actions(); ++a)
                for (int k = 0; k < S; ++k)
                    if (cmdp.transition(s, a, k) > 0.0)
                        next[static_cast<std::size_t>(k)] = 1;
        }
        layers.push_back(std::move(layer));
        current = std::move(next);
    }
    return layers;
}

struct PolicyAssessment {
    bool feasible = true;
    double value = 0.0;
};

/// Enumerates every positive-probability trajectory of a policy, threading the threshold
/// provider through the realized costs. Feasible iff g(s_h,a_h) <= b_h - margin everywhere.
inline PolicyAssessment assess_policy(const Cmdp& cmdp, const DeterministicPolicy& policy,
    const ThresholdProvider& prototype, double margin)
{
    PolicyAssessment out;
    ThresholdProvider provider = prototype;
    const double b1 = provider.reset();
    auto visit = [&](auto&& self, int h, int s, const ThresholdProvider& prov, double b, double prob) -> void {
        if (h > cmdp.horizon() || !out.feasible)
            return;
        const int a = policy.action(h, s);
        const double g = cmdp.cost(s, a);
        if (g > b - margin + kSafetyTolerance) {
            out.feasible = false;
            return;
        }
        out.value += prob * std::pow(cmdp.gamma_r(), h) * cmdp.reward(s, a);
        ThresholdProvider next = prov;
        const double b_next = next.next_threshold(g);
        const auto row = cmdp.transition_row(s, a);
        for (int k = 0; k < cmdp.num_states(); ++k) {
            const double p = row[static_cast<std::size_t>(k)];
            if (p > 0.0)
                self(self, h + 1, k, next, b_next, prob * p);
        }
    };
    visit(visit, 1, cmdp.initial_state(), provider, b1, 1.0);
    return out;
}

struct SafeOptimum {
    DeterministicPolicy policy;
    double value = 0.0;
    double candidates = 0.0;
};

inline constexpr double kBruteForceCandidateLimit = 1e7;

namespace detail {

    /// Lexicographic increment with the last digit least significant. False once it wraps.
    inline bool advance_odometer(std::vector<int>& digits, int base)
    {
        for (std::size_t i = digits.size(); i-- > 0;) {
            if (++digits[i] < base)
                return true;
            digits[i] = 0;
        }
        return false;
    }

} // namespace detail

/// Ground-truth constrained optimum over deterministic time-indexed policies.
///
/// Decisions are enumerated only at (h, s) pairs reachable under some action sequence; all
/// other entries are fixed to action 0, which preserves the lexicographic tie-break. The
/// search refuses instances with more than 1e7 candidate assignments.
inline SafeOptimum brute_force_safe_optimal(const Cmdp& cmdp, const ThresholdFactory& factory, double margin)
{
    detail::require(margin >= 0.0, "brute_force_safe_optimal: margin must be nonnegative");
    const auto layers = reachable_states(cmdp);
    std::vector<std::pair<int, int>> slots;
    for (int h = 1; h <= cmdp.horizon(); ++h)
        for (int s : layers[static_cast<std::size_t>(h - 1)])
            slots.emplace_back(h, s);
    const double candidates = std::pow(static_cast<double>(cmdp.num_actions()), static_cast<double>(slots.size()));
    if (candidates > kBruteForceCandidateLimit)
        throw PreconditionError("brute_force_safe_optimal: " + std::to_string(candidates) + " candidate policies exceed the enumeration limit");

    const ThresholdProvider prototype = factory();
    DeterministicPolicy policy(cmdp.horizon(), cmdp.num_states(), 0);
    std::vector<int> digits(slots.size(), 0);
    std::optional<SafeOptimum> best;
    while (true) {
        for (std::size_t i = 0; i < slots.size(); ++i)
            policy.set(slots[i].first, slots[i].second, digits[i]);
        const auto assessment = assess_policy(cmdp, policy, prototype, margin);
        if (assessment.feasible && (!best || assessment.value > best->value + 1e-12))
            best = SafeOptimum{policy, assessment.value, candidates};
        if (!detail::advance_odometer(digits, cmdp.num_actions()))
            break;
    }
    if (!best)
        throw InfeasibleError("brute_force_safe_optimal: no deterministic policy satisfies the constraint");
    return *best;
}

/// Constrained optimum for thresholds that depend on h only, by backward induction.
///
/// alive(h, s) holds when some action a has g(s,a) <= b_h - margin and every positive-probability
/// successor is alive at h + 1. Exact for almost-sure constraints with Markov thresholds.
struct MarkovSafeOptimum {
    DeterministicPolicy policy;
    double value = 0.0;
    std::vector<char> alive; // (h - 1) * S + s for h in [1, H]
    std::vector<double> values; // same layout

    bool is_alive(int h, int s, int num_states) const { return alive[static_cast<std::size_t>((h - 1) * num_states + s)] != 0; }
};

template <typename ThresholdAt>
MarkovSafeOptimum constrained_value_iteration(const Cmdp& cmdp, ThresholdAt&& threshold_at, double margin)
{
    const int S = cmdp.num_states();
    const int A = cmdp.num_actions();
    const int H = cmdp.horizon();
    MarkovSafeOptimum out;
    out.policy = DeterministicPolicy(H, S, 0);
    out.alive.assign(static_cast<std::size_t>(H * S), 0);
    out.values.assign(static_cast<std::size_t>(H * S), -std::numeric_limits<double>::infinity());
    std::vector<char> next_alive(static_cast<std::size_t>(S), 1);
    std::vector<double> next_value(static_cast<std::size_t>(S), 0.0);
    for (int h = H; h >= 1; --h) {
        const double b = threshold_at(h);
        const double weight = std::pow(cmdp.gamma_r(), h);
        std::vector<char> alive(static_cast<std::size_t>(S), 0);
        std::vector<double> value(static_cast<std::size_t>(S), -std::numeric_limits<double>::infinity());
        for (int s = 0; s < S; ++s) {
            for (int a = 0; a < A; ++a) {
                if (cmdp.cost(s, a) > b - margin + kSafetyTolerance)
                    continue;
                bool ok = true;
                double expected = 0.0;
                const auto row = cmdp.transition_row(s, a);
                for (int k = 0; k < S && ok; ++k) {
                    const double p = row[static_cast<std::size_t>(k)];
                    if (p <= 0.0)
                        continue;
                    ok = next_alive[static_cast<std::size_t>(k)] != 0;
                    expected += p * next_value[static_cast<std::size_t>(k)];
                }
                if (!ok)
                    continue;
                const double q = weight * cmdp.reward(s, a) + expected;
                if (!alive[static_cast<std::size_t>(s)] || q > value[static_cast<std::size_t>(s)] + 1e-12) {
                    alive[static_cast<std::size_t>(s)] = 1;
                    value[static_cast<std::size_t>(s)] = q;
                    out.policy.set(h, s, a);
                }
            }
            out.alive[static_cast<std::size_t>((h - 1) * S + s)] = alive[static_cast<std::size_t>(s)];
            out.values[static_cast<std::size_t>((h - 1) * S + s)] = value[static_cast<std::size_t>(s)];
        }
        next_alive = std::move(alive);
        next_value = std::move(value);
    }
    if (!next_alive[static_cast<std::size_t>(cmdp.initial_state())])
        throw InfeasibleError("constrained_value_iteration: no policy satisfies the constraint from the initial state");
    out.value = next_value[static_cast<std::size_t>(cmdp.initial_state())];
    return out;
}

} // namespace mase
