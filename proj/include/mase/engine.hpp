#pragma once

#include <atomic>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "mase/buffer.hpp"
#include "mase/cmdp.hpp"
#include "mase/learners.hpp"
#include "mase/planning.hpp"
#include "mase/threshold.hpp"
#include "mase/uncertainty.hpp"

namespace mase {

struct MaseConfig {
    double penalty_coefficient = 1.0; // c
    double width_floor = 1e-6;        // epsilon_Gamma
    double delta = 0.1;
    int episodes = 100;               // T
    bool halt_on_violation = false;

    void validate() const
    {
        detail::require(penalty_coefficient > 0.0, "mase: c must be positive");
        detail::require(width_floor > 0.0, "mase: epsilon_Gamma must be positive");
        detail::require(delta > 0.0 && delta < 1.0, "mase: delta must lie in (0,1)");
        detail::require(episodes >= 1, "mase: T must be at least 1");
    }
};

struct SafeActionSet {
    int h = 1;
    double threshold = 0.0;
    std::vector<int> members;
    std::vector<UncertaintyEstimate> estimates; // indexed by action

    bool empty() const noexcept { return members.empty(); }
    bool contains(int a) const { return std::find(members.begin(), members.end(), a) != members.end(); }
};

/// A+ = {a : min(1, mu + Gamma) <= b_h}.
inline SafeActionSet safe_action_set(int h, int state, double threshold, int num_actions, const UncertaintyQuantifier& quantifier)
{
    SafeActionSet set;
    set.h = h;
    set.threshold = threshold;
    set.estimates.reserve(static_cast<std::size_t>(num_actions));
    for (int a = 0; a < num_actions; ++a) {
        const auto est = quantifier.quantify(h, state, a);
        set.estimates.push_back(est);
        if (std::min(1.0, est.upper()) <= threshold)
            set.members.push_back(a);
    }
    return set;
}

inline double min_width(int h, int state, int num_actions, const UncertaintyQuantifier& quantifier)
{
    double best = std::numeric_limits<double>::infinity();
    for (int a = 0; a < num_actions; ++a)
        best = std::min(best, quantifier.quantify(h, state, a).gamma);
    return best;
}

/// r_hat = -c / max(epsilon_Gamma, min_a Gamma(s', a)).
inline double penalty(double min_gamma, const MaseConfig& config)
{
    return -config.penalty_coefficient / std::max(config.width_floor, min_gamma);
}

inline double penalty(int h, int next_state, int num_actions, const UncertaintyQuantifier& quantifier, const MaseConfig& config)
{
    return penalty(min_width(h, next_state, num_actions, quantifier), config);
}

namespace detail {

    inline std::atomic<long>& snapshot_breach_counter()
    {
        static std::atomic<long> counter{0};
        return counter;
    }

} // namespace detail

/// Times the engine caught itself about to execute an action outside the snapshot safe set.
inline long snapshot_breaches() { return detail::snapshot_breach_counter().load(); }

inline constexpr int kEmergencyAction = -1;

struct EpisodeStep {
    int h = 1;
    int state = 0;
    int action = 0; // kEmergencyAction for the reset
    double reward_observed = 0.0;
    double cost_observed = 0.0;
    double threshold_b = 0.0; // threshold the decision was made against
    double audit_b = 0.0;     // threshold the violation is judged against
    int next_state = 0;
};

struct EpisodeLog {
    int episode = 0;
    std::vector<EpisodeStep> steps;
    int actions_taken = 0; // excluding the emergency reset
    int emergency_stops = 0;
    bool empty_initial_set = false;
    bool violated = false;
    double total_return = 0.0;  // sum gamma_r^h r
    double cumulative_cost = 0.0; // sum gamma_g^h g
    double max_step_cost = 0.0;
};

/// Selects argmax of the learner's values over A+, lowest index on ties.
inline int restricted_argmax(const std::vector<double>& values, const SafeActionSet& set)
{
    int best = set.members.front();
    for (int a : set.members)
        if (values[static_cast<std::size_t>(a)] > values[static_cast<std::size_t>(best)])
            best = a;
    return best;
}

/// One MASE episode. `decision` drives A+; `audit` is the threshold stream violations
/// are judged against (the same stream unless a baseline ignores part of the constraint).
/// Observations are staged on the quantifier; transitions are appended to `buffer`.
inline EpisodeLog run_episode(const Cmdp& cmdp, const Learner& learner, UncertaintyQuantifier& quantifier,
    ThresholdProvider decision, ThresholdProvider audit, const MaseConfig& config, Rng& rng,
    ReplayBuffer& buffer, int episode = 0)
{
    const int A = cmdp.num_actions();
    const int H = cmdp.horizon();
    EpisodeLog log;
    log.episode = episode;
    double b = decision.reset();
    double audit_b = audit.reset();
    int s = cmdp.initial_state();
    auto set = safe_action_set(1, s, b, A, quantifier);
    if (set.empty()) {
        log.empty_initial_set = true;
        return log;
    }
    for (int h = 1; h <= H; ++h) {
        const int a = restricted_argmax(learner.action_values(h, s), set);
        if (!set.contains(a) || std::min(1.0, quantifier.quantify(h, s, a).upper()) > b) {
            ++detail::snapshot_breach_counter();
            throw InvariantError("run_episode: selected action lies outside the snapshot safe set");
        }
        const auto out = step(cmdp, s, a, rng);
        quantifier.observe(h, s, a, out.cost);
        log.steps.push_back({h, s, a, out.reward, out.cost, b, audit_b, out.next_state});
        ++log.actions_taken;
        log.total_return += std::pow(cmdp.gamma_r(), h) * out.reward;
        log.cumulative_cost += std::pow(cmdp.gamma_g(), h) * out.cost;
        log.max_step_cost = std::max(log.max_step_cost, out.cost);
        const bool violation = out.cost > audit_b + kSafetyTolerance;
        log.violated = log.violated || violation;

        BufferEntry entry{episode, h, s, a, out.next_state, out.reward, out.reward, EntryKind::normal, 0.0, 0.0, h == H};
        if (h == H || (violation && config.halt_on_violation)) {
            buffer.append(entry);
            break;
        }
        b = decision.next_threshold(out.cost);
        audit_b = audit.next_threshold(out.cost);
        entry.next_threshold = b;
        entry.min_width = min_width(h + 1, out.next_state, A, quantifier);
        auto next_set = safe_action_set(h + 1, out.next_state, b, A, quantifier);
        if (next_set.empty()) {
            entry.kind = EntryKind::emergency_penalty;
            entry.effective_reward = penalty(entry.min_width, config);
            buffer.append(entry);
            log.steps.push_back({h + 1, out.next_state, kEmergencyAction, 0.0, 0.0, b, audit_b, cmdp.initial_state()});
            ++log.emergency_stops;
            break;
        }
        buffer.append(entry);
        s = out.next_state;
        set = std::move(next_set);
    }
    return log;
}

/// Re-evaluates every emergency entry under the current quantifier: entries whose next state now
/// has a safe action revert to normal with the original reward; the rest get the new penalty.
inline void rewrite_buffer(ReplayBuffer& buffer, const UncertaintyQuantifier& quantifier, int num_actions, const MaseConfig& config)
{
    for (auto& e : buffer.entries()) {
        if (e.kind != EntryKind::emergency_penalty)
            continue;
        const auto set = safe_action_set(e.h + 1, e.next_state, e.next_threshold, num_actions, quantifier);
        e.min_width = min_width(e.h + 1, e.next_state, num_actions, quantifier);
        if (!set.empty()) {
            e.kind = EntryKind::normal;
            e.effective_reward = e.original_reward;
        } else {
            e.effective_reward = penalty(e.min_width, config);
        }
    }
}

struct EpisodeMetrics {
    int episode = 0;
    int steps = 0;
    double total_return = 0.0;
    double cumulative_cost = 0.0;
    double max_step_cost = 0.0;
    bool violated = false;
    int emergency_stops = 0;
    std::size_t buffer_size = 0;
    bool empty_initial_set = false;
};

struct RunMetrics {
    std::vector<EpisodeMetrics> episodes;

    int violation_episodes() const
    {
        int n = 0;
        for (const auto& e : episodes)
            n += e.violated ? 1 : 0;
        return n;
    }

    int emergency_stops() const
    {
        int n = 0;
        for (const auto& e : episodes)
            n += e.emergency_stops;
        return n;
    }
};

using EpisodeStartHook = std::function<void(int episode)>;
using EpisodeCallback = std::function<void(const EpisodeLog&, const ReplayBuffer&)>;

/// Training loop: episode, learner update, quantifier refresh, buffer rewrite.
inline RunMetrics train(const Cmdp& cmdp, Learner& learner, UncertaintyQuantifier& quantifier,
    const ThresholdFactory& decision, const ThresholdFactory& audit, const MaseConfig& config, Rng& rng,
    const EpisodeStartHook& before_episode = {}, const EpisodeCallback& after_episode = {})
{
    config.validate();
    RunMetrics metrics;
    ReplayBuffer buffer;
    quantifier.refresh();
    for (int t = 1; t <= config.episodes; ++t) {
        if (before_episode)
            before_episode(t);
        const auto log = run_episode(cmdp, learner, quantifier, decision(), audit(), config, rng, buffer, t);
        learner.update(buffer);
        quantifier.refresh();
        rewrite_buffer(buffer, quantifier, cmdp.num_actions(), config);
        metrics.episodes.push_back({t, log.actions_taken, log.total_return, log.cumulative_cost, log.max_step_cost,
            log.violated, log.emergency_stops, buffer.size(), log.empty_initial_set});
        if (after_episode)
            after_episode(log, buffer);
    }
    return metrics;
}

inline RunMetrics train(const Cmdp& cmdp, Learner& learner, UncertaintyQuantifier& quantifier,
    const ThresholdFactory& factory, const MaseConfig& config, Rng& rng)
{
    return train(cmdp, learner, quantifier, factory, factory, config, rng);
}

/// Exact expected return in the true CMDP of the shielded greedy behavior: argmax of the learner
/// over A+ at each (h, s), with the episode ending at any state whose safe set is empty.
/// Requires a threshold that depends on h only.
template <typename ThresholdAt>
double evaluate_shielded_policy(const Cmdp& cmdp, const Learner& learner, const UncertaintyQuantifier& quantifier, ThresholdAt&& threshold_at)
{
    const int S = cmdp.num_states();
    std::vector<double> next_value(static_cast<std::size_t>(S), 0.0);
    std::vector<double> value(static_cast<std::size_t>(S), 0.0);
    for (int h = cmdp.horizon(); h >= 1; --h) {
        const double weight = std::pow(cmdp.gamma_r(), h);
        for (int s = 0; s < S; ++s) {
            const auto set = safe_action_set(h, s, threshold_at(h), cmdp.num_actions(), quantifier);
            if (set.empty()) {
                value[static_cast<std::size_t>(s)] = 0.0;
                continue;
            }
            const int a = restricted_argmax(learner.action_values(h, s), set);
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

struct ModifiedMdpSolution {
    DeterministicPolicy policy;
    ActionValueTable q; // -inf outside A+
    double value = 0.0;
};

/// Exact backward induction on the modified MDP: actions restricted to A+, and a transition into a
/// state with an empty A+ (h < H) pays gamma_r^h r_hat in place of the reward and ends the episode.
template <typename ThresholdAt>
ModifiedMdpSolution modified_mdp_value_iteration(const Cmdp& cmdp, const UncertaintyQuantifier& quantifier,
    ThresholdAt&& threshold_at, const MaseConfig& config)
{
    const int S = cmdp.num_states();
    const int A = cmdp.num_actions();
    const int H = cmdp.horizon();
    constexpr double kNegInf = -std::numeric_limits<double>::infinity();
    ModifiedMdpSolution out{DeterministicPolicy(H, S, 0), ActionValueTable(H, S, A, kNegInf), 0.0};

    // dead[h][s]: A+ empty at (h, s); penalty[h][s]: r_hat for entering s before step h.
    std::vector<std::vector<char>> dead(static_cast<std::size_t>(H + 2), std::vector<char>(static_cast<std::size_t>(S), 0));
    std::vector<std::vector<double>> pen(static_cast<std::size_t>(H + 2), std::vector<double>(static_cast<std::size_t>(S), 0.0));
    for (int h = 1; h <= H; ++h)
        for (int s = 0; s < S; ++s) {
            dead[static_cast<std::size_t>(h)][static_cast<std::size_t>(s)] = safe_action_set(h, s, threshold_at(h), A, quantifier).empty();
            pen[static_cast<std::size_t>(h)][static_cast<std::size_t>(s)] = penalty(h, s, A, quantifier, config);
        }

    std::vector<double> next_value(static_cast<std::size_t>(S), 0.0);
    for (int h = H; h >= 1; --h) {
        const double weight = std::pow(cmdp.gamma_r(), h);
        std::vector<double> value(static_cast<std::size_t>(S), kNegInf);
        for (int s = 0; s < S; ++s) {
            const auto set = safe_action_set(h, s, threshold_at(h), A, quantifier);
            for (int a : set.members) {
                double q = 0.0;
                const auto row = cmdp.transition_row(s, a);
                for (int k = 0; k < S; ++k) {
                    const double p = row[static_cast<std::size_t>(k)];
                    if (p <= 0.0)
                        continue;
                    if (h < H && dead[static_cast<std::size_t>(h + 1)][static_cast<std::size_t>(k)])
                        q += p * weight * pen[static_cast<std::size_t>(h + 1)][static_cast<std::size_t>(k)];
                    else
                        q += p * (weight * cmdp.reward(s, a) + next_value[static_cast<std::size_t>(k)]);
                }
                out.q.at(h, s, a) = q;
                if (value[static_cast<std::size_t>(s)] == kNegInf || q > value[static_cast<std::size_t>(s)] + 1e-12) {
                    value[static_cast<std::size_t>(s)] = q;
                    out.policy.set(h, s, a);
                }
            }
        }
        // Unreachable under the modified dynamics; 0 keeps the arithmetic finite.
        for (auto& v : value)
            if (v == kNegInf)
                v = 0.0;
        next_value = std::move(value);
    }
    out.value = next_value[static_cast<std::size_t>(cmdp.initial_state())];
    return out;
}

} // namespace mase
