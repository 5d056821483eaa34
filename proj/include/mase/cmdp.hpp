#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mase/error.hpp"

namespace mase {

using Rng = std::mt19937_64;

/// Tolerance used when comparing realized costs against thresholds.
inline constexpr double kSafetyTolerance = 1e-12;

struct StepOutcome {
    int next_state;
    double reward;
    double cost;
};

/// Tabular constrained MDP. Immutable after construction.
///
/// Transition probabilities are stored row-major as P[(s * A + a) * S + s'].
/// Reward and safety cost tables are indexed [s * A + a].
class Cmdp {
public:
    Cmdp(int num_states, int num_actions, int horizon,
        std::vector<double> transition, std::vector<double> reward, std::vector<double> safety_cost,
        int initial_state, double gamma_r, double gamma_g)
        : num_states_(num_states)
        , num_actions_(num_actions)
        , horizon_(horizon)
        , initial_state_(initial_state)
        , gamma_r_(gamma_r)
        , gamma_g_(gamma_g)
        , transition_(std::move(transition))
        , reward_(std::move(reward))
        , cost_(std::move(safety_cost))
    {
        validate();
    }

    int num_states() const noexcept { return num_states_; }
    int num_actions() const noexcept { return num_actions_; }
    int horizon() const noexcept { return horizon_; }
    int initial_state() const noexcept { return initial_state_; }
    double gamma_r() const noexcept { return gamma_r_; }
    double gamma_g() const noexcept { return gamma_g_; }

    double transition(int s, int a, int next) const { return transition_[row_offset(s, a) + static_cast<std::size_t>(next)]; }
    std::span<const double> transition_row(int s, int a) const
    {
        return {transition_.data() + row_offset(s, a), static_cast<std::size_t>(num_states_)};
    }
    double reward(int s, int a) const { return reward_[pair_index(s, a)]; }
    double cost(int s, int a) const { return cost_[pair_index(s, a)]; }

    const std::vector<double>& transition_table() const noexcept { return transition_; }
    const std::vector<double>& reward_table() const noexcept { return reward_; }
    const std::vector<double>& cost_table() const noexcept { return cost_; }

    std::size_t pair_index(int s, int a) const
    {
        return static_cast<std::size_t>(s) * static_cast<std::size_t>(num_actions_) + static_cast<std::size_t>(a);
    }

    bool valid_state(int s) const noexcept { return s >= 0 && s < num_states_; }
    bool valid_action(int a) const noexcept { return a >= 0 && a < num_actions_; }

    bool operator==(const Cmdp&) const = default;

private:
    std::size_t row_offset(int s, int a) const { return pair_index(s, a) * static_cast<std::size_t>(num_states_); }

    void validate() const
    {
        using detail::require;
        require(num_states_ > 0, "cmdp: num_states must be positive");
        require(num_actions_ > 0, "cmdp: num_actions must be positive");
        require(horizon_ > 0, "cmdp: horizon must be positive");
        require(initial_state_ >= 0 && initial_state_ < num_states_, "cmdp: initial state out of range");
        require(gamma_r_ > 0.0 && gamma_r_ <= 1.0, "cmdp: gamma_r must lie in (0,1]");
        require(gamma_g_ > 0.0 && gamma_g_ <= 1.0, "cmdp: gamma_g must lie in (0,1]");
        const auto pairs = static_cast<std::size_t>(num_states_) * static_cast<std::size_t>(num_actions_);
        require(transition_.size() == pairs * static_cast<std::size_t>(num_states_), "cmdp: transition table has wrong size");
        require(reward_.size() == pairs, "cmdp: reward table has wrong size");
        require(cost_.size() == pairs, "cmdp: safety cost table has wrong size");
        for (std::size_t i = 0; i < pairs; ++i) {
            require(std::isfinite(reward_[i]) && reward_[i] >= 0.0 && reward_[i] <= 1.0, "cmdp: reward outside [0,1]");
            require(std::isfinite(cost_[i]) && cost_[i] >= 0.0 && cost_[i] <= 1.0, "cmdp: safety cost outside [0,1]");
            double sum = 0.0;
            for (int k = 0; k < num_states_; ++k) {
                const double p = transition_[i * static_cast<std::size_t>(num_states_) + static_cast<std::size_t>(k)];
                require(std::isfinite(p) && p >= 0.0, "cmdp: negative or non-finite transition probability");
                sum += p;
            }
            require(std::abs(sum - 1.0) <= 1e-9, "cmdp: transition row does not sum to 1");
        }
    }

    int num_states_;
    int num_actions_;
    int horizon_;
    int initial_state_;
    double gamma_r_;
    double gamma_g_;
    std::vector<double> transition_;
    std::vector<double> reward_;
    std::vector<double> cost_;
};

/// Upper bound on the discounted return, (1 - gamma^H) / (1 - gamma); H when gamma = 1.
inline double v_max(double gamma_r, int horizon)
{
    if (gamma_r == 1.0)
        return static_cast<double>(horizon);
    return (1.0 - std::pow(gamma_r, horizon)) / (1.0 - gamma_r);
}

inline double v_max(const Cmdp& cmdp) { return v_max(cmdp.gamma_r(), cmdp.horizon()); }

inline double uniform01(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

/// Samples one transition. Reward and cost are the deterministic table entries.
inline StepOutcome step(const Cmdp& cmdp, int state, int action, Rng& rng)
{
    if (!cmdp.valid_state(state) || !cmdp.valid_action(action))
        throw PreconditionError("step: state/action index out of range");
    const auto row = cmdp.transition_row(state, action);
    const double u = uniform01(rng);
    double acc = 0.0;
    int next = -1;
    for (int k = 0; k < cmdp.num_states(); ++k) {
        if (row[static_cast<std::size_t>(k)] <= 0.0)
            continue;
        next = k;
        acc += row[static_cast<std::size_t>(k)];
        if (u < acc)
            break;
    }
    return {next, cmdp.reward(state, action), cmdp.cost(state, action)};
}

/// Time-indexed deterministic policy, (h, s) -> a with h in [1, H].
class DeterministicPolicy {
public:
    DeterministicPolicy() = default;
    DeterministicPolicy(int horizon, int num_states, int fill = 0)
        : horizon_(horizon)
        , num_states_(num_states)
        , table_(static_cast<std::size_t>(horizon) * static_cast<std::size_t>(num_states), fill)
    {
    }

    int horizon() const noexcept { return horizon_; }
    int num_states() const noexcept { return num_states_; }

    int action(int h, int s) const { return table_[index(h, s)]; }
    void set(int h, int s, int a) { table_[index(h, s)] = a; }

    const std::vector<int>& table() const noexcept { return table_; }

    bool operator==(const DeterministicPolicy&) const = default;

private:
    std::size_t index(int h, int s) const
    {
        return static_cast<std::size_t>(h - 1) * static_cast<std::size_t>(num_states_) + static_cast<std::size_t>(s);
    }

    int horizon_ = 0;
    int num_states_ = 0;
    std::vector<int> table_;
};

/// Q values indexed (h, s, a) for h in [1, H + 1]; row H + 1 is identically zero.
class ActionValueTable {
public:
    ActionValueTable() = default;
    ActionValueTable(int horizon, int num_states, int num_actions, double fill = 0.0)
        : horizon_(horizon)
        , num_states_(num_states)
        , num_actions_(num_actions)
        , values_(static_cast<std::size_t>(horizon + 1) * static_cast<std::size_t>(num_states) * static_cast<std::size_t>(num_actions), fill)
    {
        for (int s = 0; s < num_states; ++s)
            for (int a = 0; a < num_actions; ++a)
                at(horizon + 1, s, a) = 0.0;
    }

    int horizon() const noexcept { return horizon_; }
    int num_states() const noexcept { return num_states_; }
    int num_actions() const noexcept { return num_actions_; }

    double& at(int h, int s, int a) { return values_[index(h, s, a)]; }
    double at(int h, int s, int a) const { return values_[index(h, s, a)]; }

    std::span<const double> row(int h, int s) const
    {
        return {values_.data() + index(h, s, 0), static_cast<std::size_t>(num_actions_)};
    }

    double max_value(int h, int s) const
    {
        const auto r = row(h, s);
        double best = r[0];
        for (double v : r)
            best = std::max(best, v);
        return best;
    }

    const std::vector<double>& values() const noexcept { return values_; }

private:
    std::size_t index(int h, int s, int a) const
    {
        return (static_cast<std::size_t>(h - 1) * static_cast<std::size_t>(num_states_) + static_cast<std::size_t>(s))
            * static_cast<std::size_t>(num_actions_)
            + static_cast<std::size_t>(a);
    }

    int horizon_ = 0;
    int num_states_ = 0;
    int num_actions_ = 0;
    std::vector<double> values_;
};

/// Lowest-index argmax; the first element wins ties.
inline int argmax_lowest(std::span<const double> values)
{
    int best = 0;
    for (std::size_t i = 1; i < values.size(); ++i)
        if (values[i] > values[static_cast<std::size_t>(best)])
            best = static_cast<int>(i);
    return best;
}

} // namespace mase
