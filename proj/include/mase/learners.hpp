#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "mase/buffer.hpp"
#include "mase/cmdp.hpp"
#include "mase/glm.hpp"

namespace mase {

/// Unconstrained learner trained on the modified-reward buffer.
class Learner {
public:
    virtual ~Learner() = default;

    virtual std::vector<double> action_values(int h, int state) const = 0;
    virtual void update(const ReplayBuffer& buffer) = 0;
    virtual std::string name() const = 0;
};

inline DeterministicPolicy greedy_policy(const Learner& learner, int horizon, int num_states)
{
    DeterministicPolicy policy(horizon, num_states);
    for (int h = 1; h <= horizon; ++h)
        for (int s = 0; s < num_states; ++s) {
            const auto values = learner.action_values(h, s);
            policy.set(h, s, argmax_lowest(values));
        }
    return policy;
}

enum class TabularInit { zero, optimistic };

struct TabularOptions {
    double learning_rate = 0.5;
    int epochs = 50;
    TabularInit init = TabularInit::zero;
};

/// Q(h,s,a) <- (1 - alpha) Q + alpha (r_hat + gamma_r max_a' Q(h+1, s', a')), replayed over the
/// whole buffer `epochs` times per update. Terminal entries use the target r_hat.
class TabularQLearner final : public Learner {
public:
    TabularQLearner(int horizon, int num_states, int num_actions, double gamma_r, TabularOptions options = {})
        : gamma_r_(gamma_r)
        , options_(options)
        , table_(horizon, num_states, num_actions)
    {
        detail::require(options.learning_rate > 0.0 && options.learning_rate <= 1.0, "tabular learner: learning rate must lie in (0,1]");
        detail::require(options.epochs >= 1, "tabular learner: epochs must be positive");
        if (options.init == TabularInit::optimistic)
            for (int h = 1; h <= horizon; ++h) {
                double remaining = 0.0;
                for (int k = h; k <= horizon; ++k)
                    remaining = 1.0 + gamma_r * remaining;
                for (int s = 0; s < num_states; ++s)
                    for (int a = 0; a < num_actions; ++a)
                        table_.at(h, s, a) = remaining;
            }
    }

    std::vector<double> action_values(int h, int state) const override
    {
        const auto row = table_.row(h, state);
        return {row.begin(), row.end()};
    }

    void update(const ReplayBuffer& buffer) override
    {
        const double alpha = options_.learning_rate;
        for (int epoch = 0; epoch < options_.epochs; ++epoch)
            for (const auto& e : buffer.entries()) {
                double target = e.effective_reward;
                if (!e.terminal())
                    target += gamma_r_ * table_.max_value(e.h + 1, e.next_state);
                double& q = table_.at(e.h, e.state, e.action);
                q = (1.0 - alpha) * q + alpha * target;
            }
    }

    std::string name() const override { return "tabular"; }

    const ActionValueTable& table() const noexcept { return table_; }

private:
    double gamma_r_;
    TabularOptions options_;
    ActionValueTable table_;
};

struct GlmLsviOptions {
    double optimism = 1.0; // C_{Q/g}
    double v_max = 1.0;
    double target_scale = 1.0; // fits use y / target_scale
    double gamma_r = 1.0;
};

/// Optimistic least-squares value iteration over the GLM quantifier's features and per-step
/// design matrices: Q_h(s,a) = min{V_max, scale * f(<phi, theta_h>) + C_{Q/g} C_g ||phi||_{Lambda_h^-1}},
/// fitted backward on y = r_hat + gamma_r max_a' Q_{h+1}(s', a').
class GlmLsviLearner final : public Learner {
public:
    GlmLsviLearner(const GlmQuantifier& quantifier, GlmLsviOptions options)
        : quantifier_(&quantifier)
        , options_(options)
    {
        detail::require(options.optimism >= 0.0, "glm-lsvi: C_{Q/g} must be nonnegative");
        detail::require(options.target_scale > 0.0, "glm-lsvi: target scale must be positive");
        const int d = quantifier.features().dimension();
        thetas_.assign(static_cast<std::size_t>(quantifier.horizon()), Eigen::VectorXd::Zero(d));
        scales_.assign(static_cast<std::size_t>(quantifier.horizon()), 1.0);
        rebuild_cache();
    }

    std::vector<double> action_values(int h, int state) const override
    {
        const auto row = cache_.row(h, state);
        return {row.begin(), row.end()};
    }

    void update(const ReplayBuffer& buffer) override
    {
        const int H = quantifier_->horizon();
        const auto& features = quantifier_->features();
        std::vector<std::vector<const BufferEntry*>> by_step(static_cast<std::size_t>(H));
        for (const auto& e : buffer.entries())
            by_step[static_cast<std::size_t>(e.h - 1)].push_back(&e);

        cache_ = ActionValueTable(H, num_states(), features.num_actions);
        for (int h = H; h >= 1; --h) {
            const auto& rows = by_step[static_cast<std::size_t>(h - 1)];
            auto& theta = thetas_[static_cast<std::size_t>(h - 1)];
            auto& scale = scales_[static_cast<std::size_t>(h - 1)];
            if (rows.empty()) {
                theta.setZero();
                scale = 1.0;
            } else {
                Eigen::MatrixXd X(static_cast<Eigen::Index>(rows.size()), features.dimension());
                Eigen::VectorXd y(static_cast<Eigen::Index>(rows.size()));
                for (std::size_t i = 0; i < rows.size(); ++i) {
                    const auto& e = *rows[i];
                    double target = e.effective_reward;
                    if (!e.terminal())
                        target += options_.gamma_r * cache_.max_value(h + 1, e.next_state);
                    X.row(static_cast<Eigen::Index>(i)) = features(e.state, e.action).transpose();
                    y(static_cast<Eigen::Index>(i)) = target / options_.target_scale;
                }
                scale = options_.target_scale;
                theta = glm_ridge_fit(X, y, quantifier_->link());
            }
            fill_step(h);
        }
    }

    std::string name() const override { return "glmlsvi"; }

    const Eigen::VectorXd& theta(int h) const { return thetas_[static_cast<std::size_t>(h - 1)]; }
    const GlmLsviOptions& options() const noexcept { return options_; }

private:
    int num_states() const
    {
        return static_cast<int>(quantifier_->features().table.rows()) / quantifier_->features().num_actions;
    }

    void fill_step(int h)
    {
        const auto& features = quantifier_->features();
        const auto& theta = thetas_[static_cast<std::size_t>(h - 1)];
        const double scale = scales_[static_cast<std::size_t>(h - 1)];
        for (int s = 0; s < num_states(); ++s)
            for (int a = 0; a < features.num_actions; ++a) {
                const double fit = scale * quantifier_->link().value(features(s, a).dot(theta));
                const double width = quantifier_->width_constant() * quantifier_->mahalanobis(h, s, a);
                cache_.at(h, s, a) = std::min(options_.v_max, fit + options_.optimism * width);
            }
    }

    void rebuild_cache()
    {
        cache_ = ActionValueTable(quantifier_->horizon(), num_states(), quantifier_->features().num_actions);
        for (int h = 1; h <= quantifier_->horizon(); ++h)
            fill_step(h);
    }

    const GlmQuantifier* quantifier_;
    GlmLsviOptions options_;
    std::vector<Eigen::VectorXd> thetas_;
    std::vector<double> scales_;
    ActionValueTable cache_;
};

} // namespace mase
