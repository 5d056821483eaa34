#pragma once

#include <Eigen/Dense>

#include <memory>
#include <mutex>
#include <set>
#include <vector>

#include "mase/uncertainty.hpp"

namespace mase {

/// Feature table with one row per state-action pair, row index s * A + a.
struct FeatureMap {
    Eigen::MatrixXd table;
    int num_actions = 1;

    int dimension() const { return static_cast<int>(table.cols()); }
    Eigen::VectorXd operator()(int s, int a) const { return table.row(static_cast<Eigen::Index>(s) * num_actions + a).transpose(); }
};

struct GlmQuantifierOptions {
    LinkFunction link = LinkFunction::identity();
    double width_constant = 1.0; // C_g
    double delta = 0.1;
    int max_iterations = 500;
    bool pool_steps = false; // one shared Lambda and theta for the safety estimate
};

/// Generalized-linear safety model with per-step statistics.
///
/// For step h: Lambda_h = I + sum phi phi^T over observed step-h pairs, theta_h is the
/// ball-constrained least-squares fit, mu = f(<phi, theta_h>), gamma = C_g ||phi||_{Lambda_h^-1}.
/// With pool_steps the safety estimate uses the statistics of all steps together (the cost does
/// not depend on h); the per-step statistics are still kept for mahalanobis().
class GlmQuantifier final : public UncertaintyQuantifier {
public:
    GlmQuantifier(FeatureMap features, int horizon, GlmQuantifierOptions options = {})
        : features_(std::move(features))
        , horizon_(horizon)
        , options_(options)
    {
        detail::require(horizon > 0, "glm quantifier: horizon must be positive");
        detail::require(options.width_constant > 0.0, "glm quantifier: C_g must be positive");
        const Eigen::Index d = features_.table.cols();
        auto snap = std::make_shared<Snapshot>();
        snap->steps.resize(static_cast<std::size_t>(horizon) + 1);
        for (auto& st : snap->steps) {
            st.design = Eigen::MatrixXd::Identity(d, d);
            st.design_inverse = Eigen::MatrixXd::Identity(d, d);
            st.theta = Eigen::VectorXd::Zero(d);
        }
        snapshot_ = std::move(snap);
    }

    UncertaintyEstimate quantify(int h, int state, int action) const override
    {
        const auto snap = current();
        const auto& st = options_.pool_steps ? pooled(*snap) : step_stats(*snap, h);
        const Eigen::VectorXd phi = features_(state, action);
        const double mu = options_.link.value(phi.dot(st.theta));
        return {mu, options_.width_constant * std::sqrt(std::max(0.0, phi.dot(st.design_inverse * phi)))};
    }

    void observe(int h, int state, int action, double cost) override
    {
        detail::require(cost >= 0.0 && cost <= 1.0, "glm quantifier: cost outside [0,1]");
        detail::require(h >= 1 && h <= horizon_, "glm quantifier: step out of range");
        pending_.push_back({h, state, action, cost});
    }

    void refresh() override
    {
        if (pending_.empty())
            return;
        auto next = std::make_shared<Snapshot>(*current());
        std::set<int> touched;
        for (const auto& obs : pending_) {
            const Eigen::VectorXd phi = features_(obs.state, obs.action);
            for (const std::size_t i : {static_cast<std::size_t>(obs.h - 1), static_cast<std::size_t>(horizon_)}) {
                auto& st = next->steps[i];
                st.design += phi * phi.transpose();
                st.rows.push_back(phi);
                st.targets.push_back(obs.cost);
            }
            touched.insert(obs.h);
        }
        touched.insert(horizon_ + 1);
        for (int h : touched) {
            auto& st = next->steps[static_cast<std::size_t>(h - 1)];
            st.design_inverse = st.design.ldlt().solve(Eigen::MatrixXd::Identity(st.design.rows(), st.design.cols()));
            Eigen::MatrixXd X(static_cast<Eigen::Index>(st.rows.size()), features_.table.cols());
            Eigen::VectorXd y(static_cast<Eigen::Index>(st.rows.size()));
            for (std::size_t i = 0; i < st.rows.size(); ++i) {
                X.row(static_cast<Eigen::Index>(i)) = st.rows[i].transpose();
                y(static_cast<Eigen::Index>(i)) = st.targets[i];
            }
            st.theta = glm_ridge_fit(X, y, options_.link, {1.0, options_.max_iterations});
        }
        pending_.clear();
        std::lock_guard lock(mutex_);
        snapshot_ = std::move(next);
    }

    std::string name() const override { return "glm"; }
    std::size_t pending() const override { return pending_.size(); }

    /// ||phi(s,a)||_{Lambda_h^-1}, without the C_g factor.
    double mahalanobis(int h, int state, int action) const
    {
        const auto snap = current();
        const Eigen::VectorXd phi = features_(state, action);
        return std::sqrt(std::max(0.0, phi.dot(step_stats(*snap, h).design_inverse * phi)));
    }

    Eigen::MatrixXd design_matrix(int h) const { return step_stats(*current(), h).design; }
    Eigen::MatrixXd pooled_design_matrix() const { return pooled(*current()).design; }
    Eigen::VectorXd theta(int h) const { return step_stats(*current(), h).theta; }
    std::size_t observations(int h) const { return step_stats(*current(), h).rows.size(); }

    const FeatureMap& features() const noexcept { return features_; }
    const LinkFunction& link() const noexcept { return options_.link; }
    int horizon() const noexcept { return horizon_; }
    double width_constant() const noexcept { return options_.width_constant; }
    bool pools_steps() const noexcept { return options_.pool_steps; }

    /// Applies to subsequent quantify() calls; the statistics are unchanged.
    void set_width_constant(double c) { options_.width_constant = c; }

private:
    struct StepStats {
        Eigen::MatrixXd design;
        Eigen::MatrixXd design_inverse;
        Eigen::VectorXd theta;
        std::vector<Eigen::VectorXd> rows;
        std::vector<double> targets;
    };

    struct Snapshot {
        std::vector<StepStats> steps; // H per-step entries, then the pooled one
    };

    struct Pending {
        int h;
        int state;
        int action;
        double cost;
    };

    std::shared_ptr<const Snapshot> current() const
    {
        std::lock_guard lock(mutex_);
        return snapshot_;
    }

    const StepStats& pooled(const Snapshot& snap) const { return snap.steps.back(); }

    const StepStats& step_stats(const Snapshot& snap, int h) const
    {
        detail::require(h >= 1 && h <= horizon_, "glm quantifier: step out of range");
        return snap.steps[static_cast<std::size_t>(h - 1)];
    }

    FeatureMap features_;
    int horizon_;
    GlmQuantifierOptions options_;
    std::vector<Pending> pending_;
    mutable std::mutex mutex_;
    std::shared_ptr<const Snapshot> snapshot_;
};

} // namespace mase
