#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "mase/cmdp.hpp"
#include "mase/error.hpp"

namespace mase {

struct UncertaintyEstimate {
    double mu = 0.0;
    double gamma = 0.0;

    double upper() const noexcept { return mu + gamma; }
};

/// Estimator of the safety cost with a confidence width.
///
/// The contract is |g(s,a) - mu(s,a)| <= gamma(s,a) for all pairs with probability at least
/// 1 - delta. Observations are staged by observe() and only become visible to quantify() after
/// refresh(). Backends with per-step statistics use h; the others ignore it.
class UncertaintyQuantifier {
public:
    virtual ~UncertaintyQuantifier() = default;

    virtual UncertaintyEstimate quantify(int h, int state, int action) const = 0;
    virtual void observe(int h, int state, int action, double cost) = 0;
    virtual void refresh() = 0;
    virtual std::string name() const = 0;

    /// Staged observations not yet visible to quantify().
    virtual std::size_t pending() const = 0;
};

/// Knows g exactly; reports a configured constant width.
class OracleQuantifier final : public UncertaintyQuantifier {
public:
    OracleQuantifier(int num_actions, std::vector<double> cost_table, double width)
        : num_actions_(num_actions)
        , cost_(std::move(cost_table))
        , width_(width)
    {
        detail::require(width >= 0.0, "oracle quantifier: width must be nonnegative");
    }

    OracleQuantifier(const Cmdp& cmdp, double width)
        : OracleQuantifier(cmdp.num_actions(), cmdp.cost_table(), width)
    {
    }

    UncertaintyEstimate quantify(int, int state, int action) const override
    {
        return {cost_[static_cast<std::size_t>(state * num_actions_ + action)], width_};
    }

    void observe(int, int, int, double) override { ++pending_; }
    void refresh() override { pending_ = 0; }
    std::string name() const override { return "oracle"; }
    std::size_t pending() const override { return pending_; }

    double width() const noexcept { return width_; }
    void set_width(double width) { width_ = width; }
    void set_cost(int state, int action, double g) { cost_[static_cast<std::size_t>(state * num_actions_ + action)] = g; }

private:
    int num_actions_;
    std::vector<double> cost_;
    double width_;
    std::size_t pending_ = 0;
};

enum class LinkKind { identity, logistic };

/// Monotone link f with derivative bounds kappa_lo < |f'(x)| < kappa_hi and |f''(x)| < M on |x| <= 1.
struct LinkFunction {
    LinkKind kind = LinkKind::identity;
    double kappa_lo = 0.5;
    double kappa_hi = 1.5;
    double second_bound = 1.0;

    static LinkFunction identity() { return {LinkKind::identity, 0.5, 1.5, 1.0}; }
    // On [-1, 1]: f' ranges over [0.1966, 0.25] and |f''| peaks at 0.0909.
    static LinkFunction logistic() { return {LinkKind::logistic, 0.19, 0.26, 0.1}; }

    double value(double x) const { return kind == LinkKind::identity ? x : 1.0 / (1.0 + std::exp(-x)); }

    double derivative(double x) const
    {
        if (kind == LinkKind::identity)
            return 1.0;
        const double f = value(x);
        return f * (1.0 - f);
    }

    double second_derivative(double x) const
    {
        if (kind == LinkKind::identity)
            return 0.0;
        const double f = value(x);
        return f * (1.0 - f) * (1.0 - 2.0 * f);
    }

    std::string name() const { return kind == LinkKind::identity ? "identity" : "logistic"; }
};

struct GlmFitOptions {
    double radius = 1.0;
    int max_iterations = 500;
};

namespace detail {

    inline double squared_loss(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const Eigen::VectorXd& theta, const LinkFunction& link)
    {
        double loss = 0.0;
        const Eigen::VectorXd z = X * theta;
        for (Eigen::Index i = 0; i < y.size(); ++i) {
            const double r = y(i) - link.value(z(i));
            loss += r * r;
        }
        return loss;
    }

    inline Eigen::VectorXd project_to_ball(Eigen::VectorXd theta, double radius)
    {
        const double norm = theta.norm();
        if (norm > radius)
            theta *= radius / norm;
        return theta;
    }

    /// argmin ||X theta - y||^2 s.t. ||theta|| <= radius. The unconstrained minimum-norm solution
    /// is used when feasible; otherwise the multiplier lambda with ||theta(lambda)|| = radius is
    /// located by bisection, theta(lambda) = (X'X + lambda I)^-1 X'y.
    inline Eigen::VectorXd constrained_least_squares(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, double radius)
    {
        const Eigen::Index d = X.cols();
        if (X.rows() == 0)
            return Eigen::VectorXd::Zero(d);
        const Eigen::VectorXd free = X.completeOrthogonalDecomposition().solve(y);
        if (free.norm() <= radius)
            return free;

        const LinkFunction identity = LinkFunction::identity();
        const Eigen::VectorXd projected = project_to_ball(free, radius);
        if (squared_loss(X, y, projected, identity) - squared_loss(X, y, free, identity) <= 1e-10)
            return projected;

        const Eigen::MatrixXd gram = X.transpose() * X;
        const Eigen::VectorXd rhs = X.transpose() * y;
        auto solve = [&](double lambda) -> Eigen::VectorXd {
            return (gram + lambda * Eigen::MatrixXd::Identity(d, d)).ldlt().solve(rhs);
        };
        double lo = 0.0;
        double hi = 1.0;
        while (solve(hi).norm() > radius && hi < 1e300)
            hi *= 2.0;
        for (int it = 0; it < 200 && hi - lo > 1e-15 * std::max(1.0, hi); ++it) {
            const double mid = 0.5 * (lo + hi);
            (solve(mid).norm() > radius ? lo : hi) = mid;
        }
        Eigen::VectorXd theta = project_to_ball(solve(hi), radius);
        if (squared_loss(X, y, projected, identity) < squared_loss(X, y, theta, identity))
            theta = projected;
        return theta;
    }

    inline Eigen::VectorXd projected_gradient_fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const LinkFunction& link, const GlmFitOptions& options)
    {
        const Eigen::Index d = X.cols();
        Eigen::VectorXd theta = Eigen::VectorXd::Zero(d);
        if (X.rows() == 0)
            return theta;
        const double step = 0.1 / (link.kappa_hi * link.kappa_hi);
        const double scale = 2.0 / static_cast<double>(X.rows());
        for (int it = 0; it < options.max_iterations; ++it) {
            const Eigen::VectorXd z = X * theta;
            Eigen::VectorXd weights(z.size());
            for (Eigen::Index i = 0; i < z.size(); ++i)
                weights(i) = (y(i) - link.value(z(i))) * link.derivative(z(i));
            const Eigen::VectorXd gradient = -scale * (X.transpose() * weights);
            if (gradient.norm() < 1e-8)
                break;
            Eigen::VectorXd next = project_to_ball(theta - step * gradient, options.radius);
            const double moved = (next - theta).norm();
            theta = std::move(next);
            if (moved < 1e-14)
                break;
        }
        return theta;
    }

} // namespace detail

/// Least-squares GLM estimate constrained to the ball of the given radius.
/// Rows of `features` are the observed feature vectors.
inline Eigen::VectorXd glm_ridge_fit(const Eigen::MatrixXd& features, const Eigen::VectorXd& targets, const LinkFunction& link, const GlmFitOptions& options = {})
{
    detail::require(features.rows() == targets.size(), "glm_ridge_fit: feature/target count mismatch");
    for (Eigen::Index i = 0; i < targets.size(); ++i)
        if (!std::isfinite(targets(i)))
            throw PreconditionError("glm_ridge_fit: non-finite target");
    if (link.kind == LinkKind::identity)
        return detail::constrained_least_squares(features, targets, options.radius);
    return detail::projected_gradient_fit(features, targets, link, options);
}

/// Grows a calibration constant by doubling until `passes(value)` holds or the budget of
/// doublings is spent.
struct CalibrationResult {
    double value = 0.0;
    int doublings = 0;
    bool passed = false;
};

template <typename Predicate>
CalibrationResult calibrate_by_doubling(double initial, int max_doublings, Predicate&& passes)
{
    CalibrationResult result{initial, 0, false};
    for (int k = 0; k <= max_doublings; ++k) {
        result.value = initial * std::pow(2.0, k);
        result.doublings = k;
        if (passes(result.value)) {
            result.passed = true;
            return result;
        }
    }
    return result;
}

struct CoverageStats {
    std::size_t pairs = 0;
    std::size_t covered = 0;
    std::size_t runs = 0;
    std::size_t runs_fully_covered = 0;

    double pair_rate() const { return pairs == 0 ? 1.0 : static_cast<double>(covered) / static_cast<double>(pairs); }
    double run_rate() const { return runs == 0 ? 1.0 : static_cast<double>(runs_fully_covered) / static_cast<double>(runs); }

    CoverageStats& operator+=(const CoverageStats& other)
    {
        pairs += other.pairs;
        covered += other.covered;
        runs += other.runs;
        runs_fully_covered += other.runs_fully_covered;
        return *this;
    }
};

/// Coverage of a quantifier snapshot against the true cost table at step h.
inline CoverageStats measure_coverage(const UncertaintyQuantifier& quantifier, const Cmdp& cmdp, int h)
{
    CoverageStats stats;
    stats.runs = 1;
    for (int s = 0; s < cmdp.num_states(); ++s)
        for (int a = 0; a < cmdp.num_actions(); ++a) {
            const auto est = quantifier.quantify(h, s, a);
            ++stats.pairs;
            if (std::abs(cmdp.cost(s, a) - est.mu) <= est.gamma + kSafetyTolerance)
                ++stats.covered;
        }
    stats.runs_fully_covered = stats.covered == stats.pairs ? 1 : 0;
    return stats;
}

} // namespace mase
