#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <vector>

#include "mase/uncertainty.hpp"

namespace mase {

struct RbfKernel {
    double lengthscale = 0.2;
    double signal_variance = 1.0;

    double operator()(const Eigen::VectorXd& a, const Eigen::VectorXd& b) const
    {
        return signal_variance * std::exp(-(a - b).squaredNorm() / (2.0 * lengthscale * lengthscale));
    }
};

using StateActionEncoder = std::function<Eigen::VectorXd(int state, int action)>;

struct GpQuantifierOptions {
    RbfKernel kernel{};
    double omega = 0.05;      // noise bound
    double norm_bound = 2.0;  // B
    double delta = 0.1;
};

struct GpPosterior {
    double mu = 0.0;
    double sigma = 0.0;
};

/// Exact GP posterior over encoded state-action inputs with a zero prior mean.
///
/// Repeated observations at an identical input are merged into one point carrying their mean
/// and the noise variance omega^2 / m, which leaves the posterior and the information gain
/// unchanged while keeping the factorized system at the number of distinct inputs.
/// The width is gamma = beta_n sigma_n with sqrt(beta_n) = B + 4 omega sqrt(nu_n + 1 + ln(1/delta)),
/// where nu_n is the realized information gain 1/2 ln det(I + omega^-2 K_n).
class GpQuantifier final : public UncertaintyQuantifier {
public:
    GpQuantifier(StateActionEncoder encoder, GpQuantifierOptions options)
        : encoder_(std::move(encoder))
        , options_(options)
    {
        detail::require(options.omega > 0.0, "gp quantifier: omega must be positive");
        detail::require(options.kernel.lengthscale > 0.0, "gp quantifier: lengthscale must be positive");
        detail::require(options.delta > 0.0 && options.delta < 1.0, "gp quantifier: delta must lie in (0,1)");
        auto snap = std::make_shared<Snapshot>();
        snap->beta = beta_for(0.0);
        snapshot_ = std::move(snap);
    }

    UncertaintyEstimate quantify(int, int state, int action) const override
    {
        const auto snap = current();
        const auto post = posterior(*snap, encoder_(state, action));
        return {post.mu, snap->beta * post.sigma};
    }

    void observe(int, int state, int action, double cost) override
    {
        detail::require(cost >= 0.0 && cost <= 1.0, "gp quantifier: cost outside [0,1]");
        observe_point(encoder_(state, action), cost);
    }

    /// Stages a raw (z, y) observation.
    void observe_point(const Eigen::VectorXd& z, double y)
    {
        detail::require(std::isfinite(y), "gp quantifier: non-finite observation");
        pending_.push_back({z, y});
    }

    void refresh() override
    {
        if (pending_.empty())
            return;
        auto next = std::make_shared<Snapshot>(*current());
        for (const auto& [z, y] : pending_) {
            const std::vector<double> key(z.data(), z.data() + z.size());
            const auto [it, inserted] = next->index.try_emplace(key, next->points.size());
            if (inserted) {
                next->points.push_back(z);
                next->sums.push_back(0.0);
                next->counts.push_back(0.0);
            }
            next->sums[it->second] += y;
            next->counts[it->second] += 1.0;
        }
        next->raw_count += pending_.size();
        factorize(*next);
        pending_.clear();
        std::lock_guard lock(mutex_);
        snapshot_ = std::move(next);
    }

    std::string name() const override { return "gp"; }
    std::size_t pending() const override { return pending_.size(); }

    GpPosterior posterior(const Eigen::VectorXd& z) const { return posterior(*current(), z); }
    double information_gain() const { return current()->information_gain; }
    double beta() const { return current()->beta; }
    std::size_t num_observations() const { return current()->raw_count; }
    std::size_t num_distinct_inputs() const { return current()->points.size(); }

    const GpQuantifierOptions& options() const noexcept { return options_; }
    const StateActionEncoder& encoder() const noexcept { return encoder_; }

    /// Rebuilds beta from the stored gain; used by calibration.
    void set_norm_bound(double b)
    {
        options_.norm_bound = b;
        auto next = std::make_shared<Snapshot>(*current());
        next->beta = beta_for(next->information_gain);
        std::lock_guard lock(mutex_);
        snapshot_ = std::move(next);
    }

private:
    struct Snapshot {
        std::vector<Eigen::VectorXd> points;
        std::vector<double> sums;
        std::vector<double> counts;
        std::map<std::vector<double>, std::size_t> index;
        std::size_t raw_count = 0;
        Eigen::MatrixXd chol_lower; // L with L L^T = K + diag(omega^2 / m)
        Eigen::VectorXd alpha;
        double information_gain = 0.0;
        double beta = 0.0;
    };

    double beta_for(double gain) const
    {
        const double root = options_.norm_bound
            + 4.0 * options_.omega * std::sqrt(gain + 1.0 + std::log(1.0 / options_.delta));
        return root * root;
    }

    static Eigen::MatrixXd cholesky_with_jitter(Eigen::MatrixXd m)
    {
        Eigen::LLT<Eigen::MatrixXd> llt(m);
        double jitter = 1e-8;
        for (int attempt = 0; llt.info() != Eigen::Success; ++attempt) {
            if (attempt > 3)
                throw NumericalError("gp quantifier: kernel matrix is not positive definite after jitter");
            m.diagonal().array() += jitter;
            jitter *= 2.0;
            llt.compute(m);
        }
        return llt.matrixL();
    }

    void factorize(Snapshot& snap) const
    {
        const auto n = static_cast<Eigen::Index>(snap.points.size());
        Eigen::MatrixXd gram(n, n);
        for (Eigen::Index i = 0; i < n; ++i)
            for (Eigen::Index j = 0; j <= i; ++j)
                gram(i, j) = gram(j, i) = options_.kernel(snap.points[static_cast<std::size_t>(i)], snap.points[static_cast<std::size_t>(j)]);
        const double noise = options_.omega * options_.omega;
        Eigen::MatrixXd system = gram;
        Eigen::VectorXd means(n);
        Eigen::VectorXd root_counts(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            const double m = snap.counts[static_cast<std::size_t>(i)];
            system(i, i) += noise / m;
            means(i) = snap.sums[static_cast<std::size_t>(i)] / m;
            root_counts(i) = std::sqrt(m);
        }
        snap.chol_lower = cholesky_with_jitter(system);
        const Eigen::VectorXd half = snap.chol_lower.triangularView<Eigen::Lower>().solve(means);
        snap.alpha = snap.chol_lower.transpose().triangularView<Eigen::Upper>().solve(half);

        // det(I + omega^-2 K_full) = det(I + omega^-2 M^1/2 K M^1/2) for merged duplicates.
        Eigen::MatrixXd gain_matrix = root_counts.asDiagonal() * gram * root_counts.asDiagonal() / noise;
        gain_matrix.diagonal().array() += 1.0;
        const Eigen::MatrixXd gain_chol = cholesky_with_jitter(gain_matrix);
        snap.information_gain = gain_chol.diagonal().array().log().sum();
        snap.beta = beta_for(snap.information_gain);
    }

    GpPosterior posterior(const Snapshot& snap, const Eigen::VectorXd& z) const
    {
        const double prior = options_.kernel(z, z);
        if (snap.points.empty())
            return {0.0, std::sqrt(prior)};
        const auto n = static_cast<Eigen::Index>(snap.points.size());
        Eigen::VectorXd k(n);
        for (Eigen::Index i = 0; i < n; ++i)
            k(i) = options_.kernel(snap.points[static_cast<std::size_t>(i)], z);
        const Eigen::VectorXd v = snap.chol_lower.triangularView<Eigen::Lower>().solve(k);
        const double variance = prior - v.squaredNorm();
        return {k.dot(snap.alpha), std::sqrt(std::max(0.0, variance))};
    }

    std::shared_ptr<const Snapshot> current() const
    {
        std::lock_guard lock(mutex_);
        return snapshot_;
    }

    struct PendingPoint {
        Eigen::VectorXd z;
        double y;
    };

    StateActionEncoder encoder_;
    GpQuantifierOptions options_;
    std::vector<PendingPoint> pending_;
    mutable std::mutex mutex_;
    std::shared_ptr<const Snapshot> snapshot_;
};

} // namespace mase
