#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "mase/engine.hpp"
#include "mase/envs.hpp"
#include "mase/glm.hpp"
#include "mase/gp.hpp"
#include "mase/harness/config.hpp"
#include "mase/learners.hpp"

namespace mase::harness {

inline constexpr const char* kCsvHeader = "seed,episode,steps,return,cum_cost,max_step_cost,violated,emergency_stops,buffer_size";

/// Offset for environments used only to calibrate the GP norm bound.
inline constexpr std::uint64_t kCalibrationSeedBase = 1000003;

inline std::unique_ptr<UncertaintyQuantifier> make_quantifier(const QuantifierSpec& spec, const Environment& env, double delta, double norm_bound)
{
    switch (spec.kind) {
    case QuantifierKind::oracle: return std::make_unique<OracleQuantifier>(env.cmdp, spec.epsilon);
    case QuantifierKind::gp: {
        GpQuantifierOptions options;
        options.kernel = RbfKernel{spec.lengthscale, spec.signal_variance};
        options.omega = spec.omega;
        options.norm_bound = norm_bound;
        options.delta = delta;
        return std::make_unique<GpQuantifier>(state_action_encoder(env), options);
    }
    case QuantifierKind::glm: {
        if (env.features.table.size() == 0)
            throw ConfigError("quantifier", "glm needs an environment with a feature map");
        GlmQuantifierOptions options;
        options.link = spec.link;
        options.width_constant = spec.width_constant;
        options.pool_steps = spec.pool_steps;
        options.delta = delta;
        return std::make_unique<GlmQuantifier>(env.features, env.cmdp.horizon(), options);
    }
    }
    throw ConfigError("quantifier", "unknown quantifier");
}

inline std::unique_ptr<Learner> make_learner(const LearnerSpec& spec, const Environment& env, const UncertaintyQuantifier& quantifier, const MaseConfig& mase)
{
    const auto& m = env.cmdp;
    if (spec.kind == LearnerKind::tabular)
        return std::make_unique<TabularQLearner>(m.horizon(), m.num_states(), m.num_actions(), m.gamma_r(), spec.tabular);
    const auto* glm = dynamic_cast<const GlmQuantifier*>(&quantifier);
    if (glm == nullptr)
        throw ConfigError("learner", "glmlsvi needs quantifier = glm");
    GlmLsviOptions options;
    options.optimism = spec.optimism;
    options.v_max = v_max(m);
    options.target_scale = v_max(m) + mase.penalty_coefficient / mase.width_floor;
    options.gamma_r = m.gamma_r();
    return std::make_unique<GlmLsviLearner>(*glm, options);
}

/// Pre-episode observations at the environment's known-safe pairs. Per-step backends get them at
/// every step.
inline void seed_observations(UncertaintyQuantifier& quantifier, const Environment& env, int repeats)
{
    const int steps = quantifier.name() == "glm" ? env.cmdp.horizon() : 1;
    for (int r = 0; r < repeats; ++r)
        for (int h = 1; h <= steps; ++h)
            for (const auto& [s, a] : env.seed_pairs)
                quantifier.observe(h, s, a, env.cmdp.cost(s, a));
    quantifier.refresh();
}

struct Thresholds {
    ThresholdFactory decision;
    ThresholdFactory audit;
};

inline Thresholds make_thresholds(const ExperimentConfig& cfg, const Environment& env)
{
    const auto audit = cfg.threshold.make(env.xi, env.cmdp.horizon());
    ThresholdFactory audit_factory = [audit] { return audit; };
    if (cfg.decisions == DecisionMode::gse)
        return {audit_factory, audit_factory};
    const double base = audit.kind() == ThresholdKind::sinusoid ? audit.schedule().base : audit.budget();
    return {[base] { return ThresholdProvider::instantaneous(base); }, audit_factory};
}

inline Rng run_rng(std::uint64_t seed)
{
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 0x6d617365u};
    return Rng(seq);
}

struct SeedRun {
    std::uint64_t seed = 0;
    RunMetrics metrics;
    double xi = 0.0;
};

/// Trains one seed. The environment seed and the episode rng both derive from `seed`.
inline SeedRun run_seed(const ExperimentConfig& cfg, std::uint64_t seed, double norm_bound, const EpisodeCallback& after_episode = {})
{
    const Environment env = generate_environment(cfg.env, seed);
    auto quantifier = make_quantifier(cfg.quantifier, env, cfg.mase.delta, norm_bound);
    seed_observations(*quantifier, env, cfg.seed_repeats);
    auto learner = make_learner(cfg.learner, env, *quantifier, cfg.mase);
    const auto thresholds = make_thresholds(cfg, env);
    Rng rng = run_rng(seed);
    SeedRun out;
    out.seed = seed;
    out.xi = env.xi;
    out.metrics = train(env.cmdp, *learner, *quantifier, thresholds.decision, thresholds.audit, cfg.mase, rng, {}, after_episode);
    return out;
}

struct NormBoundCalibration {
    double norm_bound = 0.0;
    int doublings = 0;
    bool passed = true;
    CoverageStats coverage;
};

/// Doubles the GP norm bound B from 1 (at most 3 times) until at least 1 - delta of held-out runs
/// keep every state-action pair covered at every snapshot.
inline NormBoundCalibration calibrate_norm_bound(const ExperimentConfig& cfg)
{
    NormBoundCalibration out;
    auto held_out = cfg;
    held_out.mase.episodes = cfg.calibration_episodes;
    auto predicate = [&](double b) {
        CoverageStats total;
        for (int k = 0; k < cfg.calibration_runs; ++k) {
            const auto seed = kCalibrationSeedBase + static_cast<std::uint64_t>(k);
            const Environment env = generate_environment(held_out.env, seed);
            auto quantifier = make_quantifier(held_out.quantifier, env, cfg.mase.delta, b);
            seed_observations(*quantifier, env, held_out.seed_repeats);
            auto learner = make_learner(held_out.learner, env, *quantifier, held_out.mase);
            const auto thresholds = make_thresholds(held_out, env);
            Rng rng = run_rng(seed);
            bool covered = measure_coverage(*quantifier, env.cmdp, 1).runs_fully_covered == 1;
            train(env.cmdp, *learner, *quantifier, thresholds.decision, thresholds.audit, held_out.mase, rng, {},
                [&](const EpisodeLog&, const ReplayBuffer&) {
                    if (covered)
                        covered = measure_coverage(*quantifier, env.cmdp, 1).runs_fully_covered == 1;
                });
            ++total.runs;
            total.runs_fully_covered += covered ? 1 : 0;
        }
        out.coverage = total;
        return total.run_rate() >= 1.0 - cfg.mase.delta;
    };
    const auto result = calibrate_by_doubling(1.0, 3, predicate);
    out.norm_bound = result.value;
    out.doublings = result.doublings;
    out.passed = result.passed;
    return out;
}

struct ExperimentResult {
    std::string name;
    std::vector<SeedRun> runs;
    double norm_bound = 0.0;
    std::optional<NormBoundCalibration> calibration;
};

inline std::string format_number(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

inline std::string metrics_csv(const ExperimentResult& result)
{
    std::ostringstream out;
    out << kCsvHeader << '\n';
    for (const auto& run : result.runs)
        for (const auto& e : run.metrics.episodes)
            out << run.seed << ',' << e.episode << ',' << e.steps << ',' << format_number(e.total_return) << ','
                << format_number(e.cumulative_cost) << ',' << format_number(e.max_step_cost) << ',' << (e.violated ? 1 : 0)
                << ',' << e.emergency_stops << ',' << e.buffer_size << '\n';
    return out.str();
}

/// Runs every seed (concurrently up to cfg.threads); results are kept in seed order.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg)
{
    validate(cfg);
    ExperimentResult result;
    result.name = cfg.name;
    result.norm_bound = cfg.quantifier.norm_bound;
    if (cfg.quantifier.kind == QuantifierKind::gp && cfg.quantifier.calibrate) {
        result.calibration = calibrate_norm_bound(cfg);
        result.norm_bound = result.calibration->norm_bound;
    }
    result.runs.resize(cfg.seeds.size());
    const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(cfg.threads), cfg.seeds.size());
    if (workers <= 1) {
        for (std::size_t i = 0; i < cfg.seeds.size(); ++i)
            result.runs[i] = run_seed(cfg, cfg.seeds[i], result.norm_bound);
        return result;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::future<void>> pool;
    for (std::size_t w = 0; w < workers; ++w)
        pool.push_back(std::async(std::launch::async, [&] {
            for (std::size_t i = next++; i < cfg.seeds.size(); i = next++)
                result.runs[i] = run_seed(cfg, cfg.seeds[i], result.norm_bound);
        }));
    for (auto& f : pool)
        f.get();
    return result;
}

inline std::filesystem::path write_experiment(const ExperimentResult& result, const std::filesystem::path& dir)
{
    std::filesystem::create_directories(dir);
    const auto path = dir / (result.name + ".csv");
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw std::runtime_error("cannot write '" + path.string() + "'");
    out << metrics_csv(result);
    return path;
}

} // namespace mase::harness
