#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mase/engine.hpp"
#include "mase/envs.hpp"
#include "mase/threshold.hpp"

namespace mase::harness {

/// `head:key=value:key=value` split into its parts.
struct KeyValueSpec {
    std::string head;
    std::map<std::string, std::string> values;
};

inline KeyValueSpec parse_kv_spec(std::string_view text, const std::string& what)
{
    const auto parts = detail::split(detail::trim(text), ':');
    KeyValueSpec spec;
    spec.head = std::string(detail::trim(parts[0]));
    if (spec.head.empty())
        throw ConfigError(what, "empty specification");
    for (std::size_t i = 1; i < parts.size(); ++i) {
        const auto eq = parts[i].find('=');
        if (eq == std::string_view::npos)
            throw ConfigError(what, "expected key=value, got '" + std::string(parts[i]) + "'");
        spec.values[std::string(detail::trim(parts[i].substr(0, eq)))] = std::string(detail::trim(parts[i].substr(eq + 1)));
    }
    return spec;
}

namespace detail {

    inline void reject_unknown(const KeyValueSpec& spec, std::initializer_list<const char*> allowed, const std::string& what)
    {
        for (const auto& [key, value] : spec.values) {
            bool ok = false;
            for (const char* a : allowed)
                ok = ok || key == a;
            if (!ok)
                throw ConfigError(what, "unknown option '" + key + "' for '" + spec.head + "'");
        }
    }

    inline double number(const KeyValueSpec& spec, const std::string& key, double fallback, const std::string& what)
    {
        const auto it = spec.values.find(key);
        return it == spec.values.end() ? fallback : mase::detail::parse_double(it->second, what);
    }

    inline int integer(std::string_view text, const std::string& what)
    {
        const double v = mase::detail::parse_double(text, what);
        if (v != std::floor(v))
            throw ConfigError(what, "expected an integer, got '" + std::string(text) + "'");
        return static_cast<int>(v);
    }

    inline bool boolean(std::string_view text, const std::string& what)
    {
        const auto t = mase::detail::trim(text);
        if (t == "true" || t == "1" || t == "yes")
            return true;
        if (t == "false" || t == "0" || t == "no")
            return false;
        throw ConfigError(what, "expected true or false, got '" + std::string(t) + "'");
    }

} // namespace detail

enum class LearnerKind { tabular, glm_lsvi };

struct LearnerSpec {
    LearnerKind kind = LearnerKind::tabular;
    TabularOptions tabular{};
    double optimism = 1.0; // C_{Q/g}
};

/// `tabular:alpha=0.5:epochs=50[:init=optimistic] | glmlsvi:cqg=1.0`
inline LearnerSpec parse_learner(std::string_view text)
{
    const auto kv = parse_kv_spec(text, "learner");
    LearnerSpec spec;
    if (kv.head == "tabular") {
        detail::reject_unknown(kv, {"alpha", "epochs", "init"}, "learner");
        spec.tabular.learning_rate = detail::number(kv, "alpha", 0.5, "learner");
        spec.tabular.epochs = static_cast<int>(detail::number(kv, "epochs", 50, "learner"));
        if (const auto it = kv.values.find("init"); it != kv.values.end()) {
            if (it->second == "optimistic")
                spec.tabular.init = TabularInit::optimistic;
            else if (it->second != "zero")
                throw ConfigError("learner", "init must be zero or optimistic");
        }
        if (!(spec.tabular.learning_rate > 0.0 && spec.tabular.learning_rate <= 1.0))
            throw ConfigError("learner", "alpha must lie in (0,1]");
        if (spec.tabular.epochs < 1)
            throw ConfigError("learner", "epochs must be positive");
    } else if (kv.head == "glmlsvi") {
        detail::reject_unknown(kv, {"cqg"}, "learner");
        spec.kind = LearnerKind::glm_lsvi;
        spec.optimism = detail::number(kv, "cqg", 1.0, "learner");
        if (spec.optimism < 0.0)
            throw ConfigError("learner", "cqg must be nonnegative");
    } else {
        throw ConfigError("learner", "unknown learner '" + kv.head + "'");
    }
    return spec;
}

enum class QuantifierKind { gp, glm, oracle };

struct QuantifierSpec {
    QuantifierKind kind = QuantifierKind::gp;
    // gp
    double lengthscale = 0.15;
    double norm_bound = 2.0;
    bool calibrate = false; // B=auto
    double omega = 0.05;
    double signal_variance = 1.0;
    // glm
    LinkFunction link = LinkFunction::identity();
    double width_constant = 1.0;
    bool pool_steps = false;
    // oracle
    double epsilon = 0.0;
};

/// `gp:lengthscale=0.2:B=2:omega=0.05 | glm:link=identity:Cg=1.0:pool=0 | oracle:eps=0`; B=auto calibrates.
inline QuantifierSpec parse_quantifier(std::string_view text)
{
    const auto kv = parse_kv_spec(text, "quantifier");
    QuantifierSpec spec;
    if (kv.head == "gp") {
        detail::reject_unknown(kv, {"lengthscale", "B", "omega", "signal"}, "quantifier");
        spec.lengthscale = detail::number(kv, "lengthscale", spec.lengthscale, "quantifier");
        if (const auto it = kv.values.find("B"); it != kv.values.end() && it->second == "auto")
            spec.calibrate = true;
        else
            spec.norm_bound = detail::number(kv, "B", spec.norm_bound, "quantifier");
        spec.omega = detail::number(kv, "omega", spec.omega, "quantifier");
        spec.signal_variance = detail::number(kv, "signal", spec.signal_variance, "quantifier");
        if (spec.lengthscale <= 0.0 || spec.omega <= 0.0 || spec.signal_variance <= 0.0 || spec.norm_bound < 0.0)
            throw ConfigError("quantifier", "gp parameters must be positive");
    } else if (kv.head == "glm") {
        detail::reject_unknown(kv, {"link", "Cg", "pool"}, "quantifier");
        spec.kind = QuantifierKind::glm;
        if (const auto it = kv.values.find("link"); it != kv.values.end()) {
            if (it->second == "logistic")
                spec.link = LinkFunction::logistic();
            else if (it->second != "identity")
                throw ConfigError("quantifier", "link must be identity or logistic");
        }
        spec.width_constant = detail::number(kv, "Cg", 1.0, "quantifier");
        if (spec.width_constant <= 0.0)
            throw ConfigError("quantifier", "Cg must be positive");
        const double pool = detail::number(kv, "pool", 0.0, "quantifier");
        if (pool != 0.0 && pool != 1.0)
            throw ConfigError("quantifier", "pool must be 0 or 1");
        spec.pool_steps = pool == 1.0;
    } else if (kv.head == "oracle") {
        detail::reject_unknown(kv, {"eps"}, "quantifier");
        spec.kind = QuantifierKind::oracle;
        spec.epsilon = detail::number(kv, "eps", 0.0, "quantifier");
        if (spec.epsilon < 0.0)
            throw ConfigError("quantifier", "eps must be nonnegative");
    } else {
        throw ConfigError("quantifier", "unknown quantifier '" + kv.head + "'");
    }
    return spec;
}

enum class EnvKind { grid, linear, file };

struct EnvSpec {
    EnvKind kind = EnvKind::grid;
    GridWorldSpec grid{10};
    LinearCmdpSpec linear{};
    std::string path;
};

/// `grid:side=10:lengthscale=0.15:horizon=20:quantile=0.5:seed=3` or
/// `linear:states=5:actions=3:dimension=4:horizon=3:spread=0.8:quantile=0.5:margin=0.05:seed=1`.
/// Returns the spec and the seed (0 if absent).
inline std::pair<EnvSpec, std::uint64_t> parse_env_spec(std::string_view text)
{
    const auto kv = parse_kv_spec(text, "env");
    EnvSpec spec;
    const auto seed = static_cast<std::uint64_t>(detail::number(kv, "seed", 0, "env"));
    if (kv.head == "grid") {
        detail::reject_unknown(kv, {"side", "lengthscale", "horizon", "quantile", "gamma_r", "seed"}, "env");
        spec.grid.side = static_cast<int>(detail::number(kv, "side", 10, "env"));
        spec.grid.lengthscale = detail::number(kv, "lengthscale", spec.grid.lengthscale, "env");
        spec.grid.horizon = static_cast<int>(detail::number(kv, "horizon", 0, "env"));
        spec.grid.threshold_quantile = detail::number(kv, "quantile", spec.grid.threshold_quantile, "env");
        spec.grid.gamma_r = detail::number(kv, "gamma_r", 1.0, "env");
    } else if (kv.head == "linear") {
        detail::reject_unknown(kv, {"states", "actions", "dimension", "horizon", "spread", "quantile", "margin", "gamma_r", "seed"}, "env");
        spec.kind = EnvKind::linear;
        spec.linear.num_states = static_cast<int>(detail::number(kv, "states", 5, "env"));
        spec.linear.num_actions = static_cast<int>(detail::number(kv, "actions", 3, "env"));
        spec.linear.dimension = static_cast<int>(detail::number(kv, "dimension", 4, "env"));
        spec.linear.horizon = static_cast<int>(detail::number(kv, "horizon", 3, "env"));
        spec.linear.spread = detail::number(kv, "spread", spec.linear.spread, "env");
        spec.linear.threshold_quantile = detail::number(kv, "quantile", spec.linear.threshold_quantile, "env");
        spec.linear.min_margin = detail::number(kv, "margin", spec.linear.min_margin, "env");
        spec.linear.gamma_r = detail::number(kv, "gamma_r", 1.0, "env");
    } else {
        throw ConfigError("env", "unknown environment kind '" + kv.head + "'");
    }
    return {spec, seed};
}

inline Environment generate_environment(const EnvSpec& spec, std::uint64_t seed)
{
    switch (spec.kind) {
    case EnvKind::grid: {
        auto grid = spec.grid;
        grid.seed = seed;
        return generate_gridworld(grid);
    }
    case EnvKind::linear: return generate_linear_cmdp(spec.linear, seed);
    case EnvKind::file: {
        std::ifstream in(spec.path);
        if (!in)
            throw ConfigError("env.path", "cannot open '" + spec.path + "'");
        return read_environment(in);
    }
    }
    throw ConfigError("env", "unknown environment kind");
}

/// Baseline mode: decisions use a constant threshold at the base value while violations are
/// still judged against the configured stream.
enum class DecisionMode { gse, static_threshold };

struct ExperimentConfig {
    std::string name = "mase";
    EnvSpec env{};
    std::string learner_text = "tabular:alpha=0.5:epochs=50";
    LearnerSpec learner{};
    std::string quantifier_text = "gp:lengthscale=0.15:B=2:omega=0.05";
    QuantifierSpec quantifier{};
    std::string threshold_text = "instantaneous:auto";
    ThresholdSpec threshold{ThresholdKind::instantaneous, true};
    DecisionMode decisions = DecisionMode::gse;
    std::vector<std::uint64_t> seeds{1};
    MaseConfig mase{};
    std::string output = "results";
    int threads = 1;
    double window = 0.2; // fraction of episodes in the first / last emergency-stop windows
    int seed_repeats = 1;
    int calibration_runs = 10;
    int calibration_episodes = 30;
};

namespace detail {

    inline std::vector<std::uint64_t> parse_seeds(std::string_view text)
    {
        std::vector<std::uint64_t> seeds;
        for (auto part : mase::detail::split(text, ',')) {
            part = mase::detail::trim(part);
            const auto dash = part.find('-');
            if (dash != std::string_view::npos && dash > 0) {
                const int lo = integer(part.substr(0, dash), "run.seeds");
                const int hi = integer(part.substr(dash + 1), "run.seeds");
                if (lo < 0 || hi < lo)
                    throw ConfigError("run.seeds", "bad range '" + std::string(part) + "'");
                for (int s = lo; s <= hi; ++s)
                    seeds.push_back(static_cast<std::uint64_t>(s));
            } else {
                const int s = integer(part, "run.seeds");
                if (s < 0)
                    throw ConfigError("run.seeds", "seeds must be nonnegative");
                seeds.push_back(static_cast<std::uint64_t>(s));
            }
        }
        if (seeds.empty())
            throw ConfigError("run.seeds", "no seeds given");
        return seeds;
    }

} // namespace detail

/// Applies one `section.key = value` setting.
inline void apply_setting(ExperimentConfig& cfg, const std::string& section, const std::string& key, const std::string& value)
{
    const std::string where = section + "." + key;
    using detail::integer;
    using mase::detail::parse_double;
    if (section == "env") {
        if (key == "kind") {
            if (value == "grid")
                cfg.env.kind = EnvKind::grid;
            else if (value == "linear")
                cfg.env.kind = EnvKind::linear;
            else if (value == "file")
                cfg.env.kind = EnvKind::file;
            else
                throw ConfigError(where, "expected grid, linear or file");
        } else if (key == "side")
            cfg.env.grid.side = integer(value, where);
        else if (key == "lengthscale")
            cfg.env.grid.lengthscale = parse_double(value, where);
        else if (key == "quantile")
            cfg.env.grid.threshold_quantile = cfg.env.linear.threshold_quantile = parse_double(value, where);
        else if (key == "horizon")
            cfg.env.grid.horizon = cfg.env.linear.horizon = integer(value, where);
        else if (key == "gamma_r")
            cfg.env.grid.gamma_r = cfg.env.linear.gamma_r = parse_double(value, where);
        else if (key == "states")
            cfg.env.linear.num_states = integer(value, where);
        else if (key == "actions")
            cfg.env.linear.num_actions = integer(value, where);
        else if (key == "dimension")
            cfg.env.linear.dimension = integer(value, where);
        else if (key == "spread")
            cfg.env.linear.spread = parse_double(value, where);
        else if (key == "margin")
            cfg.env.linear.min_margin = parse_double(value, where);
        else if (key == "path")
            cfg.env.path = value;
        else
            throw ConfigError(where, "unknown key");
    } else if (section == "learner") {
        if (key != "learner")
            throw ConfigError(where, "unknown key");
        cfg.learner_text = value;
        cfg.learner = parse_learner(value);
    } else if (section == "quantifier") {
        if (key == "quantifier") {
            cfg.quantifier_text = value;
            cfg.quantifier = parse_quantifier(value);
        } else if (key == "seed_repeats")
            cfg.seed_repeats = integer(value, where);
        else if (key == "calibration_runs")
            cfg.calibration_runs = integer(value, where);
        else if (key == "calibration_episodes")
            cfg.calibration_episodes = integer(value, where);
        else
            throw ConfigError(where, "unknown key");
    } else if (section == "threshold") {
        if (key == "threshold") {
            cfg.threshold_text = value;
            cfg.threshold = parse_threshold(value);
        } else if (key == "decisions") {
            if (value == "gse")
                cfg.decisions = DecisionMode::gse;
            else if (value == "static")
                cfg.decisions = DecisionMode::static_threshold;
            else
                throw ConfigError(where, "expected gse or static");
        } else
            throw ConfigError(where, "unknown key");
    } else if (section == "run") {
        if (key == "name")
            cfg.name = value;
        else if (key == "seeds")
            cfg.seeds = detail::parse_seeds(value);
        else if (key == "episodes")
            cfg.mase.episodes = integer(value, where);
        else if (key == "c")
            cfg.mase.penalty_coefficient = parse_double(value, where);
        else if (key == "eps_gamma")
            cfg.mase.width_floor = parse_double(value, where);
        else if (key == "delta")
            cfg.mase.delta = parse_double(value, where);
        else if (key == "halt_on_violation")
            cfg.mase.halt_on_violation = detail::boolean(value, where);
        else if (key == "output")
            cfg.output = value;
        else if (key == "threads")
            cfg.threads = integer(value, where);
        else if (key == "window")
            cfg.window = parse_double(value, where);
        else
            throw ConfigError(where, "unknown key");
    } else {
        throw ConfigError(section, "unknown section");
    }
}

inline void validate(const ExperimentConfig& cfg)
{
    if (cfg.name.empty() || cfg.name.find_first_of("/\\ ") != std::string::npos)
        throw ConfigError("run.name", "must be a nonempty name without spaces or slashes");
    if (cfg.mase.episodes < 1)
        throw ConfigError("run.episodes", "must be at least 1");
    if (cfg.mase.penalty_coefficient <= 0.0)
        throw ConfigError("run.c", "must be positive");
    if (cfg.mase.width_floor <= 0.0)
        throw ConfigError("run.eps_gamma", "must be positive");
    if (!(cfg.mase.delta > 0.0 && cfg.mase.delta < 1.0))
        throw ConfigError("run.delta", "must lie in (0,1)");
    if (cfg.threads < 1)
        throw ConfigError("run.threads", "must be at least 1");
    if (!(cfg.window > 0.0 && cfg.window <= 0.5))
        throw ConfigError("run.window", "must lie in (0, 0.5]");
    if (cfg.seed_repeats < 0)
        throw ConfigError("quantifier.seed_repeats", "must be nonnegative");
    if (cfg.env.kind == EnvKind::file && cfg.env.path.empty())
        throw ConfigError("env.path", "required for kind = file");
    if (cfg.quantifier.kind == QuantifierKind::glm && cfg.env.kind == EnvKind::grid)
        throw ConfigError("quantifier", "glm needs an environment with a feature map");
    if (cfg.learner.kind == LearnerKind::glm_lsvi && cfg.quantifier.kind != QuantifierKind::glm)
        throw ConfigError("learner", "glmlsvi shares the glm quantifier's features and needs quantifier = glm");
    if (cfg.decisions == DecisionMode::static_threshold && cfg.threshold.kind != ThresholdKind::sinusoid
        && cfg.threshold.kind != ThresholdKind::instantaneous)
        throw ConfigError("threshold.decisions", "static decisions need a sinusoid or instantaneous threshold");
}

/// Line-oriented `key = value` file with [env] [learner] [quantifier] [threshold] [run] sections.
/// `#` starts a comment.
inline ExperimentConfig parse_config(std::istream& in)
{
    ExperimentConfig cfg;
    std::string raw;
    std::string section;
    std::size_t line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        std::string_view line = raw;
        if (const auto hash = line.find('#'); hash != std::string_view::npos)
            line = line.substr(0, hash);
        line = mase::detail::trim(line);
        if (line.empty())
            continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw ConfigError("", "line " + std::to_string(line_no) + ": malformed section header");
            section = std::string(mase::detail::trim(line.substr(1, line.size() - 2)));
            static const std::set<std::string> known{"env", "learner", "quantifier", "threshold", "run"};
            if (!known.count(section))
                throw ConfigError(section, "line " + std::to_string(line_no) + ": unknown section");
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string_view::npos)
            throw ConfigError("", "line " + std::to_string(line_no) + ": expected key = value");
        if (section.empty())
            throw ConfigError("", "line " + std::to_string(line_no) + ": setting outside a section");
        apply_setting(cfg, section, std::string(mase::detail::trim(line.substr(0, eq))), std::string(mase::detail::trim(line.substr(eq + 1))));
    }
    validate(cfg);
    return cfg;
}

inline ExperimentConfig load_config(const std::string& path)
{
    std::ifstream in(path);
    if (!in)
        throw ConfigError("", "cannot open config '" + path + "'");
    return parse_config(in);
}

} // namespace mase::harness
