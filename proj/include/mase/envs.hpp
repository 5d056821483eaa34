#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <istream>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mase/cmdp.hpp"
#include "mase/glm.hpp"
#include "mase/gp.hpp"
#include "mase/planning.hpp"
#include "mase/threshold.hpp"

namespace mase {

/// A Cmdp plus the generator's ground truth and the suggested threshold base.
struct Environment {
    explicit Environment(Cmdp m)
        : cmdp(std::move(m))
    {
    }

    std::string kind = "plain"; // plain | grid | linear
    Cmdp cmdp;
    std::uint64_t seed = 0;
    double xi = 0.5;
    double zeta = std::numeric_limits<double>::quiet_NaN();

    // grid
    int side = 0;
    double lengthscale = 0.0;
    std::vector<double> reward_field;
    std::vector<double> safety_field;

    // linear
    FeatureMap features;
    Eigen::VectorXd theta_r;
    Eigen::VectorXd theta_g;

    /// Pairs whose cost may be observed before the first episode.
    std::vector<std::pair<int, int>> seed_pairs;

    bool operator==(const Environment& o) const
    {
        auto same = [](double a, double b) { return a == b || (std::isnan(a) && std::isnan(b)); };
        return kind == o.kind && cmdp == o.cmdp && seed == o.seed && same(xi, o.xi) && same(zeta, o.zeta)
            && side == o.side && lengthscale == o.lengthscale && reward_field == o.reward_field
            && safety_field == o.safety_field && features.num_actions == o.features.num_actions
            && features.table == o.features.table && theta_r == o.theta_r && theta_g == o.theta_g
            && seed_pairs == o.seed_pairs;
    }
};

enum GridAction { up = 0, down = 1, left = 2, right = 3, stay = 4 };
inline constexpr int kGridActions = 5;

struct GridWorldSpec {
    int side = 20;
    double lengthscale = 0.15; // fraction of the side
    int horizon = 0;           // 0 -> 2 * side
    double gamma_r = 1.0;
    double threshold_quantile = 0.5; // xi_3 = this quantile of the safety field
    double min_margin = 0.05;
    std::uint64_t seed = 0;
};

namespace detail {

    /// Draws from N(0, K) for the RBF kernel over the cells of an n x n grid, lengthscale in cells.
    inline std::vector<double> sample_gp_field(int n, double lengthscale_cells, Rng& rng)
    {
        const int cells = n * n;
        Eigen::MatrixXd K(cells, cells);
        for (int i = 0; i < cells; ++i)
            for (int j = 0; j <= i; ++j) {
                const double dr = i / n - j / n;
                const double dc = i % n - j % n;
                K(i, j) = K(j, i) = std::exp(-(dr * dr + dc * dc) / (2.0 * lengthscale_cells * lengthscale_cells));
            }
        const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(K);
        const Eigen::VectorXd root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
        std::normal_distribution<double> normal(0.0, 1.0);
        Eigen::VectorXd z(cells);
        for (int i = 0; i < cells; ++i)
            z(i) = normal(rng);
        const Eigen::VectorXd f = eig.eigenvectors() * root.asDiagonal() * z;
        const double lo = f.minCoeff();
        const double hi = f.maxCoeff();
        std::vector<double> out(static_cast<std::size_t>(cells));
        for (int i = 0; i < cells; ++i)
            out[static_cast<std::size_t>(i)] = hi > lo ? (f(i) - lo) / (hi - lo) : 0.0;
        return out;
    }

    inline double quantile(std::vector<double> values, double q)
    {
        std::sort(values.begin(), values.end());
        const double pos = q * static_cast<double>(values.size() - 1);
        const auto lo = static_cast<std::size_t>(std::floor(pos));
        const auto hi = std::min(values.size() - 1, lo + 1);
        return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
    }

} // namespace detail

inline int grid_move(int side, int cell, int action)
{
    int r = cell / side;
    int c = cell % side;
    switch (action) {
    case up: r = std::max(0, r - 1); break;
    case down: r = std::min(side - 1, r + 1); break;
    case left: c = std::max(0, c - 1); break;
    case right: c = std::min(side - 1, c + 1); break;
    default: break;
    }
    return r * side + c;
}

/// Smallest slack xi - g along the path of the constrained optimum at the given margin, or NaN if
/// no policy keeps that margin. Deterministic transitions only.
inline double path_margin(const Cmdp& cmdp, double xi, double margin)
{
    try {
        const auto opt = constrained_value_iteration(cmdp, [&](int) { return xi; }, margin);
        double slack = std::numeric_limits<double>::infinity();
        int s = cmdp.initial_state();
        for (int h = 1; h <= cmdp.horizon(); ++h) {
            const int a = opt.policy.action(h, s);
            slack = std::min(slack, xi - cmdp.cost(s, a));
            const auto row = cmdp.transition_row(s, a);
            s = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
        }
        return slack;
    } catch (const InfeasibleError&) {
        return std::numeric_limits<double>::quiet_NaN();
    }
}

/// Random grid world: reward and safety fields are RBF-prior draws (lengthscale * side cells)
/// rescaled to [0,1]; moving into a cell yields that cell's reward and cost; walls clip moves.
/// The start is the least-cost cell. Draws without a margin-feasible policy are redrawn.
inline Environment generate_gridworld(const GridWorldSpec& spec)
{
    detail::require(spec.side >= 2, "generate_gridworld: side must be at least 2");
    detail::require(spec.lengthscale > 0.0, "generate_gridworld: lengthscale must be positive");
    const int n = spec.side;
    const int S = n * n;
    const int H = spec.horizon > 0 ? spec.horizon : 2 * n;
    Rng rng(spec.seed);
    for (int attempt = 0; attempt < 100; ++attempt) {
        auto reward_field = detail::sample_gp_field(n, spec.lengthscale * n, rng);
        auto safety_field = detail::sample_gp_field(n, spec.lengthscale * n, rng);
        std::vector<double> P(static_cast<std::size_t>(S * kGridActions * S), 0.0);
        std::vector<double> R(static_cast<std::size_t>(S * kGridActions));
        std::vector<double> G(static_cast<std::size_t>(S * kGridActions));
        for (int s = 0; s < S; ++s)
            for (int a = 0; a < kGridActions; ++a) {
                const int next = grid_move(n, s, a);
                const auto idx = static_cast<std::size_t>(s * kGridActions + a);
                P[idx * static_cast<std::size_t>(S) + static_cast<std::size_t>(next)] = 1.0;
                R[idx] = reward_field[static_cast<std::size_t>(next)];
                G[idx] = safety_field[static_cast<std::size_t>(next)];
            }
        const int start = static_cast<int>(std::min_element(safety_field.begin(), safety_field.end()) - safety_field.begin());
        Environment env(Cmdp(S, kGridActions, H, std::move(P), std::move(R), std::move(G), start, spec.gamma_r, 1.0));
        env.xi = detail::quantile(safety_field, spec.threshold_quantile);
        env.zeta = path_margin(env.cmdp, env.xi, spec.min_margin);
        if (std::isnan(env.zeta))
            continue;
        env.kind = "grid";
        env.seed = spec.seed;
        env.side = n;
        env.lengthscale = spec.lengthscale;
        env.reward_field = std::move(reward_field);
        env.safety_field = std::move(safety_field);
        for (int a = 0; a < kGridActions; ++a)
            env.seed_pairs.emplace_back(start, a);
        return env;
    }
    throw InfeasibleError("generate_gridworld: no margin-feasible draw for seed " + std::to_string(spec.seed));
}

/// b_h for the grid experiments: constant xi, or the sinusoid around xi.
inline double threshold_schedule(const std::optional<SinusoidSchedule>& variant, double xi, int h)
{
    return variant ? variant->at(h) : xi;
}

struct LinearCmdpSpec {
    int num_states = 5;
    int num_actions = 3;
    int dimension = 4;
    int horizon = 3;
    double gamma_r = 1.0;
    double spread = 0.8;             // off-peak mass of each feature vector
    double threshold_quantile = 0.5; // xi = this quantile of g
    double min_margin = 0.05;        // every state needs an action with g <= xi - min_margin
};

/// Linear CMDP with P(s'|s,a) = sum_i phi_i(s,a) psi_i(s'). Features live on the probability
/// simplex, psi_i are distributions and theta_r, theta_g have entries in [0,1] with norm <= 1, so
/// r and g are valid and every Bellman image of a function of s' is linear in phi. The start is
/// the state with the cheapest action. Every state's cheapest action is a known-safe seed pair,
/// and zeta is the smallest gap xi - min_a g(s,a) over states.
inline Environment generate_linear_cmdp(const LinearCmdpSpec& spec, std::uint64_t seed)
{
    const int S = spec.num_states;
    const int A = spec.num_actions;
    const int d = spec.dimension;
    detail::require(S > 0 && A > 0 && d > 0 && spec.horizon > 0, "generate_linear_cmdp: sizes must be positive");
    detail::require(d <= S * A, "generate_linear_cmdp: d must not exceed S * A");
    detail::require(spec.spread >= 0.0 && spec.spread <= 1.0, "generate_linear_cmdp: spread must lie in [0,1]");
    detail::require(spec.min_margin >= 0.0, "generate_linear_cmdp: margin must be nonnegative");
    Rng rng(seed);
    std::exponential_distribution<double> expo(1.0);
    auto simplex = [&](int k) {
        Eigen::VectorXd v(k);
        for (int i = 0; i < k; ++i)
            v(i) = expo(rng);
        return Eigen::VectorXd(v / v.sum());
    };
    for (int attempt = 0; attempt < 10000; ++attempt) {
        Eigen::MatrixXd phi(S * A, d);
        for (int i = 0; i < S * A; ++i) {
            Eigen::VectorXd row = spec.spread * simplex(d);
            row(std::uniform_int_distribution<int>(0, d - 1)(rng)) += 1.0 - spec.spread;
            phi.row(i) = row.transpose();
        }
        if (d > 1 && Eigen::FullPivLU<Eigen::MatrixXd>(phi).rank() < d)
            continue;
        Eigen::MatrixXd psi(d, S);
        for (int i = 0; i < d; ++i)
            psi.row(i) = simplex(S).transpose();
        auto unit_box = [&]() {
            Eigen::VectorXd t(d);
            for (int i = 0; i < d; ++i)
                t(i) = uniform01(rng);
            return Eigen::VectorXd(t / std::max(1.0, t.norm()));
        };
        const Eigen::VectorXd theta_r = unit_box();
        const Eigen::VectorXd theta_g = unit_box();

        const Eigen::MatrixXd trans = phi * psi;
        std::vector<double> P(static_cast<std::size_t>(S * A * S));
        std::vector<double> R(static_cast<std::size_t>(S * A));
        std::vector<double> G(static_cast<std::size_t>(S * A));
        for (int i = 0; i < S * A; ++i) {
            const double total = trans.row(i).sum();
            for (int k = 0; k < S; ++k)
                P[static_cast<std::size_t>(i * S + k)] = trans(i, k) / total;
            R[static_cast<std::size_t>(i)] = std::clamp(phi.row(i).dot(theta_r), 0.0, 1.0);
            G[static_cast<std::size_t>(i)] = std::clamp(phi.row(i).dot(theta_g), 0.0, 1.0);
        }
        const double xi = detail::quantile(G, spec.threshold_quantile);
        std::vector<int> cheapest(static_cast<std::size_t>(S));
        double worst = 0.0;
        int start = 0;
        for (int s = 0; s < S; ++s) {
            const auto first = G.begin() + s * A;
            cheapest[static_cast<std::size_t>(s)] = static_cast<int>(std::min_element(first, first + A) - first);
            const double g = *(first + cheapest[static_cast<std::size_t>(s)]);
            worst = std::max(worst, g);
            if (g < G[static_cast<std::size_t>(start * A + cheapest[static_cast<std::size_t>(start)])])
                start = s;
        }
        if (xi - worst < spec.min_margin)
            continue;
        Environment env(Cmdp(S, A, spec.horizon, std::move(P), std::move(R), std::move(G), start, spec.gamma_r, 1.0));
        try {
            constrained_value_iteration(env.cmdp, [&](int) { return xi; }, 0.0);
        } catch (const InfeasibleError&) {
            continue;
        }
        env.kind = "linear";
        env.seed = seed;
        env.xi = xi;
        env.zeta = xi - worst;
        env.features = FeatureMap{phi, A};
        env.theta_r = theta_r;
        env.theta_g = theta_g;
        for (int a = 0; a < A; ++a)
            env.seed_pairs.emplace_back(start, a);
        for (int s = 0; s < S; ++s)
            if (s != start)
                env.seed_pairs.emplace_back(s, cheapest[static_cast<std::size_t>(s)]);
        return env;
    }
    throw InfeasibleError("generate_linear_cmdp: rejection sampling failed for seed " + std::to_string(seed));
}

/// GP input for a state-action pair. Grid worlds encode the reached cell as (row, col) / side,
/// since the cost is a function of that cell; other environments use (s / S, a / A).
inline StateActionEncoder state_action_encoder(const Environment& env)
{
    if (env.kind == "grid") {
        const int n = env.side;
        return [n](int s, int a) {
            const int next = grid_move(n, s, a);
            Eigen::VectorXd z(2);
            z << static_cast<double>(next / n) / n, static_cast<double>(next % n) / n;
            return z;
        };
    }
    const double S = env.cmdp.num_states();
    const double A = env.cmdp.num_actions();
    return [S, A](int s, int a) {
        Eigen::VectorXd z(2);
        z << s / S, a / A;
        return z;
    };
}

// ---------------------------------------------------------------------------------------------
// Text format

namespace detail {

    inline std::string format_double(double v)
    {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.17g", v);
        return buf;
    }

    template <typename Range>
    void write_row(std::ostream& out, const Range& values)
    {
        bool first = true;
        for (double v : values) {
            if (!first)
                out << ' ';
            out << format_double(v);
            first = false;
        }
        out << '\n';
    }

    struct LineReader {
        std::istream& in;
        std::size_t line_no = 0;
        std::string pending;
        bool has_pending = false;

        /// Next non-blank, non-comment line; false at end of input.
        bool next(std::string& line)
        {
            if (has_pending) {
                has_pending = false;
                line = pending;
                return true;
            }
            while (std::getline(in, line)) {
                ++line_no;
                const auto t = trim(line);
                if (t.empty() || t.front() == '#')
                    continue;
                line = std::string(t);
                return true;
            }
            return false;
        }

        void push_back(const std::string& line)
        {
            pending = line;
            has_pending = true;
        }
    };

    inline std::vector<double> parse_numbers(const std::string& line, std::size_t line_no)
    {
        std::vector<double> out;
        std::istringstream ss(line);
        std::string token;
        while (ss >> token) {
            double v = 0.0;
            const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
            if (ec != std::errc() || ptr != token.data() + token.size())
                throw ParseError(line_no, "expected a number, got '" + token + "'");
            out.push_back(v);
        }
        return out;
    }

} // namespace detail

inline void write_cmdp(std::ostream& out, const Cmdp& m)
{
    const int S = m.num_states();
    const int A = m.num_actions();
    out << "cmdp " << S << ' ' << A << ' ' << m.horizon() << ' ' << detail::format_double(m.gamma_r()) << ' '
        << detail::format_double(m.gamma_g()) << ' ' << m.initial_state() << '\n';
    out << "P\n";
    for (int s = 0; s < S; ++s)
        for (int a = 0; a < A; ++a)
            detail::write_row(out, m.transition_row(s, a));
    auto table = [&](const char* name, const std::vector<double>& t) {
        out << name << '\n';
        for (int s = 0; s < S; ++s)
            detail::write_row(out, std::span<const double>(t.data() + static_cast<std::size_t>(s * A), static_cast<std::size_t>(A)));
    };
    table("R", m.reward_table());
    table("G", m.cost_table());
}

inline void write_environment(std::ostream& out, const Environment& env)
{
    write_cmdp(out, env.cmdp);
    out << "ENV-META\n";
    out << "kind " << env.kind << '\n';
    out << "seed " << env.seed << '\n';
    out << "xi " << detail::format_double(env.xi) << '\n';
    out << "zeta " << (std::isnan(env.zeta) ? std::string("nan") : detail::format_double(env.zeta)) << '\n';
    if (env.kind == "grid") {
        out << "side " << env.side << '\n';
        out << "lengthscale " << detail::format_double(env.lengthscale) << '\n';
        out << "reward_field ";
        detail::write_row(out, env.reward_field);
        out << "safety_field ";
        detail::write_row(out, env.safety_field);
    }
    if (env.kind == "linear") {
        const auto& t = env.features.table;
        out << "features " << t.rows() << ' ' << t.cols() << ' ' << env.features.num_actions << '\n';
        for (Eigen::Index i = 0; i < t.rows(); ++i) {
            const Eigen::RowVectorXd row = t.row(i);
            detail::write_row(out, std::vector<double>(row.data(), row.data() + row.size()));
        }
        out << "theta_r ";
        detail::write_row(out, std::vector<double>(env.theta_r.data(), env.theta_r.data() + env.theta_r.size()));
        out << "theta_g ";
        detail::write_row(out, std::vector<double>(env.theta_g.data(), env.theta_g.data() + env.theta_g.size()));
    }
    if (!env.seed_pairs.empty()) {
        out << "seed_pairs";
        for (const auto& [s, a] : env.seed_pairs)
            out << ' ' << s << ' ' << a;
        out << '\n';
    }
}

/// Reads the cmdp text format. Rows off by at most 1e-6 from summing to one are renormalized;
/// an ENV-META trailer, if present, is parsed into the generator metadata.
inline Environment read_environment(std::istream& in)
{
    detail::LineReader reader{in, 0, {}, false};
    std::string line;
    if (!reader.next(line))
        throw ParseError(0, "empty input: missing 'cmdp' header");
    std::istringstream header(line);
    std::string tag;
    int S = 0, A = 0, H = 0, s1 = 0;
    double gr = 0.0, gg = 0.0;
    if (!(header >> tag >> S >> A >> H >> gr >> gg >> s1) || tag != "cmdp")
        throw ParseError(reader.line_no, "malformed header; expected 'cmdp S A H gamma_r gamma_g s1'");
    if (S <= 0 || A <= 0 || H <= 0)
        throw ParseError(reader.line_no, "header sizes must be positive");

    auto block = [&](const std::string& name, int rows, int cols) {
        if (!reader.next(line))
            throw ParseError(reader.line_no, "unexpected end of input: missing block '" + name + "'");
        if (line != name)
            throw ParseError(reader.line_no, "expected block '" + name + "', got '" + line + "'");
        std::vector<double> values;
        values.reserve(static_cast<std::size_t>(rows * cols));
        for (int r = 0; r < rows; ++r) {
            if (!reader.next(line))
                throw ParseError(reader.line_no, "unexpected end of input in block '" + name + "' (" + std::to_string(r) + " of " + std::to_string(rows) + " rows)");
            const auto row = detail::parse_numbers(line, reader.line_no);
            if (static_cast<int>(row.size()) != cols)
                throw ParseError(reader.line_no, "block '" + name + "': expected " + std::to_string(cols) + " values, got " + std::to_string(row.size()));
            if (name == "P") {
                const double sum = std::accumulate(row.begin(), row.end(), 0.0);
                const double err = std::abs(sum - 1.0);
                if (err > 1e-6)
                    throw ParseError(reader.line_no, "transition row sums to " + detail::format_double(sum));
                for (double v : row)
                    values.push_back(err > 1e-12 ? v / sum : v);
            } else {
                values.insert(values.end(), row.begin(), row.end());
            }
        }
        return values;
    };
    auto P = block("P", S * A, S);
    auto R = block("R", S, A);
    auto G = block("G", S, A);
    const std::size_t cmdp_line = reader.line_no;
    std::optional<Environment> env;
    try {
        env.emplace(Cmdp(S, A, H, std::move(P), std::move(R), std::move(G), s1, gr, gg));
    } catch (const PreconditionError& e) {
        throw ParseError(cmdp_line, e.what());
    }

    if (!reader.next(line))
        return *env;
    if (line != "ENV-META")
        throw ParseError(reader.line_no, "unexpected content after block 'G': '" + line + "'");
    while (reader.next(line)) {
        std::istringstream ss(line);
        std::string key;
        ss >> key;
        std::string rest;
        std::getline(ss, rest);
        const std::size_t at = reader.line_no;
        auto numbers = [&]() { return detail::parse_numbers(rest, at); };
        if (key == "kind") {
            env->kind = std::string(detail::trim(rest));
        } else if (key == "seed") {
            env->seed = static_cast<std::uint64_t>(std::stoull(std::string(detail::trim(rest))));
        } else if (key == "xi") {
            env->xi = numbers().at(0);
        } else if (key == "zeta") {
            const auto t = detail::trim(rest);
            env->zeta = t == "nan" ? std::numeric_limits<double>::quiet_NaN() : numbers().at(0);
        } else if (key == "side") {
            env->side = static_cast<int>(numbers().at(0));
        } else if (key == "lengthscale") {
            env->lengthscale = numbers().at(0);
        } else if (key == "reward_field") {
            env->reward_field = numbers();
        } else if (key == "safety_field") {
            env->safety_field = numbers();
        } else if (key == "features") {
            const auto dims = numbers();
            if (dims.size() != 3)
                throw ParseError(at, "features header needs rows, cols and num_actions");
            const auto rows = static_cast<Eigen::Index>(dims[0]);
            const auto cols = static_cast<Eigen::Index>(dims[1]);
            Eigen::MatrixXd t(rows, cols);
            for (Eigen::Index i = 0; i < rows; ++i) {
                if (!reader.next(line))
                    throw ParseError(reader.line_no, "unexpected end of input in block 'features'");
                const auto row = detail::parse_numbers(line, reader.line_no);
                if (static_cast<Eigen::Index>(row.size()) != cols)
                    throw ParseError(reader.line_no, "features row has the wrong length");
                for (Eigen::Index j = 0; j < cols; ++j)
                    t(i, j) = row[static_cast<std::size_t>(j)];
            }
            env->features = FeatureMap{t, static_cast<int>(dims[2])};
        } else if (key == "theta_r" || key == "theta_g") {
            const auto v = numbers();
            (key == "theta_r" ? env->theta_r : env->theta_g) = Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
        } else if (key == "seed_pairs") {
            const auto v = numbers();
            if (v.size() % 2 != 0)
                throw ParseError(at, "seed_pairs needs an even number of entries");
            for (std::size_t i = 0; i < v.size(); i += 2)
                env->seed_pairs.emplace_back(static_cast<int>(v[i]), static_cast<int>(v[i + 1]));
        } else {
            throw ParseError(at, "unknown ENV-META key '" + key + "'");
        }
    }
    return *env;
}

inline Cmdp read_cmdp(std::istream& in) { return read_environment(in).cmdp; }

} // namespace mase
