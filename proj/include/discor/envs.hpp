#pragma once

#include "discor/mdp.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace discor {

/// Linear features over state-action pairs, plus the per-state observations
/// they were built from (the input of neural approximators).
struct FeatureMap {
    Matrix phi;            ///< [S*A][d], unit-norm rows
    Matrix observations;   ///< [S][obs_dim]; may be empty
    double epsilon = 0.0;  ///< verified bound on max |I - phi phi^T|, 0 when not constructed against one
    std::uint64_t seed = 0;
    Index block_dim = 0;   ///< per-level block size for tree features

    Index dim() const { return phi.cols(); }
};

/// Largest entry of |I - phi phi^T|, i.e. the worst pairwise overlap.
inline double orthogonality_gap(const Matrix& phi) {
    Eigen::MatrixXd gram = Eigen::MatrixXd(phi) * Eigen::MatrixXd(phi).transpose();
    gram.diagonal().array() -= 1.0;
    return gram.cwiseAbs().maxCoeff();
}

/// Best single linear fit of q_star; returns the sup-norm residual delta.
inline double assumption_residual(const FeatureMap& features, const QTable& q_star) {
    const Eigen::MatrixXd phi = features.phi;
    const Vector target = as_pairs(q_star);
    Vector w;
    if (phi.cols() <= phi.rows()) {
        w = phi.colPivHouseholderQr().solve(target);
    } else {
        // minimum-norm solution through the pair-space Gram matrix
        Eigen::MatrixXd gram = phi * phi.transpose();
        gram.diagonal().array() += 1e-12;
        w = phi.transpose() * gram.ldlt().solve(target);
    }
    return (phi * w - target).cwiseAbs().maxCoeff();
}

namespace detail {

inline Vector random_unit(std::mt19937_64& rng, Index n) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Vector v(n);
    for (Index i = 0; i < n; ++i) v(i) = normal(rng);
    return v / v.norm();
}

/// phi(s,a) = obs(s) placed in the block of action a.
inline Matrix action_blocks(const Matrix& obs, Index actions) {
    const Index S = obs.rows(), d = obs.cols();
    Matrix phi = Matrix::Zero(S * actions, d * actions);
    for (Index s = 0; s < S; ++s)
        for (Index a = 0; a < actions; ++a) phi.block(s * actions + a, a * d, 1, d) = obs.row(s);
    return phi;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Gridworlds

enum class RewardStyle { dense, sparse };
enum class ObsStyle { onehot, random, smooth };

struct GridSpec {
    Index width = 16;
    Index height = 16;
    RewardStyle reward_style = RewardStyle::dense;
    ObsStyle obs_style = ObsStyle::onehot;
    Index obs_dim = 32;          ///< ignored for onehot, which uses one slot per cell
    double entropy_coeff = 0.01; ///< metadata only
    std::uint64_t seed = 0;
    double discount = 0.95;
};

/// Grid actions; ties in greedy policies prefer the lower index.
enum GridAction : Index { right = 0, down = 1, left = 2, up = 3 };

struct GridWorld {
    TabularMdp mdp;
    FeatureMap features;
    Index goal = 0;
};

inline Index grid_move(const GridSpec& g, Index cell, Index action) {
    Index x = cell % g.width, y = cell / g.width;
    switch (action) {
        case right: x = std::min(x + 1, g.width - 1); break;
        case down: y = std::min(y + 1, g.height - 1); break;
        case left: x = std::max<Index>(x - 1, 0); break;
        default: y = std::max<Index>(y - 1, 0); break;
    }
    return y * g.width + x;
}

/// Open grid with boundary walls. The goal is the bottom-right cell and is
/// terminal; episodes start uniformly at random in any other cell.
///
/// sparse: reward 1 on entering the goal, 0 otherwise.
/// dense:  reward -manhattan(next, goal) / max_manhattan, in [-1, 0].
inline GridWorld build_gridworld(const GridSpec& spec) {
    if (spec.width <= 0 || spec.height <= 0 || spec.width * spec.height < 2)
        throw InvalidArgument("gridworld needs at least two cells");
    if (spec.obs_style != ObsStyle::onehot && spec.obs_dim < 2)
        throw InvalidArgument("gridworld obs_dim too small for " +
                              std::string(spec.obs_style == ObsStyle::random ? "random" : "smooth") +
                              " observations");

    const Index S = spec.width * spec.height, A = 4;
    GridWorld g;
    g.goal = S - 1;
    TabularMdp& m = g.mdp;
    m.num_states = S;
    m.num_actions = A;
    m.discount = spec.discount;
    m.transition = Matrix::Zero(S * A, S);
    m.reward = Matrix::Zero(S, A);
    m.initial = Vector::Constant(S, 1.0 / double(S - 1));
    m.initial(g.goal) = 0.0;
    m.terminal.assign(S, false);
    m.terminal[g.goal] = true;

    const auto gx = g.goal % spec.width, gy = g.goal / spec.width;
    const double max_dist = static_cast<double>(spec.width - 1 + spec.height - 1);
    for (Index s = 0; s < S; ++s) {
        for (Index a = 0; a < A; ++a) {
            if (m.terminal[s]) {
                m.transition(m.pair(s, a), s) = 1.0;
                continue;
            }
            const Index next = grid_move(spec, s, a);
            m.transition(m.pair(s, a), next) = 1.0;
            if (spec.reward_style == RewardStyle::sparse) {
                m.reward(s, a) = next == g.goal ? 1.0 : 0.0;
            } else {
                const double dist = std::abs(double(next % spec.width) - double(gx)) +
                                    std::abs(double(next / spec.width) - double(gy));
                m.reward(s, a) = -dist / max_dist;
            }
        }
    }

    std::mt19937_64 rng(spec.seed);
    Matrix obs;
    switch (spec.obs_style) {
        case ObsStyle::onehot: obs = Matrix::Identity(S, S); break;
        case ObsStyle::random:
            obs.resize(S, spec.obs_dim);
            for (Index s = 0; s < S; ++s) obs.row(s) = detail::random_unit(rng, spec.obs_dim).transpose();
            break;
        case ObsStyle::smooth: {
            // independent white-noise fields, blurred with a Gaussian kernel
            std::normal_distribution<double> normal(0.0, 1.0);
            Matrix noise(S, spec.obs_dim);
            for (Index i = 0; i < noise.size(); ++i) noise.data()[i] = normal(rng);
            const double sigma = 2.0;
            obs = Matrix::Zero(S, spec.obs_dim);
            for (Index s = 0; s < S; ++s) {
                const double x = double(s % spec.width), y = double(s / spec.width);
                for (Index t = 0; t < S; ++t) {
                    const double dx = x - double(t % spec.width), dy = y - double(t / spec.width);
                    const double k = std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
                    if (k > 1e-6) obs.row(s) += k * noise.row(t);
                }
                obs.row(s).normalize();
            }
            break;
        }
    }
    g.features.observations = obs;
    g.features.phi = detail::action_blocks(obs, A);
    g.features.seed = spec.seed;
    m.validate();
    return g;
}

// ---------------------------------------------------------------------------
// Tree family

/// Full binary tree of depth H with a single rewarding leaf action.
///
/// Tree nodes use heap order (children of n are 2n+1 and 2n+2, level h holds
/// nodes 2^h-1 .. 2^(h+1)-2). Action 0 moves to the left child and action 1
/// to the right one. Leaves sit on level H-1 and both their actions end the
/// episode in one extra absorbing sink state, so the MDP has 2^H states.
struct TreeSpec {
    int depth = 3;
    Index reward_leaf_index = 0;   ///< in [0, 2^(H-1))
    Index reward_action = 0;
    double discount = 0.95;
};

inline Index tree_nodes(int depth) { return (Index{1} << depth) - 1; }
inline Index tree_sink(int depth) { return tree_nodes(depth); }
inline int tree_level(Index node) {
    int h = 0;
    while ((Index{2} << h) - 1 <= node) ++h;
    return h;
}
inline Index tree_leaf_node(const TreeSpec& spec) {
    return (Index{1} << (spec.depth - 1)) - 1 + spec.reward_leaf_index;
}

inline TabularMdp build_tree(const TreeSpec& spec) {
    if (spec.depth < 1 || spec.depth > 20) throw InvalidArgument("tree depth must be in [1, 20]");
    const Index leaves = Index{1} << (spec.depth - 1);
    if (spec.reward_leaf_index < 0 || spec.reward_leaf_index >= leaves)
        throw InvalidArgument("tree reward_leaf_index out of range");
    if (spec.reward_action < 0 || spec.reward_action > 1) throw InvalidArgument("tree reward_action must be 0 or 1");

    const Index nodes = tree_nodes(spec.depth), sink = tree_sink(spec.depth);
    TabularMdp m;
    m.num_states = nodes + 1;
    m.num_actions = 2;
    m.discount = spec.discount;
    m.transition = Matrix::Zero(m.num_pairs(), m.num_states);
    m.reward = Matrix::Zero(m.num_states, 2);
    m.initial = Vector::Zero(m.num_states);
    m.initial(0) = 1.0;
    m.terminal.assign(m.num_states, false);
    m.terminal[sink] = true;
    const Index first_leaf = leaves - 1;
    for (Index n = 0; n < nodes; ++n)
        for (Index a = 0; a < 2; ++a)
            m.transition(m.pair(n, a), n >= first_leaf ? sink : 2 * n + 1 + a) = 1.0;
    for (Index a = 0; a < 2; ++a) m.transition(m.pair(sink, a), sink) = 1.0;
    m.reward(tree_leaf_node(spec), spec.reward_action) = 1.0;
    m.validate();
    return m;
}

/// Level-padded random features for the tree family.
///
/// Every pair on level h gets a random unit vector inside the h-th block of
/// size ceil(8 ln(S*A) / epsilon^2); the sink's two pairs get one private
/// coordinate each. Draws are repeated until max |I - phi phi^T| <= epsilon.
inline FeatureMap build_tree_features(const TreeSpec& spec, double epsilon, std::uint64_t seed,
                                      int max_attempts = 200) {
    if (!(epsilon > 0.0 && epsilon < 1.0)) throw InvalidArgument("tree features: epsilon must lie in (0,1)");
    const TabularMdp probe = build_tree(spec);
    const Index pairs = probe.num_pairs();
    const Index block = static_cast<Index>(std::ceil(8.0 * std::log(double(pairs)) / (epsilon * epsilon)));
    const Index H = spec.depth, nodes = tree_nodes(spec.depth), sink = tree_sink(spec.depth);
    FeatureMap f;
    f.epsilon = epsilon;
    f.seed = seed;
    f.block_dim = block;
    std::mt19937_64 rng(seed);
    for (int attempt = 0; attempt < max_attempts; ++attempt) {
        f.phi = Matrix::Zero(pairs, H * block + 2);
        for (Index n = 0; n < nodes; ++n) {
            const Index h = tree_level(n);
            for (Index a = 0; a < 2; ++a)
                f.phi.block(probe.pair(n, a), h * block, 1, block) = detail::random_unit(rng, block).transpose();
        }
        f.phi(probe.pair(sink, 0), H * block) = 1.0;
        f.phi(probe.pair(sink, 1), H * block + 1) = 1.0;
        if (orthogonality_gap(f.phi) <= epsilon) return f;
    }
    throw Error("tree features: retry budget exhausted, epsilon too small for the block dimension");
}

// ---------------------------------------------------------------------------
// Cliff walk

/// Two rows of `length` cells. The bottom row holds the start (left end), the
/// goal (right end) and cliff cells in between; stepping into the cliff costs
/// -1 and returns to the start. Any action at the goal pays 1 and ends the
/// episode in an absorbing sink.
struct CliffWalk {
    TabularMdp mdp;
    FeatureMap features;
    Index start = 0;
    Index goal = 0;
};

inline CliffWalk build_cliffwalk(Index length, std::uint64_t seed, double discount = 0.95) {
    if (length < 2) throw InvalidArgument("cliffwalk length must be >= 2");
    const GridSpec shape{length, 2};
    const Index cells = 2 * length, sink = cells, A = 4;
    CliffWalk c;
    c.start = length;             // (0, 1)
    c.goal = 2 * length - 1;      // (length-1, 1)
    auto is_cliff = [&](Index cell) { return cell > c.start && cell < c.goal; };
    TabularMdp& m = c.mdp;
    m.num_states = cells + 1;
    m.num_actions = A;
    m.discount = discount;
    m.transition = Matrix::Zero(m.num_pairs(), m.num_states);
    m.reward = Matrix::Zero(m.num_states, A);
    m.initial = Vector::Zero(m.num_states);
    m.initial(c.start) = 1.0;
    m.terminal.assign(m.num_states, false);
    m.terminal[sink] = true;
    for (Index s = 0; s < cells; ++s) {
        for (Index a = 0; a < A; ++a) {
            if (s == c.goal) {
                m.transition(m.pair(s, a), sink) = 1.0;
                m.reward(s, a) = 1.0;
                continue;
            }
            Index next = grid_move(shape, s, a);
            if (is_cliff(next)) {
                m.reward(s, a) = -1.0;
                next = c.start;
            }
            m.transition(m.pair(s, a), next) = 1.0;
        }
    }
    for (Index a = 0; a < A; ++a) m.transition(m.pair(sink, a), sink) = 1.0;
    m.validate();

    std::mt19937_64 rng(seed);
    c.features.observations.resize(m.num_states, m.num_states);
    for (Index s = 0; s < m.num_states; ++s)
        c.features.observations.row(s) = detail::random_unit(rng, m.num_states).transpose();
    c.features.phi = detail::action_blocks(c.features.observations, A);
    c.features.seed = seed;
    return c;
}

// ---------------------------------------------------------------------------
// Random MDPs (test fixtures and bound checks)

inline TabularMdp random_mdp(Index states, Index actions, std::uint64_t seed, double discount = 0.9,
                             Index branching = 3, Index terminal_states = 0) {
    if (states < 1 || actions < 1 || branching < 1) throw InvalidArgument("random_mdp: bad sizes");
    if (terminal_states >= states) throw InvalidArgument("random_mdp: need a non-terminal state");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::exponential_distribution<double> expo(1.0);
    std::uniform_int_distribution<Index> pick(0, states - 1);
    TabularMdp m;
    m.num_states = states;
    m.num_actions = actions;
    m.discount = discount;
    m.transition = Matrix::Zero(states * actions, states);
    m.reward = Matrix::Zero(states, actions);
    m.initial = Vector::Constant(states, 1.0 / double(states));
    m.terminal.assign(states, false);
    for (Index t = 0; t < terminal_states; ++t) m.terminal[states - 1 - t] = true;
    for (Index s = 0; s < states; ++s) {
        for (Index a = 0; a < actions; ++a) {
            const Index i = m.pair(s, a);
            if (m.terminal[s]) {
                m.transition(i, s) = 1.0;
                continue;
            }
            m.reward(s, a) = 2.0 * unif(rng) - 1.0;
            for (Index b = 0; b < std::min(branching, states); ++b) m.transition(i, pick(rng)) += expo(rng);
            m.transition.row(i) /= m.transition.row(i).sum();
        }
    }
    m.validate(1e-12);
    return m;
}

// ---------------------------------------------------------------------------
// Registry

/// A constructed benchmark: the MDP plus everything a run needs to know about it.
struct Environment {
    std::string id;
    TabularMdp mdp;
    std::optional<FeatureMap> features;
    Index horizon = 100;     ///< evaluation rollout length
    std::map<std::string, std::string> meta;
};

namespace detail {

inline std::map<std::string, std::string> parse_params(const std::string& text) {
    std::map<std::string, std::string> out;
    std::size_t pos = 0;
    while (pos < text.size()) {
        const auto comma = text.find(',', pos);
        const std::string item = text.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
        const auto eq = item.find('=');
        if (eq == std::string::npos) throw InvalidArgument("environment parameter '" + item + "' is not key=value");
        out[item.substr(0, eq)] = item.substr(eq + 1);
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    return out;
}

inline long to_long(const std::string& v, const std::string& what) {
    try {
        std::size_t used = 0;
        const long x = std::stol(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw InvalidArgument("expected an integer for " + what + ", got '" + v + "'");
    }
}

inline double to_double(const std::string& v, const std::string& what) {
    try {
        std::size_t used = 0;
        const double x = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw InvalidArgument("expected a number for " + what + ", got '" + v + "'");
    }
}

} // namespace detail

/// Tree features use this epsilon unless the id carries `eps=`.
inline constexpr double default_tree_epsilon = 0.3;

/// Builds an environment from its registry id:
///
///   grid<N>[x<M>]{onehot,randomobs,smoothobs,onehotsparse,randomsparse,smoothsparse}
///   tree:H=<depth>[,leaf=<i>][,action=<a>][,eps=<epsilon>]
///   cliffwalk:<length>
///   random:S=<states>,A=<actions>[,branch=<k>][,terminal=<n>][,dim=<obs dim>]
///
/// `seed` drives every random choice (observations, features, default leaf).
/// A non-empty `discount` overrides the environment default of 0.95.
inline Environment make_environment(const std::string& id, std::uint64_t seed,
                                    std::optional<double> discount = std::nullopt) {
    Environment env;
    env.id = id;
    const double gamma = discount.value_or(0.95);
    if (id.rfind("grid", 0) == 0) {
        std::size_t pos = 4;
        auto digits = [&]() {
            const std::size_t begin = pos;
            while (pos < id.size() && std::isdigit(static_cast<unsigned char>(id[pos]))) ++pos;
            if (begin == pos) throw InvalidArgument("unknown environment id '" + id + "'");
            return detail::to_long(id.substr(begin, pos - begin), "grid size");
        };
        GridSpec spec;
        spec.width = digits();
        spec.height = spec.width;
        if (pos < id.size() && id[pos] == 'x') {
            ++pos;
            spec.height = digits();
        }
        const std::string style = id.substr(pos);
        static const std::map<std::string, std::pair<ObsStyle, RewardStyle>> styles = {
            {"onehot", {ObsStyle::onehot, RewardStyle::dense}},
            {"randomobs", {ObsStyle::random, RewardStyle::dense}},
            {"smoothobs", {ObsStyle::smooth, RewardStyle::dense}},
            {"onehotsparse", {ObsStyle::onehot, RewardStyle::sparse}},
            {"randomsparse", {ObsStyle::random, RewardStyle::sparse}},
            {"smoothsparse", {ObsStyle::smooth, RewardStyle::sparse}},
        };
        const auto it = styles.find(style);
        if (it == styles.end()) throw InvalidArgument("unknown gridworld style '" + style + "' in '" + id + "'");
        spec.obs_style = it->second.first;
        spec.reward_style = it->second.second;
        spec.seed = seed;
        spec.discount = gamma;
        GridWorld g = build_gridworld(spec);
        env.mdp = std::move(g.mdp);
        env.features = std::move(g.features);
        env.horizon = 4 * (spec.width + spec.height);
        env.meta["entropy_coeff"] = std::to_string(spec.entropy_coeff);
        return env;
    }
    const auto colon = id.find(':');
    const std::string kind = id.substr(0, colon);
    const std::string params = colon == std::string::npos ? std::string() : id.substr(colon + 1);
    if (kind == "tree") {
        auto p = detail::parse_params(params);
        if (!p.count("H")) throw InvalidArgument("tree id needs H=<depth>: '" + id + "'");
        TreeSpec spec;
        spec.depth = static_cast<int>(detail::to_long(p["H"], "tree depth"));
        if (spec.depth < 1 || spec.depth > 20) throw InvalidArgument("tree depth must be in [1, 20]");
        const Index leaves = Index{1} << (spec.depth - 1);
        spec.reward_leaf_index =
            p.count("leaf") ? detail::to_long(p["leaf"], "tree leaf") : Index(seed % std::uint64_t(leaves));
        spec.reward_action = p.count("action") ? detail::to_long(p["action"], "tree action") : 0;
        spec.discount = gamma;
        const double eps = p.count("eps") ? detail::to_double(p["eps"], "tree eps") : default_tree_epsilon;
        env.mdp = build_tree(spec);
        env.features = build_tree_features(spec, eps, seed);
        env.horizon = spec.depth;
        env.meta["reward_leaf"] = std::to_string(spec.reward_leaf_index);
        return env;
    }
    if (kind == "cliffwalk") {
        const Index length = params.empty() ? 8 : detail::to_long(params, "cliffwalk length");
        CliffWalk c = build_cliffwalk(length, seed, gamma);
        env.mdp = std::move(c.mdp);
        env.features = std::move(c.features);
        env.horizon = 8 * length;
        return env;
    }
    if (kind == "random") {
        auto p = detail::parse_params(params);
        const Index S = p.count("S") ? detail::to_long(p["S"], "random S") : 10;
        const Index A = p.count("A") ? detail::to_long(p["A"], "random A") : 2;
        const Index branch = p.count("branch") ? detail::to_long(p["branch"], "random branch") : 3;
        const Index term = p.count("terminal") ? detail::to_long(p["terminal"], "random terminal") : 0;
        const Index dim = p.count("dim") ? detail::to_long(p["dim"], "random dim") : std::max<Index>(2, S / 2);
        if (dim < 1) throw InvalidArgument("random dim must be positive");
        env.mdp = random_mdp(S, A, seed, gamma, branch, term);
        env.horizon = 50;
        std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
        FeatureMap f;
        f.observations.resize(S, dim);
        for (Index s = 0; s < S; ++s) f.observations.row(s) = detail::random_unit(rng, dim).transpose();
        f.phi = detail::action_blocks(f.observations, A);
        f.seed = seed;
        env.features = std::move(f);
        return env;
    }
    throw InvalidArgument("unknown environment id '" + id + "'");
}

} // namespace discor
