#pragma once

#include "discor/types.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace discor {

/// Finite MDP with dense dynamics.
///
/// Terminal states are zero-reward absorbing self-loops, and their value is
/// pinned to zero by every backup in this library. Episode termination
/// (tree leaves, grid goals) is expressed by transitioning into such a state.
struct TabularMdp {
    Index num_states = 0;
    Index num_actions = 0;
    Matrix transition;              ///< [S*A][S], row s*A+a is T(.|s,a)
    Matrix reward;                  ///< [S][A]
    double discount = 0.95;
    Vector initial;                 ///< rho_0 over S
    std::vector<bool> terminal;     ///< absorbing flags over S

    Index num_pairs() const { return num_states * num_actions; }
    Index pair(Index s, Index a) const { return s * num_actions + a; }

    /// Largest |r(s,a)| over non-terminal states.
    double r_max() const {
        double m = 0.0;
        for (Index s = 0; s < num_states; ++s) {
            if (terminal[s]) continue;
            m = std::max(m, reward.row(s).cwiseAbs().maxCoeff());
        }
        return m;
    }

    /// Throws InvalidArgument describing the first broken invariant.
    void validate(double tol = 1e-12) const {
        auto fail = [](const std::string& msg) { throw InvalidArgument("invalid MDP: " + msg); };
        if (num_states <= 0 || num_actions <= 0) fail("empty state or action set");
        if (transition.rows() != num_pairs() || transition.cols() != num_states)
            fail("transition must be [S*A][S]");
        if (reward.rows() != num_states || reward.cols() != num_actions)
            fail("reward must be [S][A]");
        if (initial.size() != num_states) fail("initial distribution must have S entries");
        if (static_cast<Index>(terminal.size()) != num_states) fail("terminal flags must have S entries");
        if (!(discount > 0.0 && discount < 1.0)) fail("discount must lie in (0,1)");
        if (!transition.allFinite() || !reward.allFinite() || !initial.allFinite())
            fail("non-finite entries");
        for (Index i = 0; i < num_pairs(); ++i) {
            if (transition.row(i).minCoeff() < 0.0)
                fail("negative transition probability in row " + std::to_string(i));
            if (std::abs(transition.row(i).sum() - 1.0) > tol)
                fail("transition row " + std::to_string(i) + " does not sum to 1");
        }
        if (initial.minCoeff() < 0.0 || std::abs(initial.sum() - 1.0) > tol)
            fail("initial distribution is not a probability vector");
        for (Index s = 0; s < num_states; ++s) {
            if (!terminal[s]) continue;
            for (Index a = 0; a < num_actions; ++a) {
                if (transition(pair(s, a), s) != 1.0 || reward(s, a) != 0.0)
                    fail("terminal state " + std::to_string(s) + " is not a zero-reward self-loop");
            }
        }
    }
};

/// Stochastic policy pi(a|s), rows are states.
struct Policy {
    Matrix probs;

    Index num_states() const { return probs.rows(); }
    Index num_actions() const { return probs.cols(); }

    /// Smallest action probability over all states (p-bar).
    double min_prob() const { return probs.minCoeff(); }

    void validate(double tol = 1e-12) const {
        for (Index s = 0; s < probs.rows(); ++s) {
            if (probs.row(s).minCoeff() < 0.0 || std::abs(probs.row(s).sum() - 1.0) > tol)
                throw InvalidArgument("policy row " + std::to_string(s) + " is not a distribution");
        }
    }
};

/// V(s) = max_a q(s,a), zero at terminal states.
inline Vector state_values(const TabularMdp& mdp, const QTable& q) {
    Vector v = q.rowwise().maxCoeff();
    for (Index s = 0; s < mdp.num_states; ++s)
        if (mdp.terminal[s]) v(s) = 0.0;
    return v;
}

/// (B*q)(s,a) = r(s,a) + gamma * sum_s' T(s'|s,a) max_a' q(s',a').
inline QTable bellman_backup(const TabularMdp& mdp, const QTable& q) {
    const Vector v = state_values(mdp, q);
    const Vector next = mdp.transition * v;
    QTable out = mdp.reward + mdp.discount * pairs_to_table(next, mdp.num_states, mdp.num_actions);
    for (Index s = 0; s < mdp.num_states; ++s)
        if (mdp.terminal[s]) out.row(s).setZero();
    return out;
}

inline double sup_norm(const Matrix& m) { return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff(); }

/// Optimal action values by successive backups, started from zero.
inline QTable value_iteration(const TabularMdp& mdp, double tol = 1e-10, long max_sweeps = 100000) {
    if (!(tol > 0.0)) throw InvalidArgument("value_iteration: tol must be positive");
    QTable q = QTable::Zero(mdp.num_states, mdp.num_actions);
    double residual = std::numeric_limits<double>::infinity();
    for (long sweep = 0; sweep < max_sweeps; ++sweep) {
        QTable next = bellman_backup(mdp, q);
        residual = sup_norm(next - q);
        q.swap(next);
        if (residual <= tol) {
            // q now holds B*q_prev; one more check against the returned table
            residual = sup_norm(bellman_backup(mdp, q) - q);
            if (residual <= tol) return q;
        }
    }
    throw ConvergenceError("value_iteration did not converge, residual " + std::to_string(residual),
                           residual);
}

/// Deterministic greedy policy; ties go to the lowest action index.
inline Policy greedy_policy(const QTable& q) {
    Policy pi{Matrix::Zero(q.rows(), q.cols())};
    for (Index s = 0; s < q.rows(); ++s) {
        Index best = 0;
        for (Index a = 1; a < q.cols(); ++a)
            if (q(s, a) > q(s, best)) best = a;
        pi.probs(s, best) = 1.0;
    }
    return pi;
}

/// Index of the greedy action in every state (lowest index on ties).
inline std::vector<Index> greedy_actions(const QTable& q) {
    std::vector<Index> out(q.rows());
    for (Index s = 0; s < q.rows(); ++s) {
        Index best = 0;
        for (Index a = 1; a < q.cols(); ++a)
            if (q(s, a) > q(s, best)) best = a;
        out[s] = best;
    }
    return out;
}

/// pi(a|s) proportional to exp(q(s,a) / temperature).
inline Policy boltzmann_policy(const QTable& q, double temperature) {
    if (!(temperature > 0.0)) throw InvalidArgument("boltzmann_policy: temperature must be positive");
    Policy pi{Matrix(q.rows(), q.cols())};
    for (Index s = 0; s < q.rows(); ++s) {
        const double m = q.row(s).maxCoeff();
        double z = 0.0;
        for (Index a = 0; a < q.cols(); ++a) {
            pi.probs(s, a) = std::exp((q(s, a) - m) / temperature);
            z += pi.probs(s, a);
        }
        pi.probs.row(s) /= z;
    }
    return pi;
}

/// P^pi over pairs: entry ((s,a),(s',a')) = T(s'|s,a) pi(a'|s').
inline Matrix policy_transition_matrix(const TabularMdp& mdp, const Policy& pi) {
    const Index S = mdp.num_states, A = mdp.num_actions;
    Matrix p(S * A, S * A);
    for (Index i = 0; i < S * A; ++i)
        for (Index s2 = 0; s2 < S; ++s2)
            for (Index a2 = 0; a2 < A; ++a2)
                p(i, s2 * A + a2) = mdp.transition(i, s2) * pi.probs(s2, a2);
    return p;
}

/// P^pi with columns of terminal next-states zeroed: the operator that
/// propagates bootstrapped quantities, since terminal values are pinned to 0.
inline Matrix backup_matrix(const TabularMdp& mdp, const Policy& pi) {
    Matrix p = policy_transition_matrix(mdp, pi);
    for (Index s = 0; s < mdp.num_states; ++s) {
        if (!mdp.terminal[s]) continue;
        for (Index a = 0; a < mdp.num_actions; ++a) p.col(mdp.pair(s, a)).setZero();
    }
    return p;
}

/// Apply the bootstrap operator to a pair field without materialising it:
/// out(s,a) = sum_s' T(s'|s,a) field(s', greedy(s')), terminal s' excluded.
inline Vector apply_backup(const TabularMdp& mdp, const std::vector<Index>& next_actions,
                           const Vector& field) {
    Vector at_next(mdp.num_states);
    for (Index s = 0; s < mdp.num_states; ++s)
        at_next(s) = mdp.terminal[s] ? 0.0 : field(mdp.pair(s, next_actions[s]));
    return mdp.transition * at_next;
}

/// State-to-state chain under pi: P(s'|s) = sum_a pi(a|s) T(s'|s,a).
inline Matrix state_transition_matrix(const TabularMdp& mdp, const Policy& pi) {
    const Index S = mdp.num_states, A = mdp.num_actions;
    Matrix p = Matrix::Zero(S, S);
    for (Index s = 0; s < S; ++s)
        for (Index a = 0; a < A; ++a)
            if (pi.probs(s, a) != 0.0) p.row(s) += pi.probs(s, a) * mdp.transition.row(s * A + a);
    return p;
}

/// Discounted state marginal d^pi(s) = (1-gamma) rho0^T (I - gamma P_pi)^{-1}.
inline Vector discounted_state_marginal(const TabularMdp& mdp, const Policy& pi) {
    const Index S = mdp.num_states;
    const Matrix p = state_transition_matrix(mdp, pi);
    Eigen::MatrixXd system = Eigen::MatrixXd::Identity(S, S) - mdp.discount * Eigen::MatrixXd(p);
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(system.transpose());
    Vector d = lu.solve((1.0 - mdp.discount) * mdp.initial);
    if (!d.allFinite()) throw Error("discounted_state_marginal: singular system");
    return d;
}

/// Discounted state-action marginal d^pi(s,a) = d^pi(s) pi(a|s).
///
/// Solved at the state level, which is algebraically the same linear system
/// as (1-gamma) (rho0 pi)^T (I - gamma P^pi)^{-1} over pairs.
inline DistSA discounted_sa_marginal(const TabularMdp& mdp, const Policy& pi) {
    const Vector ds = discounted_state_marginal(mdp, pi);
    DistSA d(mdp.num_pairs());
    for (Index s = 0; s < mdp.num_states; ++s)
        for (Index a = 0; a < mdp.num_actions; ++a) d(mdp.pair(s, a)) = ds(s) * pi.probs(s, a);
    // clip round-off negatives from the solve
    return d.cwiseMax(0.0);
}

/// Expected absolute error to q_star under d.
inline double value_error(const QTable& q, const QTable& q_star, const DistSA& d) {
    return d.dot((as_pairs(q) - as_pairs(q_star)).cwiseAbs());
}

/// max over non-terminal s of (1/2) sum_a |pi(a|s) - pi_star(a|s)|.
inline double total_variation(const TabularMdp& mdp, const Policy& pi, const Policy& pi_star) {
    double worst = 0.0;
    for (Index s = 0; s < mdp.num_states; ++s) {
        if (mdp.terminal[s]) continue;
        worst = std::max(worst, 0.5 * (pi.probs.row(s) - pi_star.probs.row(s)).cwiseAbs().sum());
    }
    return worst;
}

/// D_TV from pi to the closest optimal policy: the largest mass pi puts on
/// actions more than `tol` below max_a q_star(s,a), over non-terminal s.
/// Equals total_variation(pi, greedy(q_star)) when the optimum is unique.
inline double distance_to_optimal(const TabularMdp& mdp, const Policy& pi, const QTable& q_star, double tol = 1e-8) {
    double worst = 0.0;
    for (Index s = 0; s < mdp.num_states; ++s) {
        if (mdp.terminal[s]) continue;
        const double best = q_star.row(s).maxCoeff();
        double off = 0.0;
        for (Index a = 0; a < mdp.num_actions; ++a)
            if (q_star(s, a) < best - tol) off += pi.probs(s, a);
        worst = std::max(worst, off);
    }
    return worst;
}

namespace detail {

inline void write_row(std::ostream& os, const double* v, Index n) {
    char buf[32];
    for (Index i = 0; i < n; ++i) {
        std::snprintf(buf, sizeof buf, "%.17g", v[i]);
        if (i) os << ' ';
        os << buf;
    }
    os << '\n';
}

} // namespace detail

/// Plain-text MDP format:
///
///     # discor-mdp 1
///     S A gamma
///     S lines of A rewards
///     S*A lines of S transition probabilities (row s*A+a)
///     one line of S initial probabilities
///     one line of S terminal flags (0/1)
///
/// Numbers are written with 17 significant digits, so reading back is exact.
inline void write_mdp(std::ostream& os, const TabularMdp& mdp) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", mdp.discount);
    os << "# discor-mdp 1\n" << mdp.num_states << ' ' << mdp.num_actions << ' ' << buf << '\n';
    for (Index s = 0; s < mdp.num_states; ++s) detail::write_row(os, mdp.reward.row(s).data(), mdp.num_actions);
    for (Index i = 0; i < mdp.num_pairs(); ++i)
        detail::write_row(os, mdp.transition.row(i).data(), mdp.num_states);
    detail::write_row(os, mdp.initial.data(), mdp.num_states);
    for (Index s = 0; s < mdp.num_states; ++s) os << (s ? " " : "") << (mdp.terminal[s] ? 1 : 0);
    os << '\n';
}

inline TabularMdp read_mdp(std::istream& is) {
    std::string line;
    std::stringstream body;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#') continue;
        body << line << '\n';
    }
    auto need = [&](auto& x, const char* what) {
        if (!(body >> x)) throw InvalidArgument(std::string("read_mdp: expected ") + what);
    };
    TabularMdp mdp;
    need(mdp.num_states, "S");
    need(mdp.num_actions, "A");
    need(mdp.discount, "gamma");
    if (mdp.num_states <= 0 || mdp.num_actions <= 0) throw InvalidArgument("read_mdp: bad header");
    mdp.reward.resize(mdp.num_states, mdp.num_actions);
    for (Index i = 0; i < mdp.reward.size(); ++i) need(mdp.reward.data()[i], "reward");
    mdp.transition.resize(mdp.num_pairs(), mdp.num_states);
    for (Index i = 0; i < mdp.transition.size(); ++i) need(mdp.transition.data()[i], "transition");
    mdp.initial.resize(mdp.num_states);
    for (Index i = 0; i < mdp.num_states; ++i) need(mdp.initial(i), "initial");
    mdp.terminal.assign(mdp.num_states, false);
    for (Index i = 0; i < mdp.num_states; ++i) {
        int flag = 0;
        need(flag, "terminal flag");
        mdp.terminal[i] = flag != 0;
    }
    mdp.validate();
    return mdp;
}

} // namespace discor
