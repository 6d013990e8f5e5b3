#pragma once

#include "discor/mdp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace discor {

/// One row of the per-iteration trace.
struct RunRecord {
    long iter = 0;
    double value_error = 0.0;
    double eval_return = 0.0;
    double norm_return = 0.0;
    double cosine_sim = 0.0;
    double w_mean = 1.0;
    double w_min = 1.0;
    double w_max = 1.0;
    double tau = 0.0;
    double c1 = 0.0;
    double c2 = 0.0;
    double slack_thm3 = 0.0;
    double slack_lemma = 0.0;
    double dtv = 0.0;
    double wall_ms = 0.0;
    double sup_error = 0.0;   ///< ||Q_k - Q*||_inf, not part of the CSV schema
};

/// Cosine between the per-pair error increase |q_next - q*| - |q_prev - q*|
/// and d. Zero when the increase vanishes.
inline double corrective_feedback_cosine(const QTable& q_prev, const QTable& q_next, const QTable& q_star,
                                         const DistSA& d) {
    const Vector inc = (as_pairs(q_next) - as_pairs(q_star)).cwiseAbs() - (as_pairs(q_prev) - as_pairs(q_star)).cwiseAbs();
    const double n = inc.norm() * d.norm();
    if (n == 0.0) return 0.0;
    return std::clamp(inc.dot(d) / n, -1.0, 1.0);
}

/// Same with d folded to states: the increase is summed over actions.
inline double corrective_feedback_cosine_states(const QTable& q_prev, const QTable& q_next, const QTable& q_star,
                                                const Vector& d_states) {
    const Vector inc = ((q_next - q_star).cwiseAbs() - (q_prev - q_star).cwiseAbs()).rowwise().sum();
    const double n = inc.norm() * d_states.norm();
    if (n == 0.0) return 0.0;
    return std::clamp(inc.dot(d_states) / n, -1.0, 1.0);
}

/// Smallest k with gamma^k <= 1 - gamma, i.e. ceil(log(1-gamma) / log(gamma)).
inline long k0_threshold(double discount) {
    if (!(discount > 0.0 && discount < 1.0)) throw InvalidArgument("k0_threshold: discount must lie in (0,1)");
    return static_cast<long>(std::ceil(std::log(1.0 - discount) / std::log(discount)));
}

/// alpha = (2 R_max / (1 - gamma)) * max_s D_TV(pi, pi_star), with pi_star the
/// optimal policy closest to pi when Q* has ties.
inline double policy_gap_term(const TabularMdp& mdp, const Policy& pi, const QTable& q_star) {
    return 2.0 * mdp.r_max() / (1.0 - mdp.discount) * distance_to_optimal(mdp, pi, q_star);
}

struct Slack {
    double value = std::numeric_limits<double>::infinity();
    Index pair = -1;   ///< argmin pair
};

inline Slack min_slack(const Vector& margin) {
    Slack s;
    if (margin.size() == 0) return s;
    s.value = margin.minCoeff(&s.pair);
    return s;
}

/// Right-hand side minus left-hand side of the one-step error recursion
///
///   |Q_k - Q*| <= |Q_k - B*Q_{k-1}| + gamma P^{pi_{k-1}} |Q_{k-1} - Q*| + alpha(pi_{k-1})
///
/// with pi_{k-1} the greedy policy of Q_{k-1}, per pair.
inline Vector lemma_b1_margin(const TabularMdp& mdp, const QTable& q_prev, const QTable& q_next,
                              const QTable& q_star) {
    const auto prev_actions = greedy_actions(q_prev);
    const Policy pi_prev = greedy_policy(q_prev);
    const Vector bellman = (as_pairs(q_next) - as_pairs(bellman_backup(mdp, q_prev))).cwiseAbs();
    const Vector prev_err = (as_pairs(q_prev) - as_pairs(q_star)).cwiseAbs();
    const Vector rhs = bellman + mdp.discount * apply_backup(mdp, prev_actions, prev_err) +
                       Vector::Constant(bellman.size(), policy_gap_term(mdp, pi_prev, q_star));
    const Vector lhs = (as_pairs(q_next) - as_pairs(q_star)).cwiseAbs();
    return rhs - lhs;
}

inline Slack lemma_b1_slack(const TabularMdp& mdp, const QTable& q_prev, const QTable& q_next,
                            const QTable& q_star) {
    return min_slack(lemma_b1_margin(mdp, q_prev, q_next, q_star));
}

/// Delta_k + sum_i gamma^{k-i} alpha_i - |Q_k - Q*| per pair.
inline Vector thm3_margin(const QTable& delta, double alpha_sum, const QTable& q, const QTable& q_star) {
    return as_pairs(delta) + Vector::Constant(delta.size(), alpha_sum) - (as_pairs(q) - as_pairs(q_star)).cwiseAbs();
}

/// Running offset A_k = gamma A_{k-1} + alpha_k = sum_{i<=k} gamma^{k-i} alpha_i.
struct AlphaSum {
    double discount = 0.95;
    double value = 0.0;
    double push(double alpha) { return value = discount * value + alpha; }
};

/// First iteration whose slack falls below the tolerance, counting only k >= k0.
struct BoundCheck {
    long k0 = 0;
    double worst = std::numeric_limits<double>::infinity();
    long worst_iter = -1;
    long first_violation = -1;
    long violations = 0;
};

inline BoundCheck check_slack_series(const std::vector<double>& slack_by_iter, long k0, double tolerance) {
    BoundCheck c;
    c.k0 = k0;
    for (std::size_t i = 0; i < slack_by_iter.size(); ++i) {
        const long k = long(i) + 1;
        if (k < k0) continue;
        const double s = slack_by_iter[i];
        if (s < c.worst) {
            c.worst = s;
            c.worst_iter = k;
        }
        if (!(s >= -tolerance)) {
            ++c.violations;
            if (c.first_violation < 0) c.first_violation = k;
        }
    }
    return c;
}

struct ScaleCheck {
    double value = 1.0;
    bool overflow = false;
};

/// (gamma (1 - p_bar))^{-H}.
inline ScaleCheck lower_bound_scale_check(double discount, double p_bar, long horizon) {
    if (!(discount > 0.0 && discount < 1.0)) throw InvalidArgument("lower_bound_scale_check: discount in (0,1)");
    if (!(p_bar >= 0.0 && p_bar < 0.5)) throw InvalidArgument("lower_bound_scale_check: p_bar in [0,0.5)");
    if (horizon < 0) throw InvalidArgument("lower_bound_scale_check: horizon must be >= 0");
    ScaleCheck r;
    const double log_value = -double(horizon) * (std::log(discount) + std::log1p(-p_bar));
    r.value = std::exp(log_value);
    r.overflow = !std::isfinite(r.value);
    if (r.overflow) r.value = std::numeric_limits<double>::infinity();
    return r;
}

} // namespace discor
