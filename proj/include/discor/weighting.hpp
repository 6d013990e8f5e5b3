#pragma once

#include "discor/approximators.hpp"
#include "discor/mdp.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

namespace discor {

enum class Scheme { uniform, onpolicy, replay, per, discor, discor_oracle, optimal_p };

inline const char* scheme_name(Scheme s) {
    switch (s) {
        case Scheme::uniform: return "uniform";
        case Scheme::onpolicy: return "onpolicy";
        case Scheme::replay: return "replay";
        case Scheme::per: return "per";
        case Scheme::discor: return "discor";
        case Scheme::discor_oracle: return "discor-oracle";
        default: return "optimal-p";
    }
}

inline Scheme parse_scheme(const std::string& name) {
    for (Scheme s : {Scheme::uniform, Scheme::onpolicy, Scheme::replay, Scheme::per, Scheme::discor,
                     Scheme::discor_oracle, Scheme::optimal_p})
        if (name == scheme_name(s)) return s;
    throw InvalidArgument("unknown scheme '" + name +
                          "' (expected uniform, onpolicy, replay, per, discor, discor-oracle or optimal-p)");
}

inline bool needs_oracle(Scheme s) { return s == Scheme::discor_oracle || s == Scheme::optimal_p; }

/// Rescales non-negative weights to batch mean 1. An all-zero vector becomes all ones.
inline Vector normalize_mean_one(const Vector& u) {
    if (u.size() == 0) return u;
    const double sum = u.sum();
    if (!(sum > 0.0) || !std::isfinite(sum)) return Vector::Ones(u.size());
    return u * (double(u.size()) / sum);
}

/// Rescales non-negative mass to sum 1; all-zero mass becomes uniform.
inline Vector normalize_sum_one(const Vector& u) {
    const double sum = u.sum();
    if (!(sum > 0.0) || !std::isfinite(sum)) return Vector::Constant(u.size(), 1.0 / double(u.size()));
    return u / sum;
}

// ---------------------------------------------------------------------------
// Error model

/// Delta, the accumulated discounted Bellman error, plus a soft-updated
/// target copy used on the bootstrap side of its own recursion.
struct ErrorModel {
    Approximator model;
    Approximator target;
    double soft_rate = 1.0;   ///< eta; 1 copies the model into the target after every update
    int budget = 200;

    static ErrorModel tabular(Index states, Index actions) {
        TabularApprox t{QTable::Zero(states, actions)};
        return {t, t, 1.0, 0};
    }

    /// Non-negative target-copy values over all pairs.
    QTable target_values() const { return target.evaluate().cwiseMax(0.0); }
    QTable values() const { return model.evaluate().cwiseMax(0.0); }

    /// Fits the model to the batch targets (unweighted) and soft-updates the target copy.
    void update(const std::vector<Index>& pairs, const Vector& delta_targets) {
        ProjectionBatch b{pairs, delta_targets, Vector::Ones(delta_targets.size())};
        model.project(b, budget);
        if (auto t = model.get<TabularApprox>()) t->table = t->table.cwiseMax(0.0);
        if (soft_rate >= 1.0) {
            target = model;
        } else {
            target.set_parameters((1.0 - soft_rate) * target.parameters() + soft_rate * model.parameters());
        }
    }
};

/// Bootstrap values field(s', a_hat) per item, zero for terminal s'.
inline Vector bootstrap_values(const QTable& field, const std::vector<Index>& next_states,
                               const std::vector<Index>& next_actions, const std::vector<char>& next_terminal) {
    Vector out(static_cast<Index>(next_states.size()));
    for (std::size_t i = 0; i < next_states.size(); ++i)
        out(Index(i)) = next_terminal[i] ? 0.0 : field(next_states[i], next_actions[i]);
    return out;
}

/// Delta-hat_i = bellman_abs_error_i + gamma * bootstrap_i, where bootstrap_i
/// is Delta_target(s'_i, a_hat_i) (already zero for terminal s').
inline Vector delta_targets(const Vector& bellman_abs_error, const Vector& bootstrap, double discount) {
    return bellman_abs_error + discount * bootstrap;
}

// ---------------------------------------------------------------------------
// Weight schemes

/// w_i proportional to exp(-gamma * bootstrap_i / tau), batch mean 1.
inline Vector discor_weights(const Vector& bootstrap, double discount, double temperature) {
    if (!(temperature > 0.0)) throw InvalidArgument("discor_weights: temperature must be positive");
    const Vector u = (-discount / temperature * bootstrap.array()).exp().matrix();
    return normalize_mean_one(u);
}

/// Same weights with the true error |q_prev - q_star| on the bootstrap side.
inline Vector oracle_discor_weights(const QTable& q_prev, const QTable& q_star, const std::vector<Index>& next_states,
                                    const std::vector<Index>& next_actions, const std::vector<char>& next_terminal,
                                    double discount, double temperature) {
    const QTable err = (q_prev - q_star).cwiseAbs();
    return discor_weights(bootstrap_values(err, next_states, next_actions, next_terminal), discount, temperature);
}

/// (|error| + eps)^alpha, batch mean 1.
inline Vector bellman_priority_weights(const Vector& bellman_abs_error, double alpha = 1.0, double eps = 1e-3) {
    const Vector u = (bellman_abs_error.array().abs() + eps).pow(alpha).matrix();
    return normalize_mean_one(u);
}

/// p proportional to exp(-|q_prev - q_star|) * bellman_abs_error over the given
/// items, summing to 1. Uniform when every Bellman error is zero.
inline Vector optimal_p_distribution(const Vector& abs_error_to_optimum, const Vector& bellman_abs_error) {
    const Vector u = (-abs_error_to_optimum.array()).exp().matrix().cwiseProduct(bellman_abs_error.cwiseAbs());
    return normalize_sum_one(u);
}

/// Batch minimum and maximum of the Bellman errors.
inline std::pair<double, double> c1_c2_bracket(const Vector& bellman_abs_error) {
    if (bellman_abs_error.size() == 0) throw InvalidArgument("c1_c2_bracket: empty support");
    return {bellman_abs_error.minCoeff(), bellman_abs_error.maxCoeff()};
}

// ---------------------------------------------------------------------------

struct SchemeState {
    Scheme kind = Scheme::uniform;
    double tau = 10.0;
    double tau_rate = 0.005;
    double tau_floor = 1e-4;
    double c1 = 0.0;
    double c2 = 0.0;
    DistSA mixture_sum;        ///< sum of on-policy marginals so far
    long history_length = 0;

    /// Records d^{pi_k} into the replay mixture.
    void push_marginal(const DistSA& d) {
        if (history_length == 0) mixture_sum = DistSA::Zero(d.size());
        mixture_sum += d;
        ++history_length;
    }

    DistSA mixture() const {
        if (history_length == 0) throw InvalidArgument("replay mixture is empty");
        return mixture_sum / double(history_length);
    }
};

/// tau <- (1 - rate) tau + rate * mean(delta), floored.
inline double update_temperature(double tau, double rate, double floor, const Vector& delta_batch) {
    if (delta_batch.size() == 0) throw InvalidArgument("update_temperature: empty batch");
    return std::max(floor, (1.0 - rate) * tau + rate * delta_batch.mean());
}

inline void update_temperature(SchemeState& state, const Vector& delta_batch) {
    state.tau = update_temperature(state.tau, state.tau_rate, state.tau_floor, delta_batch);
}

/// Training distribution over all pairs in exact mode.
///
/// `current` is d^{pi_k} (already pushed into the mixture); `field` is the
/// scheme's per-pair weight field for the reweighting schemes and is ignored
/// otherwise. Optimal-p passes its own distribution as `field`.
inline DistSA exact_mode_distribution(const SchemeState& state, const DistSA& current, const Vector& field) {
    const Index n = current.size();
    switch (state.kind) {
        case Scheme::uniform: return DistSA::Constant(n, 1.0 / double(n));
        case Scheme::onpolicy: return current;
        case Scheme::replay: return state.mixture();
        case Scheme::optimal_p: return normalize_sum_one(field);
        default: return normalize_sum_one(state.mixture().cwiseProduct(field));
    }
}

} // namespace discor
