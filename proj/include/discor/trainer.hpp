#pragma once

#include "discor/approximators.hpp"
#include "discor/diagnostics.hpp"
#include "discor/envs.hpp"
#include "discor/mdp.hpp"
#include "discor/weighting.hpp"

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace discor {

enum class Mode { exact, sampled, bandit };

inline const char* mode_name(Mode m) {
    switch (m) {
        case Mode::exact: return "exact";
        case Mode::sampled: return "sampled";
        default: return "bandit";
    }
}

inline Mode parse_mode(const std::string& s) {
    if (s == "exact") return Mode::exact;
    if (s == "sampled") return Mode::sampled;
    if (s == "bandit") return Mode::bandit;
    throw InvalidArgument("unknown mode '" + s + "' (expected exact, sampled or bandit)");
}

struct TrainConfig {
    std::string env = "grid16onehot";
    Scheme scheme = Scheme::uniform;
    ApproxKind approx = ApproxKind::tabular;
    std::vector<Index> hidden{64, 64};
    Mode mode = Mode::exact;
    long iterations = 300;
    long samples_per_iter = 64;      ///< M
    long batch_size = 256;
    int grad_steps = 200;            ///< G, mlp only
    double step_size = 1e-2;
    double ridge = 1e-8;
    double init_scale = 0.0;         ///< std of N(0, s^2) initial tabular/linear values
    std::string exploration = "boltzmann";   ///< boltzmann | uniform
    double explore_temp = 1.0;
    double explore_decay = 0.995;
    double explore_floor = 0.01;
    std::uint64_t seed = 0;
    std::optional<double> discount;
    long capacity = 0;               ///< 0 = unbounded
    double tau0 = 10.0;
    double tau_rate = 0.005;
    double tau_floor = 1e-4;
    ApproxKind delta_model = ApproxKind::tabular;
    double delta_rate = -1.0;        ///< soft update rate eta; < 0 picks 1 (tabular) or 0.005 (mlp)
    double per_alpha = 1.0;
    double per_eps = 1e-3;
    std::string oracle_side = "target";     ///< target | source
    std::string marginal = "sa";            ///< sa | state, for the cosine diagnostic
    int eval_episodes = 20;                 ///< 0 = exact expected return

    void validate() const {
        if (iterations < 0) throw InvalidArgument("iterations must be >= 0");
        if (samples_per_iter <= 0) throw InvalidArgument("samples_per_iter must be positive");
        if (batch_size <= 0) throw InvalidArgument("batch_size must be positive");
        if (grad_steps < 0) throw InvalidArgument("grad_steps must be >= 0");
        if (!(step_size > 0.0)) throw InvalidArgument("step_size must be positive");
        if (!(ridge >= 0.0)) throw InvalidArgument("ridge must be >= 0");
        if (exploration != "boltzmann" && exploration != "uniform")
            throw InvalidArgument("exploration must be boltzmann or uniform");
        if (!(explore_temp > 0.0) || !(explore_floor > 0.0) || !(explore_decay > 0.0 && explore_decay <= 1.0))
            throw InvalidArgument("exploration temperature settings must be positive, decay in (0,1]");
        if (mode == Mode::exact && capacity != 0) throw InvalidArgument("exact mode does not take a replay capacity");
        if (capacity < 0) throw InvalidArgument("capacity must be >= 0");
        if (!(tau0 > 0.0) || !(tau_floor > 0.0)) throw InvalidArgument("tau0 and tau_floor must be positive");
        if (!(tau_rate >= 0.0 && tau_rate <= 1.0)) throw InvalidArgument("tau_rate must lie in [0,1]");
        if (delta_model == ApproxKind::linear) throw InvalidArgument("delta_model must be tabular or mlp");
        if (delta_rate > 1.0 || delta_rate == 0.0) throw InvalidArgument("delta_rate must lie in (0,1]");
        if (!(per_eps > 0.0) || per_alpha < 0.0) throw InvalidArgument("per_eps must be positive and per_alpha >= 0");
        if (oracle_side != "target" && oracle_side != "source")
            throw InvalidArgument("oracle_side must be target or source");
        if (marginal != "sa" && marginal != "state") throw InvalidArgument("marginal must be sa or state");
        if (eval_episodes < 0) throw InvalidArgument("eval_episodes must be >= 0");
        for (Index w : hidden)
            if (w <= 0) throw InvalidArgument("hidden widths must be positive");
    }
};

/// Fixed-capacity FIFO of transitions. Every insertion gets a running tag.
class ReplayBuffer {
public:
    struct Transition {
        Index state = 0;
        Index action = 0;
        double reward = 0.0;
        Index next_state = 0;
        bool terminal = false;
        std::uint64_t tag = 0;
    };

    explicit ReplayBuffer(long capacity = 0) : capacity_(capacity) {}

    void push(Transition t) {
        t.tag = inserted_++;
        if (capacity_ > 0 && long(items_.size()) == capacity_) {
            items_[head_] = t;
            head_ = (head_ + 1) % items_.size();
        } else {
            items_.push_back(t);
        }
    }

    std::size_t size() const { return items_.size(); }
    std::uint64_t inserted() const { return inserted_; }
    long capacity() const { return capacity_; }

    /// i-th oldest transition still held.
    const Transition& at(std::size_t i) const { return items_[(head_ + i) % items_.size()]; }

private:
    long capacity_;
    std::vector<Transition> items_;
    std::size_t head_ = 0;
    std::uint64_t inserted_ = 0;
};

/// Expected undiscounted return of pi over `horizon` steps from the initial distribution.
inline double expected_return(const TabularMdp& mdp, const Policy& pi, Index horizon) {
    const Matrix p = state_transition_matrix(mdp, pi);
    const Vector r = (mdp.reward.cwiseProduct(pi.probs)).rowwise().sum();
    Eigen::RowVectorXd dist = mdp.initial.transpose();
    double total = 0.0;
    for (Index t = 0; t < horizon; ++t) {
        total += dist.dot(r);
        dist = dist * p;
    }
    return total;
}

namespace detail {

inline Index sample_row(const double* probs, Index n, double u) {
    double c = 0.0;
    for (Index i = 0; i < n; ++i) {
        c += probs[i];
        if (u < c) return i;
    }
    for (Index i = n; i-- > 0;)
        if (probs[i] > 0.0) return i;
    return n - 1;
}

inline std::mt19937_64 stream(std::uint64_t seed, std::uint64_t id) {
    std::seed_seq seq{std::uint32_t(seed), std::uint32_t(seed >> 32), std::uint32_t(id)};
    return std::mt19937_64(seq);
}

} // namespace detail

/// Fitted Q-iteration with a pluggable training distribution.
///
/// One step():
///   1. pi_{k-1}: greedy policy of Q_{k-1} (bootstrap side), beta_k: exploration policy of Q_{k-1}
///   2. exact: targets B*Q_{k-1} on every pair, weights from the scheme's distribution;
///      sampled/bandit: M rollout steps into the buffer, a uniform batch, per-item weights
///   3. weighted projection -> Q_k
///   4. Delta-hat = |Q_k - y| + gamma Delta_target(s', a_hat), fit the error model, update tau
///   5. metrics against the oracle
class Trainer {
public:
    Trainer(TrainConfig config, Environment env) : cfg_(std::move(config)), env_(std::move(env)) {
        cfg_.validate();
        const TabularMdp& m = env_.mdp;
        pairs_ = m.num_pairs();
        if ((cfg_.approx != ApproxKind::tabular || cfg_.delta_model == ApproxKind::mlp) && !env_.features)
            throw InvalidArgument("environment '" + env_.id + "' has no features for a parametric approximator");

        q_star_ = value_iteration(m);
        pi_star_ = greedy_policy(q_star_);
        r_opt_ = expected_return(m, pi_star_, env_.horizon);
        r_rand_ = expected_return(m, Policy{Matrix::Constant(m.num_states, m.num_actions, 1.0 / m.num_actions)},
                                  env_.horizon);

        init_rng_ = detail::stream(cfg_.seed, 1);
        rollout_rng_ = detail::stream(cfg_.seed, 2);
        batch_rng_ = detail::stream(cfg_.seed, 3);
        eval_rng_ = detail::stream(cfg_.seed, 4);

        q_ = make_approx(cfg_.approx, 11);
        if (cfg_.delta_model == ApproxKind::tabular) {
            delta_ = ErrorModel::tabular(m.num_states, m.num_actions);
            if (cfg_.delta_rate > 0.0) delta_.soft_rate = cfg_.delta_rate;
        } else {
            Approximator d = make_approx(ApproxKind::mlp, 12);
            delta_ = ErrorModel{d, d, cfg_.delta_rate > 0.0 ? cfg_.delta_rate : 0.005, cfg_.grad_steps};
        }
        scheme_.kind = cfg_.scheme;
        scheme_.tau = cfg_.tau0;
        scheme_.tau_rate = cfg_.tau_rate;
        scheme_.tau_floor = cfg_.tau_floor;
        alpha_.discount = m.discount;
        buffer_ = ReplayBuffer(cfg_.capacity);

        q_table_ = masked(q_.evaluate());
        behavior_ = behavior_policy(q_table_, 1);
        d_behavior_ = discounted_sa_marginal(m, behavior_);
        reset_episode();
    }

    const TrainConfig& config() const { return cfg_; }
    const Environment& environment() const { return env_; }
    const TabularMdp& mdp() const { return env_.mdp; }
    long iteration() const { return k_; }

    const QTable& q_star() const { return q_star_; }
    const Policy& pi_star() const { return pi_star_; }
    const QTable& q() const { return q_table_; }
    const QTable& q_prev() const { return q_prev_; }
    QTable delta() const { return delta_.values(); }
    const ErrorModel& error_model() const { return delta_; }
    const SchemeState& scheme_state() const { return scheme_; }
    const ReplayBuffer& buffer() const { return buffer_; }
    const Approximator& approximator() const { return q_; }
    double alpha_sum() const { return alpha_.value; }
    double optimal_return() const { return r_opt_; }
    double random_return() const { return r_rand_; }

    /// Distribution over pairs used by the last exact-mode projection.
    const DistSA& last_distribution() const { return last_dist_; }
    /// |Q_k - y| over the last batch (all pairs in exact mode).
    const Vector& last_bellman_error() const { return last_bellman_; }
    const Vector& last_weights() const { return last_weights_; }

    RunRecord step() {
        const auto t0 = std::chrono::steady_clock::now();
        const TabularMdp& m = env_.mdp;
        ++k_;
        q_prev_ = q_table_;
        const auto next_actions = greedy_actions(q_prev_);
        const DistSA d_prev = d_behavior_;
        const Policy pi_prev = greedy_policy(q_prev_);

        if (cfg_.mode == Mode::exact)
            exact_step(next_actions);
        else
            sampled_step(next_actions);

        q_table_ = masked(q_.evaluate());
        if (!q_table_.allFinite()) throw ProjectionError("non-finite Q values", k_);

        // the exploration policy for the next iteration, also the d^{pi_k} of the value error
        behavior_ = behavior_policy(q_table_, k_ + 1);
        d_behavior_ = discounted_sa_marginal(m, behavior_);

        RunRecord r;
        r.iter = k_;
        const QTable err = (q_table_ - q_star_).cwiseAbs();
        r.value_error = value_error(q_table_, q_star_, d_behavior_);
        r.sup_error = sup_norm(err);
        if (cfg_.marginal == "sa") {
            r.cosine_sim = corrective_feedback_cosine(q_prev_, q_table_, q_star_, d_prev);
        } else {
            const Vector ds = pairs_to_table(d_prev, m.num_states, m.num_actions).rowwise().sum();
            r.cosine_sim = corrective_feedback_cosine_states(q_prev_, q_table_, q_star_, ds);
        }
        r.w_mean = last_weights_.mean();
        r.w_min = last_weights_.minCoeff();
        r.w_max = last_weights_.maxCoeff();
        r.tau = scheme_.tau;
        r.c1 = scheme_.c1;
        r.c2 = scheme_.c2;
        alpha_.push(policy_gap_term(m, pi_prev, q_star_));
        r.slack_thm3 = min_slack(thm3_margin(delta_.values(), alpha_.value, q_table_, q_star_)).value;
        r.slack_lemma = lemma_b1_slack(m, q_prev_, q_table_, q_star_).value;
        const Policy pi_k = greedy_policy(q_table_);
        r.dtv = distance_to_optimal(m, pi_k, q_star_);
        r.eval_return = evaluate_return(pi_k);
        const double span = r_opt_ - r_rand_;
        r.norm_return = std::abs(span) > 1e-12 ? (r.eval_return - r_rand_) / span
                                               : (r.eval_return >= r_opt_ - 1e-12 ? 1.0 : 0.0);
        r.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        return r;
    }

    /// Runs the configured number of iterations; `on_record` may stop early by returning false.
    std::vector<RunRecord> run(const std::function<bool(const RunRecord&)>& on_record = {}) {
        std::vector<RunRecord> out;
        out.reserve(std::size_t(cfg_.iterations));
        while (k_ < cfg_.iterations) {
            out.push_back(step());
            if (on_record && !on_record(out.back())) break;
        }
        return out;
    }

private:
    Approximator make_approx(ApproxKind kind, std::uint64_t salt) {
        const TabularMdp& m = env_.mdp;
        std::normal_distribution<double> normal(0.0, 1.0);
        switch (kind) {
            case ApproxKind::tabular: {
                TabularApprox t{QTable::Zero(m.num_states, m.num_actions)};
                if (cfg_.init_scale > 0.0)
                    for (Index i = 0; i < t.table.size(); ++i) t.table.data()[i] = cfg_.init_scale * normal(init_rng_);
                return t;
            }
            case ApproxKind::linear: {
                if (!phi_) {
                    phi_ = std::make_shared<const Matrix>(env_.features->phi);
                    if (phi_->cols() > phi_->rows() / 2)
                        gram_ = std::make_shared<const Matrix>(Eigen::MatrixXd(*phi_) * Eigen::MatrixXd(*phi_).transpose());
                }
                LinearApprox l{phi_, gram_, Vector::Zero(phi_->cols()), m.num_states, m.num_actions, cfg_.ridge};
                if (cfg_.init_scale > 0.0)
                    for (Index i = 0; i < l.w.size(); ++i) l.w(i) = cfg_.init_scale * normal(init_rng_);
                return l;
            }
            default: {
                if (!obs_) {
                    if (env_.features->observations.size() == 0)
                        throw InvalidArgument("environment '" + env_.id + "' has no observations for an mlp");
                    obs_ = std::make_shared<const Matrix>(env_.features->observations);
                }
                return MlpApprox::create(obs_, m.num_actions, cfg_.hidden, cfg_.seed * 1000003u + salt, cfg_.step_size);
            }
        }
    }

    QTable masked(QTable q) const {
        for (Index s = 0; s < env_.mdp.num_states; ++s)
            if (env_.mdp.terminal[s]) q.row(s).setZero();
        return q;
    }

    double explore_temperature(long k) const {
        return std::max(cfg_.explore_floor, cfg_.explore_temp * std::pow(cfg_.explore_decay, double(k - 1)));
    }

    Policy behavior_policy(const QTable& q, long k) const {
        if (cfg_.exploration == "uniform")
            return Policy{Matrix::Constant(q.rows(), q.cols(), 1.0 / double(q.cols()))};
        return boltzmann_policy(q, explore_temperature(k));
    }

    void project_q(const ProjectionBatch& batch) {
        try {
            q_.project(batch, cfg_.grad_steps);
        } catch (const ProjectionError& e) {
            throw ProjectionError(std::string(e.what()) + " at iteration " + std::to_string(k_), k_);
        }
    }

    void exact_step(const std::vector<Index>& next_actions) {
        const TabularMdp& m = env_.mdp;
        const double g = m.discount;
        std::vector<Index> all(static_cast<std::size_t>(pairs_));
        for (Index i = 0; i < pairs_; ++i) all[std::size_t(i)] = i;

        scheme_.push_marginal(d_behavior_);
        const Vector y = as_pairs(bellman_backup(m, q_prev_));
        const Vector residual = (as_pairs(q_prev_) - y).cwiseAbs();
        const Vector prev_err = (as_pairs(q_prev_) - as_pairs(q_star_)).cwiseAbs();

        Vector field = Vector::Ones(pairs_);
        switch (cfg_.scheme) {
            case Scheme::discor:
                field = (-g / scheme_.tau * apply_backup(m, next_actions, as_pairs(delta_.target_values())).array()).exp();
                break;
            case Scheme::discor_oracle:
                field = cfg_.oracle_side == "target"
                            ? Vector((-g / scheme_.tau * apply_backup(m, next_actions, prev_err).array()).exp())
                            : Vector((-g / scheme_.tau * prev_err.array()).exp());
                break;
            case Scheme::per: field = (residual.array() + cfg_.per_eps).pow(cfg_.per_alpha); break;
            case Scheme::optimal_p: field = optimal_p_distribution(prev_err, residual); break;
            default: break;
        }
        last_dist_ = exact_mode_distribution(scheme_, d_behavior_, field);
        last_weights_ = last_dist_ * double(pairs_);
        project_q({all, y, last_weights_});

        const QTable q_new = masked(q_.evaluate());
        last_bellman_ = (as_pairs(q_new) - y).cwiseAbs();
        const Vector boot = apply_backup(m, next_actions, as_pairs(delta_.target_values()));
        const Vector dhat = delta_targets(last_bellman_, boot, g);
        delta_.update(all, dhat);
        update_temperature(scheme_, dhat);

        std::vector<double> support;
        for (Index i = 0; i < pairs_; ++i)
            if (last_dist_(i) > 0.0) support.push_back(last_bellman_(i));
        const auto [c1, c2] = c1_c2_bracket(Eigen::Map<const Vector>(support.data(), Index(support.size())));
        scheme_.c1 = c1;
        scheme_.c2 = c2;
    }

    void reset_episode() {
        std::uniform_real_distribution<double> u(0.0, 1.0);
        state_ = detail::sample_row(env_.mdp.initial.data(), env_.mdp.num_states, u(rollout_rng_));
        episode_t_ = 0;
    }

    void collect(long steps) {
        const TabularMdp& m = env_.mdp;
        std::uniform_real_distribution<double> u(0.0, 1.0);
        for (long i = 0; i < steps; ++i) {
            if (m.terminal[state_] || episode_t_ >= env_.horizon) reset_episode();
            const Index a = detail::sample_row(behavior_.probs.row(state_).data(), m.num_actions, u(rollout_rng_));
            const Index p = m.pair(state_, a);
            const Index next = detail::sample_row(m.transition.row(p).data(), m.num_states, u(rollout_rng_));
            buffer_.push({state_, a, m.reward(state_, a), next, bool(m.terminal[next]), 0});
            state_ = next;
            ++episode_t_;
        }
    }

    void sampled_step(const std::vector<Index>& next_actions) {
        const TabularMdp& m = env_.mdp;
        const double g = m.discount;
        collect(cfg_.samples_per_iter);
        if (buffer_.size() == 0) throw InvalidArgument("replay buffer is empty at the first sample request");

        // on-policy draws only from the newest M transitions
        const std::size_t window = cfg_.scheme == Scheme::onpolicy
                                       ? std::min<std::size_t>(buffer_.size(), std::size_t(cfg_.samples_per_iter))
                                       : buffer_.size();
        const std::size_t offset = buffer_.size() - window;
        std::uniform_int_distribution<std::size_t> pick(0, window - 1);
        const Index n = cfg_.batch_size;
        std::vector<Index> pairs(std::size_t(n), 0), next(std::size_t(n), 0), acts(std::size_t(n), 0);
        std::vector<char> term(std::size_t(n), 0);
        Vector y(n), prev_q(n), prev_err(n);
        const QTable prev_abs = (q_prev_ - q_star_).cwiseAbs();
        for (Index i = 0; i < n; ++i) {
            const auto& t = buffer_.at(offset + pick(batch_rng_));
            const std::size_t j = std::size_t(i);
            pairs[j] = m.pair(t.state, t.action);
            next[j] = t.next_state;
            acts[j] = next_actions[std::size_t(t.next_state)];
            term[j] = t.terminal;
            prev_q(i) = q_prev_(t.state, t.action);
            prev_err(i) = prev_abs(t.state, t.action);
            if (cfg_.mode == Mode::bandit)
                y(i) = q_star_(t.state, t.action);
            else
                y(i) = t.reward + (t.terminal ? 0.0 : g * q_prev_.row(t.next_state).maxCoeff());
        }
        const Vector residual = (prev_q - y).cwiseAbs();
        const Vector boot = bootstrap_values(delta_.target_values(), next, acts, term);

        switch (cfg_.scheme) {
            case Scheme::discor: last_weights_ = discor_weights(boot, g, scheme_.tau); break;
            case Scheme::discor_oracle:
                last_weights_ = cfg_.oracle_side == "target"
                                    ? oracle_discor_weights(q_prev_, q_star_, next, acts, term, g, scheme_.tau)
                                    : discor_weights(prev_err, g, scheme_.tau);
                break;
            case Scheme::per: last_weights_ = bellman_priority_weights(residual, cfg_.per_alpha, cfg_.per_eps); break;
            case Scheme::optimal_p:
                last_weights_ = optimal_p_distribution(prev_err, residual) * double(n);
                break;
            default: last_weights_ = Vector::Ones(n); break;
        }
        project_q({pairs, y, last_weights_});

        const QTable q_new = masked(q_.evaluate());
        last_bellman_.resize(n);
        for (Index i = 0; i < n; ++i) last_bellman_(i) = std::abs(q_new.data()[pairs[std::size_t(i)]] - y(i));
        const Vector dhat = delta_targets(last_bellman_, boot, g);
        delta_.update(pairs, dhat);
        update_temperature(scheme_, dhat);
        const auto [c1, c2] = c1_c2_bracket(last_bellman_);
        scheme_.c1 = c1;
        scheme_.c2 = c2;
    }

    double evaluate_return(const Policy& greedy) {
        const TabularMdp& m = env_.mdp;
        if (cfg_.eval_episodes == 0) return expected_return(m, greedy, env_.horizon);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        const auto actions = greedy_actions(greedy.probs);
        double total = 0.0;
        for (int e = 0; e < cfg_.eval_episodes; ++e) {
            Index s = detail::sample_row(m.initial.data(), m.num_states, u(eval_rng_));
            for (Index t = 0; t < env_.horizon && !m.terminal[s]; ++t) {
                const Index a = actions[std::size_t(s)];
                total += m.reward(s, a);
                s = detail::sample_row(m.transition.row(m.pair(s, a)).data(), m.num_states, u(eval_rng_));
            }
        }
        return total / double(cfg_.eval_episodes);
    }

    TrainConfig cfg_;
    Environment env_;
    Index pairs_ = 0;
    QTable q_star_;
    Policy pi_star_;
    double r_opt_ = 0.0;
    double r_rand_ = 0.0;

    std::mt19937_64 init_rng_, rollout_rng_, batch_rng_, eval_rng_;
    std::shared_ptr<const Matrix> phi_, gram_, obs_;
    Approximator q_;
    ErrorModel delta_;
    SchemeState scheme_;
    AlphaSum alpha_;
    ReplayBuffer buffer_;

    long k_ = 0;
    QTable q_table_, q_prev_;
    Policy behavior_;
    DistSA d_behavior_;
    DistSA last_dist_;
    Vector last_bellman_, last_weights_;
    Index state_ = 0;
    Index episode_t_ = 0;
};

/// Convenience wrappers around Trainer for the three modes.
inline std::vector<RunRecord> run_training(TrainConfig cfg, const std::function<bool(const RunRecord&)>& cb = {}) {
    Environment env = make_environment(cfg.env, cfg.seed, cfg.discount);
    Trainer t(std::move(cfg), std::move(env));
    return t.run(cb);
}

inline std::vector<RunRecord> run_exact(TrainConfig cfg) {
    cfg.mode = Mode::exact;
    return run_training(std::move(cfg));
}

inline std::vector<RunRecord> run_sampled(TrainConfig cfg) {
    cfg.mode = Mode::sampled;
    return run_training(std::move(cfg));
}

inline std::vector<RunRecord> run_bandit(TrainConfig cfg) {
    cfg.mode = Mode::bandit;
    return run_training(std::move(cfg));
}

} // namespace discor
