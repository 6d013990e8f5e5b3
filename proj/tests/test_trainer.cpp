#include "discor/trainer.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace discor;
using namespace discor::testing;

namespace {

TrainConfig small(const std::string& env, Scheme scheme, Mode mode, long iters) {
    TrainConfig c;
    c.env = env;
    c.scheme = scheme;
    c.mode = mode;
    c.iterations = iters;
    c.samples_per_iter = 32;
    c.batch_size = 64;
    c.eval_episodes = 5;
    return c;
}

std::vector<RunRecord> run(const TrainConfig& c) { return run_training(c); }

void expect_same_trace(const std::vector<RunRecord>& a, const std::vector<RunRecord>& b, double tol) {
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        const RunRecord &x = a[i], &y = b[i];
        const double fields_x[] = {x.value_error, x.eval_return, x.norm_return, x.cosine_sim, x.w_mean, x.w_min,
                                   x.w_max, x.tau, x.c1, x.c2, x.slack_thm3, x.slack_lemma, x.dtv};
        const double fields_y[] = {y.value_error, y.eval_return, y.norm_return, y.cosine_sim, y.w_mean, y.w_min,
                                   y.w_max, y.tau, y.c1, y.c2, y.slack_thm3, y.slack_lemma, y.dtv};
        for (std::size_t f = 0; f < 13; ++f)
            ASSERT_NEAR(fields_x[f], fields_y[f], tol) << "iteration " << x.iter << " field " << f;
    }
}

} // namespace

TEST(Buffer, FifoEvictionKeepsNewestTags) {
    ReplayBuffer b(3);
    for (int i = 0; i < 5; ++i) b.push({Index(i), 0, 0.0, 0, false, 0});
    ASSERT_EQ(b.size(), 3u);
    EXPECT_EQ(b.inserted(), 5u);
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_EQ(b.at(i).tag, 2 + i);
        EXPECT_EQ(b.at(i).state, Index(2 + i));
    }
}

TEST(Buffer, UnboundedKeepsEverything) {
    ReplayBuffer b;
    for (int i = 0; i < 100; ++i) b.push({});
    EXPECT_EQ(b.size(), 100u);
    EXPECT_EQ(b.at(0).tag, 0u);
}

TEST(Config, ExactModeRejectsCapacity) {
    TrainConfig c;
    c.capacity = 10;
    EXPECT_THROW(c.validate(), InvalidArgument);
    c.mode = Mode::sampled;
    EXPECT_NO_THROW(c.validate());
    EXPECT_THROW(parse_mode("online"), InvalidArgument);
}

TEST(Exact, UniformTabularIsValueIteration) {
    TrainConfig c = small("random:S=12,A=3", Scheme::uniform, Mode::exact, 400);
    c.eval_episodes = 0;
    Trainer t(c, make_environment(c.env, 3, c.discount));
    const TabularMdp& m = t.mdp();
    QTable vi = QTable::Zero(m.num_states, m.num_actions);
    const double tol = 1e-6;
    const long bound = long(std::ceil(std::log(tol * (1.0 - m.discount) / m.r_max()) / std::log(m.discount)));
    long reached = -1;
    while (t.iteration() < c.iterations) {
        t.step();
        vi = loop_backup(m, vi);
        ASSERT_LT(sup_norm(t.q() - vi), 1e-12) << "iteration " << t.iteration();
        if (reached < 0 && sup_norm(t.q() - t.q_star()) <= tol) reached = t.iteration();
    }
    ASSERT_GT(reached, 0);
    EXPECT_LE(reached, bound);
}

TEST(Exact, TerminalRowsStayZero) {
    TrainConfig c = small("grid4onehotsparse", Scheme::discor, Mode::exact, 20);
    Trainer t(c, make_environment(c.env, 0));
    t.run();
    EXPECT_EQ(t.q().row(15).cwiseAbs().sum(), 0.0);
    EXPECT_EQ(t.delta().row(15).cwiseAbs().sum(), 0.0);
}

TEST(Exact, DistributionsAreNormalized) {
    for (Scheme s : {Scheme::uniform, Scheme::onpolicy, Scheme::replay, Scheme::per, Scheme::discor,
                     Scheme::discor_oracle, Scheme::optimal_p}) {
        TrainConfig c = small("grid4onehot", s, Mode::exact, 5);
        Trainer t(c, make_environment(c.env, 0));
        for (int k = 0; k < 5; ++k) {
            t.step();
            EXPECT_NEAR(t.last_distribution().sum(), 1.0, 1e-12) << scheme_name(s);
            EXPECT_GE(t.last_distribution().minCoeff(), 0.0);
            EXPECT_NEAR(t.last_weights().mean(), 1.0, 1e-12);
        }
    }
}

TEST(Exact, LinearDeltaOracleFirstStep) {
    // at k = 1 the error model starts at zero, so Delta_1 is exactly |Q_1 - B*Q_0|
    TrainConfig c = small("random:S=10,A=2", Scheme::uniform, Mode::exact, 1);
    c.approx = ApproxKind::linear;
    c.delta_rate = 1.0;
    Trainer t(c, make_environment(c.env, 1, c.discount));
    t.step();
    const QTable e = (t.q() - loop_backup(t.mdp(), t.q_prev())).cwiseAbs();
    EXPECT_LT(sup_norm(t.delta() - e), 1e-12);
}

TEST(Sampled, SameSeedSameTrace) {
    for (Scheme s : {Scheme::uniform, Scheme::per, Scheme::discor, Scheme::onpolicy}) {
        TrainConfig c = small("grid5randomsparse", s, Mode::sampled, 15);
        c.approx = ApproxKind::linear;
        c.seed = 21;
        expect_same_trace(run(c), run(c), 0.0);
    }
}

TEST(Sampled, DifferentSeedsDiffer) {
    TrainConfig a = small("grid5onehot", Scheme::uniform, Mode::sampled, 5), b = a;
    b.seed = 1;
    EXPECT_NE(run(a).back().value_error, run(b).back().value_error);
}

TEST(Sampled, HugeTemperatureMatchesUniform) {
    TrainConfig u = small("grid5randomsparse", Scheme::uniform, Mode::sampled, 40);
    u.approx = ApproxKind::linear;
    u.tau0 = 1e9;
    u.tau_rate = 0.0;
    TrainConfig d = u;
    d.scheme = Scheme::discor;
    expect_same_trace(run(u), run(d), 1e-6);
}

TEST(Sampled, CapacityBoundsTheBuffer) {
    TrainConfig c = small("grid4onehot", Scheme::uniform, Mode::sampled, 10);
    c.capacity = 50;
    Trainer t(c, make_environment(c.env, 0));
    t.run();
    EXPECT_EQ(t.buffer().size(), 50u);
    EXPECT_EQ(t.buffer().inserted(), 320u);
    EXPECT_EQ(t.buffer().at(0).tag, 270u);
}

TEST(Sampled, EveryScheme) {
    for (Scheme s : {Scheme::uniform, Scheme::onpolicy, Scheme::replay, Scheme::per, Scheme::discor,
                     Scheme::discor_oracle, Scheme::optimal_p}) {
        TrainConfig c = small("grid4smoothobs", s, Mode::sampled, 8);
        c.approx = ApproxKind::mlp;
        c.hidden = {8};
        c.grad_steps = 5;
        c.delta_model = ApproxKind::mlp;
        for (const auto& r : run(c)) {
            EXPECT_TRUE(std::isfinite(r.value_error)) << scheme_name(s);
            EXPECT_NEAR(r.w_mean, 1.0, 1e-9) << scheme_name(s);
        }
    }
}

TEST(Bandit, FullSupportReachesTheOptimum) {
    TrainConfig c = small("random:S=10,A=2", Scheme::uniform, Mode::bandit, 60);
    c.exploration = "uniform";
    const auto trace = run(c);
    EXPECT_LE(trace.back().value_error, 1e-3);
}

TEST(Bandit, SameSeedSameTrace) {
    TrainConfig c = small("grid4randomobs", Scheme::uniform, Mode::bandit, 10);
    c.approx = ApproxKind::mlp;
    c.hidden = {6};
    c.grad_steps = 10;
    expect_same_trace(run(c), run(c), 0.0);
}

TEST(Failures, DivergingMlpReportsIteration) {
    TrainConfig c = small("grid4randomobs", Scheme::uniform, Mode::sampled, 50);
    c.approx = ApproxKind::mlp;
    c.hidden = {8};
    c.step_size = 1e6;
    c.grad_steps = 20;
    EXPECT_THROW(run(c), ProjectionError);
}

TEST(Failures, TabularOnlyEnvironmentRejectsFeatures) {
    TrainConfig c = small("grid4onehot", Scheme::uniform, Mode::exact, 1);
    Environment env = make_environment(c.env, 0);
    env.features.reset();
    c.approx = ApproxKind::linear;
    EXPECT_THROW(Trainer(c, env), InvalidArgument);
}

TEST(Run, CallbackStopsEarly) {
    TrainConfig c = small("grid4onehot", Scheme::uniform, Mode::exact, 50);
    Trainer t(c, make_environment(c.env, 0));
    const auto trace = t.run([](const RunRecord& r) { return r.iter < 7; });
    EXPECT_EQ(trace.size(), 7u);
    EXPECT_EQ(t.iteration(), 7);
}

TEST(Run, NormalizedReturnEndpoints) {
    TrainConfig c = small("grid4onehotsparse", Scheme::uniform, Mode::exact, 40);
    c.eval_episodes = 0;
    const auto trace = run(c);
    EXPECT_NEAR(trace.back().norm_return, 1.0, 1e-12);
    EXPECT_EQ(trace.back().dtv, 0.0);
}

TEST(Run, TemperatureTrajectory) {
    TrainConfig c = small("grid4onehot", Scheme::discor, Mode::exact, 3);
    Trainer t(c, make_environment(c.env, 0));
    double tau = 10.0;
    for (int k = 0; k < 3; ++k) {
        t.step();
        tau = std::max(1e-4, 0.995 * tau + 0.005 * as_pairs(t.delta()).mean());
        EXPECT_NEAR(t.scheme_state().tau, tau, 1e-12);
    }
}
