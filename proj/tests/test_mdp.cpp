#include "discor/envs.hpp"
#include "discor/mdp.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

using namespace discor;
using namespace discor::testing;

TEST(BellmanBackup, AbsorbingStateTargetsAreZero) {
    TabularMdp m = blank_mdp(1, 2, 0.9);
    m.terminal[0] = true;
    QTable q(1, 2);
    q << 5.0, -3.0;
    EXPECT_EQ(sup_norm(bellman_backup(m, q)), 0.0);
}

TEST(BellmanBackup, SelfLoopWithZeroBootstrap) {
    TabularMdp m = blank_mdp(1, 1, 0.5);
    m.reward(0, 0) = 1.0;
    EXPECT_DOUBLE_EQ(bellman_backup(m, QTable::Zero(1, 1))(0, 0), 1.0);
}

TEST(BellmanBackup, TwoStateChainLeafBonus) {
    TabularMdp m = blank_mdp(2, 2, 0.9);
    go(m, 0, 0, 1);
    go(m, 0, 1, 1);
    m.terminal[1] = true;
    m.reward(0, 1) = 1.0;
    const QTable t = bellman_backup(m, QTable::Zero(2, 2));
    EXPECT_DOUBLE_EQ(t(0, 1), 1.0);
    EXPECT_DOUBLE_EQ(t(0, 0), 0.0);
}

TEST(BellmanBackup, MatchesLoopFormOnRandomMdps) {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        const TabularMdp m = random_mdp(3 + trial % 7, 1 + trial % 4, rng(), 0.9, 3, trial % 3);
        const QTable q = random_table(m.num_states, m.num_actions, rng, 5.0);
        EXPECT_LT(sup_norm(bellman_backup(m, q) - loop_backup(m, q)), 1e-12);
    }
}

TEST(ValueIteration, GeometricSelfLoop) {
    TabularMdp m = blank_mdp(1, 1, 0.9);
    m.reward(0, 0) = 1.0;
    EXPECT_NEAR(value_iteration(m, 1e-12)(0, 0), 10.0, 1e-9);
}

TEST(ValueIteration, ZeroRewardsGiveZero) {
    const TabularMdp base = random_mdp(8, 3, 4);
    TabularMdp m = base;
    m.reward.setZero();
    EXPECT_EQ(sup_norm(value_iteration(m)), 0.0);
}

TEST(ValueIteration, FixedPointOnRandomMdps) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const TabularMdp m = random_mdp(20, 3, seed, 0.95);
        const QTable q = value_iteration(m, 1e-12);
        EXPECT_LE(sup_norm(loop_backup(m, q) - q), 1e-10);
    }
}

TEST(ValueIteration, RejectsBadTolerance) { EXPECT_THROW(value_iteration(random_mdp(3, 2, 0), 0.0), InvalidArgument); }

TEST(ValueIteration, ReportsNonConvergence) {
    TabularMdp m = blank_mdp(1, 1, 0.99);
    m.reward(0, 0) = 1.0;
    EXPECT_THROW(value_iteration(m, 1e-12, 5), ConvergenceError);
}

TEST(Greedy, PicksLargestAndBreaksTiesLow) {
    QTable q(2, 2);
    q << 1, 2, 2, 2;
    const Policy pi = greedy_policy(q);
    EXPECT_EQ(pi.probs(0, 1), 1.0);
    EXPECT_EQ(pi.probs(1, 0), 1.0);
    EXPECT_EQ(greedy_actions(q), (std::vector<Index>{1, 0}));
}

TEST(Greedy, TreeOptimumFollowsTheOnlyRewardingPath) {
    // enumerate every root-to-leaf action sequence by hand and keep the rewarding one
    const TreeSpec spec{2, 1, 1, 0.99};
    const TabularMdp m = build_tree(spec);
    const auto acts = greedy_actions(value_iteration(m, 1e-12));
    int rewarding = 0;
    for (Index a0 = 0; a0 < 2; ++a0)
        for (Index a1 = 0; a1 < 2; ++a1) {
            const Index leaf = 1 + a0;
            if (m.reward(leaf, a1) > 0) {
                ++rewarding;
                EXPECT_EQ(acts[0], a0);
                EXPECT_EQ(acts[std::size_t(leaf)], a1);
            }
        }
    EXPECT_EQ(rewarding, 1);
}

TEST(Boltzmann, SymmetricRowIsUniform) {
    for (double t : {0.01, 1.0, 100.0}) {
        const Policy pi = boltzmann_policy(QTable::Zero(1, 2), t);
        EXPECT_DOUBLE_EQ(pi.probs(0, 0), 0.5);
    }
}

TEST(Boltzmann, TwoActionSoftmax) {
    QTable q(1, 2);
    q << 1, 0;
    const Policy pi = boltzmann_policy(q, 1.0);
    // e / (e + 1) in long double
    const long double e = std::exp(1.0L);
    EXPECT_NEAR(pi.probs(0, 0), double(e / (e + 1.0L)), 1e-15);
    EXPECT_NEAR(pi.probs(0, 1), double(1.0L / (e + 1.0L)), 1e-15);
    EXPECT_NEAR(pi.probs(0, 0), 0.7311, 1e-4);
}

TEST(Boltzmann, HugeTemperatureIsUniform) {
    std::mt19937_64 rng(3);
    const Policy pi = boltzmann_policy(random_table(5, 4, rng, 100.0), 1e9);
    EXPECT_LT((pi.probs.array() - 0.25).abs().maxCoeff(), 1e-6);
}

TEST(Boltzmann, RejectsNonPositiveTemperature) {
    EXPECT_THROW(boltzmann_policy(QTable::Zero(1, 2), 0.0), InvalidArgument);
}

TEST(TransitionMatrix, SingleSelfLoop) {
    const TabularMdp m = blank_mdp(1, 1, 0.9);
    const Matrix p = policy_transition_matrix(m, greedy_policy(QTable::Zero(1, 1)));
    ASSERT_EQ(p.rows(), 1);
    EXPECT_EQ(p(0, 0), 1.0);
}

TEST(TransitionMatrix, DeterministicCycleIsPermutation) {
    TabularMdp m = blank_mdp(2, 1, 0.9);
    go(m, 0, 0, 1);
    go(m, 1, 0, 0);
    const Matrix p = policy_transition_matrix(m, greedy_policy(QTable::Zero(2, 1)));
    Matrix expect(2, 2);
    expect << 0, 1, 1, 0;
    EXPECT_EQ(p, expect);
}

TEST(TransitionMatrix, GridRowsAreStochastic) {
    const Environment env = make_environment("grid4onehot", 0);
    const Policy uniform{Matrix::Constant(env.mdp.num_states, 4, 0.25)};
    const Matrix p = policy_transition_matrix(env.mdp, uniform);
    EXPECT_LT((p.rowwise().sum().array() - 1.0).abs().maxCoeff(), 1e-12);
}

TEST(TransitionMatrix, BackupMatrixDropsTerminalColumns) {
    const TabularMdp m = random_mdp(6, 2, 5, 0.9, 3, 2);
    const Policy pi{Matrix::Constant(6, 2, 0.5)};
    const Matrix p = backup_matrix(m, pi);
    for (Index s = 0; s < 6; ++s)
        if (m.terminal[s]) {
            EXPECT_EQ(p.col(m.pair(s, 0)).cwiseAbs().sum(), 0.0);
        }
    std::mt19937_64 rng(1);
    const QTable f = random_table(6, 2, rng);
    const auto acts = greedy_actions(QTable::Zero(6, 2));
    EXPECT_LT((apply_backup(m, acts, as_pairs(f)) - backup_matrix(m, greedy_policy(QTable::Zero(6, 2))) * as_pairs(f))
                  .cwiseAbs()
                  .maxCoeff(),
              1e-14);
}

TEST(Marginal, SingleSelfLoopIsOne) {
    const TabularMdp m = blank_mdp(1, 1, 0.9);
    EXPECT_NEAR(discounted_sa_marginal(m, greedy_policy(QTable::Zero(1, 1)))(0), 1.0, 1e-15);
}

TEST(Marginal, ChainIntoTerminalSplitsHalfHalf) {
    TabularMdp m = blank_mdp(2, 1, 0.5);
    go(m, 0, 0, 1);
    m.terminal[1] = true;
    const DistSA d = discounted_sa_marginal(m, greedy_policy(QTable::Zero(2, 1)));
    EXPECT_NEAR(d(0), 0.5, 1e-15);
    EXPECT_NEAR(d(1), 0.5, 1e-15);
}

TEST(Marginal, LinearSolveMatchesPowerSeries) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const TabularMdp m = random_mdp(15, 3, seed, 0.9, 4, seed % 2);
        std::mt19937_64 rng(seed);
        const Policy pi = boltzmann_policy(random_table(15, 3, rng), 0.7);
        const Matrix p = state_transition_matrix(m, pi);
        Vector term = m.initial, sum = Vector::Zero(15);
        for (int t = 0; t < 400; ++t) {
            sum += std::pow(m.discount, t) * term;
            term = p.transpose() * term;
        }
        sum *= 1.0 - m.discount;
        EXPECT_LT((discounted_state_marginal(m, pi) - sum).cwiseAbs().maxCoeff(), 1e-12);
        EXPECT_NEAR(discounted_sa_marginal(m, pi).sum(), 1.0, 1e-12);
    }
}

TEST(Marginal, TreeRewardPairMassBound) {
    for (int h : {2, 3, 5}) {
        const TreeSpec spec{h, 0, 0, 0.9};
        const TabularMdp m = build_tree(spec);
        std::mt19937_64 rng(h);
        for (int trial = 0; trial < 5; ++trial) {
            const Policy pi = boltzmann_policy(random_table(m.num_states, 2, rng, 2.0), 1.0);
            const double p_bar = pi.min_prob();
            const DistSA d = discounted_sa_marginal(m, pi);
            const double mass = d(m.pair(tree_leaf_node(spec), spec.reward_action));
            EXPECT_LE(mass, std::pow(m.discount, h) * std::pow(1.0 - p_bar, h + 1) + 1e-15);
        }
    }
}

TEST(ValueError, ZeroAtOptimumAndConstantField) {
    std::mt19937_64 rng(2);
    const QTable q = random_table(4, 3, rng);
    DistSA d = DistSA::Constant(12, 1.0 / 12);
    EXPECT_EQ(value_error(q, q, d), 0.0);
    EXPECT_NEAR(value_error(q.array() + 2.0, q, d), 2.0, 1e-14);
}

TEST(ValueError, TreeAtZeroIsMassOnNonzeroEntries) {
    const TabularMdp m = build_tree({2, 1, 1, 0.99});
    const QTable q_star = value_iteration(m, 1e-12);
    const Policy uniform{Matrix::Constant(m.num_states, 2, 0.5)};
    const DistSA d = discounted_sa_marginal(m, uniform);
    double brute = 0.0;
    int nonzero = 0;
    for (Index s = 0; s < m.num_states; ++s)
        for (Index a = 0; a < 2; ++a)
            if (q_star(s, a) != 0.0) {
                brute += d(m.pair(s, a)) * q_star(s, a);
                ++nonzero;
            }
    EXPECT_EQ(nonzero, 2);
    EXPECT_NEAR(value_error(QTable::Zero(m.num_states, 2), q_star, d), brute, 1e-14);
}

TEST(TotalVariation, IgnoresTerminalStates) {
    TabularMdp m = blank_mdp(2, 2, 0.9);
    m.terminal[1] = true;
    Policy a{Matrix(2, 2)}, b{Matrix(2, 2)};
    a.probs << 1, 0, 1, 0;
    b.probs << 0.25, 0.75, 0, 1;
    EXPECT_DOUBLE_EQ(total_variation(m, a, b), 0.75);
}

TEST(Validate, CatchesBrokenInvariants) {
    TabularMdp m = blank_mdp(2, 1, 0.9);
    EXPECT_NO_THROW(m.validate());
    m.transition(0, 1) = 0.5;
    EXPECT_THROW(m.validate(), InvalidArgument);
    m = blank_mdp(2, 1, 0.9);
    m.terminal[1] = true;
    m.reward(1, 0) = 1.0;
    EXPECT_THROW(m.validate(), InvalidArgument);
    m = blank_mdp(2, 1, 1.0);
    EXPECT_THROW(m.validate(), InvalidArgument);
}

TEST(MdpText, RoundTripIsExact) {
    const TabularMdp m = random_mdp(7, 3, 9, 0.93, 3, 1);
    std::stringstream ss;
    write_mdp(ss, m);
    const TabularMdp r = read_mdp(ss);
    EXPECT_EQ(r.transition, m.transition);
    EXPECT_EQ(r.reward, m.reward);
    EXPECT_EQ(r.initial, m.initial);
    EXPECT_EQ(r.terminal, m.terminal);
    EXPECT_EQ(r.discount, m.discount);
}
