#include "discor/approximators.hpp"
#include "discor/envs.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace discor;
using namespace discor::testing;

namespace {

ProjectionBatch random_batch(Index pairs, Index n, std::mt19937_64& rng) {
    std::uniform_int_distribution<Index> pick(0, pairs - 1);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    ProjectionBatch b;
    b.targets.resize(n);
    b.weights.resize(n);
    for (Index i = 0; i < n; ++i) {
        b.pairs.push_back(pick(rng));
        b.targets(i) = 4.0 * u(rng) - 2.0;
        b.weights(i) = 0.1 + 2.0 * u(rng);
    }
    return b;
}

LinearApprox linear_for(const Matrix& phi, Index S, Index A, double ridge) {
    LinearApprox l;
    l.phi = std::make_shared<const Matrix>(phi);
    l.w = Vector::Zero(phi.cols());
    l.num_states = S;
    l.num_actions = A;
    l.ridge = ridge;
    return l;
}

// (Phi_b^T D Phi_b + ridge I)^{-1} Phi_b^T D y, one row per batch entry, solved by QR
Vector normal_equations(const Matrix& phi, const ProjectionBatch& b, double ridge) {
    const Index d = phi.cols();
    Eigen::MatrixXd lhs = ridge * Eigen::MatrixXd::Identity(d, d);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(d);
    for (Index i = 0; i < b.size(); ++i) {
        const Eigen::VectorXd f = phi.row(b.pairs[i]).transpose();
        lhs += b.weights(i) * f * f.transpose();
        rhs += b.weights(i) * b.targets(i) * f;
    }
    return lhs.colPivHouseholderQr().solve(rhs);
}

} // namespace

TEST(Tabular, SingleTargetIsInterpolated) {
    TabularApprox t{QTable::Zero(3, 2)};
    t.project({{3}, Vector::Constant(1, 3.0), Vector::Constant(1, 1.0)});
    EXPECT_EQ(t.table(1, 1), 3.0);
    EXPECT_EQ(t.table.sum(), 3.0);
}

TEST(Tabular, WeightedMeanPerEntry) {
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 20; ++trial) {
        const ProjectionBatch b = random_batch(6, 30, rng);
        TabularApprox t{QTable::Constant(2, 3, 7.0)};
        t.project(b);
        for (Index p = 0; p < 6; ++p) {
            double num = 0.0, den = 0.0;
            for (Index i = 0; i < b.size(); ++i)
                if (b.pairs[i] == p) {
                    num += b.weights(i) * b.targets(i);
                    den += b.weights(i);
                }
            EXPECT_NEAR(t.table.data()[p], den > 0 ? num / den : 7.0, 1e-12);
        }
    }
}

TEST(Tabular, RejectsBadBatches) {
    TabularApprox t{QTable::Zero(2, 2)};
    EXPECT_THROW(t.project({{4}, Vector::Ones(1), Vector::Ones(1)}), InvalidArgument);
    EXPECT_THROW(t.project({{0}, Vector::Ones(1), Vector::Constant(1, -1.0)}), InvalidArgument);
    EXPECT_THROW(t.project({{0, 1}, Vector::Ones(1), Vector::Ones(1)}), InvalidArgument);
}

TEST(Linear, IdentityFeaturesMatchTabular) {
    std::mt19937_64 rng(4);
    const ProjectionBatch b = random_batch(12, 60, rng);
    LinearApprox l = linear_for(Matrix::Identity(12, 12), 4, 3, 1e-12);
    l.project(b);
    TabularApprox t{QTable::Zero(4, 3)};
    t.project(b);
    EXPECT_LT(sup_norm(l.evaluate() - t.evaluate()), 1e-8);
}

TEST(Linear, MatchesNormalEquationsPrimal) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const Environment env = make_environment("random:S=20,A=3,dim=4", seed);
        std::mt19937_64 rng(seed);
        const ProjectionBatch b = random_batch(60, 200, rng);
        LinearApprox l = linear_for(env.features->phi, 20, 3, 1e-8);
        l.project(b);
        EXPECT_LT((l.w - normal_equations(env.features->phi, b, 1e-8)).cwiseAbs().maxCoeff(), 1e-8);
    }
}

TEST(Linear, MatchesNormalEquationsDual) {
    // fewer distinct pairs than features: the dual path, with and without a cached Gram matrix
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const Environment env = make_environment("random:S=20,A=3,dim=15", seed);
        std::mt19937_64 rng(seed + 100);
        const ProjectionBatch b = random_batch(60, 12, rng);
        const Vector oracle = normal_equations(env.features->phi, b, 1e-4);
        LinearApprox l = linear_for(env.features->phi, 20, 3, 1e-4);
        l.project(b);
        EXPECT_LT((l.w - oracle).cwiseAbs().maxCoeff(), 1e-8);
        l.gram = std::make_shared<const Matrix>(env.features->phi * env.features->phi.transpose());
        l.project(b);
        EXPECT_LT((l.w - oracle).cwiseAbs().maxCoeff(), 1e-8);
    }
}

TEST(Linear, EmptyBatchGivesZero) {
    LinearApprox l = linear_for(Matrix::Identity(4, 4), 2, 2, 1e-8);
    l.w.setOnes();
    l.project({});
    EXPECT_EQ(l.w.norm(), 0.0);
}

TEST(Mlp, ZeroResidualZeroGradient) {
    auto obs = std::make_shared<const Matrix>(Matrix::Identity(3, 3));
    const MlpApprox m = MlpApprox::create(obs, 2, {5}, 1);
    const QTable q = m.evaluate();
    ProjectionBatch b{{0, 3, 5}, Vector(3), Vector::Ones(3)};
    for (Index i = 0; i < 3; ++i) b.targets(i) = q.data()[b.pairs[i]];
    EXPECT_LT(m.gradient(b).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Mlp, SingleLinearLayerHandGradient) {
    Matrix x(1, 3);
    x << 0.5, -1.0, 2.0;
    auto obs = std::make_shared<const Matrix>(x);
    MlpApprox m = MlpApprox::create(obs, 2, {}, 3);
    const double pred = m.evaluate()(0, 1), y = 0.25, w = 1.5;
    const Vector g = m.gradient({{1}, Vector::Constant(1, y), Vector::Constant(1, w)});
    // layout: weight [2][3] row-major, then bias [2]
    for (Index c = 0; c < 3; ++c) {
        EXPECT_EQ(g(c), 0.0);
        EXPECT_NEAR(g(3 + c), 2.0 * w * (pred - y) * x(0, c), 1e-14);
    }
    EXPECT_EQ(g(6), 0.0);
    EXPECT_NEAR(g(7), 2.0 * w * (pred - y), 1e-14);
}

TEST(Mlp, GradientMatchesCentralDifferences) {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> n01(0.0, 1.0);
    Matrix x(6, 4);
    for (Index i = 0; i < x.size(); ++i) x.data()[i] = n01(rng);
    auto obs = std::make_shared<const Matrix>(x);
    MlpApprox m = MlpApprox::create(obs, 3, {7, 5}, 9);
    const ProjectionBatch b = random_batch(18, 25, rng);
    auto loss = [&](const MlpApprox& net) {
        const QTable q = net.evaluate();
        double l = 0.0;
        for (Index i = 0; i < b.size(); ++i) {
            const double r = q.data()[b.pairs[i]] - b.targets(i);
            l += b.weights(i) * r * r;
        }
        return l / double(b.size());
    };
    const Vector g = m.gradient(b);
    const Vector p = m.parameters();
    std::uniform_int_distribution<Index> pick(0, p.size() - 1);
    const double h = 1e-5;
    for (int trial = 0; trial < 100; ++trial) {
        const Index i = pick(rng);
        MlpApprox up = m, down = m;
        Vector pu = p, pd = p;
        pu(i) += h;
        pd(i) -= h;
        up.set_parameters(pu);
        down.set_parameters(pd);
        const double fd = (loss(up) - loss(down)) / (2 * h);
        EXPECT_LE(std::abs(fd - g(i)), 1e-5 * std::max(1.0, std::abs(fd))) << "parameter " << i;
    }
}

TEST(Mlp, GradientStepsReduceLoss) {
    auto obs = std::make_shared<const Matrix>(Matrix::Identity(4, 4));
    MlpApprox m = MlpApprox::create(obs, 2, {16}, 2, 0.05);
    std::mt19937_64 rng(1);
    const ProjectionBatch b = random_batch(8, 8, rng);
    auto err = [&] {
        const QTable q = m.evaluate();
        double e = 0;
        for (Index i = 0; i < b.size(); ++i) e += b.weights(i) * std::pow(q.data()[b.pairs[i]] - b.targets(i), 2);
        return e;
    };
    const double before = err();
    m.project(b, 200);
    EXPECT_LT(err(), 0.5 * before);
    EXPECT_EQ(m.step_count, 200);
}

TEST(Checkpoint, RoundTripAllKinds) {
    auto obs = std::make_shared<const Matrix>(Matrix::Identity(3, 3));
    std::mt19937_64 rng(6);
    std::vector<Approximator> models;
    models.emplace_back(TabularApprox{random_table(3, 2, rng)});
    LinearApprox l = linear_for(Matrix::Identity(6, 6), 3, 2, 1e-8);
    l.w = Vector::LinSpaced(6, -1, 1);
    models.emplace_back(l);
    models.emplace_back(MlpApprox::create(obs, 2, {4}, 1));
    for (const auto& m : models) {
        std::stringstream ss;
        write_checkpoint(ss, m);
        Approximator copy = m;
        copy.set_parameters(Vector::Zero(m.num_params()));
        read_checkpoint(ss, copy);
        EXPECT_EQ(copy.parameters(), m.parameters());
    }
}

TEST(Checkpoint, RejectsMismatches) {
    std::stringstream ss;
    write_checkpoint(ss, Approximator(TabularApprox{QTable::Zero(3, 2)}));
    const std::string bytes = ss.str();
    Approximator other(TabularApprox{QTable::Zero(2, 3)});
    std::stringstream a(bytes);
    EXPECT_THROW(read_checkpoint(a, other), InvalidArgument);
    std::stringstream b(bytes.substr(0, bytes.size() - 3));
    Approximator same(TabularApprox{QTable::Zero(3, 2)});
    EXPECT_THROW(read_checkpoint(b, same), InvalidArgument);
    std::stringstream c("XXXX");
    EXPECT_THROW(read_checkpoint(c, same), InvalidArgument);
}
