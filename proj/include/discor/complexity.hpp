#pragma once

#include "discor/trainer.hpp"

#include <string>
#include <vector>

namespace discor {

struct ComplexityRow {
    int depth = 0;
    Scheme scheme = Scheme::onpolicy;
    std::uint64_t seed = 0;
    long iterations = -1;     ///< first k with ||Q_k - Q*||_inf <= threshold; -1 if not reached
    bool converged = false;
    long budget = 0;
    double threshold = 0.0;
    double feature_residual = 0.0;   ///< delta of the single best linear fit to Q*
    double final_sup_error = 0.0;
};

struct ComplexitySweep {
    std::vector<int> depths{3, 4, 5, 6, 7};
    std::vector<Scheme> schemes{Scheme::onpolicy, Scheme::discor};
    std::vector<std::uint64_t> seeds{0, 1, 2};
    double target_fraction = 0.05;   ///< threshold = fraction * ||Q*||_inf + delta
    double feature_epsilon = default_tree_epsilon;
    long budget = 5000;
    double discount = 0.95;
    TrainConfig base;                ///< scheme, env, mode, approximator and seed are overwritten
};

/// Exact-mode linear FQI on the tree family for every (H, scheme, seed).
inline ComplexityRow tree_iterations_to_target(const ComplexitySweep& sweep, int depth, Scheme scheme,
                                               std::uint64_t seed) {
    TrainConfig cfg = sweep.base;
    cfg.env = "tree:H=" + std::to_string(depth) + ",eps=" + std::to_string(sweep.feature_epsilon);
    cfg.scheme = scheme;
    cfg.mode = Mode::exact;
    cfg.approx = ApproxKind::linear;
    cfg.seed = seed;
    cfg.discount = sweep.discount;
    cfg.iterations = sweep.budget;
    cfg.capacity = 0;
    Environment env = make_environment(cfg.env, seed, cfg.discount);
    Trainer t(cfg, env);

    ComplexityRow row;
    row.depth = depth;
    row.scheme = scheme;
    row.seed = seed;
    row.budget = sweep.budget;
    row.feature_residual = assumption_residual(*t.environment().features, t.q_star());
    row.threshold = sweep.target_fraction * sup_norm(t.q_star()) + row.feature_residual;
    t.run([&](const RunRecord& r) {
        row.final_sup_error = r.sup_error;
        if (r.sup_error <= row.threshold) {
            row.iterations = r.iter;
            row.converged = true;
            return false;
        }
        return true;
    });
    return row;
}

inline std::vector<ComplexityRow> iteration_complexity_sweep(const ComplexitySweep& sweep) {
    std::vector<ComplexityRow> rows;
    for (int h : sweep.depths)
        for (Scheme s : sweep.schemes)
            for (auto seed : sweep.seeds) rows.push_back(tree_iterations_to_target(sweep, h, s, seed));
    return rows;
}

} // namespace discor
