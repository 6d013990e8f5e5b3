#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace discor {

using Index = Eigen::Index;

/// Dense column vector. Vectors over state-action pairs use index s * A + a.
using Vector = Eigen::VectorXd;

/// Row-major dense matrix, so that a [S][A] table maps onto the pair index.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Action values Q(s, a); rows are states, columns actions.
using QTable = Matrix;

/// Probability vector over state-action pairs (s * A + a).
using DistSA = Vector;

/// Views a [S][A] table as a flat pair vector without copying.
inline Eigen::Map<const Vector> as_pairs(const Matrix& table) {
    return {table.data(), table.size()};
}

inline Matrix pairs_to_table(const Vector& pairs, Index states, Index actions) {
    return Eigen::Map<const Matrix>(pairs.data(), states, actions);
}

/// Base class for everything this library throws.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed input: invalid MDP, bad config value, unknown identifier.
class InvalidArgument : public Error {
public:
    using Error::Error;
};

/// An iterative solver ran out of budget.
class ConvergenceError : public Error {
public:
    ConvergenceError(const std::string& what, double residual)
        : Error(what), residual_(residual) {}
    double residual() const { return residual_; }

private:
    double residual_;
};

/// A weighted projection could not be solved.
class ProjectionError : public Error {
public:
    ProjectionError(const std::string& what, long iteration = -1)
        : Error(what), iteration_(iteration) {}
    long iteration() const { return iteration_; }

private:
    long iteration_;
};

/// An oracle-only quantity was requested without an oracle.
class OracleUnavailable : public Error {
public:
    using Error::Error;
};

} // namespace discor
