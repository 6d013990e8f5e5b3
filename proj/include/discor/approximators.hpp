#pragma once

#include "discor/types.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <map>
#include <memory>
#include <ostream>
#include <random>
#include <string>
#include <variant>
#include <vector>

namespace discor {

/// Regression data for one projection: pair indices (s*A+a, repeats allowed),
/// their targets and non-negative weights.
struct ProjectionBatch {
    std::vector<Index> pairs;
    Vector targets;
    Vector weights;

    Index size() const { return static_cast<Index>(pairs.size()); }
};

namespace detail {

inline void check_batch(const ProjectionBatch& b, Index num_pairs) {
    if (b.targets.size() != b.size() || b.weights.size() != b.size())
        throw InvalidArgument("projection batch: pairs, targets and weights differ in length");
    if (!b.targets.allFinite()) throw InvalidArgument("projection batch: non-finite target");
    if (!b.weights.allFinite() || (b.size() > 0 && b.weights.minCoeff() < 0.0))
        throw InvalidArgument("projection batch: weights must be finite and non-negative");
    for (Index p : b.pairs)
        if (p < 0 || p >= num_pairs) throw InvalidArgument("projection batch: pair index out of range");
}

/// Merges repeated pairs into one item carrying the summed weight and the
/// weighted-mean target, and drops zero-weight items. The weighted squared
/// loss changes only by a constant.
inline ProjectionBatch aggregate(const ProjectionBatch& b) {
    std::map<Index, std::pair<double, double>> acc;  // pair -> (sum w, sum w*y)
    for (Index i = 0; i < b.size(); ++i) {
        if (b.weights(i) == 0.0) continue;
        auto& [w, wy] = acc[b.pairs[i]];
        w += b.weights(i);
        wy += b.weights(i) * b.targets(i);
    }
    ProjectionBatch out;
    out.pairs.reserve(acc.size());
    out.targets.resize(static_cast<Index>(acc.size()));
    out.weights.resize(static_cast<Index>(acc.size()));
    Index i = 0;
    for (const auto& [p, sums] : acc) {
        out.pairs.push_back(p);
        out.weights(i) = sums.first;
        out.targets(i) = sums.second / sums.first;
        ++i;
    }
    return out;
}

} // namespace detail

// ---------------------------------------------------------------------------

/// One free value per pair.
struct TabularApprox {
    QTable table;

    Index num_params() const { return table.size(); }
    QTable evaluate() const { return table; }

    /// Each pair with positive total weight becomes the weighted mean of its
    /// targets; every other entry keeps its value.
    void project(const ProjectionBatch& batch) {
        detail::check_batch(batch, table.size());
        const ProjectionBatch agg = detail::aggregate(batch);
        for (Index i = 0; i < agg.size(); ++i) table.data()[agg.pairs[i]] = agg.targets(i);
    }

    Vector parameters() const { return as_pairs(table); }
    void set_parameters(const Vector& p) {
        if (p.size() != table.size()) throw InvalidArgument("tabular: parameter count mismatch");
        std::memcpy(table.data(), p.data(), sizeof(double) * std::size_t(p.size()));
    }
};

/// Q(s,a) = phi(s,a)^T w, fitted by weighted ridge regression.
struct LinearApprox {
    std::shared_ptr<const Matrix> phi;   ///< [S*A][d]
    std::shared_ptr<const Matrix> gram;  ///< optional phi phi^T, speeds up the dual solve
    Vector w;
    Index num_states = 0;
    Index num_actions = 0;
    double ridge = 1e-8;

    Index num_params() const { return w.size(); }

    QTable evaluate() const {
        const Vector q = (*phi) * w;
        return pairs_to_table(q, num_states, num_actions);
    }

    /// w = (Phi^T D Phi + ridge I)^{-1} Phi^T D y over the batch.
    ///
    /// With fewer distinct pairs than features the equivalent dual form
    /// Phi_b^T (D^{1/2} Phi_b Phi_b^T D^{1/2} + ridge I)^{-1} D^{1/2} y is solved.
    void project(const ProjectionBatch& batch) {
        detail::check_batch(batch, phi->rows());
        const ProjectionBatch agg = detail::aggregate(batch);
        const Index n = agg.size(), d = phi->cols();
        if (n == 0) {
            w.setZero(d);
            return;
        }
        const Vector sw = agg.weights.cwiseSqrt();
        Eigen::MatrixXd psi(n, d);
        for (Index i = 0; i < n; ++i) psi.row(i) = sw(i) * phi->row(agg.pairs[i]);
        const Vector rhs = sw.cwiseProduct(agg.targets);
        if (n < d) {
            Eigen::MatrixXd k(n, n);
            if (gram) {
                for (Index i = 0; i < n; ++i)
                    for (Index j = 0; j < n; ++j) k(i, j) = sw(i) * sw(j) * (*gram)(agg.pairs[i], agg.pairs[j]);
            } else {
                k.noalias() = psi * psi.transpose();
            }
            k.diagonal().array() += ridge;
            Eigen::LDLT<Eigen::MatrixXd> ldlt(k);
            if (ldlt.info() != Eigen::Success) throw ProjectionError("linear projection: dual system not solvable");
            w = psi.transpose() * ldlt.solve(rhs);
        } else {
            Eigen::MatrixXd a = psi.transpose() * psi;
            a.diagonal().array() += ridge;
            Eigen::LDLT<Eigen::MatrixXd> ldlt(a);
            if (ldlt.info() != Eigen::Success) throw ProjectionError("linear projection: normal equations not solvable");
            w = ldlt.solve(psi.transpose() * rhs);
        }
        if (!w.allFinite()) throw ProjectionError("linear projection: non-finite solution");
    }

    Vector parameters() const { return w; }
    void set_parameters(const Vector& p) {
        if (p.size() != w.size()) throw InvalidArgument("linear: parameter count mismatch");
        w = p;
    }
};

/// Feed-forward network from per-state observations to one output per action.
/// Hidden layers use tanh, the output layer is linear.
struct MlpApprox {
    struct Layer {
        Eigen::MatrixXd weight;  ///< [out][in]
        Eigen::VectorXd bias;
    };

    std::shared_ptr<const Matrix> observations;  ///< [S][obs_dim]
    std::vector<Layer> layers;
    Index num_actions = 0;
    double step_size = 1e-2;
    long step_count = 0;

    /// Gaussian init with variance 1/fan_in, zero biases.
    static MlpApprox create(std::shared_ptr<const Matrix> obs, Index actions, const std::vector<Index>& hidden,
                            std::uint64_t seed, double step_size = 1e-2) {
        MlpApprox m;
        m.observations = std::move(obs);
        m.num_actions = actions;
        m.step_size = step_size;
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> normal(0.0, 1.0);
        Index in = m.observations->cols();
        std::vector<Index> widths = hidden;
        widths.push_back(actions);
        for (Index out : widths) {
            if (out <= 0) throw InvalidArgument("mlp: layer widths must be positive");
            Layer l{Eigen::MatrixXd(out, in), Eigen::VectorXd::Zero(out)};
            const double scale = 1.0 / std::sqrt(double(in));
            for (Index i = 0; i < l.weight.size(); ++i) l.weight.data()[i] = scale * normal(rng);
            m.layers.push_back(std::move(l));
            in = out;
        }
        return m;
    }

    Index num_params() const {
        Index n = 0;
        for (const auto& l : layers) n += l.weight.size() + l.bias.size();
        return n;
    }

    /// Activations of every layer for the given input rows; back() is the output.
    std::vector<Eigen::MatrixXd> forward(const Eigen::MatrixXd& x) const {
        std::vector<Eigen::MatrixXd> acts;
        acts.reserve(layers.size() + 1);
        acts.push_back(x);
        for (std::size_t i = 0; i < layers.size(); ++i) {
            Eigen::MatrixXd z = acts.back() * layers[i].weight.transpose();
            z.rowwise() += layers[i].bias.transpose();
            if (i + 1 < layers.size()) z = z.array().tanh().matrix();
            acts.push_back(std::move(z));
        }
        return acts;
    }

    QTable evaluate() const {
        const Eigen::MatrixXd out = forward(Eigen::MatrixXd(*observations)).back();
        return QTable(out);
    }

    /// Gradient of (1/N) sum_i w_i (Q(s_i,a_i) - y_i)^2, flattened like parameters().
    Vector gradient(const ProjectionBatch& batch) const {
        const Index n = batch.size();
        Vector grad = Vector::Zero(num_params());
        if (n == 0) return grad;
        Eigen::MatrixXd x(n, observations->cols());
        for (Index i = 0; i < n; ++i) x.row(i) = observations->row(batch.pairs[i] / num_actions);
        const auto acts = forward(x);
        Eigen::MatrixXd delta = Eigen::MatrixXd::Zero(n, num_actions);
        for (Index i = 0; i < n; ++i) {
            const Index a = batch.pairs[i] % num_actions;
            delta(i, a) = 2.0 * batch.weights(i) * (acts.back()(i, a) - batch.targets(i)) / double(n);
        }
        std::vector<Eigen::MatrixXd> dw(layers.size());
        std::vector<Eigen::VectorXd> db(layers.size());
        for (std::size_t li = layers.size(); li-- > 0;) {
            dw[li] = delta.transpose() * acts[li];
            db[li] = delta.colwise().sum().transpose();
            if (li == 0) break;
            delta = (delta * layers[li].weight).array() * (1.0 - acts[li].array().square());
        }
        Index off = 0;
        for (std::size_t li = 0; li < layers.size(); ++li) {
            for (Index r = 0; r < dw[li].rows(); ++r)
                for (Index c = 0; c < dw[li].cols(); ++c) grad(off++) = dw[li](r, c);
            grad.segment(off, db[li].size()) = db[li];
            off += db[li].size();
        }
        return grad;
    }

    /// `budget` plain gradient steps on the weighted squared error.
    void project(const ProjectionBatch& batch, int budget) {
        detail::check_batch(batch, observations->rows() * num_actions);
        for (int step = 0; step < budget; ++step) {
            set_parameters(parameters() - step_size * gradient(batch));
            ++step_count;
        }
        for (const auto& l : layers)
            if (!l.weight.allFinite() || !l.bias.allFinite())
                throw ProjectionError("mlp projection diverged to non-finite parameters");
    }

    /// Layer by layer: weight row-major, then bias.
    Vector parameters() const {
        Vector p(num_params());
        Index off = 0;
        for (const auto& l : layers) {
            for (Index r = 0; r < l.weight.rows(); ++r)
                for (Index c = 0; c < l.weight.cols(); ++c) p(off++) = l.weight(r, c);
            p.segment(off, l.bias.size()) = l.bias;
            off += l.bias.size();
        }
        return p;
    }

    void set_parameters(const Vector& p) {
        if (p.size() != num_params()) throw InvalidArgument("mlp: parameter count mismatch");
        Index off = 0;
        for (auto& l : layers) {
            for (Index r = 0; r < l.weight.rows(); ++r)
                for (Index c = 0; c < l.weight.cols(); ++c) l.weight(r, c) = p(off++);
            l.bias = p.segment(off, l.bias.size());
            off += l.bias.size();
        }
    }
};

// ---------------------------------------------------------------------------

enum class ApproxKind : std::uint32_t { tabular = 1, linear = 2, mlp = 3 };

inline const char* approx_name(ApproxKind k) {
    switch (k) {
        case ApproxKind::tabular: return "tabular";
        case ApproxKind::linear: return "linear";
        default: return "mlp";
    }
}

inline ApproxKind parse_approx(const std::string& name) {
    if (name == "tabular") return ApproxKind::tabular;
    if (name == "linear") return ApproxKind::linear;
    if (name == "mlp") return ApproxKind::mlp;
    throw InvalidArgument("unknown approximator '" + name + "' (expected tabular, linear or mlp)");
}

/// Action-value representation with weighted projection.
class Approximator {
public:
    Approximator() = default;
    Approximator(TabularApprox a) : impl_(std::move(a)) {}
    Approximator(LinearApprox a) : impl_(std::move(a)) {}
    Approximator(MlpApprox a) : impl_(std::move(a)) {}

    ApproxKind kind() const { return static_cast<ApproxKind>(impl_.index() + 1); }

    QTable evaluate() const {
        return std::visit([](const auto& a) { return a.evaluate(); }, impl_);
    }

    /// Weighted projection of the batch targets. `budget` only matters for mlp.
    void project(const ProjectionBatch& batch, int budget) {
        std::visit(
            [&](auto& a) {
                if constexpr (std::is_same_v<std::decay_t<decltype(a)>, MlpApprox>)
                    a.project(batch, budget);
                else
                    a.project(batch);
            },
            impl_);
    }

    Vector parameters() const {
        return std::visit([](const auto& a) { return a.parameters(); }, impl_);
    }
    void set_parameters(const Vector& p) {
        std::visit([&](auto& a) { a.set_parameters(p); }, impl_);
    }
    Index num_params() const {
        return std::visit([](const auto& a) { return a.num_params(); }, impl_);
    }

    /// Layer shapes for checkpoints: {S, A} for tabular, {d} for linear,
    /// {in, width..., A} for mlp.
    std::vector<std::uint64_t> shape() const {
        if (auto t = std::get_if<TabularApprox>(&impl_))
            return {std::uint64_t(t->table.rows()), std::uint64_t(t->table.cols())};
        if (auto l = std::get_if<LinearApprox>(&impl_)) return {std::uint64_t(l->w.size())};
        const auto& m = std::get<MlpApprox>(impl_);
        std::vector<std::uint64_t> s{std::uint64_t(m.layers.front().weight.cols())};
        for (const auto& layer : m.layers) s.push_back(std::uint64_t(layer.weight.rows()));
        return s;
    }

    template <class T>
    T* get() { return std::get_if<T>(&impl_); }
    template <class T>
    const T* get() const { return std::get_if<T>(&impl_); }

private:
    std::variant<TabularApprox, LinearApprox, MlpApprox> impl_;
};

// ---------------------------------------------------------------------------
// Checkpoints: "DQCK", u32 version, u32 kind, u32 rank, rank x u64 shape,
// u64 count, count x f64. Everything little-endian.

namespace detail {

template <class T>
void put(std::ostream& os, T v) {
    static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T get(std::istream& is) {
    T v{};
    if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw InvalidArgument("checkpoint: truncated");
    return v;
}

} // namespace detail

inline void write_checkpoint(std::ostream& os, const Approximator& approx) {
    os.write("DQCK", 4);
    detail::put<std::uint32_t>(os, 1);
    detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(approx.kind()));
    const auto shape = approx.shape();
    detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(shape.size()));
    for (auto s : shape) detail::put<std::uint64_t>(os, s);
    const Vector p = approx.parameters();
    detail::put<std::uint64_t>(os, std::uint64_t(p.size()));
    for (Index i = 0; i < p.size(); ++i) detail::put<double>(os, p(i));
}

/// Loads parameters into an approximator of the same kind and shape.
inline void read_checkpoint(std::istream& is, Approximator& approx) {
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "DQCK", 4) != 0) throw InvalidArgument("checkpoint: bad magic");
    if (detail::get<std::uint32_t>(is) != 1) throw InvalidArgument("checkpoint: unsupported version");
    if (detail::get<std::uint32_t>(is) != static_cast<std::uint32_t>(approx.kind()))
        throw InvalidArgument("checkpoint: approximator kind mismatch");
    const auto rank = detail::get<std::uint32_t>(is);
    std::vector<std::uint64_t> shape(rank);
    for (auto& s : shape) s = detail::get<std::uint64_t>(is);
    if (shape != approx.shape()) throw InvalidArgument("checkpoint: shape mismatch");
    const auto count = detail::get<std::uint64_t>(is);
    if (count != std::uint64_t(approx.num_params())) throw InvalidArgument("checkpoint: parameter count mismatch");
    Vector p(static_cast<Index>(count));
    for (Index i = 0; i < p.size(); ++i) p(i) = detail::get<double>(is);
    approx.set_parameters(p);
}

} // namespace discor
