#pragma once

// Two-time-scale decoupling of a partitioned linear model plus the exact
// nonlinear remainders.
//
// With the state split into slow z (n) and fast y (m) blocks,
//   dz/dt = A11 z + A12 y + f(z, y)
//   dy/dt = A21 z + A22 y + g(z, y),
// a matrix L solving A21 - A22 L + L A11 - L A12 L = 0 makes eta = y + L z
// block-triangular, and H solving (A11 - A12 L) H - H (A22 + L A12) + A12 = 0
// makes xi = z - H eta block-diagonal.  The remainders are evaluated exactly
// (full nonlinear rhs minus the linear part), so the change of variables is
// exact; only the final slow/fast split is an approximation.

#include "spmor/modal_analysis.hpp"
#include "spmor/ode_system.hpp"
#include "spmor/sylvester.hpp"
#include "spmor/types.hpp"

#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace spmor {

struct PartitionedLinearModel {
    Matrix A11;  // n x n (slow-slow)
    Matrix A12;  // n x m
    Matrix A21;  // m x n
    Matrix A22;  // m x m (fast-fast)
    Partition partition;
    OperatingPoint operating_point;
    double full_norm = 0.0;       // ||A||_F of the unpartitioned matrix
    double a22_condition = 0.0;
};

inline constexpr double kA22ConditionLimit = 1e12;

/// Permutes the linearized A into [z; y] order and extracts the four blocks.
/// Rejects a numerically singular fast-fast block: the L iteration inverts it.
inline PartitionedLinearModel partition_model(const LinearModel& lin,
                                              const Partition& partition) {
    const Index dim = lin.A.rows();
    if (partition.n + partition.m != dim) {
        throw std::invalid_argument("partition_model: partition does not cover the state");
    }
    Matrix permuted(dim, dim);
    for (Index r = 0; r < dim; ++r) {
        for (Index c = 0; c < dim; ++c) {
            permuted(r, c) = lin.A(partition.permutation[static_cast<std::size_t>(r)],
                                   partition.permutation[static_cast<std::size_t>(c)]);
        }
    }
    PartitionedLinearModel blocks;
    const Index n = partition.n;
    const Index m = partition.m;
    blocks.A11 = permuted.topLeftCorner(n, n);
    blocks.A12 = permuted.topRightCorner(n, m);
    blocks.A21 = permuted.bottomLeftCorner(m, n);
    blocks.A22 = permuted.bottomRightCorner(m, m);
    blocks.partition = partition;
    blocks.operating_point = lin.operating_point;
    blocks.full_norm = lin.A.norm();

    const Eigen::JacobiSVD<Matrix> svd(blocks.A22);
    const double smin = svd.singularValues()(m - 1);
    blocks.a22_condition = smin > 0.0 ? svd.singularValues()(0) / smin
                                      : std::numeric_limits<double>::infinity();
    if (!(blocks.a22_condition < kA22ConditionLimit)) {
        std::ostringstream msg;
        msg << "partition_model: fast-fast block numerically singular "
            << "(condition estimate " << blocks.a22_condition << ")";
        throw std::runtime_error(msg.str());
    }
    return blocks;
}

struct LSolveOptions {
    double tol = 1e-12;   // relative step tolerance ||L_{k+1}-L_k||_F / ||L_k||_F
    int max_iter = 200;
};

struct LSolveReport {
    int iterations = 0;
    double last_step = 0.0;   // final ||L_{k+1} - L_k||_F
    double residual = 0.0;    // ||A21 - A22 L + L A11 - L A12 L||_F
};

inline double l_equation_residual(const PartitionedLinearModel& b, const Matrix& L) {
    return (b.A21 - b.A22 * L + L * b.A11 - L * b.A12 * L).norm();
}

/// Fixed-point iteration for the decoupling matrix L:
///   L_0 = A22^-1 A21,  L_{k+1} = A22^-1 A21 + A22^-1 L_k (A11 - A12 L_k).
/// Contracts when the time scales separate; five consecutive growing steps
/// are treated as divergence and reported with a gap diagnostic.
inline Matrix solve_L(const PartitionedLinearModel& blocks,
                      const LSolveOptions& options = {},
                      LSolveReport* report = nullptr) {
    const Eigen::PartialPivLU<Matrix> a22_lu(blocks.A22);
    const Matrix l0 = a22_lu.solve(blocks.A21);

    Matrix L = l0;
    double previous_step = std::numeric_limits<double>::infinity();
    int growth_streak = 0;
    LSolveReport local;
    LSolveReport& rep = report != nullptr ? *report : local;

    for (rep.iterations = 1; rep.iterations <= options.max_iter; ++rep.iterations) {
        const Matrix next = l0 + a22_lu.solve(L * (blocks.A11 - blocks.A12 * L));
        rep.last_step = (next - L).norm();
        L = next;
        if (rep.last_step <= options.tol * std::max(L.norm(), 1e-300)) {
            rep.residual = l_equation_residual(blocks, L);
            return L;
        }
        growth_streak = rep.last_step > previous_step ? growth_streak + 1 : 0;
        if (growth_streak >= 5) {
            std::ostringstream msg;
            msg << "solve_L: iteration diverging (step " << rep.last_step
                << " after " << rep.iterations
                << " iterations); the fixed point contracts only when the "
                   "fast block dominates the slow one -- check the spectral "
                   "gap of the chosen partition";
            throw std::runtime_error(msg.str());
        }
        previous_step = rep.last_step;
    }
    rep.residual = l_equation_residual(blocks, L);
    std::ostringstream msg;
    msg << "solve_L: no convergence in " << options.max_iter
        << " iterations (last step " << rep.last_step << ", residual "
        << rep.residual << ")";
    throw std::runtime_error(msg.str());
}

/// Solves (A11 - A12 L) H - H (A22 + L A12) + A12 = 0 for H.
inline Matrix solve_H(const PartitionedLinearModel& blocks, const Matrix& L) {
    const Matrix slow_block = blocks.A11 - blocks.A12 * L;
    const Matrix fast_block = blocks.A22 + L * blocks.A12;
    return solve_sylvester(slow_block, fast_block, -blocks.A12);
}

inline double h_equation_residual(const PartitionedLinearModel& b, const Matrix& L,
                                  const Matrix& H) {
    const Matrix slow_block = b.A11 - b.A12 * L;
    const Matrix fast_block = b.A22 + L * b.A12;
    return (slow_block * H - H * fast_block + b.A12).norm();
}

/// The completed change of variables: eta = y + L z, xi = z - H eta, with the
/// decoupled linear blocks and the diagnostics required of a valid transform.
struct DecouplingTransform {
    Matrix L;           // m x n
    Matrix H;           // n x m
    Matrix slow_block;  // A11 - A12 L
    Matrix fast_block;  // A22 + L A12
    double L_residual = 0.0;
    double H_residual = 0.0;
    double gap_ratio = 0.0;
    ComplexVector slow_eigenvalues;
    ComplexVector fast_eigenvalues;
    std::vector<std::string> warnings;
    Index n = 0;
    Index m = 0;
};

/// Greedy multiset distance between two spectra: the worst relative gap after
/// matching each eigenvalue of `a` to the closest unused one of `b`.
inline double spectrum_multiset_distance(const ComplexVector& a, const ComplexVector& b) {
    if (a.size() != b.size()) {
        throw std::invalid_argument("spectrum_multiset_distance: size mismatch");
    }
    std::vector<bool> used(static_cast<std::size_t>(b.size()), false);
    double worst = 0.0;
    for (Index i = 0; i < a.size(); ++i) {
        double best = std::numeric_limits<double>::infinity();
        Index best_j = -1;
        for (Index j = 0; j < b.size(); ++j) {
            if (used[static_cast<std::size_t>(j)]) continue;
            const double d = std::abs(a(i) - b(j));
            if (d < best) {
                best = d;
                best_j = j;
            }
        }
        used[static_cast<std::size_t>(best_j)] = true;
        const double scale = std::max({std::abs(a(i)), std::abs(b(best_j)), 1e-300});
        worst = std::max(worst, best / scale);
    }
    return worst;
}

/// Ratio min |Im lambda(fast)| / max |Im lambda(slow)|.  Returns +infinity
/// when the slow block is purely real (no oscillation left to separate from).
/// Violations of the fast-block conditions (simple, strictly oscillatory
/// eigenvalues) are reported as warnings, not failures.
inline double timescale_gap(const ComplexVector& slow_eigs, const ComplexVector& fast_eigs,
                            std::vector<std::string>* warnings = nullptr) {
    auto warn = [warnings](const std::string& text) {
        if (warnings != nullptr) warnings->push_back(text);
    };
    double min_fast_im = std::numeric_limits<double>::infinity();
    for (Index i = 0; i < fast_eigs.size(); ++i) {
        min_fast_im = std::min(min_fast_im, std::abs(fast_eigs(i).imag()));
        if (!detail::is_oscillatory(fast_eigs(i))) {
            std::ostringstream msg;
            msg << "fast eigenvalue " << fast_eigs(i).real() << "+"
                << fast_eigs(i).imag() << "j has (near-)zero imaginary part";
            warn(msg.str());
        }
        for (Index j = i + 1; j < fast_eigs.size(); ++j) {
            const double scale = std::max(std::abs(fast_eigs(i)), 1e-300);
            if (std::abs(fast_eigs(i) - fast_eigs(j)) < 1e-6 * scale) {
                std::ostringstream msg;
                msg << "fast eigenvalues " << i << " and " << j
                    << " coincide within 1e-6 relative (not simple)";
                warn(msg.str());
            }
        }
    }
    double max_slow_im = 0.0;
    for (Index i = 0; i < slow_eigs.size(); ++i) {
        max_slow_im = std::max(max_slow_im, std::abs(slow_eigs(i).imag()));
    }
    if (max_slow_im == 0.0) {
        warn("slow block is purely real; gap ratio degenerates to +infinity");
        return std::numeric_limits<double>::infinity();
    }
    return min_fast_im / max_slow_im;
}

inline double timescale_gap(const DecouplingTransform& transform,
                            std::vector<std::string>* warnings = nullptr) {
    return timescale_gap(transform.slow_eigenvalues, transform.fast_eigenvalues, warnings);
}

struct TransformOptions {
    LSolveOptions l_options{};
    /// Residual bound for both matrix equations, relative to ||A||_F.
    double residual_rtol = 1e-9;
    /// Bound on the block-spectrum reconstruction error, relative per mode.
    double spectrum_rtol = 1e-6;
};

/// Computes L, H and the decoupled blocks, then verifies the construction:
/// both matrix-equation residuals, the block spectra against the full
/// spectrum, and stability of both blocks.  Residual violations throw;
/// spectral conditions end up in `warnings` (they depend on the model, not
/// on this computation).
inline DecouplingTransform make_decoupling_transform(
    const PartitionedLinearModel& blocks, const ModeSet& full_modes,
    const TransformOptions& options = {}) {
    DecouplingTransform t;
    t.n = blocks.partition.n;
    t.m = blocks.partition.m;

    LSolveReport l_report;
    t.L = solve_L(blocks, options.l_options, &l_report);
    t.H = solve_H(blocks, t.L);
    t.slow_block = blocks.A11 - blocks.A12 * t.L;
    t.fast_block = blocks.A22 + t.L * blocks.A12;
    t.L_residual = l_equation_residual(blocks, t.L);
    t.H_residual = h_equation_residual(blocks, t.L, t.H);

    const double bound = options.residual_rtol * blocks.full_norm;
    if (!(t.L_residual <= bound)) {
        std::ostringstream msg;
        msg << "make_decoupling_transform: L residual " << t.L_residual
            << " exceeds " << bound;
        throw std::runtime_error(msg.str());
    }
    if (!(t.H_residual <= bound)) {
        std::ostringstream msg;
        msg << "make_decoupling_transform: H residual " << t.H_residual
            << " exceeds " << bound;
        throw std::runtime_error(msg.str());
    }

    t.slow_eigenvalues = Eigen::EigenSolver<Matrix>(t.slow_block, false).eigenvalues();
    t.fast_eigenvalues = Eigen::EigenSolver<Matrix>(t.fast_block, false).eigenvalues();

    ComplexVector combined(t.n + t.m);
    combined.head(t.n) = t.slow_eigenvalues;
    combined.tail(t.m) = t.fast_eigenvalues;
    const double spectrum_error =
        spectrum_multiset_distance(full_modes.eigenvalues, combined);
    if (!(spectrum_error <= options.spectrum_rtol)) {
        std::ostringstream msg;
        msg << "make_decoupling_transform: block spectra deviate from the full "
            << "spectrum by " << spectrum_error << " relative";
        throw std::runtime_error(msg.str());
    }

    for (Index i = 0; i < t.slow_eigenvalues.size(); ++i) {
        if (t.slow_eigenvalues(i).real() >= 0.0) {
            std::ostringstream msg;
            msg << "slow block eigenvalue " << i << " is not strictly stable: "
                << t.slow_eigenvalues(i).real();
            t.warnings.push_back(msg.str());
        }
    }
    for (Index i = 0; i < t.fast_eigenvalues.size(); ++i) {
        if (t.fast_eigenvalues(i).real() >= 0.0) {
            std::ostringstream msg;
            msg << "fast block eigenvalue " << i << " is not strictly stable: "
                << t.fast_eigenvalues(i).real();
            t.warnings.push_back(msg.str());
        }
    }
    t.gap_ratio = timescale_gap(t.slow_eigenvalues, t.fast_eigenvalues, &t.warnings);
    return t;
}

/// (z, y) -> (xi, eta).
inline std::pair<Vector, Vector> to_decoupled(const Vector& z, const Vector& y,
                                              const DecouplingTransform& t) {
    const Vector eta = y + t.L * z;
    const Vector xi = z - t.H * eta;
    return {xi, eta};
}

/// (xi, eta) -> (z, y); exact inverse of to_decoupled.
inline std::pair<Vector, Vector> from_decoupled(const Vector& xi, const Vector& eta,
                                                const DecouplingTransform& t) {
    const Vector z = xi + t.H * eta;
    const Vector y = eta - t.L * z;
    return {z, y};
}

/// Exact nonlinear remainders of the partitioned model in deviation
/// coordinates: f and g are the full rhs minus its linear part, so
/// A11 z + A12 y + f(z, y) reproduces the slow rows of the permuted rhs
/// identically (and likewise for g).  The input defaults to the frozen
/// operating-point input; passing a different u routes input deviations
/// through the remainders.
class NonlinearRemainders {
public:
    NonlinearRemainders(OdeSystem system, PartitionedLinearModel blocks)
        : system_(std::move(system)), blocks_(std::move(blocks)) {}

    struct Value {
        Vector f;  // n
        Vector g;  // m
    };

    Value evaluate(const Vector& z, const Vector& y, const Vector& u) const {
        const Partition& partition = blocks_.partition;
        Vector zy(partition.n + partition.m);
        zy.head(partition.n) = z;
        zy.tail(partition.m) = y;
        const Vector x = blocks_.operating_point.x_bar + from_partitioned(partition, zy);
        const Vector dx = eval_rhs(system_, x, u);
        const Vector permuted = to_partitioned(partition, dx);
        Value value;
        value.f = permuted.head(partition.n) - blocks_.A11 * z - blocks_.A12 * y;
        value.g = permuted.tail(partition.m) - blocks_.A21 * z - blocks_.A22 * y;
        return value;
    }

    Value evaluate(const Vector& z, const Vector& y) const {
        return evaluate(z, y, blocks_.operating_point.u_bar);
    }

    Vector f(const Vector& z, const Vector& y) const { return evaluate(z, y).f; }
    Vector g(const Vector& z, const Vector& y) const { return evaluate(z, y).g; }

    const PartitionedLinearModel& blocks() const { return blocks_; }
    const OperatingPoint& operating_point() const { return blocks_.operating_point; }
    const Partition& partition() const { return blocks_.partition; }

private:
    OdeSystem system_;
    PartitionedLinearModel blocks_;
};

/// The transformed systems.  `exact_rhs` is the block-diagonal form, an exact
/// change of variables; `slow_rhs`/`fast_rhs` are the approximate split where
/// the slow part sees eta = 0 and the fast part sees a frozen xi.
class DecoupledSystem {
public:
    DecoupledSystem(DecouplingTransform transform, NonlinearRemainders remainders)
        : t_(std::move(transform)), rem_(std::move(remainders)) {
        identity_minus_HL_ = Matrix::Identity(t_.n, t_.n) - t_.H * t_.L;
        identity_minus_LH_ = Matrix::Identity(t_.m, t_.m) - t_.L * t_.H;
    }

    const DecouplingTransform& transform() const { return t_; }
    const NonlinearRemainders& remainders() const { return rem_; }

    /// d(xi, eta)/dt of the exact block-diagonal system.
    std::pair<Vector, Vector> exact_rhs(const Vector& xi, const Vector& eta,
                                        const Vector& u) const {
        const auto [z, y] = from_decoupled(xi, eta, t_);
        const auto value = rem_.evaluate(z, y, u);
        const Vector dxi = t_.slow_block * xi + identity_minus_HL_ * value.f - t_.H * value.g;
        const Vector deta = t_.fast_block * eta + t_.L * value.f + value.g;
        return {dxi, deta};
    }

    /// Slow approximate subsystem: the remainder is evaluated at eta = 0.
    Vector slow_rhs(const Vector& xi, const Vector& u) const {
        const Vector z = xi;
        const Vector y = -(t_.L * xi);
        const auto value = rem_.evaluate(z, y, u);
        return t_.slow_block * xi + identity_minus_HL_ * value.f - t_.H * value.g;
    }

    /// Fast approximate subsystem with the slow variable frozen at xi_frozen.
    Vector fast_rhs(const Vector& eta, const Vector& u, const Vector& xi_frozen) const {
        const Vector z = xi_frozen + t_.H * eta;
        const Vector y = identity_minus_LH_ * eta - t_.L * xi_frozen;
        const auto value = rem_.evaluate(z, y, u);
        return t_.fast_block * eta + t_.L * value.f + value.g;
    }

private:
    DecouplingTransform t_;
    NonlinearRemainders rem_;
    Matrix identity_minus_HL_;
    Matrix identity_minus_LH_;
};

}  // namespace spmor
