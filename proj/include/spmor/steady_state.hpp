#pragma once

// Damped-Newton equilibrium search over an OdeSystem.
//
// The linear solve inside Newton is a full-space GMRES (Arnoldi plus a small
// least-squares problem) written with plain index-ordered loops.  Every
// operation is either componentwise or a reduction to a scalar, so the
// computed update inherits any permutation symmetry of the Jacobian and
// residual bit-for-bit; pivoted elimination does not have that property.
// Structurally identical subsystems therefore stay bitwise identical through
// the whole iteration, which the simulator relies on downstream.

#include "spmor/ode_system.hpp"
#include "spmor/types.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace spmor {

namespace detail {

struct DenseSolveResult {
    Vector x;
    double relative_residual = 0.0;
    double condition_estimate = 0.0;
};

/// Solves J x = b with full-subspace GMRES (modified Gram-Schmidt with one
/// reorthogonalization pass, Givens-rotated Hessenberg).  For an n-by-n
/// system this is a direct method: the Krylov space is grown to dimension n
/// unless the residual collapses first.
inline DenseSolveResult gmres_dense_solve(const Matrix& J, const Vector& b) {
    const Index n = J.rows();
    if (J.cols() != n || b.size() != n) {
        throw std::invalid_argument("gmres_dense_solve: dimension mismatch");
    }

    DenseSolveResult result;
    result.x = Vector::Zero(n);

    double beta2 = 0.0;
    for (Index i = 0; i < n; ++i) beta2 += b(i) * b(i);
    const double beta = std::sqrt(beta2);
    if (beta == 0.0) {
        result.condition_estimate = 1.0;
        return result;
    }

    Matrix basis(n, n + 1);
    for (Index i = 0; i < n; ++i) basis(i, 0) = b(i) / beta;

    Matrix hess = Matrix::Zero(n + 1, n);
    Vector g = Vector::Zero(n + 1);
    g(0) = beta;
    Vector cs = Vector::Zero(n);
    Vector sn = Vector::Zero(n);

    Index k = 0;
    Vector w(n);
    for (Index j = 0; j < n; ++j) {
        // w = J * basis_j, row sums accumulated in column order.
        for (Index i = 0; i < n; ++i) {
            double s = 0.0;
            for (Index c = 0; c < n; ++c) s += J(i, c) * basis(c, j);
            w(i) = s;
        }
        for (int pass = 0; pass < 2; ++pass) {
            for (Index i = 0; i <= j; ++i) {
                double h = 0.0;
                for (Index r = 0; r < n; ++r) h += w(r) * basis(r, i);
                hess(i, j) += h;
                for (Index r = 0; r < n; ++r) w(r) -= h * basis(r, i);
            }
        }
        double wnorm2 = 0.0;
        for (Index r = 0; r < n; ++r) wnorm2 += w(r) * w(r);
        hess(j + 1, j) = std::sqrt(wnorm2);

        for (Index i = 0; i < j; ++i) {
            const double t = cs(i) * hess(i, j) + sn(i) * hess(i + 1, j);
            hess(i + 1, j) = -sn(i) * hess(i, j) + cs(i) * hess(i + 1, j);
            hess(i, j) = t;
        }
        const double a = hess(j, j);
        const double c = hess(j + 1, j);
        const double r = std::hypot(a, c);
        if (r == 0.0) {
            cs(j) = 1.0;
            sn(j) = 0.0;
        } else {
            cs(j) = a / r;
            sn(j) = c / r;
        }
        hess(j, j) = r;
        hess(j + 1, j) = 0.0;
        g(j + 1) = -sn(j) * g(j);
        g(j) = cs(j) * g(j);

        k = j + 1;
        const double breakdown = std::sqrt(wnorm2);
        const double resid = std::abs(g(j + 1));
        if (breakdown <= 1e-300 || resid <= 1e-16 * beta) break;
        if (j + 1 < n + 1) {
            for (Index i2 = 0; i2 < n; ++i2) basis(i2, j + 1) = w(i2) / breakdown;
        }
    }

    const Eigen::JacobiSVD<Matrix> svd(hess.topLeftCorner(k, k));
    const double smin = svd.singularValues()(k - 1);
    const double smax = svd.singularValues()(0);
    result.condition_estimate =
        smin > 0.0 ? smax / smin : std::numeric_limits<double>::infinity();

    Vector y = Vector::Zero(k);
    for (Index i = k - 1; i >= 0; --i) {
        double s = g(i);
        for (Index j2 = i + 1; j2 < k; ++j2) s -= hess(i, j2) * y(j2);
        if (hess(i, i) == 0.0) {
            std::ostringstream msg;
            msg << "gmres_dense_solve: singular system (condition estimate "
                << result.condition_estimate << ")";
            throw std::runtime_error(msg.str());
        }
        y(i) = s / hess(i, i);
    }
    for (Index j2 = 0; j2 < k; ++j2) {
        for (Index i = 0; i < n; ++i) result.x(i) += y(j2) * basis(i, j2);
    }
    result.relative_residual = std::abs(g(k)) / beta;
    return result;
}

}  // namespace detail

struct NewtonOptions {
    double tol = 1e-10;
    int max_iter = 50;
    double fd_step = 1e-7;
    int max_backtracks = 40;
    double condition_limit = 1e12;
};

struct SteadyStateResult {
    OperatingPoint op;
    int iterations = 0;
    double jacobian_condition = 0.0;
};

/// Newton iteration on rhs(x, u) = 0 with a halving line search on the
/// residual norm.  Throws when the Jacobian is numerically singular (with a
/// condition estimate) or when max_iter is exhausted (with the best residual
/// seen, so the caller can retry from elsewhere).
inline SteadyStateResult find_steady_state(const OdeSystem& system, const Vector& u,
                                           const Vector& x_init,
                                           const NewtonOptions& options = {}) {
    if (!(options.tol > 0.0)) {
        throw std::invalid_argument("find_steady_state: tol must be positive");
    }
    if (!x_init.allFinite()) {
        throw std::invalid_argument("find_steady_state: non-finite initial state");
    }

    Vector x = x_init;
    double best_residual = std::numeric_limits<double>::infinity();
    double last_condition = 0.0;

    for (int it = 0; it < options.max_iter; ++it) {
        const Vector f = eval_rhs(system, x, u);
        const double residual = f.lpNorm<Eigen::Infinity>();
        best_residual = std::min(best_residual, residual);
        if (residual <= options.tol) {
            SteadyStateResult result{make_operating_point(system, x, u), it,
                                     last_condition};
            return result;
        }

        const Matrix jac = jacobian_state(system, x, u, options.fd_step);
        const auto solve = detail::gmres_dense_solve(jac, -f);
        last_condition = solve.condition_estimate;
        if (!(solve.condition_estimate < options.condition_limit)) {
            std::ostringstream msg;
            msg << "find_steady_state: Jacobian numerically singular at iteration "
                << it << " (condition estimate " << solve.condition_estimate << ")";
            throw std::runtime_error(msg.str());
        }

        const double f_norm = f.norm();
        double step = 1.0;
        bool accepted = false;
        for (int bt = 0; bt <= options.max_backtracks; ++bt) {
            const Vector candidate = x + step * solve.x;
            double candidate_norm = std::numeric_limits<double>::infinity();
            try {
                candidate_norm = eval_rhs(system, candidate, u).norm();
            } catch (const std::exception&) {
                // outside the model's domain (e.g. omega_sv <= 0): shorten step
            }
            if (candidate_norm < f_norm) {
                x = candidate;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) {
            std::ostringstream msg;
            msg << "find_steady_state: line search stalled at iteration " << it
                << "; best residual " << best_residual;
            throw std::runtime_error(msg.str());
        }
    }

    std::ostringstream msg;
    msg << "find_steady_state: no convergence in " << options.max_iter
        << " iterations; best residual " << best_residual;
    throw std::runtime_error(msg.str());
}

}  // namespace spmor
