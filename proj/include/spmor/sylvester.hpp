#pragma once

// Dense Sylvester solver A X - X B = C by Schur reduction (Bartels-Stewart).
// Both factors are reduced with a complex Schur decomposition so the
// triangular solve is a plain column sweep; sizes here are small enough that
// the complex detour costs nothing and avoids the 2x2-block bookkeeping of
// the real form.

#include "spmor/types.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace spmor {

struct SylvesterOptions {
    /// Minimum admissible |lambda_i(A) - lambda_j(B)| relative to the larger
    /// of the two matrix norms; closer spectra make the equation singular.
    double separation_rtol = 1e-8;
};

/// Solves A X - X B = C for X (A: n x n, B: m x m, C: n x m).
/// Throws when the spectra of A and B nearly intersect, naming the pair.
inline Matrix solve_sylvester(const Matrix& A, const Matrix& B, const Matrix& C,
                              const SylvesterOptions& options = {}) {
    const Index n = A.rows();
    const Index m = B.rows();
    if (A.cols() != n || B.cols() != m || C.rows() != n || C.cols() != m) {
        throw std::invalid_argument("solve_sylvester: dimension mismatch");
    }
    if (n == 0 || m == 0) return Matrix(n, m);

    const Eigen::ComplexSchur<Matrix> schur_a(A, /*computeU=*/true);
    const Eigen::ComplexSchur<Matrix> schur_b(B, /*computeU=*/true);
    if (schur_a.info() != Eigen::Success || schur_b.info() != Eigen::Success) {
        throw std::runtime_error("solve_sylvester: Schur decomposition failed");
    }
    const ComplexMatrix& Ta = schur_a.matrixT();
    const ComplexMatrix& Tb = schur_b.matrixT();
    const ComplexMatrix& Ua = schur_a.matrixU();
    const ComplexMatrix& Ub = schur_b.matrixU();

    const double scale = std::max(A.norm(), B.norm());
    const double min_separation = options.separation_rtol * std::max(scale, 1e-300);

    // Ta Y - Y Tb = Ua^* C Ub, solved column by column: the j-th column needs
    // (Ta - Tb(j,j) I) y_j = c_j + sum_{k<j} Tb(k,j) y_k.
    ComplexMatrix Y = Ua.adjoint() * C * Ub;
    for (Index j = 0; j < m; ++j) {
        for (Index k = 0; k < j; ++k) {
            Y.col(j) += Tb(k, j) * Y.col(k);
        }
        for (Index i = n - 1; i >= 0; --i) {
            Complex s = Y(i, j);
            for (Index k = i + 1; k < n; ++k) s -= Ta(i, k) * Y(k, j);
            const Complex diag = Ta(i, i) - Tb(j, j);
            if (std::abs(diag) < min_separation) {
                std::ostringstream msg;
                msg << "solve_sylvester: spectra nearly intersect: lambda_A=("
                    << Ta(i, i).real() << (Ta(i, i).imag() < 0 ? "" : "+")
                    << Ta(i, i).imag() << "j) vs lambda_B=(" << Tb(j, j).real()
                    << (Tb(j, j).imag() < 0 ? "" : "+") << Tb(j, j).imag()
                    << "j), separation " << std::abs(diag);
                throw std::runtime_error(msg.str());
            }
            Y(i, j) = s / diag;
        }
    }

    const ComplexMatrix X = Ua * Y * Ub.adjoint();
    return X.real();
}

}  // namespace spmor
