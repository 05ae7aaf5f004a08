#pragma once

// Eigenstructure analysis of the small-signal model: full nonsymmetric
// eigendecomposition, participation factors, and the modulus-based fast/slow
// state partition.  Modulus (not real part) drives the split: highly
// oscillatory modes can share real parts with slow ones.

#include "spmor/ode_system.hpp"
#include "spmor/types.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace spmor {

/// Result of a full eigendecomposition, sorted by descending modulus.
/// Left vectors are rows of the inverse right-vector matrix, so w_i v_j =
/// delta_ij holds by construction whenever the matrix is diagonalizable.
struct ModeSet {
    ComplexVector eigenvalues;   // sorted by descending |lambda|
    ComplexMatrix right_vectors; // columns, unit 2-norm
    ComplexMatrix left_vectors;  // rows
    Vector residuals;            // ||A v_i - lambda_i v_i||_2 per mode
    double matrix_norm = 0.0;    // ||A||_2
    double vector_condition = 0.0;
    bool vectors_reliable = true;
};

inline constexpr double kEigenvectorConditionLimit = 1e12;

inline ModeSet eigenpairs(const Matrix& A) {
    if (A.rows() != A.cols()) {
        throw std::invalid_argument("eigenpairs: matrix must be square");
    }
    if (!A.allFinite()) {
        throw std::invalid_argument("eigenpairs: matrix has non-finite entries");
    }
    const Index n = A.rows();

    Eigen::EigenSolver<Matrix> solver(A, /*computeEigenvectors=*/true);
    if (solver.info() != Eigen::Success) {
        throw std::runtime_error("eigenpairs: eigensolver did not converge");
    }

    // Sort by (|lambda| desc, Im desc, Re desc); conjugates end up adjacent.
    std::vector<Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Index{0});
    const ComplexVector raw = solver.eigenvalues();
    std::sort(order.begin(), order.end(), [&raw](Index a, Index b) {
        const double ma = std::abs(raw(a));
        const double mb = std::abs(raw(b));
        if (ma != mb) return ma > mb;
        if (raw(a).imag() != raw(b).imag()) return raw(a).imag() > raw(b).imag();
        return raw(a).real() > raw(b).real();
    });

    ModeSet modes;
    modes.eigenvalues.resize(n);
    modes.right_vectors.resize(n, n);
    for (Index i = 0; i < n; ++i) {
        modes.eigenvalues(i) = raw(order[static_cast<std::size_t>(i)]);
        ComplexVector v = solver.eigenvectors().col(order[static_cast<std::size_t>(i)]);
        modes.right_vectors.col(i) = v / v.norm();
    }

    const Eigen::JacobiSVD<ComplexMatrix> svd(modes.right_vectors);
    const double smin = svd.singularValues()(n - 1);
    modes.vector_condition =
        smin > 0.0 ? svd.singularValues()(0) / smin
                   : std::numeric_limits<double>::infinity();
    modes.vectors_reliable = modes.vector_condition < kEigenvectorConditionLimit;
    if (!modes.vectors_reliable) {
        modes.left_vectors = ComplexMatrix::Zero(n, n);
    } else {
        modes.left_vectors = modes.right_vectors.inverse();
    }

    const Eigen::JacobiSVD<Matrix> asvd(A);
    modes.matrix_norm = asvd.singularValues()(0);
    modes.residuals.resize(n);
    for (Index i = 0; i < n; ++i) {
        modes.residuals(i) =
            (A * modes.right_vectors.col(i) -
             modes.eigenvalues(i) * modes.right_vectors.col(i)).norm();
    }
    return modes;
}

/// Participation factors: p(k, i) = |w_i(k)| |v_i(k)|, column-normalized so
/// each mode's column sums to one.  Scale-invariant in the eigenvectors.
struct ParticipationMatrix {
    Matrix p;  // states x modes
    bool reliable = true;
};

inline ParticipationMatrix participation_matrix(const ModeSet& modes) {
    const Index n = modes.eigenvalues.size();
    if (!modes.vectors_reliable) {
        throw std::runtime_error(
            "participation_matrix: eigenvector matrix is near-defective "
            "(condition " + std::to_string(modes.vector_condition) + ")");
    }
    ParticipationMatrix result;
    result.p.resize(n, n);
    for (Index i = 0; i < n; ++i) {
        double column_sum = 0.0;
        for (Index k = 0; k < n; ++k) {
            const double value = std::abs(modes.left_vectors(i, k)) *
                                 std::abs(modes.right_vectors(k, i));
            result.p(k, i) = value;
            column_sum += value;
        }
        if (column_sum <= 0.0) {
            throw std::runtime_error("participation_matrix: zero column for mode " +
                                     std::to_string(i));
        }
        result.p.col(i) /= column_sum;
    }
    result.reliable = modes.vectors_reliable;
    return result;
}

/// Index sets of the slow (z) and fast (y) states plus the permutation taking
/// partitioned order [z; y] back to the original state order.
struct Partition {
    std::vector<Index> slow_indices;
    std::vector<Index> fast_indices;
    std::vector<Index> permutation;  // permutation[partitioned_pos] = original index
    Index n = 0;                     // slow count
    Index m = 0;                     // fast count
};

inline Matrix permutation_matrix(const Partition& partition) {
    const Index dim = partition.n + partition.m;
    Matrix P = Matrix::Zero(dim, dim);
    for (Index pos = 0; pos < dim; ++pos) {
        P(pos, partition.permutation[static_cast<std::size_t>(pos)]) = 1.0;
    }
    return P;
}

/// x (original order) -> [z; y] (partitioned order).
inline Vector to_partitioned(const Partition& partition, const Vector& x) {
    Vector zy(partition.n + partition.m);
    for (Index pos = 0; pos < zy.size(); ++pos) {
        zy(pos) = x(partition.permutation[static_cast<std::size_t>(pos)]);
    }
    return zy;
}

/// [z; y] (partitioned order) -> x (original order).
inline Vector from_partitioned(const Partition& partition, const Vector& zy) {
    Vector x(partition.n + partition.m);
    for (Index pos = 0; pos < zy.size(); ++pos) {
        x(partition.permutation[static_cast<std::size_t>(pos)]) = zy(pos);
    }
    return x;
}

struct ClassifyOptions {
    /// Fixed number of fast modes; when empty the split is chosen
    /// automatically (see classify_modes).
    std::optional<Index> fast_count;
    /// Minimum modulus ratio at the split boundary for the automatic rule.
    double gap_threshold = 5.0;
    /// States whose fast/slow participation masses differ by less than this
    /// are flagged as ambiguous.
    double ambiguity_margin = 0.05;
};

struct ClassifyReport {
    Index split = 0;              // number of fast modes
    double boundary_ratio = 0.0;  // modulus ratio across the split
    std::vector<std::string> warnings;
    std::vector<Index> ambiguous_states;
};

namespace detail {

inline bool is_oscillatory(const Complex& lambda) {
    return std::abs(lambda.imag()) > 1e-9 * std::abs(lambda);
}

}  // namespace detail

/// Splits modes into fast (large modulus) and slow (small modulus) sets and
/// assigns every state to the block holding most of its participation mass.
///
/// The automatic split considers boundaries between distinct moduli (so a
/// conjugate pair is never separated) and requires the candidate fast set to
/// be purely oscillatory, the slow set to retain at least one oscillatory
/// mode (otherwise the two-time-scale gap ratio degenerates to infinity),
/// and the boundary modulus ratio to exceed gap_threshold.  Among admissible
/// boundaries the largest fast set wins: that is the most aggressive
/// reduction that still satisfies the separation conditions.  If no boundary
/// qualifies, the split falls back to the largest boundary ratio with an
/// all-oscillatory fast set, then to the largest ratio overall.
inline Partition classify_modes(const ModeSet& modes, const ParticipationMatrix& pf,
                                const ClassifyOptions& options = {},
                                ClassifyReport* report = nullptr) {
    const Index n_total = modes.eigenvalues.size();
    if (pf.p.rows() != n_total || pf.p.cols() != n_total) {
        throw std::invalid_argument("classify_modes: participation matrix size mismatch");
    }

    ClassifyReport local_report;
    ClassifyReport& rep = report != nullptr ? *report : local_report;

    std::vector<Index> boundaries;  // split s: modes [0, s) fast, [s, n) slow
    for (Index s = 1; s < n_total; ++s) {
        const double hi = std::abs(modes.eigenvalues(s - 1));
        const double lo = std::abs(modes.eigenvalues(s));
        if (hi > lo * (1.0 + 1e-9)) boundaries.push_back(s);
    }
    auto boundary_ratio = [&modes](Index s) {
        return std::abs(modes.eigenvalues(s - 1)) / std::abs(modes.eigenvalues(s));
    };

    Index split = 0;
    if (options.fast_count.has_value()) {
        split = *options.fast_count;
        if (split <= 0 || split >= n_total) {
            throw std::invalid_argument("classify_modes: fast_count out of range");
        }
        if (std::find(boundaries.begin(), boundaries.end(), split) == boundaries.end()) {
            std::ostringstream msg;
            msg << "classify_modes: fast_count " << split
                << " splits modes of equal modulus (a conjugate pair or a "
                   "degenerate cluster)";
            throw std::invalid_argument(msg.str());
        }
    } else {
        auto fast_all_oscillatory = [&](Index s) {
            for (Index i = 0; i < s; ++i) {
                if (!detail::is_oscillatory(modes.eigenvalues(i))) return false;
            }
            return true;
        };
        auto slow_has_oscillation = [&](Index s) {
            for (Index i = s; i < n_total; ++i) {
                if (detail::is_oscillatory(modes.eigenvalues(i))) return true;
            }
            return false;
        };

        for (Index s : boundaries) {
            if (fast_all_oscillatory(s) && slow_has_oscillation(s) &&
                boundary_ratio(s) >= options.gap_threshold) {
                split = std::max(split, s);
            }
        }
        if (split == 0) {
            double best = 0.0;
            for (Index s : boundaries) {
                if (fast_all_oscillatory(s) && boundary_ratio(s) > best) {
                    best = boundary_ratio(s);
                    split = s;
                }
            }
            if (split != 0) {
                rep.warnings.push_back(
                    "no boundary leaves oscillatory modes in the slow block; "
                    "using the largest-ratio oscillatory-fast split");
            }
        }
        if (split == 0) {
            double best = 0.0;
            for (Index s : boundaries) {
                if (boundary_ratio(s) > best) {
                    best = boundary_ratio(s);
                    split = s;
                }
            }
            rep.warnings.push_back(
                "no oscillatory fast set exists; using the largest modulus gap");
        }
        if (split == 0) {
            throw std::runtime_error(
                "classify_modes: all moduli coincide, no split exists");
        }
    }

    rep.split = split;
    rep.boundary_ratio = boundary_ratio(split);

    Partition partition;
    for (Index k = 0; k < n_total; ++k) {
        double fast_mass = 0.0;
        double slow_mass = 0.0;
        for (Index i = 0; i < n_total; ++i) {
            if (i < split) {
                fast_mass += pf.p(k, i);
            } else {
                slow_mass += pf.p(k, i);
            }
        }
        if (std::abs(fast_mass - slow_mass) < options.ambiguity_margin) {
            rep.ambiguous_states.push_back(k);
            std::ostringstream msg;
            msg << "state " << k << " has near-equal participation mass (fast "
                << fast_mass << ", slow " << slow_mass << "); assigned by larger mass";
            rep.warnings.push_back(msg.str());
        }
        if (fast_mass > slow_mass) {
            partition.fast_indices.push_back(k);
        } else {
            partition.slow_indices.push_back(k);
        }
    }
    partition.n = static_cast<Index>(partition.slow_indices.size());
    partition.m = static_cast<Index>(partition.fast_indices.size());
    partition.permutation.reserve(static_cast<std::size_t>(n_total));
    partition.permutation.insert(partition.permutation.end(),
                                 partition.slow_indices.begin(),
                                 partition.slow_indices.end());
    partition.permutation.insert(partition.permutation.end(),
                                 partition.fast_indices.begin(),
                                 partition.fast_indices.end());
    if (partition.n == 0 || partition.m == 0) {
        throw std::runtime_error(
            "classify_modes: participation assigned every state to one block");
    }
    return partition;
}

}  // namespace spmor
