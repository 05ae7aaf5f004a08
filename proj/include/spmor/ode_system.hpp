#pragma once

// Nonlinear input-driven ODE systems dx/dt = f(x, u) with numerical
// linearization.  Everything here is dimension-checked and side-effect free;
// concrete models (see synchronverter.hpp) plug in through OdeSystem::rhs.

#include "spmor/types.hpp"

#include <cmath>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace spmor {

/// Right-hand side evaluator: (state, input) -> state derivative.
using RhsFunction = std::function<Vector(const Vector&, const Vector&)>;

/// A nonlinear ODE system dx/dt = rhs(x, u).  The evaluator must be pure:
/// identical arguments yield identical results, no interior mutation.
struct OdeSystem {
    Index state_dim = 0;
    Index input_dim = 0;
    std::vector<std::string> state_labels;
    RhsFunction rhs;
};

/// Evaluates rhs with dimension and finiteness checks.  Non-finite entries in
/// the result are reported with the state equation that produced them.
inline Vector eval_rhs(const OdeSystem& system, const Vector& x, const Vector& u) {
    if (x.size() != system.state_dim) {
        std::ostringstream msg;
        msg << "eval_rhs: state vector has length " << x.size() << ", expected "
            << system.state_dim;
        throw std::invalid_argument(msg.str());
    }
    if (u.size() != system.input_dim) {
        std::ostringstream msg;
        msg << "eval_rhs: input vector has length " << u.size() << ", expected "
            << system.input_dim;
        throw std::invalid_argument(msg.str());
    }
    Vector dx = system.rhs(x, u);
    if (dx.size() != system.state_dim) {
        std::ostringstream msg;
        msg << "eval_rhs: rhs returned " << dx.size() << " entries, expected "
            << system.state_dim;
        throw std::logic_error(msg.str());
    }
    for (Index i = 0; i < dx.size(); ++i) {
        if (!std::isfinite(dx(i))) {
            std::ostringstream msg;
            msg << "eval_rhs: non-finite derivative in state equation " << i;
            if (static_cast<std::size_t>(i) < system.state_labels.size()) {
                msg << " (" << system.state_labels[static_cast<std::size_t>(i)] << ")";
            }
            throw std::runtime_error(msg.str());
        }
    }
    return dx;
}

/// An equilibrium candidate.  The residual norm is recomputed from the system
/// at construction so the stored value can never go stale.
struct OperatingPoint {
    Vector x_bar;
    Vector u_bar;
    double residual_inf_norm = 0.0;
};

inline OperatingPoint make_operating_point(const OdeSystem& system, Vector x, Vector u) {
    const Vector residual = eval_rhs(system, x, u);
    return OperatingPoint{std::move(x), std::move(u),
                          residual.lpNorm<Eigen::Infinity>()};
}

namespace detail {

inline void check_fd_step(const Vector& v, Index j, double h, const char* what) {
    if (!(h > 0.0)) {
        throw std::invalid_argument(std::string(what) + ": step h must be positive");
    }
    // A step below the representable spacing at v(j) would difference nothing.
    if (v(j) + h == v(j)) {
        std::ostringstream msg;
        msg << what << ": step h=" << h << " vanishes at coordinate " << j
            << " (value " << v(j) << ")";
        throw std::invalid_argument(msg.str());
    }
}

}  // namespace detail

/// Central-difference Jacobian of rhs with respect to the state, evaluated at
/// (x, u).  Column j is (rhs(x + h e_j, u) - rhs(x - h e_j, u)) / (2h).
inline Matrix jacobian_state(const OdeSystem& system, const Vector& x, const Vector& u,
                             double h) {
    Matrix jac(system.state_dim, system.state_dim);
    Vector xp = x;
    Vector xm = x;
    for (Index j = 0; j < system.state_dim; ++j) {
        detail::check_fd_step(x, j, h, "jacobian_state");
        xp(j) = x(j) + h;
        xm(j) = x(j) - h;
        const Vector fp = eval_rhs(system, xp, u);
        const Vector fm = eval_rhs(system, xm, u);
        for (Index i = 0; i < system.state_dim; ++i) {
            jac(i, j) = (fp(i) - fm(i)) / (2.0 * h);
        }
        xp(j) = x(j);
        xm(j) = x(j);
    }
    return jac;
}

/// Central-difference Jacobian of rhs with respect to the input.
inline Matrix jacobian_input(const OdeSystem& system, const Vector& x, const Vector& u,
                             double h) {
    Matrix jac(system.state_dim, system.input_dim);
    Vector up = u;
    Vector um = u;
    for (Index j = 0; j < system.input_dim; ++j) {
        detail::check_fd_step(u, j, h, "jacobian_input");
        up(j) = u(j) + h;
        um(j) = u(j) - h;
        const Vector fp = eval_rhs(system, x, up);
        const Vector fm = eval_rhs(system, x, um);
        for (Index i = 0; i < system.state_dim; ++i) {
            jac(i, j) = (fp(i) - fm(i)) / (2.0 * h);
        }
        up(j) = u(j);
        um(j) = u(j);
    }
    return jac;
}

/// Small-signal model dx_s/dt = A x_s + B u_s about an operating point, with
/// x_s = x - x_bar and u_s = u - u_bar.
struct LinearModel {
    Matrix A;
    Matrix B;
    OperatingPoint operating_point;
    double fd_step = 0.0;
};

inline constexpr double kLinearizeResidualWarn = 1e-6;

/// Linearizes the system about an operating point.  Returns the model plus a
/// flag telling whether the point's residual exceeded the warning threshold
/// (linearizing far from equilibrium is allowed but usually a mistake).
inline LinearModel linearize(const OdeSystem& system, const OperatingPoint& op,
                             double h, bool* residual_warning = nullptr) {
    if (residual_warning != nullptr) {
        *residual_warning = op.residual_inf_norm > kLinearizeResidualWarn;
    }
    LinearModel model;
    model.A = jacobian_state(system, op.x_bar, op.u_bar, h);
    model.B = jacobian_input(system, op.x_bar, op.u_bar, h);
    model.operating_point = op;
    model.fd_step = h;
    return model;
}

}  // namespace spmor
