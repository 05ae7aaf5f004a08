#pragma once

// Three-inverter synchronverter benchmark model: parallel grid-forming
// inverters with LC output filters feeding a common bus behind an RL grid
// impedance.  The electrical equations live in a dq frame rotating at the
// grid frequency; each controller keeps its own frame at angle offset
// delta_theta_sv.  All quantities are per-unit, derivatives per second
// (omega_b carries the rad/s scaling).
//
// State order (19):
//   [v_od, v_oq,
//    i_id_A, i_iq_A, i_id_B, i_iq_B, i_id_C, i_iq_C,
//    i_gd, i_gq,
//    omega_sv_A, delta_theta_sv_A, Mf_if_A,
//    omega_sv_B, delta_theta_sv_B, Mf_if_B,
//    omega_sv_C, delta_theta_sv_C, Mf_if_C]
// Input order (13):
//   [V_g, then per inverter {P_ref, Q_ref, omega_ref, v_ref}]

#include "spmor/ode_system.hpp"
#include "spmor/types.hpp"

#include <array>
#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace spmor {

/// A dq-frame pair, the real expansion of v = v_d + j v_q.
struct Dq {
    double d = 0.0;
    double q = 0.0;
};

struct GridParameters {
    double S_b = 2.75e6;                          // base power, VA
    double V_b = 563.0;                           // base voltage, V
    double omega_b = 2.0 * std::numbers::pi * 50.0;  // base frequency, rad/s
    double R_g = 0.01;                            // grid resistance, p.u.
    double L_g = 0.2;                             // grid inductance, p.u.
    double omega_g = 1.0;                         // grid frequency, p.u.
    double V_g = 1.0;                             // nominal grid voltage, p.u.
};

struct InverterParameters {
    double R_f = 0.003;    // filter resistance, p.u.
    double L_f = 0.08;     // filter inductance, p.u.
    double C_f = 0.074;    // filter capacitance, p.u.
    double V_dc = 1.0;     // DC-link voltage, p.u.
    double T_a = 2.0;      // inertia time constant, s
    double K_D = 1.0;      // damping gain
    double K_omega = 20.0; // frequency droop gain
    double K = 200.0;      // reactive-loop integral constant
    double K_q = 0.0;      // voltage droop gain
};

/// Full parameter set: one grid, three inverters (index 0=A, 1=B, 2=C).
struct SynchronverterParameters {
    GridParameters grid;
    std::array<InverterParameters, 3> inverter{};

    double total_filter_capacitance() const {
        return inverter[0].C_f + inverter[1].C_f + inverter[2].C_f;
    }
};

inline void validate(const GridParameters& p) {
    auto require = [](bool ok, const char* key, double v) {
        if (!ok) {
            std::ostringstream msg;
            msg << "grid parameter " << key << " out of range: " << v;
            throw std::invalid_argument(msg.str());
        }
    };
    require(std::isfinite(p.S_b) && p.S_b > 0.0, "S_b", p.S_b);
    require(std::isfinite(p.V_b) && p.V_b > 0.0, "V_b", p.V_b);
    require(std::isfinite(p.omega_b) && p.omega_b > 0.0, "omega_b", p.omega_b);
    require(std::isfinite(p.R_g), "R_g", p.R_g);
    require(std::isfinite(p.L_g) && p.L_g > 0.0, "L_g", p.L_g);
    require(std::isfinite(p.omega_g), "omega_g", p.omega_g);
    require(std::isfinite(p.V_g), "V_g", p.V_g);
}

inline void validate(const InverterParameters& p, char name) {
    auto require = [name](bool ok, const char* key, double v) {
        if (!ok) {
            std::ostringstream msg;
            msg << "inverter " << name << " parameter " << key
                << " out of range: " << v;
            throw std::invalid_argument(msg.str());
        }
    };
    require(std::isfinite(p.R_f), "R_f", p.R_f);
    require(std::isfinite(p.L_f) && p.L_f > 0.0, "L_f", p.L_f);
    require(std::isfinite(p.C_f) && p.C_f > 0.0, "C_f", p.C_f);
    require(std::isfinite(p.V_dc) && p.V_dc > 0.0, "V_dc", p.V_dc);
    require(std::isfinite(p.T_a) && p.T_a > 0.0, "T_a", p.T_a);
    require(std::isfinite(p.K_D), "K_D", p.K_D);
    require(std::isfinite(p.K_omega), "K_omega", p.K_omega);
    require(std::isfinite(p.K) && p.K > 0.0, "K", p.K);
    require(std::isfinite(p.K_q), "K_q", p.K_q);
}

inline void validate(const SynchronverterParameters& p) {
    validate(p.grid);
    validate(p.inverter[0], 'A');
    validate(p.inverter[1], 'B');
    validate(p.inverter[2], 'C');
}

// State/input layout.
namespace sv_index {
inline constexpr Index state_dim = 19;
inline constexpr Index input_dim = 13;

inline constexpr Index v_od = 0;
inline constexpr Index v_oq = 1;
inline constexpr Index i_gd = 8;
inline constexpr Index i_gq = 9;

inline constexpr Index inverter_current_d(int k) { return 2 + 2 * k; }
inline constexpr Index inverter_current_q(int k) { return 3 + 2 * k; }
inline constexpr Index omega_sv(int k) { return 10 + 3 * k; }
inline constexpr Index delta_theta_sv(int k) { return 11 + 3 * k; }
inline constexpr Index flux(int k) { return 12 + 3 * k; }  // Mf_if

inline constexpr Index input_V_g = 0;
inline constexpr Index input_P_ref(int k) { return 1 + 4 * k; }
inline constexpr Index input_Q_ref(int k) { return 2 + 4 * k; }
inline constexpr Index input_omega_ref(int k) { return 3 + 4 * k; }
inline constexpr Index input_v_ref(int k) { return 4 + 4 * k; }
}  // namespace sv_index

inline std::vector<std::string> synchronverter_state_labels() {
    return {"v_od",       "v_oq",
            "i_id_A",     "i_iq_A",     "i_id_B",  "i_iq_B", "i_id_C", "i_iq_C",
            "i_gd",       "i_gq",
            "omega_sv_A", "delta_theta_sv_A", "Mf_if_A",
            "omega_sv_B", "delta_theta_sv_B", "Mf_if_B",
            "omega_sv_C", "delta_theta_sv_C", "Mf_if_C"};
}

inline std::vector<std::string> synchronverter_input_labels() {
    return {"V_g",
            "P_ref_A", "Q_ref_A", "omega_ref_A", "v_ref_A",
            "P_ref_B", "Q_ref_B", "omega_ref_B", "v_ref_B",
            "P_ref_C", "Q_ref_C", "omega_ref_C", "v_ref_C"};
}

/// Grid-side current dynamics behind the RL impedance; the grid itself is an
/// ideal source v_g = (V_g, 0).
inline Dq grid_current_rhs(Dq i_g, Dq v_o, const GridParameters& p) {
    const double wb = p.omega_b;
    return Dq{wb * ((v_o.d - p.R_g * i_g.d - p.V_g) / p.L_g + p.omega_g * i_g.q),
              wb * ((v_o.q - p.R_g * i_g.q) / p.L_g - p.omega_g * i_g.d)};
}

/// Inverter-side inductor current dynamics; m is the modulation index so the
/// converter terminal voltage is m * V_dc.
inline Dq inverter_current_rhs(Dq i_i, Dq m, Dq v_o, const InverterParameters& p,
                               double omega_b, double omega_g) {
    return Dq{omega_b * ((m.d * p.V_dc - p.R_f * i_i.d - v_o.d) / p.L_f + omega_g * i_i.q),
              omega_b * ((m.q * p.V_dc - p.R_f * i_i.q - v_o.q) / p.L_f - omega_g * i_i.d)};
}

/// Shared filter-capacitor voltage dynamics; i_T is the summed inverter
/// current and C_T the summed filter capacitance.
inline Dq capacitor_voltage_rhs(Dq v_o, Dq i_T, Dq i_g, double C_T, double omega_b,
                                double omega_g) {
    if (!(C_T > 0.0)) {
        throw std::invalid_argument("capacitor_voltage_rhs: C_T must be positive");
    }
    return Dq{omega_b * ((i_T.d - i_g.d) / C_T + omega_g * v_o.q),
              omega_b * ((i_T.q - i_g.q) / C_T - omega_g * v_o.d)};
}

/// Rotation from the grid frame into a frame leading by delta_theta.
inline Dq rotate_frame(Dq v, double delta_theta) {
    const double c = std::cos(delta_theta);
    const double s = std::sin(delta_theta);
    return Dq{c * v.d + s * v.q, -s * v.d + c * v.q};
}

/// Average active/reactive power from controller-frame voltage and current:
/// P + jQ = v * conj(i).
struct PowerPair {
    double active = 0.0;
    double reactive = 0.0;
};

inline PowerPair instantaneous_powers(Dq v_oc, Dq i_ic) {
    return PowerPair{v_oc.d * i_ic.d + v_oc.q * i_ic.q,
                     v_oc.q * i_ic.d - v_oc.d * i_ic.q};
}

inline double voltage_magnitude(Dq v_oc) {
    return std::sqrt(v_oc.d * v_oc.d + v_oc.q * v_oc.q);
}

/// Emulated mechanical power: reference plus frequency droop.
inline double mechanical_power(double P_ref, double K_omega, double omega_ref,
                               double omega_sv) {
    return P_ref + K_omega * (omega_ref - omega_sv);
}

struct ControllerState {
    double omega_sv = 1.0;
    double delta_theta_sv = 0.0;
    double flux = 1.0;  // Mf_if
};

struct ControllerMeasurements {
    double P_e = 0.0;
    double Q = 0.0;
    double v_hat = 0.0;
};

struct ControllerReferences {
    double P_ref = 0.0;
    double Q_ref = 0.0;
    double omega_ref = 1.0;
    double v_ref = 1.0;
};

struct ControllerDerivatives {
    double d_omega_sv = 0.0;
    double d_delta_theta_sv = 0.0;
    double d_flux = 0.0;
};

/// Swing equation, angle integration and reactive-power loop of one
/// synchronverter.  omega_sv must stay positive (it divides the powers).
inline ControllerDerivatives controller_rhs(const ControllerState& s,
                                            const ControllerMeasurements& meas,
                                            const ControllerReferences& refs,
                                            const InverterParameters& p,
                                            double omega_b, double omega_g) {
    if (!(s.omega_sv > 0.0)) {
        std::ostringstream msg;
        msg << "controller_rhs: omega_sv = " << s.omega_sv
            << " is not positive; the swing equation is undefined there";
        throw std::domain_error(msg.str());
    }
    const double P_m = mechanical_power(refs.P_ref, p.K_omega, refs.omega_ref, s.omega_sv);
    ControllerDerivatives d;
    d.d_omega_sv = (P_m / s.omega_sv - meas.P_e / s.omega_sv -
                    p.K_D * (s.omega_sv - refs.omega_ref)) / p.T_a;
    d.d_delta_theta_sv = omega_b * (s.omega_sv - omega_g);
    d.d_flux = (refs.Q_ref - meas.Q + p.K_q * (refs.v_ref - meas.v_hat)) / p.K;
    return d;
}

/// Modulation index produced by the controller.  The internal EMF sits on the
/// controller d-axis, e^c = (omega_sv * Mf_if, 0), and is rotated back into
/// the grid frame before scaling by 1/V_dc.
inline Dq modulation_voltage(double omega_sv, double flux, double delta_theta_sv,
                             double V_dc) {
    if (!(V_dc > 0.0)) {
        throw std::invalid_argument("modulation_voltage: V_dc must be positive");
    }
    const Dq emf{omega_sv * flux, 0.0};
    const Dq m = rotate_frame(emf, -delta_theta_sv);
    return Dq{m.d / V_dc, m.q / V_dc};
}

/// Full 19-state right-hand side.  The three inverters are processed with an
/// identical instruction sequence so structurally identical units produce
/// bitwise identical derivative entries.
inline Vector assemble_full_rhs(const Vector& x, const Vector& u,
                                const SynchronverterParameters& params) {
    namespace idx = sv_index;
    if (x.size() != idx::state_dim || u.size() != idx::input_dim) {
        throw std::invalid_argument("assemble_full_rhs: bad state/input length");
    }
    const double omega_b = params.grid.omega_b;
    const double omega_g = params.grid.omega_g;
    const Dq v_o{x(idx::v_od), x(idx::v_oq)};
    const Dq i_g{x(idx::i_gd), x(idx::i_gq)};

    Vector dx(idx::state_dim);
    Dq i_T{0.0, 0.0};
    for (int k = 0; k < 3; ++k) {
        const InverterParameters& inv = params.inverter[static_cast<std::size_t>(k)];
        const Dq i_i{x(idx::inverter_current_d(k)), x(idx::inverter_current_q(k))};
        const ControllerState ctrl{x(idx::omega_sv(k)), x(idx::delta_theta_sv(k)),
                                   x(idx::flux(k))};
        const ControllerReferences refs{u(idx::input_P_ref(k)), u(idx::input_Q_ref(k)),
                                        u(idx::input_omega_ref(k)), u(idx::input_v_ref(k))};

        const Dq v_oc = rotate_frame(v_o, ctrl.delta_theta_sv);
        const Dq i_ic = rotate_frame(i_i, ctrl.delta_theta_sv);
        const PowerPair pq = instantaneous_powers(v_oc, i_ic);
        const ControllerMeasurements meas{pq.active, pq.reactive, voltage_magnitude(v_oc)};
        const Dq m = modulation_voltage(ctrl.omega_sv, ctrl.flux, ctrl.delta_theta_sv,
                                        inv.V_dc);

        const Dq di = inverter_current_rhs(i_i, m, v_o, inv, omega_b, omega_g);
        dx(idx::inverter_current_d(k)) = di.d;
        dx(idx::inverter_current_q(k)) = di.q;

        const ControllerDerivatives dc = controller_rhs(ctrl, meas, refs, inv,
                                                        omega_b, omega_g);
        dx(idx::omega_sv(k)) = dc.d_omega_sv;
        dx(idx::delta_theta_sv(k)) = dc.d_delta_theta_sv;
        dx(idx::flux(k)) = dc.d_flux;

        i_T.d += i_i.d;
        i_T.q += i_i.q;
    }

    const Dq dv = capacitor_voltage_rhs(v_o, i_T, i_g,
                                        params.total_filter_capacitance(),
                                        omega_b, omega_g);
    dx(idx::v_od) = dv.d;
    dx(idx::v_oq) = dv.q;

    GridParameters grid = params.grid;
    grid.V_g = u(idx::input_V_g);
    const Dq dig = grid_current_rhs(i_g, v_o, grid);
    dx(idx::i_gd) = dig.d;
    dx(idx::i_gq) = dig.q;
    return dx;
}

/// Builds the model as a generic OdeSystem; parameters are frozen into the
/// evaluator at construction.
inline OdeSystem build_synchronverter_system(const SynchronverterParameters& params) {
    validate(params);
    OdeSystem system;
    system.state_dim = sv_index::state_dim;
    system.input_dim = sv_index::input_dim;
    system.state_labels = synchronverter_state_labels();
    system.rhs = [params](const Vector& x, const Vector& u) {
        return assemble_full_rhs(x, u, params);
    };
    return system;
}

/// Nominal input vector: V_g plus per-inverter references taken from the
/// parameter defaults (P_ref 0.5, Q_ref 0, omega_ref 1, v_ref 1).
struct InputReferences {
    double P_ref = 0.5;
    double Q_ref = 0.0;
    double omega_ref = 1.0;
    double v_ref = 1.0;
};

inline Vector nominal_input(const GridParameters& grid,
                            const std::array<InputReferences, 3>& refs) {
    Vector u(sv_index::input_dim);
    u(sv_index::input_V_g) = grid.V_g;
    for (int k = 0; k < 3; ++k) {
        const InputReferences& r = refs[static_cast<std::size_t>(k)];
        u(sv_index::input_P_ref(k)) = r.P_ref;
        u(sv_index::input_Q_ref(k)) = r.Q_ref;
        u(sv_index::input_omega_ref(k)) = r.omega_ref;
        u(sv_index::input_v_ref(k)) = r.v_ref;
    }
    return u;
}

/// Flat start for equilibrium searches: nominal voltage, zero currents,
/// nominal frequency and flux, zero angles.
inline Vector flat_start_state() {
    Vector x = Vector::Zero(sv_index::state_dim);
    x(sv_index::v_od) = 1.0;
    for (int k = 0; k < 3; ++k) {
        x(sv_index::omega_sv(k)) = 1.0;
        x(sv_index::flux(k)) = 1.0;
    }
    return x;
}

}  // namespace spmor
