#pragma once

#include <optional>

#include <Eigen/Dense>

#include "tepid/errors.hpp"

namespace tepid {

// ============================================================================
// Port model types
// ============================================================================

/// Thevenin source seen from the measurement port.
struct TheveninParams {
    double e_th;  // source voltage magnitude (kV), > 0
    double r_th;  // series resistance (ohm), >= 0
    double x_th;  // series reactance (ohm), > 0
};

/// Steady-state port quantities at one operating point.
struct PortState {
    double p;      // active power into the load (MW)
    double q;      // reactive power into the load (MVar)
    double v_mag;  // bus voltage magnitude (kV)
    double i_mag;  // branch current magnitude (kA)
};

/// Magnitude sensitivity pairs d|V|/dP, d|V|/dQ, d|I|/dP, d|I|/dQ.
struct Msp {
    double b_vp;  // kV/MW
    double b_vq;  // kV/MVar
    double b_ip;  // kA/MW
    double b_iq;  // kA/MVar
};

// ============================================================================
// Closed-form port solution
// ============================================================================

/// Solvability discriminant of the port quartic at load (p, q).
double discriminant(const TheveninParams& tep, double p, double q);

/// High-voltage solution branch for the port at load (p, q).
/// Throws InfeasibleOperatingPoint when the discriminant or a radicand
/// is negative (load beyond deliverability).
PortState solve_port(const TheveninParams& tep, double p, double q);

/// Closed-form magnitude sensitivities at a measured operating point.
/// Requires port.v_mag > 0 and port.i_mag > 0.
Msp theoretical_msp(const TheveninParams& tep, const PortState& port);

// ============================================================================
// Inverse problem: Thevenin parameters from port state + sensitivities
// ============================================================================

/// Six normalized residuals: two magnitude equations and four sensitivity
/// equations, each scaled by the magnitude of its measured counterpart
/// (zero-magnitude entries fall back to unit scale).
Eigen::Matrix<double, 6, 1> tep_residuals(const TheveninParams& tep,
                                          const PortState& port, const Msp& msp);

/// Analytic Jacobian of tep_residuals with respect to (e_th, r_th, x_th).
Eigen::Matrix<double, 6, 3> tep_residual_jacobian(const TheveninParams& tep,
                                                  const PortState& port,
                                                  const Msp& msp);

struct TepSolveOptions {
    std::optional<TheveninParams> init;  // default: heuristic from the port state
    int max_iterations = 200;
    double step_tol = 1e-10;      // relative step-norm convergence threshold
    double residual_tol = 1e-12;  // residual-norm convergence threshold
    double fit_tol = 0.5;         // rms residual gate on the accepted solution
};

struct TepSolveReport {
    TheveninParams tep{};
    int iterations = 0;
    double residual_norm = 0.0;  // Euclidean norm of the 6 normalized residuals
};

/// Damped least-squares solve of the six-residual system for (e_th, r_th, x_th).
/// Steps that leave the solvable region are halved until feasible. Throws
/// NoConvergence when the iteration budget runs out and InfeasibleSolution
/// when the converged point violates constraints or the fit gate, or when
/// the sensitivity input carries no information (all entries zero).
TepSolveReport solve_tep(const PortState& port, const Msp& msp,
                         const TepSolveOptions& opts = {});

}  // namespace tepid
