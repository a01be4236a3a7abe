#pragma once

// ============================================================================
// Regression layer: fits the window features to coefficient matrices, backs
// the magnitude sensitivities out of those coefficients, and chains the
// whole identification pipeline from a raw measurement series to a
// recovered source model.
// ============================================================================

#include <cstddef>
#include <string>

#include <Eigen/Core>

#include "tepid/errors.hpp"
#include "tepid/method.hpp"
#include "tepid/model.hpp"
#include "tepid/stochastic.hpp"
#include "tepid/windowstats.hpp"

namespace tepid {

enum class Regressor { ols, ridge, tls };

const char* to_string(Regressor reg);
Regressor regressor_from_string(const std::string& name);

struct RegressOptions {
    Regressor regressor = Regressor::ols;
    double ridge_lambda = -1.0;  ///< < 0 picks 1e-4 tr(AtA)/cols automatically
    bool center = true;          ///< subtract column means before fitting
};

struct RegressResult {
    Eigen::MatrixXd theta;      ///< cols(a) x cols(b) coefficient matrix
    double kappa = 0.0;         ///< condition number of the fitted design
    double residual_rms = 0.0;  ///< rms of b - a * theta on the fitted data
    std::size_t rows = 0;
};

/// Multi-response linear fit of b onto a. Centering removes the operating
/// point so only deviations drive the coefficients; the condition number
/// and rank gate are evaluated on whatever design the fit actually used.
RegressResult regress(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                      const RegressOptions& opts = {});

/// Backs the four sensitivities out of a fitted coefficient matrix: a plain
/// transcription for two-row designs, and a joint square/cross-term
/// inversion for the quadratic three-row design. The cross term fixes the
/// relative sign; the absolute sign per output column follows the physical
/// pattern (voltage falls with extra load, current rises). A vanishing
/// cross term leaves the relative sign ambiguous: the physical pattern is
/// assumed and *sign_assumed is set when a pointer is supplied.
Msp msp_from_theta(Method method, const Eigen::MatrixXd& theta,
                   bool* sign_assumed = nullptr);

struct PipelineConfig {
    Method method = Method::variance;
    WindowConfig window;
    RegressOptions regress;
    bool screen_outliers = false;
    double mad_factor = 3.0;  ///< screening threshold when enabled
    TepSolveOptions solve;
};

struct PipelineDiagnostics {
    std::size_t rows = 0;          ///< feature rows that entered the fit
    std::size_t dropped_rows = 0;  ///< windows discarded for missing data
    double kappa = 0.0;
    double residual_rms = 0.0;
    double solve_residual = 0.0;      ///< final source-solve residual norm
    bool sign_pattern_assumed = false;
};

struct EstimationResult {
    Method method = Method::variance;
    Eigen::MatrixXd theta;
    Msp msp{};
    PortState operating_point{};  ///< channel means the source solve anchors to
    TheveninParams tep{};
    PipelineDiagnostics diagnostics{};
};

/// Full chain: optional outlier screening, feature construction, regression,
/// sensitivity recovery, and the source-parameter solve at the mean
/// operating point. Failures of the final solve surface as
/// EstimationInfeasible; upstream errors keep their own types.
EstimationResult identify_pipeline(const MeasurementSeries& series,
                                   const PipelineConfig& cfg = {});

}  // namespace tepid
