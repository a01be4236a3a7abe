#pragma once

// ============================================================================
// Closed-form statistical calculators for the three identification methods:
// feature-level signal-to-noise ratios, deviation ratios under asynchronous
// measurements, collinearity condition numbers, and the least-squares error
// bound that combines them. Also holds the empirical autocovariance
// estimator and the window/method selection heuristics built on top.
//
// Everything is phrased in terms of a stationary autocovariance model
// rho(tau): the covariance matrix of n consecutive samples is
// C(i,j) = sigma2 * rho(|i-j| ts), and a measurement delay of m samples
// turns it into the shifted cross-covariance C~(i,j) = sigma2 *
// rho(|i-j+m| ts). Feature variances and cross-window covariances follow
// from centering identities on those matrices; the implementations reduce
// them to O(n) Toeplitz diagonal and row-sum recurrences.
// ============================================================================

#include <array>
#include <cstddef>
#include <vector>

#include <Eigen/Core>

#include "tepid/errors.hpp"
#include "tepid/method.hpp"
#include "tepid/model.hpp"

namespace tepid {

/// Autocovariance model of a stationary scalar process: the exponential
/// family rho(tau) = exp(-alpha |tau|), or an empirical lag sequence
/// (rho[0] = 1) that decorrelates to zero beyond its stored range.
struct AutocovSpec {
    double sigma2 = 1.0;      ///< process variance
    double ts = 0.01;         ///< sampling interval (s)
    double alpha = 1.0;       ///< decay rate (1/s), exponential form only
    std::vector<double> rho;  ///< empirical correlation per lag; empty = exponential

    static AutocovSpec exponential(double alpha, double sigma2, double ts);
    static AutocovSpec empirical(std::vector<double> rho, double sigma2, double ts);

    bool is_empirical() const { return !rho.empty(); }
    double rho_at_lag(long lag) const;
    double rho_at(double tau) const;  ///< linear interpolation between lags

    /// Correlation time: smallest tau with rho(tau) <= 1/e, interpolated
    /// between bracketing lags for empirical models. Throws DataError when
    /// the stored correlation never decays that far.
    double tau_c() const;
};

/// Covariance matrix of n consecutive samples (shift_m = 0) or the shifted
/// cross-covariance between a window and its m-sample-delayed copy.
Eigen::MatrixXd build_cov_matrix(const AutocovSpec& spec, std::size_t n, long shift_m = 0);

/// exact = full covariance-matrix expressions; approx = the wide-window
/// integral shortcuts. The baseline increment formula is closed-form
/// either way.
enum class SnrMode { exact, approx };

/// Feature-level SNR in dB for one method: variance of the signal feature
/// over the variance of the same feature computed on white measurement
/// noise of variance noise_var.
double theoretical_snr(Method method, const AutocovSpec& spec, std::size_t n,
                       double noise_var, SnrMode mode = SnrMode::exact);

/// Deviation ratio var(Y~ - Y)/var(Y) = 2 - 2 cov(Y, Y~)/var(Y) between a
/// method's feature and the same feature delayed by m samples. Zero at
/// m = 0; approaches 2 once the delay decorrelates the features.
double deviation_ratio(Method method, const AutocovSpec& spec, std::size_t n, long m);

/// Condition number of a method's centered power-feature matrix in the
/// large-sample limit, with the underlying feature correlation matrix.
struct CollinearityReport {
    double kappa = 1.0;    ///< sqrt of the correlation-matrix condition number
    Eigen::MatrixXd corr;  ///< 2x2 (increments, window means) or 3x3 (variances)
};
CollinearityReport condition_number(Method method, double r_pq);

/// Least-squares perturbation bound on the relative coefficient error.
struct ErrorBoundReport {
    double bound = 0.0;     ///< final bound; mapped to sensitivity scale for variance
    double raw_bound = 0.0; ///< kappa_f * (relative A + relative B perturbation)
    double kappa_f = 1.0;   ///< Frobenius condition number of centered a_true
    double map_gain = 1.0;  ///< variance method: ||J+|| ||T(msp)||_F / ||msp||_F
};

/// Computes kappa_F(a_true) * (||a_meas - a_true||_F / ||a_true||_F +
/// ||b_meas - b_true||_F / ||b_true||_F) on column-centered copies. For the
/// variance method the bound is additionally mapped through the inverse
/// Jacobian of the quadratic feature map at msp_true, so it bounds the
/// sensitivity error rather than the quadratic-coefficient error.
ErrorBoundReport error_bound(Method method, const Eigen::MatrixXd& a_true,
                             const Eigen::MatrixXd& a_meas,
                             const Eigen::MatrixXd& b_true,
                             const Eigen::MatrixXd& b_meas,
                             const Msp& msp_true = Msp{});

/// Estimates an empirical AutocovSpec from one channel: gap-tolerant biased
/// autocovariance per lag, normalized by lag zero. Lags extend to a quarter
/// of the record or ten correlation times, whichever bites first.
AutocovSpec estimate_autocov(const std::vector<double>& x, double ts);

/// Window-length guidance derived from the correlation time.
struct WindowRecommendation {
    double w = 0.0;   ///< default recommendation, 5 tau_c
    double lo = 0.0;  ///< lower end of the useful range, 5 tau_c
    double hi = 0.0;  ///< upper end of the useful range, 10 tau_c
};
WindowRecommendation recommend_window(const AutocovSpec& spec);

/// Per-method composite score and the resulting recommendation. The score
/// is a perturbation-bound surrogate: 2 kappa * (amplitude noise-to-signal
/// + sqrt of the deviation ratio + a fixed linearization floor); smaller
/// is better.
struct MethodScore {
    Method method = Method::baseline;
    double snr_db = 0.0;
    double eps_r = 0.0;
    double kappa = 1.0;
    double score = 0.0;
};
struct MethodSelection {
    Method recommended = Method::variance;
    std::array<MethodScore, 3> scores{};  ///< baseline, mean, variance order
};
MethodSelection select_method(const AutocovSpec& spec, double snr_raw_db, long m,
                              double r_pq, std::size_t n);

/// One-stop aggregate of every calculator for reporting and CSV sweeps.
struct TheoryReport {
    double snr_raw_db = 0.0;
    double snr0_db = 0.0;  ///< increments
    double snr1_db = 0.0;  ///< window means
    double snr2_db = 0.0;  ///< window variances
    std::array<double, 3> eps_r{};  ///< baseline, mean, variance order
    std::array<double, 3> kappa{};
    double recommended_w = 0.0;
    Method recommended_method = Method::variance;
};
TheoryReport theory_report(const AutocovSpec& spec, double snr_raw_db, long m,
                           double r_pq, std::size_t n);

}  // namespace tepid
