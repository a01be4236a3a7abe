#pragma once

// ============================================================================
// Sliding-window statistics and regression-feature construction.
//
// A window of length w seconds covers n = w/ts consecutive samples and is
// advanced by s_step seconds at a time. Per-window means, variances, and the
// p-q covariance are the raw material for the three identification methods:
//
//   baseline  pairs per-step increments of (p, q) with increments of (v, i);
//   mean      pairs each window's leading sample, centered on the window
//             mean, across (p, q) and (v, i);
//   variance  pairs window variances and the p-q covariance with the window
//             variances of v and i.
//
// Gap samples (nan) are ignored by the statistics; windows left with fewer
// than four valid samples in any needed channel are unusable.
// ============================================================================

#include <cstddef>
#include <iosfwd>
#include <vector>

#include <Eigen/Core>

#include "tepid/errors.hpp"
#include "tepid/method.hpp"
#include "tepid/stochastic.hpp"

namespace tepid {

/// Sliding-window geometry in seconds. Both lengths must be integer
/// multiples of the sampling interval of the series they are applied to;
/// s_step == 0 selects one sampling interval, the tightest slide.
struct WindowConfig {
    double w = 5.0;       ///< window length (s)
    double s_step = 0.0;  ///< slide step (s); 0 means one sampling interval
};

/// Second-order statistics of one window position. The anchor is the
/// window's first sample; means and variances are per channel with gap
/// samples excluded and an n-1 denominator.
struct WindowMoments {
    double t = 0.0;         ///< anchor time (s)
    std::size_t first = 0;  ///< index of the anchor sample in the series
    double mean_p = 0.0, mean_q = 0.0, mean_v = 0.0, mean_i = 0.0;
    double var_p = 0.0, var_q = 0.0, var_v = 0.0, var_i = 0.0;
    double cov_pq = 0.0;
};

/// Regression pair (a, b) for one identification method. Rows are window
/// positions (or steps for the baseline); rows that a gap made unresolvable
/// are dropped and only counted here.
struct FeatureSet {
    Method method = Method::baseline;
    Eigen::MatrixXd a;              ///< power features, 2 or 3 columns
    Eigen::MatrixXd b;              ///< magnitude features, 2 columns
    std::vector<double> row_times;  ///< anchor time per surviving row (s)
    std::size_t dropped_rows = 0;   ///< windows/steps lost to gaps
};

/// Computes the moments of every window position. Throws WindowTooShort if
/// the configured window holds fewer than 4 samples, if the series is
/// shorter than one window, or if gaps starve any window below 4 valid
/// samples in some channel; throws ConfigError for misaligned lengths.
std::vector<WindowMoments> window_stats(const MeasurementSeries& series,
                                        const WindowConfig& cfg);

/// Builds the regression pair for one method. The baseline uses consecutive
/// samples and ignores the window geometry. Unlike window_stats, gap-starved
/// windows are dropped rather than fatal; EmptyFeatureSet is thrown when
/// nothing survives.
FeatureSet build_features(const MeasurementSeries& series, Method method,
                          const WindowConfig& cfg);

/// Flags impulsive samples per channel by screening first differences
/// against mad_factor * 1.4826 * MAD and replaces every sample adjacent to
/// an offending difference with a gap. Requires at least 3 samples.
MeasurementSeries clean_outliers(const MeasurementSeries& series,
                                 double mad_factor = 3.0);

/// Writes a feature set as CSV with header t,a1,a2[,a3],b1,b2.
void write_feature_csv(const FeatureSet& features, std::ostream& os);

}  // namespace tepid
