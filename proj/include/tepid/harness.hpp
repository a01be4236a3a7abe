#pragma once

// ============================================================================
// Experiment harness: configuration files, deterministic Monte Carlo
// execution, distribution summaries, topology-tracking schedules, CSV
// series exchange, closed-form curve sweeps, and the data-driven
// window/method recommendation.
// ============================================================================

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "tepid/errors.hpp"
#include "tepid/estimate.hpp"
#include "tepid/method.hpp"
#include "tepid/model.hpp"
#include "tepid/stochastic.hpp"
#include "tepid/theory.hpp"
#include "tepid/windowstats.hpp"

namespace tepid {

// ----------------------------------------------------------------------------
// Configuration
// ----------------------------------------------------------------------------

/// Source-parameter schedule for tracking studies: a linear reactance drift,
/// a step change of the source voltage, and optional per-sample jitter.
/// Estimates roll over fixed-length data windows stepped through the record.
struct TrackingConfig {
    bool enabled = false;
    double window = 300.0;        ///< rolling data window (s)
    double step = 60.0;           ///< window advance (s)
    double x_drift_to = 80.0;     ///< reactance endpoint (ohm)
    double x_drift_duration = 7200.0;  ///< drift span from t = 0 (s)
    double e_jump_to = 290.0;     ///< source voltage after the jump (kV)
    double e_jump_at = 3600.0;    ///< jump instant (s)
    double jitter_frac = 0.001;   ///< per-sample Gaussian jitter, fraction of value
};

/// One experiment: scenario, corruption, estimator pairs, execution knobs.
struct ExperimentConfig {
    TheveninParams tep{270.0, 20.0, 50.0};
    OuLoadConfig load;
    CorruptionSpec corruption;
    std::vector<Method> methods{Method::baseline, Method::mean, Method::variance};
    std::vector<Regressor> regressors{Regressor::ols};  ///< one broadcasts to all
    WindowConfig window;
    double ridge_lambda = -1.0;
    bool screen_outliers = false;
    double mad_factor = 3.0;
    double duration = 120.0;  ///< s
    double ts = 0.01;         ///< s
    std::size_t trials = 50;
    std::uint64_t base_seed = 1;
    unsigned threads = 0;  ///< 0 = hardware concurrency
    TrackingConfig track;
};

/// Parses flat `key = value` text: '#' comments, blank lines, dotted keys,
/// duplicates resolved last-wins.
std::map<std::string, std::string> parse_config_text(std::istream& is);

/// Builds a validated ExperimentConfig from parsed keys. Unknown keys are
/// configuration errors, listed by name.
ExperimentConfig experiment_config_from(const std::map<std::string, std::string>& kv);

/// Reads and validates a config file.
ExperimentConfig load_experiment_config(const std::string& path);

/// The estimator pairs a config expands to (regressor broadcast applied).
std::vector<std::pair<Method, Regressor>> estimator_pairs(const ExperimentConfig& cfg);

// ----------------------------------------------------------------------------
// Deterministic seeding
// ----------------------------------------------------------------------------

/// 64-bit avalanche mix of a base seed and a stream index; the per-trial
/// seed is mix_seed(base_seed, trial), and the trial's substreams are
/// mix_seed(trial_seed, 1) for the series and mix_seed(trial_seed, 2) for
/// the corruption draw.
std::uint64_t mix_seed(std::uint64_t base, std::uint64_t stream);

// ----------------------------------------------------------------------------
// Monte Carlo execution
// ----------------------------------------------------------------------------

struct TrialEntry {
    Method method = Method::baseline;
    Regressor regressor = Regressor::ols;
    bool ok = false;
    EstimationResult result{};  ///< valid when ok
    std::string error;          ///< failure reason when !ok
};

struct TrialOutcome {
    std::size_t trial = 0;
    std::uint64_t seed = 0;
    std::vector<TrialEntry> entries;
};

/// Runs one trial: simulate, corrupt, then identify once per estimator
/// pair. Estimation failures are captured in the entries, never thrown.
TrialOutcome run_trial(const ExperimentConfig& cfg, std::size_t trial_index);

/// Distribution summary of one value sequence. Quartiles interpolate
/// linearly between closest ranks at positions p (n - 1); whiskers are the
/// extreme observations within 1.5 IQR beyond the quartiles.
struct SummaryRow {
    std::size_t count = 0;
    double mean = 0.0;
    double median = 0.0;
    double q1 = 0.0;
    double q3 = 0.0;
    double iqr = 0.0;
    double whisker_lo = 0.0;
    double whisker_hi = 0.0;
};

/// Summarizes the finite entries of values; throws EmptyInput when none.
SummaryRow summarize(const std::vector<double>& values);

/// Runs every trial (work pool, deterministic per-trial seeds, aggregation
/// in index order) and writes `trials.csv` plus `summary.csv` under
/// out_dir. A tracking-enabled config writes `tracking.csv` instead.
/// Returns the raw outcomes in trial order.
std::vector<TrialOutcome> run_montecarlo(const ExperimentConfig& cfg,
                                         const std::string& out_dir);

// ----------------------------------------------------------------------------
// Series CSV exchange
// ----------------------------------------------------------------------------

/// Header `t,P_MW,Q_MVar,V_kV,I_kA`; gaps print as nan.
void write_series_csv(const MeasurementSeries& series, std::ostream& os);

/// Parses the same format back; the time column must be uniformly spaced.
MeasurementSeries read_series_csv(std::istream& is);

/// One identification result as a CSV header plus row.
void write_estimation_csv(const EstimationResult& result, std::ostream& os);

// ----------------------------------------------------------------------------
// Closed-form curve sweeps
// ----------------------------------------------------------------------------

enum class SweepKind { snr, deviation, kappa };

SweepKind sweep_from_string(const std::string& name);

/// Emits one closed-form curve as CSV: feature SNR versus window length,
/// deviation ratio versus delay, or condition number versus correlation.
/// The stochastic model comes from the config's load block; the raw SNR
/// from its corruption block (0 dB when corruption carries no noise).
void write_theory_sweep(const ExperimentConfig& cfg, SweepKind kind, std::ostream& os);

// ----------------------------------------------------------------------------
// Data-driven recommendation
// ----------------------------------------------------------------------------

struct RecommendReport {
    double tau_c = 0.0;       ///< estimated correlation time (s)
    double w = 0.0;           ///< recommended window (s)
    double w_lo = 0.0;
    double w_hi = 0.0;
    double snr_db = 0.0;      ///< estimated raw snr (capped at 60 dB)
    long delay_steps = 0;     ///< estimated magnitude-channel delay
    double r_pq = 0.0;        ///< estimated increment correlation
    Method method = Method::variance;
};

/// Estimates the ambient statistics of a measurement record and recommends
/// a window length and identification method.
RecommendReport recommend_from_series(const MeasurementSeries& series);

void write_recommend_csv(const RecommendReport& rep, std::ostream& os);

/// Maps a library error to the CLI exit code contract: 1 for configuration
/// and scenario errors, 2 for data errors, 3 for estimation failures.
int exit_code_for(const Error& err);

}  // namespace tepid
