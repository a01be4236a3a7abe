#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string_view>
#include <vector>

#include "tepid/errors.hpp"
#include "tepid/model.hpp"

namespace tepid {

// ============================================================================
// Load fluctuation model
// ============================================================================

/// Correlated mean-reverting (Ornstein-Uhlenbeck) load fluctuation pair with
/// optional voltage dependence of the consumed power.
struct OuLoadConfig {
    double p0 = 50.0;      // mean active power (MW)
    double q0 = 50.0;      // mean reactive power (MVar)
    double alpha_p = 1.0;  // mean-reversion rate (1/s), > 0
    double alpha_q = 1.0;
    double b_p = 1.4142135623730951;  // diffusion strength (MW/sqrt(s)), >= 0
    double b_q = 1.4142135623730951;  // (MVar/sqrt(s))
    double r_pq = 0.2;     // driving-noise correlation, in (-1, 1)
    double gamma_p = 0.0;  // voltage exponent: 0 constant power, 2 constant impedance
    double gamma_q = 0.0;

    /// Stationary standard deviation b / sqrt(2 alpha).
    double sigma_p() const;
    double sigma_q() const;
};

struct OuPair {
    std::vector<double> eta_p;  // MW about p0
    std::vector<double> eta_q;  // MVar about q0
};

/// Samples the fluctuation pair with the exact one-step transition law
/// (no integration error at any step size) from a stationary start. The
/// same standard-normal draw that drives eta_p feeds eta_q with weight
/// r_pq, plus an independent draw with weight sqrt(1 - r_pq^2).
OuPair gen_ou_pair(const OuLoadConfig& cfg, std::size_t n, double ts, std::uint64_t seed);

// ============================================================================
// Measurement series
// ============================================================================

/// Uniformly sampled port measurement record. NaN marks a gap.
struct MeasurementSeries {
    double start_time = 0.0;  // time of sample 0 (s)
    double ts = 0.01;         // sample interval (s)
    std::vector<double> p;    // MW
    std::vector<double> q;    // MVar
    std::vector<double> v;    // kV
    std::vector<double> i;    // kA

    std::size_t size() const { return p.size(); }
    double time_at(std::size_t k) const { return start_time + ts * static_cast<double>(k); }
};

/// Simulates ambient operation of a single load port behind a Thevenin
/// source. Load draws come from gen_ou_pair with the same seed. Voltage
/// exponents other than zero close an algebraic loop per step, iterated to
/// a relative 1e-10 fixed point; the reference voltage for the exponent is
/// the solved voltage at (p0, q0).
MeasurementSeries simulate_ambient(const TheveninParams& tep, const OuLoadConfig& cfg,
                                   double duration, double ts, std::uint64_t seed);

/// Same, with source parameters supplied per step (drift and jump studies).
MeasurementSeries simulate_ambient(const std::function<TheveninParams(double)>& tep_at,
                                   const OuLoadConfig& cfg, double duration, double ts,
                                   std::uint64_t seed);

// ============================================================================
// Measurement corruption
// ============================================================================

enum class NoiseKind { gaussian, laplace, logistic, student_t };

const char* to_string(NoiseKind k);
NoiseKind noise_from_string(std::string_view s);

/// Corruption pipeline. Stages run in a fixed order: channel delay, additive
/// noise at the target ratio, then bad-data transforms (bias, outliers,
/// amplitude scaling, missing), each applied to all four channels.
struct CorruptionSpec {
    std::optional<double> snr_db;  // noise level in dB; no noise when absent
    NoiseKind noise = NoiseKind::gaussian;
    double student_t_dof = 5.0;  // > 2 so the noise variance exists
    int delay_steps = 0;         // v/i lag behind p/q, in samples
    double bias_frac = 0.0;      // signed fraction of the channel mean
    double outlier_frac = 0.0;   // fraction of samples turned into impulses
    double outlier_gain = 5.0;   // impulse fluctuation gain about the mean
    double amp_scale = 1.0;      // fluctuation rescale about the channel mean
    double missing_frac = 0.0;   // fraction of samples replaced by gaps
};

MeasurementSeries corrupt(const MeasurementSeries& in, const CorruptionSpec& spec,
                          std::uint64_t seed);

}  // namespace tepid
