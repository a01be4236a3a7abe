#include "tepid/stochastic.hpp"

#include <cmath>
#include <random>
#include <string>

namespace tepid {

namespace {

void validate(const OuLoadConfig& cfg) {
    if (!(cfg.alpha_p > 0.0) || !(cfg.alpha_q > 0.0))
        throw ConfigError("mean-reversion rates must be positive");
    if (cfg.b_p < 0.0 || cfg.b_q < 0.0)
        throw ConfigError("diffusion strengths must be nonnegative");
    if (!(std::abs(cfg.r_pq) < 1.0))
        throw ConfigError("driving correlation must lie strictly inside (-1, 1)");
}

double nan_mean(const std::vector<double>& x) {
    double s = 0.0;
    std::size_t n = 0;
    for (double v : x)
        if (!std::isnan(v)) {
            s += v;
            ++n;
        }
    if (n == 0) throw DataError("channel has no valid samples");
    return s / static_cast<double>(n);
}

double nan_var(const std::vector<double>& x) {
    const double m = nan_mean(x);
    double s = 0.0;
    std::size_t n = 0;
    for (double v : x)
        if (!std::isnan(v)) {
            s += (v - m) * (v - m);
            ++n;
        }
    if (n < 2) throw DataError("channel has fewer than two valid samples");
    return s / static_cast<double>(n - 1);
}

// Unit-variance draw of the requested shape.
double unit_noise(std::mt19937_64& rng, NoiseKind kind, double dof) {
    switch (kind) {
        case NoiseKind::gaussian: {
            std::normal_distribution<double> d;
            return d(rng);
        }
        case NoiseKind::laplace: {
            std::uniform_real_distribution<double> d(-0.5, 0.5);
            double u = d(rng);
            if (u == -0.5) u = std::nextafter(-0.5, 0.0);
            const double s = u < 0.0 ? -1.0 : 1.0;
            return -s * std::log(1.0 - 2.0 * std::abs(u)) / std::sqrt(2.0);
        }
        case NoiseKind::logistic: {
            std::uniform_real_distribution<double> d(0.0, 1.0);
            double u = d(rng);
            if (u == 0.0) u = std::nextafter(0.0, 1.0);
            if (u == 1.0) u = std::nextafter(1.0, 0.0);
            return std::log(u / (1.0 - u)) * std::sqrt(3.0) / 3.14159265358979323846;
        }
        case NoiseKind::student_t: {
            std::student_t_distribution<double> d(dof);
            return d(rng) * std::sqrt((dof - 2.0) / dof);
        }
    }
    throw ConfigError("unknown noise kind");
}

}  // namespace

double OuLoadConfig::sigma_p() const { return b_p / std::sqrt(2.0 * alpha_p); }
double OuLoadConfig::sigma_q() const { return b_q / std::sqrt(2.0 * alpha_q); }

const char* to_string(NoiseKind k) {
    switch (k) {
        case NoiseKind::gaussian: return "gaussian";
        case NoiseKind::laplace: return "laplace";
        case NoiseKind::logistic: return "logistic";
        case NoiseKind::student_t: return "student_t";
    }
    return "?";
}

NoiseKind noise_from_string(std::string_view s) {
    if (s == "gaussian") return NoiseKind::gaussian;
    if (s == "laplace") return NoiseKind::laplace;
    if (s == "logistic") return NoiseKind::logistic;
    if (s == "student_t") return NoiseKind::student_t;
    throw ConfigError("unknown noise kind: " + std::string(s));
}

OuPair gen_ou_pair(const OuLoadConfig& cfg, std::size_t n, double ts, std::uint64_t seed) {
    validate(cfg);
    if (n == 0) throw ConfigError("need at least one sample");
    if (!(ts > 0.0)) throw ConfigError("sample interval must be positive");

    const double ap = std::exp(-cfg.alpha_p * ts);
    const double aq = std::exp(-cfg.alpha_q * ts);
    const double sd_p = cfg.b_p * std::sqrt((1.0 - ap * ap) / (2.0 * cfg.alpha_p));
    const double sd_q = cfg.b_q * std::sqrt((1.0 - aq * aq) / (2.0 * cfg.alpha_q));
    const double r = cfg.r_pq;
    const double w = std::sqrt(1.0 - r * r);

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> z;

    OuPair out;
    out.eta_p.resize(n);
    out.eta_q.resize(n);

    // Stationary start with the same cross-coupling as the increments.
    {
        const double z1 = z(rng), z2 = z(rng);
        out.eta_p[0] = cfg.sigma_p() * z1;
        out.eta_q[0] = cfg.sigma_q() * (r * z1 + w * z2);
    }
    for (std::size_t k = 1; k < n; ++k) {
        const double z1 = z(rng), z2 = z(rng);
        out.eta_p[k] = ap * out.eta_p[k - 1] + sd_p * z1;
        out.eta_q[k] = aq * out.eta_q[k - 1] + sd_q * (r * z1 + w * z2);
    }
    return out;
}

MeasurementSeries simulate_ambient(const TheveninParams& tep, const OuLoadConfig& cfg,
                                   double duration, double ts, std::uint64_t seed) {
    return simulate_ambient([&tep](double) { return tep; }, cfg, duration, ts, seed);
}

MeasurementSeries simulate_ambient(const std::function<TheveninParams(double)>& tep_at,
                                   const OuLoadConfig& cfg, double duration, double ts,
                                   std::uint64_t seed) {
    validate(cfg);
    if (!(ts > 0.0)) throw ConfigError("sample interval must be positive");
    const auto n = static_cast<std::size_t>(std::llround(duration / ts));
    if (n == 0) throw ConfigError("duration shorter than one sample");

    const OuPair eta = gen_ou_pair(cfg, n, ts, seed);

    MeasurementSeries out;
    out.start_time = 0.0;
    out.ts = ts;
    out.p.resize(n);
    out.q.resize(n);
    out.v.resize(n);
    out.i.resize(n);

    // Reference voltage for the load exponents, taken at the mean load.
    const double v0 = solve_port(tep_at(0.0), cfg.p0, cfg.q0).v_mag;
    const bool voltage_dependent = cfg.gamma_p != 0.0 || cfg.gamma_q != 0.0;

    double v_prev = v0;
    for (std::size_t k = 0; k < n; ++k) {
        const double t = ts * static_cast<double>(k);
        const TheveninParams tep = tep_at(t);
        const double pk = cfg.p0 + eta.eta_p[k];
        const double qk = cfg.q0 + eta.eta_q[k];
        PortState port{};
        if (!voltage_dependent) {
            port = solve_port(tep, pk, qk);
        } else {
            double v_cur = v_prev;
            bool settled = false;
            for (int it = 0; it < 50; ++it) {
                const double pd = pk * std::pow(v_cur / v0, cfg.gamma_p);
                const double qd = qk * std::pow(v_cur / v0, cfg.gamma_q);
                try {
                    port = solve_port(tep, pd, qd);
                } catch (const InfeasibleOperatingPoint&) {
                    // The iteration walked the demand outside the feasible
                    // region, which is one way the loop fails to settle.
                    throw AlgebraicLoopDiverged(
                        "voltage-dependent load loop left the feasible region at t=" +
                        std::to_string(t));
                }
                if (std::abs(port.v_mag - v_cur) <= 1e-10 * v0) {
                    settled = true;
                    break;
                }
                v_cur = port.v_mag;
            }
            if (!settled)
                throw AlgebraicLoopDiverged("voltage-dependent load loop at t=" +
                                            std::to_string(t));
        }
        out.p[k] = port.p;
        out.q[k] = port.q;
        out.v[k] = port.v_mag;
        out.i[k] = port.i_mag;
        v_prev = port.v_mag;
    }
    return out;
}

MeasurementSeries corrupt(const MeasurementSeries& in, const CorruptionSpec& spec,
                          std::uint64_t seed) {
    if (spec.delay_steps < 0) throw BadCorruptionSpec("delay must be nonnegative");
    if (static_cast<std::size_t>(spec.delay_steps) >= in.size())
        throw BadCorruptionSpec("delay at least as long as the series");
    if (spec.outlier_frac < 0.0 || spec.outlier_frac >= 1.0)
        throw BadCorruptionSpec("outlier fraction must lie in [0, 1)");
    if (spec.missing_frac < 0.0 || spec.missing_frac >= 1.0)
        throw BadCorruptionSpec("missing fraction must lie in [0, 1)");
    if (!(spec.amp_scale > 0.0)) throw BadCorruptionSpec("amplitude scale must be positive");
    if (!std::isfinite(spec.bias_frac)) throw BadCorruptionSpec("bias fraction must be finite");
    if (spec.snr_db && !std::isfinite(*spec.snr_db))
        throw BadCorruptionSpec("noise level must be finite");
    if (spec.noise == NoiseKind::student_t && !(spec.student_t_dof > 2.0))
        throw BadCorruptionSpec("student_t needs more than 2 degrees of freedom");

    MeasurementSeries out;
    out.ts = in.ts;

    // Stage 1: v/i report delay_steps-old values, so p/q lead by that many
    // samples; the overhang is trimmed.
    const auto m = static_cast<std::size_t>(spec.delay_steps);
    const std::size_t n = in.size() - m;
    out.start_time = in.start_time + in.ts * static_cast<double>(m);
    out.p.assign(in.p.begin() + m, in.p.end());
    out.q.assign(in.q.begin() + m, in.q.end());
    out.v.assign(in.v.begin(), in.v.begin() + n);
    out.i.assign(in.i.begin(), in.i.begin() + n);

    std::mt19937_64 rng(seed);
    std::vector<double>* channels[4] = {&out.p, &out.q, &out.v, &out.i};

    // Stage 2: additive noise, scaled per channel to the requested ratio of
    // the channel's fluctuation variance.
    if (spec.snr_db) {
        const double ratio = std::pow(10.0, -*spec.snr_db / 10.0);
        for (auto* ch : channels) {
            const double scale = std::sqrt(nan_var(*ch) * ratio);
            for (double& x : *ch)
                if (!std::isnan(x)) x += scale * unit_noise(rng, spec.noise, spec.student_t_dof);
        }
    }

    // Stage 3: bad-data transforms, in a fixed order.
    if (spec.bias_frac != 0.0) {
        for (auto* ch : channels) {
            const double shift = spec.bias_frac * nan_mean(*ch);
            for (double& x : *ch)
                if (!std::isnan(x)) x += shift;
        }
    }
    if (spec.outlier_frac > 0.0) {
        std::bernoulli_distribution hit(spec.outlier_frac);
        for (auto* ch : channels) {
            const double mu = nan_mean(*ch);
            for (double& x : *ch) {
                const bool h = hit(rng);
                if (h && !std::isnan(x)) x = mu + spec.outlier_gain * (x - mu);
            }
        }
    }
    if (spec.amp_scale != 1.0) {
        for (auto* ch : channels) {
            const double mu = nan_mean(*ch);
            for (double& x : *ch)
                if (!std::isnan(x)) x = mu + spec.amp_scale * (x - mu);
        }
    }
    if (spec.missing_frac > 0.0) {
        std::bernoulli_distribution hit(spec.missing_frac);
        for (auto* ch : channels)
            for (double& x : *ch)
                if (hit(rng)) x = std::nan("");
    }
    return out;
}

}  // namespace tepid
