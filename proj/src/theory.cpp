#include "tepid/theory.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Dense>
#include <Eigen/SVD>

namespace tepid {

namespace {

constexpr double kInvE = 0.36787944117144233;

void check_spec(const AutocovSpec& spec) {
    if (!(spec.sigma2 > 0.0)) throw ConfigError("autocovariance needs sigma2 > 0");
    if (!(spec.ts > 0.0)) throw ConfigError("autocovariance needs ts > 0");
    if (spec.rho.empty() && !(spec.alpha > 0.0))
        throw ConfigError("exponential autocovariance needs alpha > 0");
}

// ----------------------------------------------------------------------------
// Toeplitz scalar sums over the shifted covariance matrix
// C~(i,j) = sigma2 * rho(|i - j + m| ts), i, j in [0, n).
//
// Every aggregate below depends on the entries only through the diagonal
// offset d = j - i (count n - |d|) and the row/column index, so the full
// n x n matrix never has to exist. Row and column sums obey a sliding
// recurrence: moving one row down drops the entry at offset d = n-1-i and
// gains the one at d = -(i+1).
// ----------------------------------------------------------------------------
struct ShiftedSums {
    double c00 = 0.0;     // C~(0,0)
    double row0 = 0.0;    // sum_j C~(0,j)
    double col0 = 0.0;    // sum_i C~(i,0)
    double total = 0.0;   // sum_ij C~(i,j)
    double sum_sq = 0.0;  // sum_ij C~(i,j)^2
    double row_sq = 0.0;  // sum_i (sum_j C~(i,j))^2
    double col_sq = 0.0;  // sum_j (sum_i C~(i,j))^2
};

ShiftedSums shifted_sums(const AutocovSpec& spec, std::size_t n, long m) {
    const long ln = static_cast<long>(n);
    // rho at integer lags 0 .. m + n covers every index the recurrences touch.
    std::vector<double> r(static_cast<std::size_t>(m + ln) + 1);
    for (long l = 0; l <= m + ln; ++l) r[static_cast<std::size_t>(l)] = spec.rho_at_lag(l);
    const auto rho_abs = [&r](long l) { return r[static_cast<std::size_t>(std::labs(l))]; };

    const double s2 = spec.sigma2;
    ShiftedSums out;
    out.c00 = s2 * rho_abs(m);
    for (long d = -(ln - 1); d <= ln - 1; ++d) {
        const double cnt = static_cast<double>(ln - std::labs(d));
        const double v = s2 * rho_abs(m - d);
        out.total += cnt * v;
        out.sum_sq += cnt * v * v;
    }
    // Row sum R_i = sum_j rho(|m + i - j|) spans lags m+i-n+1 .. m+i; moving
    // one row down gains lag m+i+1 and drops lag m+i-n+1.
    double row = 0.0;
    for (long j = 0; j < ln; ++j) row += s2 * rho_abs(m - j);
    out.row0 = row;
    for (long i = 0; i < ln; ++i) {
        out.row_sq += row * row;
        row += s2 * (rho_abs(m + i + 1) - rho_abs(m + i - ln + 1));
    }
    // Column sum K_j = sum_i rho(|m + i - j|) spans lags m-j .. m-j+n-1;
    // moving one column right gains lag m-j-1 and drops lag m-j+n-1.
    double col = 0.0;
    for (long i = 0; i < ln; ++i) col += s2 * rho_abs(m + i);
    out.col0 = col;
    for (long j = 0; j < ln; ++j) {
        out.col_sq += col * col;
        col += s2 * (rho_abs(m - j - 1) - rho_abs(m - j + ln - 1));
    }
    return out;
}

// Variance of a window mean's deviation from one sample,
// var(X_1 - mean_w(X)) for the anchored window feature.
double anchored_mean_var(const ShiftedSums& s, std::size_t n) {
    const double dn = static_cast<double>(n);
    return s.c00 - 2.0 * s.row0 / dn + s.total / (dn * dn);
}

// Covariance of the anchored feature with its m-shifted twin; reduces to
// anchored_mean_var when the sums were built at m = 0.
double anchored_mean_cov(const ShiftedSums& s, std::size_t n) {
    const double dn = static_cast<double>(n);
    return s.c00 - (s.row0 + s.col0) / dn + s.total / (dn * dn);
}

// Variance of the window sample variance for a Gaussian process.
double sample_var_var(const ShiftedSums& s, std::size_t n) {
    const double dn = static_cast<double>(n);
    const double core = s.sum_sq - 2.0 * s.row_sq / dn + (s.total * s.total) / (dn * dn);
    const double den = (dn - 1.0) * (dn - 1.0);
    return 2.0 * core / den;
}

// Covariance between the window sample variance and its m-shifted twin.
double sample_var_cov(const ShiftedSums& s, std::size_t n) {
    const double dn = static_cast<double>(n);
    const double core =
        s.sum_sq + (s.total * s.total) / (dn * dn) - (s.row_sq + s.col_sq) / dn;
    const double den = (dn - 1.0) * (dn - 1.0);
    return 2.0 * core / den;
}

// Trapezoid integral of f(tau) over [a, b]; rho_at is piecewise linear so a
// modest step keeps this well inside approximation-mode accuracy.
template <typename F>
double integrate(F f, double a, double b, double step) {
    if (b <= a) return 0.0;
    const long k = std::max(8L, static_cast<long>(std::ceil((b - a) / step)));
    const double h = (b - a) / static_cast<double>(k);
    double acc = 0.5 * (f(a) + f(b));
    for (long i = 1; i < k; ++i) acc += f(a + h * static_cast<double>(i));
    return acc * h;
}

double integral_rho(const AutocovSpec& spec, double a, double b) {
    if (!spec.is_empirical()) {
        return (std::exp(-spec.alpha * a) - std::exp(-spec.alpha * b)) / spec.alpha;
    }
    return integrate([&spec](double t) { return spec.rho_at(t); }, a, b, spec.ts / 4.0);
}

// Integral of rho(tau)^2 over the symmetric range [-half, half].
double integral_rho_sq_sym(const AutocovSpec& spec, double half) {
    if (!spec.is_empirical()) {
        return (1.0 - std::exp(-2.0 * spec.alpha * half)) / spec.alpha;
    }
    return 2.0 * integrate([&spec](double t) {
        const double r = spec.rho_at(t);
        return r * r;
    }, 0.0, half, spec.ts / 4.0);
}

void check_window(std::size_t n) {
    if (n < 2) throw ConfigError("window statistics need at least two samples");
}

}  // namespace

// ----------------------------------------------------------------------------
// AutocovSpec
// ----------------------------------------------------------------------------

AutocovSpec AutocovSpec::exponential(double alpha, double sigma2, double ts) {
    AutocovSpec spec;
    spec.alpha = alpha;
    spec.sigma2 = sigma2;
    spec.ts = ts;
    check_spec(spec);
    return spec;
}

AutocovSpec AutocovSpec::empirical(std::vector<double> rho, double sigma2, double ts) {
    if (rho.empty()) throw ConfigError("empirical autocovariance needs at least lag zero");
    if (std::abs(rho.front() - 1.0) > 1e-6)
        throw ConfigError("empirical autocovariance must start at rho(0) = 1");
    rho.front() = 1.0;
    for (double& v : rho) {
        if (!std::isfinite(v) || std::abs(v) > 1.0 + 1e-6)
            throw ConfigError("empirical correlation must stay within [-1, 1]");
        v = std::clamp(v, -1.0, 1.0);
    }
    AutocovSpec spec;
    spec.rho = std::move(rho);
    spec.sigma2 = sigma2;
    spec.ts = ts;
    spec.alpha = 0.0;
    check_spec(spec);
    return spec;
}

double AutocovSpec::rho_at_lag(long lag) const {
    const long l = std::labs(lag);
    if (rho.empty()) return std::exp(-alpha * ts * static_cast<double>(l));
    if (static_cast<std::size_t>(l) >= rho.size()) return 0.0;
    return rho[static_cast<std::size_t>(l)];
}

double AutocovSpec::rho_at(double tau) const {
    const double t = std::abs(tau);
    if (rho.empty()) return std::exp(-alpha * t);
    const double pos = t / ts;
    const auto l0 = static_cast<std::size_t>(pos);
    if (l0 + 1 >= rho.size()) {
        // Last stored lag ramps linearly to zero one lag later.
        if (l0 >= rho.size()) return 0.0;
        const double frac = pos - static_cast<double>(l0);
        return rho[l0] * (1.0 - frac);
    }
    const double frac = pos - static_cast<double>(l0);
    return rho[l0] + frac * (rho[l0 + 1] - rho[l0]);
}

double AutocovSpec::tau_c() const {
    if (rho.empty()) return 1.0 / alpha;
    for (std::size_t k = 1; k < rho.size(); ++k) {
        if (rho[k] <= kInvE) {
            const double span = rho[k - 1] - rho[k];
            const double frac = span > 0.0 ? (rho[k - 1] - kInvE) / span : 1.0;
            return ts * (static_cast<double>(k - 1) + frac);
        }
    }
    throw DataError("correlation never decays to 1/e within the stored lags");
}

// ----------------------------------------------------------------------------
// Covariance matrices and the calculators built on them
// ----------------------------------------------------------------------------

Eigen::MatrixXd build_cov_matrix(const AutocovSpec& spec, std::size_t n, long shift_m) {
    check_spec(spec);
    check_window(n);
    if (shift_m < 0) throw ConfigError("covariance shift must be nonnegative");
    const long ln = static_cast<long>(n);
    Eigen::MatrixXd c(ln, ln);
    for (long i = 0; i < ln; ++i)
        for (long j = 0; j < ln; ++j)
            c(i, j) = spec.sigma2 * spec.rho_at_lag(i - j + shift_m);
    return c;
}

double theoretical_snr(Method method, const AutocovSpec& spec, std::size_t n,
                       double noise_var, SnrMode mode) {
    check_spec(spec);
    check_window(n);
    if (!(noise_var > 0.0)) throw ConfigError("snr needs a positive noise variance");

    const double dn = static_cast<double>(n);
    double signal = 0.0;
    double noise = 0.0;
    switch (method) {
        case Method::baseline: {
            // Increments: both modes share the closed form.
            signal = 2.0 * spec.sigma2 * (1.0 - spec.rho_at_lag(1));
            noise = 2.0 * noise_var;
            break;
        }
        case Method::mean: {
            if (mode == SnrMode::exact) {
                signal = anchored_mean_var(shifted_sums(spec, n, 0), n);
            } else {
                const double w = dn * spec.ts;
                signal = spec.sigma2 *
                         (1.0 - (2.0 / w) * integral_rho(spec, w / 2.0, w));
            }
            noise = (dn - 1.0) / dn * noise_var;
            break;
        }
        case Method::variance: {
            if (mode == SnrMode::exact) {
                signal = sample_var_var(shifted_sums(spec, n, 0), n);
            } else {
                const double w = dn * spec.ts;
                signal = 2.0 * spec.sigma2 * spec.sigma2 / ((dn - 1.0) * spec.ts) *
                         integral_rho_sq_sym(spec, w / 2.0);
            }
            noise = 2.0 * noise_var * noise_var / (dn - 1.0);
            break;
        }
    }
    if (!(signal > 0.0)) throw DataError("feature variance vanished; cannot form an snr");
    return 10.0 * std::log10(signal / noise);
}

double deviation_ratio(Method method, const AutocovSpec& spec, std::size_t n, long m) {
    check_spec(spec);
    if (m < 0) throw ConfigError("deviation ratio needs a nonnegative delay");
    if (m == 0) return 0.0;

    if (method == Method::baseline) {
        const double num = 2.0 * spec.rho_at_lag(m) - spec.rho_at_lag(m - 1) -
                           spec.rho_at_lag(m + 1);
        const double den = 1.0 - spec.rho_at_lag(1);
        if (!(den > 0.0)) throw DataError("increment variance vanished");
        return 2.0 - num / den;
    }

    check_window(n);
    const ShiftedSums base = shifted_sums(spec, n, 0);
    const ShiftedSums shifted = shifted_sums(spec, n, m);
    double var = 0.0;
    double cov = 0.0;
    if (method == Method::mean) {
        var = anchored_mean_var(base, n);
        cov = anchored_mean_cov(shifted, n);
    } else {
        var = sample_var_var(base, n);
        cov = sample_var_cov(shifted, n);
    }
    if (!(var > 0.0)) throw DataError("feature variance vanished");
    return 2.0 - 2.0 * cov / var;
}

CollinearityReport condition_number(Method method, double r_pq) {
    if (!std::isfinite(r_pq) || std::abs(r_pq) >= 1.0)
        throw DegenerateCollinearity("active and reactive channels are fully collinear");
    const double r = std::abs(r_pq);

    CollinearityReport rep;
    if (method == Method::variance) {
        // Correlation matrix of [var_p, var_q, cov_pq] features.
        const double c = r * std::sqrt(2.0 / (1.0 + r * r));
        rep.corr = Eigen::MatrixXd(3, 3);
        rep.corr << 1.0, r * r, c,
                    r * r, 1.0, c,
                    c, c, 1.0;
        // Eigenvalues are 1 - r^2 plus the pair (2 + r^2 +- root)/2; the
        // minus branch sits below 1 - r^2 for every r in (0, 1), so the
        // paired branches bracket the spectrum. The small eigenvalue comes
        // from the pair's product (1 - r^2)^2 / (1 + r^2), which avoids the
        // cancellation the direct difference suffers as r -> 1.
        const double root = r * std::sqrt((r * r * r * r + r * r + 16.0) / (r * r + 1.0));
        const double lam_max = (2.0 + r * r + root) / 2.0;
        const double one_m = (1.0 - r) * (1.0 + r);
        const double lam_min = one_m * one_m / ((1.0 + r * r) * lam_max);
        rep.kappa = std::sqrt(lam_max / lam_min);
    } else {
        rep.corr = Eigen::MatrixXd(2, 2);
        rep.corr << 1.0, r, r, 1.0;
        rep.kappa = std::sqrt((1.0 + r) / (1.0 - r));
    }
    return rep;
}

ErrorBoundReport error_bound(Method method, const Eigen::MatrixXd& a_true,
                             const Eigen::MatrixXd& a_meas,
                             const Eigen::MatrixXd& b_true,
                             const Eigen::MatrixXd& b_meas, const Msp& msp_true) {
    if (a_true.rows() != b_true.rows() || a_true.rows() != a_meas.rows() ||
        b_true.rows() != b_meas.rows() || a_true.cols() != a_meas.cols() ||
        b_true.cols() != b_meas.cols())
        throw ConfigError("error bound needs conformable feature matrices");
    if (a_true.rows() < a_true.cols() + 1)
        throw ConfigError("error bound needs more rows than feature columns");

    const auto center = [](const Eigen::MatrixXd& x) -> Eigen::MatrixXd {
        return x.rowwise() - x.colwise().mean();
    };
    const Eigen::MatrixXd ac = center(a_true);
    const Eigen::MatrixXd bc = center(b_true);
    const Eigen::MatrixXd dac = center(a_meas) - ac;
    const Eigen::MatrixXd dbc = center(b_meas) - bc;

    Eigen::JacobiSVD<Eigen::MatrixXd> svd(ac);
    const Eigen::VectorXd sv = svd.singularValues();
    if (sv(sv.size() - 1) <= 1e-12 * sv(0))
        throw RankDeficient("centered feature matrix is numerically rank deficient");

    ErrorBoundReport rep;
    rep.kappa_f = std::sqrt(sv.array().square().sum()) *
                  std::sqrt(sv.array().square().inverse().sum());
    const double rel_a = dac.norm() / ac.norm();
    const double rel_b = bc.norm() > 0.0 ? dbc.norm() / bc.norm() : 0.0;
    rep.raw_bound = rep.kappa_f * (rel_a + rel_b);
    rep.map_gain = 1.0;

    if (method == Method::variance) {
        // The regression recovers the quadratic coefficients. Map the bound
        // back to the sensitivities through the per-column Jacobian of
        // (b1, b2) -> (b1^2, b2^2, 2 b1 b2): its smallest singular value is
        // 2 sqrt(b1^2 + b2^2 - |b1 b2|).
        const auto sig_min = [](double b1, double b2) {
            return 2.0 * std::sqrt(b1 * b1 + b2 * b2 - std::abs(b1 * b2));
        };
        const double sv_min = std::min(sig_min(msp_true.b_vp, msp_true.b_vq),
                                       sig_min(msp_true.b_ip, msp_true.b_iq));
        if (!(sv_min > 0.0))
            throw ConfigError("variance-method bound needs nonzero true sensitivities");
        const double norm1 =
            std::sqrt(msp_true.b_vp * msp_true.b_vp + msp_true.b_vq * msp_true.b_vq +
                      msp_true.b_ip * msp_true.b_ip + msp_true.b_iq * msp_true.b_iq);
        const auto col_sq = [](double b1, double b2) {
            const double t3 = 2.0 * b1 * b2;
            return b1 * b1 * b1 * b1 + b2 * b2 * b2 * b2 + t3 * t3;
        };
        const double norm2 = std::sqrt(col_sq(msp_true.b_vp, msp_true.b_vq) +
                                       col_sq(msp_true.b_ip, msp_true.b_iq));
        rep.map_gain = norm2 / (sv_min * norm1);
    }
    rep.bound = rep.map_gain * rep.raw_bound;
    return rep;
}

// ----------------------------------------------------------------------------
// Empirical autocovariance
// ----------------------------------------------------------------------------

AutocovSpec estimate_autocov(const std::vector<double>& x, double ts) {
    if (!(ts > 0.0)) throw ConfigError("autocovariance estimation needs ts > 0");
    const std::size_t total = x.size();
    double mean = 0.0;
    std::size_t valid = 0;
    for (double v : x) {
        if (std::isfinite(v)) {
            mean += v;
            ++valid;
        }
    }
    if (valid < 1000)
        throw DataError("autocovariance estimation needs at least 1000 valid samples");
    mean /= static_cast<double>(valid);

    // Biased gap-tolerant estimate: average of valid lag products, shrunk by
    // the usual (total - lag)/total factor so a gap-free record reproduces
    // the plain 1/N normalization.
    const auto cov_at = [&](std::size_t lag) {
        double acc = 0.0;
        std::size_t pairs = 0;
        for (std::size_t k = 0; k + lag < total; ++k) {
            const double a = x[k];
            const double b = x[k + lag];
            if (std::isfinite(a) && std::isfinite(b)) {
                acc += (a - mean) * (b - mean);
                ++pairs;
            }
        }
        if (pairs == 0) return 0.0;
        const double shrink = static_cast<double>(total - lag) / static_cast<double>(total);
        return acc / static_cast<double>(pairs) * shrink;
    };

    const double c0 = cov_at(0);
    if (!(c0 > 0.0)) throw DataError("channel has no variance to correlate");

    const std::size_t lag_cap = std::max<std::size_t>(2, total / 4);
    std::vector<double> rho{1.0};
    double tau_hat = 0.0;
    bool crossed = false;
    for (std::size_t lag = 1; lag < lag_cap; ++lag) {
        const double r = cov_at(lag) / c0;
        rho.push_back(r);
        if (!crossed && r <= kInvE) {
            crossed = true;
            const double prev = rho[lag - 1];
            const double span = prev - r;
            const double frac = span > 0.0 ? (prev - kInvE) / span : 1.0;
            tau_hat = ts * (static_cast<double>(lag - 1) + frac);
        }
        if (crossed && static_cast<double>(lag) * ts >= 10.0 * tau_hat) break;
    }
    if (!crossed)
        throw DataError("correlation never decays to 1/e within a quarter of the record");

    for (double& r : rho) r = std::clamp(r, -1.0, 1.0);
    return AutocovSpec::empirical(std::move(rho), c0, ts);
}

// ----------------------------------------------------------------------------
// Guidance
// ----------------------------------------------------------------------------

WindowRecommendation recommend_window(const AutocovSpec& spec) {
    check_spec(spec);
    const double tc = spec.tau_c();
    return WindowRecommendation{5.0 * tc, 5.0 * tc, 10.0 * tc};
}

MethodSelection select_method(const AutocovSpec& spec, double snr_raw_db, long m,
                              double r_pq, std::size_t n) {
    check_spec(spec);
    check_window(n);
    const double noise_var = spec.sigma2 * std::pow(10.0, -snr_raw_db / 10.0);

    MethodSelection sel;
    const std::array<Method, 3> order{Method::baseline, Method::mean, Method::variance};
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < order.size(); ++k) {
        MethodScore& s = sel.scores[k];
        s.method = order[k];
        s.snr_db = theoretical_snr(order[k], spec, n, noise_var);
        s.eps_r = deviation_ratio(order[k], spec, n, m);
        s.kappa = condition_number(order[k], r_pq).kappa;
        s.score = 2.0 * s.kappa *
                  (std::pow(10.0, -s.snr_db / 20.0) + std::sqrt(s.eps_r) + 0.01);
        if (s.score < best) {
            best = s.score;
            sel.recommended = order[k];
        }
    }
    return sel;
}

TheoryReport theory_report(const AutocovSpec& spec, double snr_raw_db, long m,
                           double r_pq, std::size_t n) {
    const MethodSelection sel = select_method(spec, snr_raw_db, m, r_pq, n);
    TheoryReport rep;
    rep.snr_raw_db = snr_raw_db;
    rep.snr0_db = sel.scores[0].snr_db;
    rep.snr1_db = sel.scores[1].snr_db;
    rep.snr2_db = sel.scores[2].snr_db;
    for (std::size_t k = 0; k < 3; ++k) {
        rep.eps_r[k] = sel.scores[k].eps_r;
        rep.kappa[k] = sel.scores[k].kappa;
    }
    rep.recommended_w = recommend_window(spec).w;
    rep.recommended_method = sel.recommended;
    return rep;
}

}  // namespace tepid
