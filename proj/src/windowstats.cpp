#include "tepid/windowstats.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

namespace tepid {
namespace {

constexpr double kGap = std::numeric_limits<double>::quiet_NaN();

// Mean over valid samples, used only to pre-center channels so that the
// prefix sums below accumulate fluctuations instead of large absolute
// levels. Any constant works; the window statistics are shift invariant.
double center_of(const std::vector<double>& x) {
    double s = 0.0;
    std::size_t m = 0;
    for (double v : x)
        if (!std::isnan(v)) {
            s += v;
            ++m;
        }
    return m > 0 ? s / static_cast<double>(m) : 0.0;
}

// Prefix sums of a channel pair over pairwise-valid samples, pre-centered.
// Variances ride the same path as covariances by pairing a channel with
// itself, which makes cov(x, x) and var(x) the same computation.
class PairPrefix {
public:
    PairPrefix(const std::vector<double>& x, const std::vector<double>& y,
               double mu_x, double mu_y)
        : mu_x_(mu_x) {
        const std::size_t n = x.size();
        cnt_.assign(n + 1, 0);
        sx_.assign(n + 1, 0.0);
        sy_.assign(n + 1, 0.0);
        sxy_.assign(n + 1, 0.0);
        for (std::size_t k = 0; k < n; ++k) {
            const bool ok = !std::isnan(x[k]) && !std::isnan(y[k]);
            const double cx = ok ? x[k] - mu_x : 0.0;
            const double cy = ok ? y[k] - mu_y : 0.0;
            cnt_[k + 1] = cnt_[k] + (ok ? 1 : 0);
            sx_[k + 1] = sx_[k] + cx;
            sy_[k + 1] = sy_[k] + cy;
            sxy_[k + 1] = sxy_[k] + cx * cy;
        }
    }

    std::size_t count(std::size_t l, std::size_t r) const { return cnt_[r] - cnt_[l]; }

    /// Mean of the x channel over pairwise-valid samples in [l, r).
    double mean_x(std::size_t l, std::size_t r) const {
        const std::size_t m = count(l, r);
        if (m == 0) return kGap;
        return mu_x_ + (sx_[r] - sx_[l]) / static_cast<double>(m);
    }

    /// Sample covariance over [l, r) with an m-1 denominator.
    double cov(std::size_t l, std::size_t r) const {
        const std::size_t m = count(l, r);
        if (m < 2) return kGap;
        const double md = static_cast<double>(m);
        const double sx = sx_[r] - sx_[l];
        const double sy = sy_[r] - sy_[l];
        const double sxy = sxy_[r] - sxy_[l];
        return (sxy - sx * sy / md) / (md - 1.0);
    }

private:
    double mu_x_;
    std::vector<std::size_t> cnt_;
    std::vector<double> sx_, sy_, sxy_;
};

struct WindowGeometry {
    std::size_t n = 0;     // samples per window
    std::size_t step = 0;  // samples per slide
};

std::size_t samples_from_seconds(double length, double ts, const char* what) {
    const double ratio = length / ts;
    const auto rounded = std::llround(ratio);
    if (rounded < 1 || std::abs(ratio - static_cast<double>(rounded)) > 1e-6 * ratio)
        throw ConfigError(std::string(what) +
                          " must be a positive integer multiple of the sampling interval");
    return static_cast<std::size_t>(rounded);
}

WindowGeometry resolve_geometry(const MeasurementSeries& series, const WindowConfig& cfg) {
    if (!(series.ts > 0.0)) throw DataError("series has a nonpositive sampling interval");
    if (!(cfg.w > 0.0)) throw ConfigError("window length must be positive");
    if (cfg.s_step < 0.0) throw ConfigError("slide step must be nonnegative");
    WindowGeometry g;
    g.n = samples_from_seconds(cfg.w, series.ts, "window length");
    g.step = cfg.s_step == 0.0 ? 1 : samples_from_seconds(cfg.s_step, series.ts, "slide step");
    if (g.n < 4)
        throw WindowTooShort("a window of " + std::to_string(g.n) +
                             " samples cannot support variance statistics");
    if (series.size() < g.n)
        throw WindowTooShort("series of " + std::to_string(series.size()) +
                             " samples is shorter than one window of " +
                             std::to_string(g.n));
    return g;
}

struct ScanRow {
    WindowMoments m;
    std::size_t c_p = 0, c_q = 0, c_v = 0, c_i = 0, c_pq = 0;

    std::size_t min_count() const { return std::min({c_p, c_q, c_v, c_i, c_pq}); }
    std::size_t min_channel_count() const { return std::min({c_p, c_q, c_v, c_i}); }
};

std::vector<ScanRow> scan_windows(const MeasurementSeries& s, const WindowGeometry& g) {
    const double mu_p = center_of(s.p);
    const double mu_q = center_of(s.q);
    const double mu_v = center_of(s.v);
    const double mu_i = center_of(s.i);
    const PairPrefix pp(s.p, s.p, mu_p, mu_p);
    const PairPrefix qq(s.q, s.q, mu_q, mu_q);
    const PairPrefix vv(s.v, s.v, mu_v, mu_v);
    const PairPrefix ii(s.i, s.i, mu_i, mu_i);
    const PairPrefix pq(s.p, s.q, mu_p, mu_q);

    std::vector<ScanRow> rows;
    rows.reserve((s.size() - g.n) / g.step + 1);
    for (std::size_t j = 0; j + g.n <= s.size(); j += g.step) {
        const std::size_t r = j + g.n;
        ScanRow row;
        row.m.first = j;
        row.m.t = s.time_at(j);
        row.c_p = pp.count(j, r);
        row.c_q = qq.count(j, r);
        row.c_v = vv.count(j, r);
        row.c_i = ii.count(j, r);
        row.c_pq = pq.count(j, r);
        row.m.mean_p = pp.mean_x(j, r);
        row.m.mean_q = qq.mean_x(j, r);
        row.m.mean_v = vv.mean_x(j, r);
        row.m.mean_i = ii.mean_x(j, r);
        row.m.var_p = pp.cov(j, r);
        row.m.var_q = qq.cov(j, r);
        row.m.var_v = vv.cov(j, r);
        row.m.var_i = ii.cov(j, r);
        row.m.cov_pq = pq.cov(j, r);
        rows.push_back(row);
    }
    return rows;
}

bool finite_at(const MeasurementSeries& s, std::size_t k) {
    return !std::isnan(s.p[k]) && !std::isnan(s.q[k]) && !std::isnan(s.v[k]) &&
           !std::isnan(s.i[k]);
}

FeatureSet materialize(Method method, std::vector<std::array<double, 6>>&& kept,
                       Eigen::Index a_cols, std::size_t dropped) {
    if (kept.empty()) throw EmptyFeatureSet("every feature row was lost to gaps");
    FeatureSet fs;
    fs.method = method;
    fs.dropped_rows = dropped;
    const auto rows = static_cast<Eigen::Index>(kept.size());
    fs.a.resize(rows, a_cols);
    fs.b.resize(rows, 2);
    fs.row_times.resize(kept.size());
    for (Eigen::Index r = 0; r < rows; ++r) {
        const auto& row = kept[static_cast<std::size_t>(r)];
        fs.row_times[static_cast<std::size_t>(r)] = row[0];
        for (Eigen::Index c = 0; c < a_cols; ++c) fs.a(r, c) = row[1 + static_cast<std::size_t>(c)];
        fs.b(r, 0) = row[4];
        fs.b(r, 1) = row[5];
    }
    return fs;
}

// Median over a scratch copy; entries must be finite.
double median_of(std::vector<double> v) {
    const std::size_t mid = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
    const double hi = v[mid];
    if (v.size() % 2 == 1) return hi;
    const double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
    return 0.5 * (lo + hi);
}

void screen_channel(std::vector<double>& x, double mad_factor) {
    const std::size_t n = x.size();
    std::vector<double> d(n - 1);
    std::vector<double> finite;
    finite.reserve(n - 1);
    for (std::size_t k = 0; k + 1 < n; ++k) {
        d[k] = x[k + 1] - x[k];
        if (!std::isnan(d[k])) finite.push_back(d[k]);
    }
    if (finite.empty()) return;
    const double med = median_of(finite);
    std::vector<double> absdev;
    absdev.reserve(finite.size());
    for (double v : finite) absdev.push_back(std::abs(v - med));
    const double threshold = mad_factor * 1.4826 * median_of(std::move(absdev));

    // A difference that deviates implicates both of its endpoint samples;
    // strict exceedance keeps constant channels untouched.
    std::vector<bool> flagged(n, false);
    for (std::size_t k = 0; k + 1 < n; ++k) {
        if (std::isnan(d[k])) continue;
        if (std::abs(d[k] - med) > threshold) {
            flagged[k] = true;
            flagged[k + 1] = true;
        }
    }
    for (std::size_t k = 0; k < n; ++k)
        if (flagged[k]) x[k] = kGap;
}

}  // namespace

std::vector<WindowMoments> window_stats(const MeasurementSeries& series,
                                        const WindowConfig& cfg) {
    const WindowGeometry g = resolve_geometry(series, cfg);
    const std::vector<ScanRow> rows = scan_windows(series, g);
    std::vector<WindowMoments> out;
    out.reserve(rows.size());
    for (const ScanRow& row : rows) {
        if (row.min_count() < 4)
            throw WindowTooShort("window at t=" + std::to_string(row.m.t) +
                                 " retains fewer than 4 valid samples in a channel");
        out.push_back(row.m);
    }
    return out;
}

FeatureSet build_features(const MeasurementSeries& series, Method method,
                          const WindowConfig& cfg) {
    std::vector<std::array<double, 6>> kept;
    std::size_t dropped = 0;

    if (method == Method::baseline) {
        // Per-step increments; the window geometry plays no role here.
        if (series.size() < 2) throw WindowTooShort("increments need at least two samples");
        kept.reserve(series.size() - 1);
        for (std::size_t k = 0; k + 1 < series.size(); ++k) {
            if (!finite_at(series, k) || !finite_at(series, k + 1)) {
                ++dropped;
                continue;
            }
            kept.push_back({series.time_at(k), series.p[k + 1] - series.p[k],
                            series.q[k + 1] - series.q[k], 0.0,
                            series.v[k + 1] - series.v[k],
                            series.i[k + 1] - series.i[k]});
        }
        return materialize(method, std::move(kept), 2, dropped);
    }

    const WindowGeometry g = resolve_geometry(series, cfg);
    const std::vector<ScanRow> rows = scan_windows(series, g);
    kept.reserve(rows.size());

    if (method == Method::mean) {
        for (const ScanRow& row : rows) {
            const std::size_t j = row.m.first;
            if (row.min_channel_count() < 4 || !finite_at(series, j)) {
                ++dropped;
                continue;
            }
            kept.push_back({row.m.t, series.p[j] - row.m.mean_p,
                            series.q[j] - row.m.mean_q, 0.0,
                            series.v[j] - row.m.mean_v,
                            series.i[j] - row.m.mean_i});
        }
        return materialize(method, std::move(kept), 2, dropped);
    }

    for (const ScanRow& row : rows) {
        if (row.min_count() < 4) {
            ++dropped;
            continue;
        }
        kept.push_back({row.m.t, row.m.var_p, row.m.var_q, row.m.cov_pq,
                        row.m.var_v, row.m.var_i});
    }
    return materialize(method, std::move(kept), 3, dropped);
}

MeasurementSeries clean_outliers(const MeasurementSeries& series, double mad_factor) {
    if (!(mad_factor > 0.0)) throw ConfigError("mad_factor must be positive");
    if (series.size() < 3) throw DataError("outlier screening needs at least 3 samples");
    MeasurementSeries out = series;
    screen_channel(out.p, mad_factor);
    screen_channel(out.q, mad_factor);
    screen_channel(out.v, mad_factor);
    screen_channel(out.i, mad_factor);
    return out;
}

void write_feature_csv(const FeatureSet& features, std::ostream& os) {
    const bool three = features.a.cols() == 3;
    os << (three ? "t,a1,a2,a3,b1,b2\n" : "t,a1,a2,b1,b2\n");
    char buf[64];
    const auto put = [&](double x, char sep) {
        std::snprintf(buf, sizeof buf, "%.12g%c", x, sep);
        os << buf;
    };
    for (Eigen::Index r = 0; r < features.a.rows(); ++r) {
        put(features.row_times[static_cast<std::size_t>(r)], ',');
        for (Eigen::Index c = 0; c < features.a.cols(); ++c) put(features.a(r, c), ',');
        put(features.b(r, 0), ',');
        put(features.b(r, 1), '\n');
    }
}

}  // namespace tepid
