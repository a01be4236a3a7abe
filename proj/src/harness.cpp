#include "tepid/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <thread>

namespace tepid {

namespace {

// ----------------------------------------------------------------------------
// Small shared helpers
// ----------------------------------------------------------------------------

std::string fmt_g(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return buf;
}

std::string sanitize_message(std::string msg) {
    for (char& c : msg) {
        if (c == ',' || c == '\n' || c == '\r') c = ';';
    }
    return msg;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream is(s);
    while (std::getline(is, item, ',')) {
        const std::string t = trim(item);
        if (!t.empty()) out.push_back(t);
    }
    return out;
}

double parse_number(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const double v = std::stod(value, &used);
        if (trim(value.substr(used)).empty()) return v;
    } catch (const std::exception&) {
    }
    throw ConfigError("key '" + key + "' expects a number, got '" + value + "'");
}

long parse_integer(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const long v = std::stol(value, &used);
        if (trim(value.substr(used)).empty()) return v;
    } catch (const std::exception&) {
    }
    throw ConfigError("key '" + key + "' expects an integer, got '" + value + "'");
}

bool parse_flag(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1" || value == "yes" || value == "on") return true;
    if (value == "false" || value == "0" || value == "no" || value == "off") return false;
    throw ConfigError("key '" + key + "' expects a boolean, got '" + value + "'");
}

// Tracks which keys a loader consumed so leftovers can be reported.
class KeyReader {
public:
    explicit KeyReader(const std::map<std::string, std::string>& kv) : kv_(kv) {}

    std::optional<std::string> raw(const std::string& key) {
        const auto it = kv_.find(key);
        if (it == kv_.end()) return std::nullopt;
        used_.insert(key);
        return it->second;
    }

    void number(const std::string& key, double& slot) {
        if (const auto v = raw(key)) slot = parse_number(key, *v);
    }
    void integer(const std::string& key, long& slot) {
        if (const auto v = raw(key)) slot = parse_integer(key, *v);
    }
    void flag(const std::string& key, bool& slot) {
        if (const auto v = raw(key)) slot = parse_flag(key, *v);
    }

    void finish() const {
        std::string unknown;
        for (const auto& [key, value] : kv_) {
            (void)value;
            if (used_.count(key) == 0) {
                if (!unknown.empty()) unknown += ", ";
                unknown += key;
            }
        }
        if (!unknown.empty()) throw ConfigError("unknown config keys: " + unknown);
    }

private:
    const std::map<std::string, std::string>& kv_;
    std::set<std::string> used_;
};

void validate_config(const ExperimentConfig& cfg) {
    if (cfg.trials < 1) throw ConfigError("trials must be at least 1");
    if (!(cfg.ts > 0.0)) throw ConfigError("ts must be positive");
    if (!(cfg.duration > 0.0)) throw ConfigError("duration must be positive");
    if (cfg.methods.empty()) throw ConfigError("at least one method is required");
    if (cfg.regressors.empty()) throw ConfigError("at least one regressor is required");
    if (cfg.regressors.size() != 1 && cfg.regressors.size() != cfg.methods.size())
        throw ConfigError("regressors must be a single entry or one per method");
    const double w = cfg.window.w;
    if (!(w > 0.0)) throw ConfigError("window.w must be positive");
    if (w > cfg.duration + 1e-9)
        throw ConfigError("the window does not fit inside the simulated record");
    if (cfg.track.enabled) {
        if (!(cfg.track.window > 0.0) || !(cfg.track.step > 0.0))
            throw ConfigError("tracking needs positive window and step");
        if (cfg.track.window > cfg.duration + 1e-9)
            throw ConfigError("the tracking window does not fit inside the record");
        if (cfg.track.jitter_frac < 0.0)
            throw ConfigError("tracking jitter must be nonnegative");
    }
}

PipelineConfig pipeline_config(const ExperimentConfig& cfg, Method method,
                               Regressor regressor) {
    PipelineConfig p;
    p.method = method;
    p.window = cfg.window;
    p.regress.regressor = regressor;
    p.regress.ridge_lambda = cfg.ridge_lambda;
    p.screen_outliers = cfg.screen_outliers;
    p.mad_factor = cfg.mad_factor;
    return p;
}

template <typename Fn>
void parallel_over(std::size_t n, unsigned threads, Fn fn) {
    unsigned nt = threads != 0 ? threads : std::thread::hardware_concurrency();
    if (nt == 0) nt = 1;
    nt = static_cast<unsigned>(std::min<std::size_t>(nt, n));
    std::atomic<std::size_t> next{0};
    const auto worker = [&next, n, &fn] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= n) return;
            fn(i);
        }
    };
    std::vector<std::thread> pool;
    for (unsigned k = 1; k < nt; ++k) pool.emplace_back(worker);
    worker();
    for (std::thread& t : pool) t.join();
}

// Pearson correlation over pairwise-finite entries.
double pair_corr(const std::vector<double>& x, const std::vector<double>& y) {
    const std::size_t n = std::min(x.size(), y.size());
    double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
    std::size_t m = 0;
    for (std::size_t k = 0; k < n; ++k) {
        if (!std::isfinite(x[k]) || !std::isfinite(y[k])) continue;
        sx += x[k];
        sy += y[k];
        sxx += x[k] * x[k];
        syy += y[k] * y[k];
        sxy += x[k] * y[k];
        ++m;
    }
    if (m < 2) return 0.0;
    const double dm = static_cast<double>(m);
    const double vx = sxx - sx * sx / dm;
    const double vy = syy - sy * sy / dm;
    if (!(vx > 0.0) || !(vy > 0.0)) return 0.0;
    return (sxy - sx * sy / dm) / std::sqrt(vx * vy);
}

std::vector<double> increments(const std::vector<double>& x) {
    std::vector<double> d(x.size() > 0 ? x.size() - 1 : 0);
    for (std::size_t k = 0; k + 1 < x.size(); ++k) d[k] = x[k + 1] - x[k];
    return d;
}

// ----------------------------------------------------------------------------
// CSV writers for the Monte Carlo outputs
// ----------------------------------------------------------------------------

constexpr const char* kTrialsHeader =
    "trial,method,regressor,seed,e_th,r_th,x_th,b_vp,b_vq,b_ip,b_iq,"
    "kappa,rows,residual_rms,solve_residual,converged,error";

void write_trial_row(std::ostream& os, const TrialOutcome& trial, const TrialEntry& e) {
    os << trial.trial << ',' << to_string(e.method) << ',' << to_string(e.regressor)
       << ',' << trial.seed << ',';
    if (e.ok) {
        const EstimationResult& r = e.result;
        os << fmt_g(r.tep.e_th) << ',' << fmt_g(r.tep.r_th) << ',' << fmt_g(r.tep.x_th)
           << ',' << fmt_g(r.msp.b_vp) << ',' << fmt_g(r.msp.b_vq) << ','
           << fmt_g(r.msp.b_ip) << ',' << fmt_g(r.msp.b_iq) << ','
           << fmt_g(r.diagnostics.kappa) << ',' << r.diagnostics.rows << ','
           << fmt_g(r.diagnostics.residual_rms) << ','
           << fmt_g(r.diagnostics.solve_residual) << ",1,\n";
    } else {
        os << "nan,nan,nan,nan,nan,nan,nan,nan,0,nan,nan,0,"
           << sanitize_message(e.error) << '\n';
    }
}

struct PairKey {
    Method method;
    Regressor regressor;
    bool operator<(const PairKey& o) const {
        if (method != o.method) return method < o.method;
        return regressor < o.regressor;
    }
};

void write_summary_csv(std::ostream& os, const ExperimentConfig& cfg,
                       const std::vector<TrialOutcome>& outcomes) {
    os << "method,regressor,parameter,count,failures,mean,median,q1,q3,iqr,"
          "whisker_lo,whisker_hi\n";
    std::map<PairKey, std::vector<const TrialEntry*>> groups;
    for (const TrialOutcome& t : outcomes)
        for (const TrialEntry& e : t.entries)
            groups[PairKey{e.method, e.regressor}].push_back(&e);

    for (const auto& [key, entries] : groups) {
        std::size_t failures = 0;
        std::vector<double> e_th, r_th, x_th;
        for (const TrialEntry* e : entries) {
            if (!e->ok) {
                ++failures;
                continue;
            }
            e_th.push_back(e->result.tep.e_th);
            r_th.push_back(e->result.tep.r_th);
            x_th.push_back(e->result.tep.x_th);
        }
        const auto emit = [&](const char* name, std::vector<double> values) {
            os << to_string(key.method) << ',' << to_string(key.regressor) << ','
               << name << ',';
            if (values.empty()) {
                os << "0," << failures << ",nan,nan,nan,nan,nan,nan,nan\n";
                return;
            }
            const SummaryRow s = summarize(values);
            os << s.count << ',' << failures << ',' << fmt_g(s.mean) << ','
               << fmt_g(s.median) << ',' << fmt_g(s.q1) << ',' << fmt_g(s.q3) << ','
               << fmt_g(s.iqr) << ',' << fmt_g(s.whisker_lo) << ','
               << fmt_g(s.whisker_hi) << '\n';
        };
        const auto ratio = [](std::vector<double> v, double denom) {
            for (double& x : v) x /= denom;
            return v;
        };
        emit("e_th", e_th);
        emit("r_th", r_th);
        emit("x_th", x_th);
        emit("e_ratio", ratio(e_th, cfg.tep.e_th));
        emit("r_ratio", ratio(r_th, cfg.tep.r_th));
        emit("x_ratio", ratio(x_th, cfg.tep.x_th));
    }
}

// ----------------------------------------------------------------------------
// Tracking schedules
// ----------------------------------------------------------------------------

TheveninParams scheduled_tep(const ExperimentConfig& cfg, double t) {
    const TrackingConfig& tr = cfg.track;
    TheveninParams tep = cfg.tep;
    const double frac =
        tr.x_drift_duration > 0.0 ? std::clamp(t / tr.x_drift_duration, 0.0, 1.0) : 1.0;
    tep.x_th += (tr.x_drift_to - cfg.tep.x_th) * frac;
    if (t >= tr.e_jump_at) tep.e_th = tr.e_jump_to;
    return tep;
}

MeasurementSeries slice_series(const MeasurementSeries& s, double t0, double length) {
    const auto k0 = static_cast<std::size_t>(
        std::max(0.0, std::round((t0 - s.start_time) / s.ts)));
    const auto count = static_cast<std::size_t>(std::round(length / s.ts)) + 1;
    const std::size_t end = std::min(s.size(), k0 + count);
    MeasurementSeries out;
    out.start_time = s.time_at(k0);
    out.ts = s.ts;
    out.p.assign(s.p.begin() + static_cast<long>(k0), s.p.begin() + static_cast<long>(end));
    out.q.assign(s.q.begin() + static_cast<long>(k0), s.q.begin() + static_cast<long>(end));
    out.v.assign(s.v.begin() + static_cast<long>(k0), s.v.begin() + static_cast<long>(end));
    out.i.assign(s.i.begin() + static_cast<long>(k0), s.i.begin() + static_cast<long>(end));
    return out;
}

struct TrackRow {
    std::size_t trial = 0;
    Method method = Method::baseline;
    Regressor regressor = Regressor::ols;
    double t_start = 0.0;
    double t_end = 0.0;
    TheveninParams truth{};
    bool ok = false;
    TheveninParams tep{};
    std::string error;
};

std::vector<TrackRow> run_tracking_trial(const ExperimentConfig& cfg,
                                         std::size_t trial_index,
                                         TrialOutcome& outcome) {
    outcome.trial = trial_index;
    outcome.seed = mix_seed(cfg.base_seed, trial_index);
    const auto pairs = estimator_pairs(cfg);

    std::mt19937_64 jitter_rng(mix_seed(outcome.seed, 3));
    std::normal_distribution<double> gauss(0.0, 1.0);
    const double jf = cfg.track.jitter_frac;
    const auto tep_at = [&](double t) {
        TheveninParams tep = scheduled_tep(cfg, t);
        if (jf > 0.0) {
            tep.e_th *= 1.0 + jf * gauss(jitter_rng);
            tep.r_th *= 1.0 + jf * gauss(jitter_rng);
            tep.x_th *= 1.0 + jf * gauss(jitter_rng);
        }
        return tep;
    };

    std::vector<TrackRow> rows;
    MeasurementSeries data;
    std::string sim_error;
    try {
        const MeasurementSeries clean = simulate_ambient(
            tep_at, cfg.load, cfg.duration, cfg.ts, mix_seed(outcome.seed, 1));
        data = corrupt(clean, cfg.corruption, mix_seed(outcome.seed, 2));
    } catch (const Error& e) {
        sim_error = e.what();
    }

    for (double t0 = 0.0; t0 + cfg.track.window <= cfg.duration + 1e-9;
         t0 += cfg.track.step) {
        const double t1 = t0 + cfg.track.window;
        for (const auto& [method, regressor] : pairs) {
            TrackRow row;
            row.trial = trial_index;
            row.method = method;
            row.regressor = regressor;
            row.t_start = t0;
            row.t_end = t1;
            row.truth = scheduled_tep(cfg, t1);
            TrialEntry entry;
            entry.method = method;
            entry.regressor = regressor;
            if (!sim_error.empty()) {
                row.error = sim_error;
                entry.error = sim_error;
            } else {
                try {
                    const MeasurementSeries window = slice_series(data, t0, cfg.track.window);
                    entry.result =
                        identify_pipeline(window, pipeline_config(cfg, method, regressor));
                    entry.ok = true;
                    row.ok = true;
                    row.tep = entry.result.tep;
                } catch (const Error& e) {
                    row.error = e.what();
                    entry.error = e.what();
                }
            }
            rows.push_back(row);
            outcome.entries.push_back(std::move(entry));
        }
    }
    return rows;
}

}  // namespace

// ----------------------------------------------------------------------------
// Configuration
// ----------------------------------------------------------------------------

std::map<std::string, std::string> parse_config_text(std::istream& is) {
    std::map<std::string, std::string> kv;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const std::string stripped = trim(line);
        if (stripped.empty()) continue;
        const auto eq = stripped.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(lineno) +
                              " is not a key = value assignment");
        const std::string key = trim(stripped.substr(0, eq));
        const std::string value = trim(stripped.substr(eq + 1));
        if (key.empty())
            throw ConfigError("line " + std::to_string(lineno) + " has an empty key");
        kv[key] = value;  // duplicates: last assignment wins
    }
    return kv;
}

ExperimentConfig experiment_config_from(const std::map<std::string, std::string>& kv) {
    ExperimentConfig cfg;
    KeyReader r(kv);

    r.number("tep.e_th", cfg.tep.e_th);
    r.number("tep.r_th", cfg.tep.r_th);
    r.number("tep.x_th", cfg.tep.x_th);

    r.number("load.p0", cfg.load.p0);
    r.number("load.q0", cfg.load.q0);
    r.number("load.alpha_p", cfg.load.alpha_p);
    r.number("load.alpha_q", cfg.load.alpha_q);
    r.number("load.b_p", cfg.load.b_p);
    r.number("load.b_q", cfg.load.b_q);
    r.number("load.r_pq", cfg.load.r_pq);
    r.number("load.gamma_p", cfg.load.gamma_p);
    r.number("load.gamma_q", cfg.load.gamma_q);

    if (const auto v = r.raw("corruption.snr_db"))
        cfg.corruption.snr_db = parse_number("corruption.snr_db", *v);
    if (const auto v = r.raw("corruption.noise")) cfg.corruption.noise = noise_from_string(*v);
    r.number("corruption.student_t_dof", cfg.corruption.student_t_dof);
    if (const auto v = r.raw("corruption.delay_steps"))
        cfg.corruption.delay_steps =
            static_cast<int>(parse_integer("corruption.delay_steps", *v));
    r.number("corruption.bias_frac", cfg.corruption.bias_frac);
    r.number("corruption.outlier_frac", cfg.corruption.outlier_frac);
    r.number("corruption.outlier_gain", cfg.corruption.outlier_gain);
    r.number("corruption.amp_scale", cfg.corruption.amp_scale);
    r.number("corruption.missing_frac", cfg.corruption.missing_frac);

    if (const auto v = r.raw("methods")) {
        cfg.methods.clear();
        for (const std::string& name : split_list(*v))
            cfg.methods.push_back(method_from_string(name));
    }
    if (const auto v = r.raw("regressors")) {
        cfg.regressors.clear();
        for (const std::string& name : split_list(*v))
            cfg.regressors.push_back(regressor_from_string(name));
    }

    r.number("window.w", cfg.window.w);
    r.number("window.s_step", cfg.window.s_step);
    r.number("regress.ridge_lambda", cfg.ridge_lambda);
    r.flag("screen.enabled", cfg.screen_outliers);
    r.number("screen.mad_factor", cfg.mad_factor);

    r.number("duration", cfg.duration);
    r.number("ts", cfg.ts);
    if (const auto v = r.raw("trials")) {
        const long n = parse_integer("trials", *v);
        if (n < 0) throw ConfigError("trials must be nonnegative");
        cfg.trials = static_cast<std::size_t>(n);
    }
    if (const auto v = r.raw("base_seed")) {
        try {
            std::size_t used = 0;
            cfg.base_seed = std::stoull(*v, &used);
            if (!trim(v->substr(used)).empty()) throw std::invalid_argument("trailing");
        } catch (const std::exception&) {
            throw ConfigError("key 'base_seed' expects an unsigned integer, got '" + *v +
                              "'");
        }
    }
    if (const auto v = r.raw("threads")) {
        const long n = parse_integer("threads", *v);
        if (n < 0) throw ConfigError("threads must be nonnegative");
        cfg.threads = static_cast<unsigned>(n);
    }

    r.flag("track.enabled", cfg.track.enabled);
    r.number("track.window", cfg.track.window);
    r.number("track.step", cfg.track.step);
    r.number("track.x_drift_to", cfg.track.x_drift_to);
    r.number("track.x_drift_duration", cfg.track.x_drift_duration);
    r.number("track.e_jump_to", cfg.track.e_jump_to);
    r.number("track.e_jump_at", cfg.track.e_jump_at);
    r.number("track.jitter_frac", cfg.track.jitter_frac);

    r.finish();
    validate_config(cfg);
    return cfg;
}

ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file '" + path + "'");
    const auto kv = parse_config_text(is);
    return experiment_config_from(kv);
}

std::vector<std::pair<Method, Regressor>> estimator_pairs(const ExperimentConfig& cfg) {
    std::vector<std::pair<Method, Regressor>> pairs;
    for (std::size_t k = 0; k < cfg.methods.size(); ++k) {
        const Regressor reg =
            cfg.regressors.size() == 1 ? cfg.regressors.front() : cfg.regressors[k];
        pairs.emplace_back(cfg.methods[k], reg);
    }
    return pairs;
}

// ----------------------------------------------------------------------------
// Seeding
// ----------------------------------------------------------------------------

std::uint64_t mix_seed(std::uint64_t base, std::uint64_t stream) {
    // splitmix64 finalizer over a golden-ratio stream offset.
    std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// ----------------------------------------------------------------------------
// Monte Carlo
// ----------------------------------------------------------------------------

TrialOutcome run_trial(const ExperimentConfig& cfg, std::size_t trial_index) {
    validate_config(cfg);
    TrialOutcome out;
    out.trial = trial_index;
    out.seed = mix_seed(cfg.base_seed, trial_index);

    MeasurementSeries data;
    std::string sim_error;
    try {
        const MeasurementSeries clean = simulate_ambient(
            cfg.tep, cfg.load, cfg.duration, cfg.ts, mix_seed(out.seed, 1));
        data = corrupt(clean, cfg.corruption, mix_seed(out.seed, 2));
    } catch (const Error& e) {
        sim_error = e.what();
    }

    for (const auto& [method, regressor] : estimator_pairs(cfg)) {
        TrialEntry entry;
        entry.method = method;
        entry.regressor = regressor;
        if (!sim_error.empty()) {
            entry.error = sim_error;
        } else {
            try {
                entry.result =
                    identify_pipeline(data, pipeline_config(cfg, method, regressor));
                entry.ok = true;
            } catch (const Error& e) {
                entry.error = e.what();
            }
        }
        out.entries.push_back(std::move(entry));
    }
    return out;
}

SummaryRow summarize(const std::vector<double>& values) {
    std::vector<double> v;
    v.reserve(values.size());
    for (double x : values)
        if (std::isfinite(x)) v.push_back(x);
    if (v.empty()) throw EmptyInput("no finite values to summarize");
    std::sort(v.begin(), v.end());

    const auto quantile = [&v](double p) {
        const double h = p * static_cast<double>(v.size() - 1);
        const auto lo = static_cast<std::size_t>(h);
        if (lo + 1 >= v.size()) return v.back();
        return v[lo] + (h - static_cast<double>(lo)) * (v[lo + 1] - v[lo]);
    };

    SummaryRow s;
    s.count = v.size();
    s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    s.median = quantile(0.5);
    s.q1 = quantile(0.25);
    s.q3 = quantile(0.75);
    s.iqr = s.q3 - s.q1;
    const double lo_bound = s.q1 - 1.5 * s.iqr;
    const double hi_bound = s.q3 + 1.5 * s.iqr;
    s.whisker_lo = *std::find_if(v.begin(), v.end(),
                                 [lo_bound](double x) { return x >= lo_bound; });
    s.whisker_hi = *std::find_if(v.rbegin(), v.rend(),
                                 [hi_bound](double x) { return x <= hi_bound; });
    return s;
}

std::vector<TrialOutcome> run_montecarlo(const ExperimentConfig& cfg,
                                         const std::string& out_dir) {
    validate_config(cfg);
    std::filesystem::create_directories(out_dir);
    std::vector<TrialOutcome> outcomes(cfg.trials);

    if (cfg.track.enabled) {
        std::vector<std::vector<TrackRow>> rows(cfg.trials);
        parallel_over(cfg.trials, cfg.threads, [&](std::size_t i) {
            rows[i] = run_tracking_trial(cfg, i, outcomes[i]);
        });
        std::ofstream os(std::filesystem::path(out_dir) / "tracking.csv");
        os << "trial,method,regressor,t_start,t_end,e_true,r_true,x_true,"
              "e_th,r_th,x_th,converged,error\n";
        for (const auto& trial_rows : rows)
            for (const TrackRow& row : trial_rows) {
                os << row.trial << ',' << to_string(row.method) << ','
                   << to_string(row.regressor) << ',' << fmt_g(row.t_start) << ','
                   << fmt_g(row.t_end) << ',' << fmt_g(row.truth.e_th) << ','
                   << fmt_g(row.truth.r_th) << ',' << fmt_g(row.truth.x_th) << ',';
                if (row.ok) {
                    os << fmt_g(row.tep.e_th) << ',' << fmt_g(row.tep.r_th) << ','
                       << fmt_g(row.tep.x_th) << ",1,\n";
                } else {
                    os << "nan,nan,nan,0," << sanitize_message(row.error) << '\n';
                }
            }
        return outcomes;
    }

    parallel_over(cfg.trials, cfg.threads,
                  [&](std::size_t i) { outcomes[i] = run_trial(cfg, i); });

    std::ofstream trials_os(std::filesystem::path(out_dir) / "trials.csv");
    trials_os << kTrialsHeader << '\n';
    for (const TrialOutcome& t : outcomes)
        for (const TrialEntry& e : t.entries) write_trial_row(trials_os, t, e);

    std::ofstream summary_os(std::filesystem::path(out_dir) / "summary.csv");
    write_summary_csv(summary_os, cfg, outcomes);
    return outcomes;
}

// ----------------------------------------------------------------------------
// Series CSV
// ----------------------------------------------------------------------------

void write_series_csv(const MeasurementSeries& series, std::ostream& os) {
    os << "t,P_MW,Q_MVar,V_kV,I_kA\n";
    for (std::size_t k = 0; k < series.size(); ++k) {
        os << fmt_g(series.time_at(k)) << ',' << fmt_g(series.p[k]) << ','
           << fmt_g(series.q[k]) << ',' << fmt_g(series.v[k]) << ','
           << fmt_g(series.i[k]) << '\n';
    }
}

MeasurementSeries read_series_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line)) throw DataError("series file is empty");
    if (trim(line) != "t,P_MW,Q_MVar,V_kV,I_kA")
        throw DataError("series file must start with header t,P_MW,Q_MVar,V_kV,I_kA");

    std::vector<double> t;
    MeasurementSeries out;
    std::size_t lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        const std::vector<std::string> cells = split_list(line);
        if (cells.size() != 5)
            throw DataError("line " + std::to_string(lineno) + " does not have 5 fields");
        double vals[5];
        for (int c = 0; c < 5; ++c) {
            char* end = nullptr;
            vals[c] = std::strtod(cells[static_cast<std::size_t>(c)].c_str(), &end);
            if (end == cells[static_cast<std::size_t>(c)].c_str())
                throw DataError("line " + std::to_string(lineno) + " has a bad number");
        }
        if (!std::isfinite(vals[0]))
            throw DataError("line " + std::to_string(lineno) + " has a non-finite time");
        t.push_back(vals[0]);
        out.p.push_back(vals[1]);
        out.q.push_back(vals[2]);
        out.v.push_back(vals[3]);
        out.i.push_back(vals[4]);
    }
    if (t.size() < 2) throw DataError("series needs at least two samples");
    const double ts = t[1] - t[0];
    if (!(ts > 0.0)) throw DataError("time column must increase");
    for (std::size_t k = 0; k + 1 < t.size(); ++k) {
        if (std::abs(t[k + 1] - t[k] - ts) > 1e-4 * ts)
            throw DataError("time column is not uniformly spaced near row " +
                            std::to_string(k + 2));
    }
    out.start_time = t.front();
    out.ts = ts;
    return out;
}

void write_estimation_csv(const EstimationResult& result, std::ostream& os) {
    os << "method,e_th,r_th,x_th,b_vp,b_vq,b_ip,b_iq,kappa,rows,residual_rms,"
          "solve_residual,sign_assumed\n";
    os << to_string(result.method) << ',' << fmt_g(result.tep.e_th) << ','
       << fmt_g(result.tep.r_th) << ',' << fmt_g(result.tep.x_th) << ','
       << fmt_g(result.msp.b_vp) << ',' << fmt_g(result.msp.b_vq) << ','
       << fmt_g(result.msp.b_ip) << ',' << fmt_g(result.msp.b_iq) << ','
       << fmt_g(result.diagnostics.kappa) << ',' << result.diagnostics.rows << ','
       << fmt_g(result.diagnostics.residual_rms) << ','
       << fmt_g(result.diagnostics.solve_residual) << ','
       << (result.diagnostics.sign_pattern_assumed ? 1 : 0) << '\n';
}

// ----------------------------------------------------------------------------
// Theory sweeps
// ----------------------------------------------------------------------------

SweepKind sweep_from_string(const std::string& name) {
    if (name == "snr") return SweepKind::snr;
    if (name == "deviation") return SweepKind::deviation;
    if (name == "kappa") return SweepKind::kappa;
    throw ConfigError("unknown sweep '" + name + "'");
}

void write_theory_sweep(const ExperimentConfig& cfg, SweepKind kind, std::ostream& os) {
    const double sigma2 = cfg.load.sigma_p() * cfg.load.sigma_p();
    const AutocovSpec spec = AutocovSpec::exponential(cfg.load.alpha_p, sigma2, cfg.ts);
    const double raw_db = cfg.corruption.snr_db.value_or(0.0);
    const double noise_var = sigma2 * std::pow(10.0, -raw_db / 10.0);

    switch (kind) {
        case SweepKind::snr: {
            os << "w_s,n,snr_raw_db,snr0_db,snr1_db,snr2_db,snr1_approx_db,"
                  "snr2_approx_db\n";
            const double w_lo = std::max(2.0 * cfg.ts, 0.02 / cfg.load.alpha_p);
            const double w_hi = 100.0 / cfg.load.alpha_p;
            const int points = 25;
            for (int k = 0; k < points; ++k) {
                const double frac = static_cast<double>(k) / (points - 1);
                const double w = w_lo * std::pow(w_hi / w_lo, frac);
                const auto n = static_cast<std::size_t>(
                    std::max(2.0, std::round(w / cfg.ts) + 1.0));
                os << fmt_g(w) << ',' << n << ',' << fmt_g(raw_db) << ','
                   << fmt_g(theoretical_snr(Method::baseline, spec, n, noise_var)) << ','
                   << fmt_g(theoretical_snr(Method::mean, spec, n, noise_var)) << ','
                   << fmt_g(theoretical_snr(Method::variance, spec, n, noise_var)) << ','
                   << fmt_g(theoretical_snr(Method::mean, spec, n, noise_var,
                                            SnrMode::approx))
                   << ','
                   << fmt_g(theoretical_snr(Method::variance, spec, n, noise_var,
                                            SnrMode::approx))
                   << '\n';
            }
            break;
        }
        case SweepKind::deviation: {
            os << "m,delay_s,eps_baseline,eps_mean,eps_variance\n";
            const auto n = static_cast<std::size_t>(
                std::max(2.0, std::round(cfg.window.w / cfg.ts) + 1.0));
            std::vector<long> ms;
            const int points = 25;
            for (int k = 0; k < points; ++k) {
                const long m =
                    std::lround(std::pow(10.0, 4.0 * k / (points - 1)));
                if (ms.empty() || m != ms.back()) ms.push_back(m);
            }
            for (long m : ms) {
                os << m << ',' << fmt_g(static_cast<double>(m) * cfg.ts) << ','
                   << fmt_g(deviation_ratio(Method::baseline, spec, n, m)) << ','
                   << fmt_g(deviation_ratio(Method::mean, spec, n, m)) << ','
                   << fmt_g(deviation_ratio(Method::variance, spec, n, m)) << '\n';
            }
            break;
        }
        case SweepKind::kappa: {
            os << "r_pq,kappa_linear,kappa_variance\n";
            std::vector<double> rs;
            for (double r = 0.0; r < 0.951; r += 0.05) rs.push_back(r);
            rs.push_back(0.99);
            rs.push_back(0.999);
            for (double r : rs) {
                os << fmt_g(r) << ','
                   << fmt_g(condition_number(Method::baseline, r).kappa) << ','
                   << fmt_g(condition_number(Method::variance, r).kappa) << '\n';
            }
            break;
        }
    }
}

// ----------------------------------------------------------------------------
// Recommendation
// ----------------------------------------------------------------------------

RecommendReport recommend_from_series(const MeasurementSeries& series) {
    if (series.size() < 2000)
        throw DataError("recommendation needs at least 2000 samples");

    const AutocovSpec est = estimate_autocov(series.p, series.ts);
    RecommendReport rep;
    rep.tau_c = est.tau_c();
    const WindowRecommendation wr = recommend_window(est);
    rep.w = wr.w;
    rep.w_lo = wr.lo;
    rep.w_hi = wr.hi;

    // Split the lag-zero variance into process and white-noise parts by
    // extrapolating the lag-one autocovariance back to lag zero along the
    // estimated decay.
    const double rho1 = est.rho_at_lag(1);
    double snr_db = -60.0;
    if (rho1 > 0.0) {
        const double signal =
            std::min(est.sigma2 * rho1 * std::exp(series.ts / rep.tau_c),
                     est.sigma2 * (1.0 - 1e-9));
        const double noise = est.sigma2 - signal;
        snr_db = 10.0 * std::log10(signal / noise);
    }
    rep.snr_db = std::clamp(snr_db, -60.0, 60.0);

    // Delay: the increment cross-correlation between a power channel and a
    // magnitude channel peaks at the asynchrony lag.
    const std::vector<double> dp = increments(series.p);
    const std::vector<double> dv = increments(series.v);
    const long max_lag =
        std::min<long>(500, static_cast<long>(dp.size()) / 10);
    double best = 0.0;
    long best_lag = 0;
    for (long lag = 0; lag <= max_lag; ++lag) {
        std::vector<double> shifted(dp.size(), std::numeric_limits<double>::quiet_NaN());
        for (std::size_t k = 0; k + static_cast<std::size_t>(lag) < dv.size(); ++k)
            shifted[k] = dv[k + static_cast<std::size_t>(lag)];
        const double c = std::abs(pair_corr(dp, shifted));
        if (c > best) {
            best = c;
            best_lag = lag;
        }
    }
    rep.delay_steps = best_lag;

    rep.r_pq = pair_corr(dp, increments(series.q));

    const auto n = static_cast<std::size_t>(std::max(2.0, std::round(rep.w / series.ts)));
    rep.method =
        select_method(est, rep.snr_db, rep.delay_steps, rep.r_pq, n).recommended;
    return rep;
}

void write_recommend_csv(const RecommendReport& rep, std::ostream& os) {
    os << "tau_c_s,w_s,w_lo_s,w_hi_s,snr_db,delay_steps,r_pq,method\n";
    os << fmt_g(rep.tau_c) << ',' << fmt_g(rep.w) << ',' << fmt_g(rep.w_lo) << ','
       << fmt_g(rep.w_hi) << ',' << fmt_g(rep.snr_db) << ',' << rep.delay_steps << ','
       << fmt_g(rep.r_pq) << ',' << to_string(rep.method) << '\n';
}

// ----------------------------------------------------------------------------
// Exit codes
// ----------------------------------------------------------------------------

int exit_code_for(const Error& err) {
    if (dynamic_cast<const ConfigError*>(&err) != nullptr ||
        dynamic_cast<const BadCorruptionSpec*>(&err) != nullptr ||
        dynamic_cast<const DegenerateCollinearity*>(&err) != nullptr ||
        dynamic_cast<const InfeasibleOperatingPoint*>(&err) != nullptr ||
        dynamic_cast<const AlgebraicLoopDiverged*>(&err) != nullptr)
        return 1;
    if (dynamic_cast<const DataError*>(&err) != nullptr ||
        dynamic_cast<const WindowTooShort*>(&err) != nullptr ||
        dynamic_cast<const EmptyFeatureSet*>(&err) != nullptr ||
        dynamic_cast<const EmptyInput*>(&err) != nullptr)
        return 2;
    return 3;
}

}  // namespace tepid
