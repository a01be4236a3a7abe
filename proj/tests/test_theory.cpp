#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "doctest.h"
#include "oracles.hpp"
#include "tepid/stochastic.hpp"
#include "tepid/theory.hpp"

using namespace tepid;

namespace {

// ----------------------------------------------------------------------------
// Independent oracle: every feature variance/covariance evaluated directly on
// an explicitly materialized covariance matrix, built from a lag function the
// test owns. No Toeplitz shortcuts, no shared code with the library paths.
// ----------------------------------------------------------------------------

Eigen::MatrixXd dense_cov(const std::function<double(long)>& rho_lag, double sigma2,
                          long n, long m) {
    Eigen::MatrixXd c(n, n);
    for (long i = 0; i < n; ++i)
        for (long j = 0; j < n; ++j) c(i, j) = sigma2 * rho_lag(std::labs(i - j + m));
    return c;
}

double dense_mean_var(const Eigen::MatrixXd& c) {
    const double n = static_cast<double>(c.rows());
    return c(0, 0) - 2.0 * c.row(0).sum() / n + c.sum() / (n * n);
}

double dense_mean_cov(const Eigen::MatrixXd& c) {
    const double n = static_cast<double>(c.rows());
    return c(0, 0) - (c.row(0).sum() + c.col(0).sum()) / n + c.sum() / (n * n);
}

double dense_var_var(const Eigen::MatrixXd& c) {
    const double n = static_cast<double>(c.rows());
    const double core = c.array().square().sum() -
                        2.0 * c.rowwise().sum().squaredNorm() / n +
                        c.sum() * c.sum() / (n * n);
    return 2.0 * core / ((n - 1.0) * (n - 1.0));
}

double dense_var_cov(const Eigen::MatrixXd& c) {
    const double n = static_cast<double>(c.rows());
    const double core = c.array().square().sum() + c.sum() * c.sum() / (n * n) -
                        (c.rowwise().sum().squaredNorm() +
                         c.colwise().sum().squaredNorm()) / n;
    return 2.0 * core / ((n - 1.0) * (n - 1.0));
}

// Monte Carlo helpers: feature samples over many independent realizations.

double mc_variance(const std::vector<double>& v) {
    return oracle::sample_var(v);
}

std::vector<double> ou_segment(std::size_t n, double ts, std::uint64_t seed) {
    OuLoadConfig cfg;
    cfg.alpha_p = 1.0;
    cfg.alpha_q = 1.0;
    cfg.b_p = std::sqrt(2.0);
    cfg.b_q = std::sqrt(2.0);
    cfg.r_pq = 0.0;
    return gen_ou_pair(cfg, n, ts, seed).eta_p;
}

double window_s2(const std::vector<double>& x, std::size_t begin, std::size_t n) {
    const auto m = oracle::naive_moments(x, begin, n);
    return m.var;
}

double window_anchor(const std::vector<double>& x, std::size_t begin, std::size_t n) {
    const auto m = oracle::naive_moments(x, begin, n);
    return x[begin] - m.mean;
}

}  // namespace

TEST_SUITE("theory") {

TEST_CASE("covariance matrices carry the lag structure") {
    const auto spec = AutocovSpec::exponential(1.0, 3.0, 0.01);
    const Eigen::MatrixXd c = build_cov_matrix(spec, 4, 0);
    CHECK(c.rows() == 4);
    CHECK(c(0, 0) == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(c(0, 1) == doctest::Approx(3.0 * std::exp(-0.01)).epsilon(1e-12));
    CHECK(c(3, 1) == doctest::Approx(3.0 * std::exp(-0.02)).epsilon(1e-12));
    CHECK((c - c.transpose()).norm() == doctest::Approx(0.0));

    const Eigen::MatrixXd cs = build_cov_matrix(spec, 3, 2);
    CHECK(cs(0, 0) == doctest::Approx(3.0 * std::exp(-0.02)).epsilon(1e-12));
    CHECK(cs(2, 0) == doctest::Approx(3.0 * std::exp(-0.04)).epsilon(1e-12));
    CHECK(cs(0, 2) == doctest::Approx(3.0).epsilon(1e-12));
}

TEST_CASE("closed-form feature statistics match a materialized-matrix evaluation") {
    struct Model {
        AutocovSpec spec;
        std::function<double(long)> rho_lag;
    };
    std::vector<double> damped(400);
    for (std::size_t l = 0; l < damped.size(); ++l)
        damped[l] = std::exp(-0.05 * static_cast<double>(l)) *
                    std::cos(0.3 * static_cast<double>(l));
    const std::vector<Model> models = {
        {AutocovSpec::exponential(2.0, 3.0, 0.01),
         [](long l) { return std::exp(-2.0 * 0.01 * static_cast<double>(l)); }},
        {AutocovSpec::empirical(damped, 0.7, 0.02),
         [&damped](long l) {
             return static_cast<std::size_t>(l) < damped.size()
                        ? damped[static_cast<std::size_t>(l)]
                        : 0.0;
         }},
    };

    const std::size_t n = 50;
    for (const Model& model : models) {
        const Eigen::MatrixXd c0 =
            dense_cov(model.rho_lag, model.spec.sigma2, static_cast<long>(n), 0);

        // Feature variances, recovered by inverting the reported snr.
        const double noise_var = 0.37;
        const double sig_mean =
            std::pow(10.0, theoretical_snr(Method::mean, model.spec, n, noise_var) / 10.0) *
            ((static_cast<double>(n) - 1.0) / static_cast<double>(n) * noise_var);
        CHECK(sig_mean == doctest::Approx(dense_mean_var(c0)).epsilon(1e-10));

        const double noise_s2 = 2.0 * noise_var * noise_var / (static_cast<double>(n) - 1.0);
        const double sig_var =
            std::pow(10.0, theoretical_snr(Method::variance, model.spec, n, noise_var) / 10.0) *
            noise_s2;
        CHECK(sig_var == doctest::Approx(dense_var_var(c0)).epsilon(1e-10));

        for (long m : {3L, 17L}) {
            const Eigen::MatrixXd cm =
                dense_cov(model.rho_lag, model.spec.sigma2, static_cast<long>(n), m);
            const double want_mean = 2.0 - 2.0 * dense_mean_cov(cm) / dense_mean_var(c0);
            CHECK(deviation_ratio(Method::mean, model.spec, n, m) ==
                  doctest::Approx(want_mean).epsilon(1e-10));
            const double want_var = 2.0 - 2.0 * dense_var_cov(cm) / dense_var_var(c0);
            CHECK(deviation_ratio(Method::variance, model.spec, n, m) ==
                  doctest::Approx(want_var).epsilon(1e-10));
        }
    }
}

TEST_CASE("increment snr freezes the known sampling-rate penalty") {
    const auto spec = AutocovSpec::exponential(1.0, 1.0, 0.01);
    const double snr0 = theoretical_snr(Method::baseline, spec, 100, 1.0);
    CHECK(snr0 == doctest::Approx(10.0 * std::log10(1.0 - std::exp(-0.01))).epsilon(1e-12));
    CHECK(snr0 == doctest::Approx(-20.0217).epsilon(1e-4));
    // A raw-snr shift moves the figure one-for-one.
    const double snr0_hi = theoretical_snr(Method::baseline, spec, 100, 0.01);
    CHECK(snr0_hi - snr0 == doctest::Approx(20.0).epsilon(1e-10));
}

TEST_CASE("a two-sample window mean is half an increment, snr-wise") {
    const auto spec = AutocovSpec::exponential(1.3, 2.0, 0.02);
    const double a = theoretical_snr(Method::baseline, spec, 2, 0.5);
    const double b = theoretical_snr(Method::mean, spec, 2, 0.5);
    CHECK(a == doctest::Approx(b).epsilon(1e-12));
}

TEST_CASE("wide windows restore the raw snr for window means") {
    const auto spec = AutocovSpec::exponential(1.0, 1.0, 0.01);
    const double raw_db = 0.0;  // noise variance 1.0
    const double snr1 = theoretical_snr(Method::mean, spec, 2000, 1.0);
    CHECK(std::abs(snr1 - raw_db) < 0.5);
    const double snr1_approx = theoretical_snr(Method::mean, spec, 2000, 1.0, SnrMode::approx);
    CHECK(std::abs(snr1_approx - snr1) < 0.3);
}

TEST_CASE("window variances lift the snr well above raw on wide windows") {
    const auto spec = AutocovSpec::exponential(1.0, 1.0, 0.01);
    const double raw_db = 0.0;
    for (std::size_t n : {500u, 1000u, 2000u}) {
        const double snr2 = theoretical_snr(Method::variance, spec, n, 1.0);
        const double snr0 = theoretical_snr(Method::baseline, spec, n, 1.0);
        CHECK(snr2 > raw_db);
        CHECK(raw_db > snr0);
    }
    // The integral shortcut drops mean-removal terms that decay like
    // 4 tau_c / W: about a decibel at W = 20 s, a tenth of that at 200 s.
    const double exact20 = theoretical_snr(Method::variance, spec, 2000, 1.0);
    const double approx20 = theoretical_snr(Method::variance, spec, 2000, 1.0, SnrMode::approx);
    CHECK(std::abs(exact20 - approx20) < 1.5);
    const double exact200 = theoretical_snr(Method::variance, spec, 20000, 1.0);
    const double approx200 =
        theoretical_snr(Method::variance, spec, 20000, 1.0, SnrMode::approx);
    CHECK(std::abs(exact200 - approx200) < 0.3);
}

TEST_CASE("monte carlo feature variances reproduce the exact snr") {
    const auto spec = AutocovSpec::exponential(1.0, 1.0, 0.01);
    const double ts = 0.01;
    const double noise_var = 1.0;  // 0 dB raw
    const std::size_t trials = 6000;

    std::mt19937_64 noise_rng(99100);
    std::normal_distribution<double> gauss(0.0, 1.0);

    for (std::size_t n : {100u, 500u, 2000u}) {
        std::vector<double> inc_sig, inc_noise;
        std::vector<double> mean_sig, mean_noise;
        std::vector<double> var_sig, var_noise;
        inc_sig.reserve(trials);

        for (std::size_t t = 0; t < trials; ++t) {
            const std::vector<double> x =
                ou_segment(n, ts, 777000u + 17u * t + 1000000u * n);
            std::vector<double> e(n);
            for (double& v : e) v = gauss(noise_rng) * std::sqrt(noise_var);

            inc_sig.push_back(x[1] - x[0]);
            inc_noise.push_back(e[1] - e[0]);
            mean_sig.push_back(window_anchor(x, 0, n));
            mean_noise.push_back(window_anchor(e, 0, n));
            var_sig.push_back(window_s2(x, 0, n));
            var_noise.push_back(window_s2(e, 0, n));
        }

        const auto db = [](double sig, double noi) { return 10.0 * std::log10(sig / noi); };
        const double mc0 = db(mc_variance(inc_sig), mc_variance(inc_noise));
        const double mc1 = db(mc_variance(mean_sig), mc_variance(mean_noise));
        const double mc2 = db(mc_variance(var_sig), mc_variance(var_noise));

        CHECK(std::abs(mc0 - theoretical_snr(Method::baseline, spec, n, noise_var)) < 1.0);
        CHECK(std::abs(mc1 - theoretical_snr(Method::mean, spec, n, noise_var)) < 1.0);
        CHECK(std::abs(mc2 - theoretical_snr(Method::variance, spec, n, noise_var)) < 1.0);
    }
}

TEST_CASE("deviation ratios match simulation") {
    const auto spec = AutocovSpec::exponential(1.0, 1.0, 0.01);
    const double ts = 0.01;

    SUBCASE("one-step increment delay, frozen value and long-series oracle") {
        const double eps = deviation_ratio(Method::baseline, spec, 100, 1);
        CHECK(eps == doctest::Approx(3.0 - std::exp(-0.01)).epsilon(1e-12));
        CHECK(eps == doctest::Approx(2.00995).epsilon(1e-5));

        const std::vector<double> x = ou_segment(1000000, ts, 424242);
        std::vector<double> y, d;
        y.reserve(x.size());
        for (std::size_t k = 0; k + 2 < x.size(); ++k) {
            const double yk = x[k + 1] - x[k];
            const double yk_shift = x[k + 2] - x[k + 1];
            y.push_back(yk);
            d.push_back(yk_shift - yk);
        }
        const double eps_mc = mc_variance(d) / mc_variance(y);
        CHECK(std::abs(eps_mc - eps) < 0.05 * eps);
    }

    SUBCASE("window methods under a half-window shift") {
        const std::size_t n = 100;
        const long m = 50;
        const std::size_t trials = 4000;
        std::vector<double> dm, ym, dv, yv;
        for (std::size_t t = 0; t < trials; ++t) {
            const std::vector<double> x =
                ou_segment(n + static_cast<std::size_t>(m), ts, 515000u + t);
            const double y_mean = window_anchor(x, 0, n);
            const double y_mean_s = window_anchor(x, static_cast<std::size_t>(m), n);
            ym.push_back(y_mean);
            dm.push_back(y_mean_s - y_mean);
            const double y_var = window_s2(x, 0, n);
            const double y_var_s = window_s2(x, static_cast<std::size_t>(m), n);
            yv.push_back(y_var);
            dv.push_back(y_var_s - y_var);
        }
        const double eps_mean_mc = mc_variance(dm) / mc_variance(ym);
        const double eps_mean = deviation_ratio(Method::mean, spec, n, m);
        CHECK(std::abs(eps_mean_mc - eps_mean) < 0.03 + 0.10 * eps_mean);

        const double eps_var_mc = mc_variance(dv) / mc_variance(yv);
        const double eps_var = deviation_ratio(Method::variance, spec, n, m);
        CHECK(std::abs(eps_var_mc - eps_var) < 0.03 + 0.12 * eps_var);
    }
}

TEST_CASE("asynchrony hurts window variances least") {
    const auto spec = AutocovSpec::exponential(1.0, 1.0, 0.01);
    const std::size_t n = 2000;  // 20 s window
    for (long m : {1L, 10L, 100L}) {
        const double e0 = deviation_ratio(Method::baseline, spec, n, m);
        const double e1 = deviation_ratio(Method::mean, spec, n, m);
        const double e2 = deviation_ratio(Method::variance, spec, n, m);
        CHECK(e2 < e1);
        CHECK(e2 < e0);
        CHECK(e0 > 0.0);
        CHECK(e0 < 2.2);
        CHECK(e1 > 0.0);
        CHECK(e2 > 0.0);
    }
    CHECK(deviation_ratio(Method::mean, spec, n, 0) == 0.0);
    CHECK(deviation_ratio(Method::variance, spec, n, 0) == 0.0);
    CHECK(deviation_ratio(Method::baseline, spec, n, 0) == 0.0);
}

TEST_CASE("a delay far beyond the correlation time decorrelates every feature") {
    const auto spec = AutocovSpec::exponential(1.0, 1.0, 0.01);
    const std::size_t n = 500;
    const long m = 10000;  // 100 correlation times
    for (Method method : {Method::baseline, Method::mean, Method::variance}) {
        const double eps = deviation_ratio(method, spec, n, m);
        CHECK(eps > 1.9);
        CHECK(eps < 2.1);
    }
}

TEST_CASE("collinearity condition numbers") {
    SUBCASE("uncorrelated channels are perfectly conditioned") {
        for (Method method : {Method::baseline, Method::mean, Method::variance}) {
            const auto rep = condition_number(method, 0.0);
            CHECK(rep.kappa == doctest::Approx(1.0).epsilon(1e-12));
        }
    }

    SUBCASE("closed forms and symmetry") {
        const auto rep = condition_number(Method::baseline, 0.6);
        CHECK(rep.kappa == doctest::Approx(2.0).epsilon(1e-12));
        CHECK(condition_number(Method::mean, 0.6).kappa ==
              doctest::Approx(rep.kappa).epsilon(1e-12));
        CHECK(condition_number(Method::baseline, -0.6).kappa ==
              doctest::Approx(rep.kappa).epsilon(1e-12));
        CHECK(condition_number(Method::variance, -0.6).kappa ==
              doctest::Approx(condition_number(Method::variance, 0.6).kappa).epsilon(1e-12));

        const auto rep2 = condition_number(Method::variance, 0.6);
        CHECK(rep2.corr(0, 1) == doctest::Approx(0.36).epsilon(1e-12));
        CHECK(rep2.corr(0, 2) ==
              doctest::Approx(0.6 * std::sqrt(2.0 / 1.36)).epsilon(1e-12));
        CHECK(rep2.kappa == doctest::Approx(4.05364).epsilon(1e-4));
    }

    SUBCASE("eigen-decomposition oracle over a correlation grid") {
        for (double r : {0.1, 0.3, 0.6, 0.9, 0.99, 0.999}) {
            for (Method method : {Method::baseline, Method::variance}) {
                const auto rep = condition_number(method, r);
                Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(rep.corr);
                const Eigen::VectorXd lam = eig.eigenvalues();
                const double want = std::sqrt(lam(lam.size() - 1) / lam(0));
                // The solver resolves the small eigenvalue to about 1e-15 of
                // the matrix norm, which near full collinearity leaves only
                // eight or so significant digits in the ratio.
                CHECK(rep.kappa == doctest::Approx(want).epsilon(1e-7));
            }
            CHECK(condition_number(Method::variance, r).kappa >
                  condition_number(Method::baseline, r).kappa);
        }
        // Conditioning worsens monotonically with collinearity.
        double prev0 = 1.0, prev2 = 1.0;
        for (double r = 0.05; r < 1.0; r += 0.05) {
            const double k0 = condition_number(Method::baseline, r).kappa;
            const double k2 = condition_number(Method::variance, r).kappa;
            CHECK(k0 > prev0);
            CHECK(k2 > prev2);
            prev0 = k0;
            prev2 = k2;
        }
        CHECK(condition_number(Method::variance, 0.9).kappa > 15.0);
        CHECK(condition_number(Method::variance, 0.9).kappa < 25.0);
    }

    SUBCASE("full collinearity is rejected") {
        CHECK_THROWS_AS(condition_number(Method::baseline, 1.0), DegenerateCollinearity);
        CHECK_THROWS_AS(condition_number(Method::variance, -1.0), DegenerateCollinearity);
        CHECK_THROWS_AS(condition_number(Method::mean,
                                         std::numeric_limits<double>::quiet_NaN()),
                        DegenerateCollinearity);
    }
}

TEST_CASE("least-squares error bound holds for random perturbations") {
    std::mt19937_64 rng(88111);
    std::normal_distribution<double> gauss(0.0, 1.0);

    const int rows = 400;
    Eigen::MatrixXd a_true(rows, 2);
    for (int k = 0; k < rows; ++k) {
        const double u = gauss(rng);
        const double v = gauss(rng);
        a_true(k, 0) = 1.0 * u + 0.3;
        a_true(k, 1) = 2.5 * (0.5 * u + std::sqrt(1.0 - 0.25) * v) - 0.8;
    }
    Eigen::Matrix2d theta;
    theta << -0.08, 0.003, -0.2, 0.0029;
    Eigen::MatrixXd b_true = a_true * theta;
    b_true.col(0).array() += 0.4;  // row offsets vanish under centering
    b_true.col(1).array() -= 0.1;

    const auto center = [](const Eigen::MatrixXd& x) -> Eigen::MatrixXd {
        return x.rowwise() - x.colwise().mean();
    };

    SUBCASE("zero perturbation recovers the coefficients exactly") {
        const auto rep = error_bound(Method::mean, a_true, a_true, b_true, b_true);
        CHECK(rep.bound == 0.0);
        const Eigen::MatrixXd got =
            center(a_true).colPivHouseholderQr().solve(center(b_true));
        CHECK((got - theta).norm() < 1e-12);
    }

    SUBCASE("the frobenius condition number matches its two-column identity") {
        const auto rep = error_bound(Method::mean, a_true, a_true, b_true, b_true);
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(center(a_true));
        const double kappa = svd.singularValues()(0) / svd.singularValues()(1);
        CHECK(rep.kappa_f == doctest::Approx(kappa + 1.0 / kappa).epsilon(1e-10));
        CHECK(rep.kappa_f >= kappa);
        CHECK(rep.kappa_f <= 2.0 * kappa);
    }

    SUBCASE("fifty random one-percent perturbations stay inside the bound") {
        for (int rep_i = 0; rep_i < 50; ++rep_i) {
            Eigen::MatrixXd da(rows, 2), db(rows, 2);
            for (int k = 0; k < rows; ++k)
                for (int j = 0; j < 2; ++j) {
                    da(k, j) = gauss(rng);
                    db(k, j) = gauss(rng);
                }
            const Eigen::MatrixXd ac = center(a_true);
            const Eigen::MatrixXd bc = center(b_true);
            da *= 0.01 * ac.norm() / da.norm();
            db *= 0.01 * bc.norm() / db.norm();
            const Eigen::MatrixXd a_meas = a_true + da;
            const Eigen::MatrixXd b_meas = b_true + db;

            const auto rep = error_bound(Method::mean, a_true, a_meas, b_true, b_meas);
            const Eigen::MatrixXd got =
                center(a_meas).colPivHouseholderQr().solve(center(b_meas));
            const double actual = (got - theta).norm() / theta.norm();
            // Allow a sliver above the bound for second-order terms the
            // linearized inequality drops.
            CHECK(actual <= rep.bound * 1.02);
            CHECK(rep.bound > 0.0);
            CHECK(rep.map_gain == 1.0);
        }
    }

    SUBCASE("duplicate columns are reported as rank deficient") {
        Eigen::MatrixXd a_bad = a_true;
        a_bad.col(1) = 3.0 * a_bad.col(0);
        CHECK_THROWS_AS(error_bound(Method::mean, a_bad, a_bad, b_true, b_true),
                        RankDeficient);
    }

    SUBCASE("shape mismatches are rejected") {
        CHECK_THROWS_AS(error_bound(Method::mean, a_true, a_true.topRows(10), b_true,
                                    b_true),
                        ConfigError);
    }
}

TEST_CASE("variance-method bound maps through the quadratic feature jacobian") {
    Msp msp;
    msp.b_vp = -0.08;
    msp.b_vq = -0.2;
    msp.b_ip = 0.003;
    msp.b_iq = 0.0029;

    // Jacobian oracle: assemble the full block-diagonal jacobian of
    // (b1, b2) -> (b1^2, b2^2, 2 b1 b2) per output column and take its
    // smallest singular value with Eigen.
    const auto block = [](double b1, double b2) {
        Eigen::MatrixXd j(3, 2);
        j << 2.0 * b1, 0.0, 0.0, 2.0 * b2, 2.0 * b2, 2.0 * b1;
        return j;
    };
    Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(6, 4);
    jac.block(0, 0, 3, 2) = block(msp.b_vp, msp.b_vq);
    jac.block(3, 2, 3, 2) = block(msp.b_ip, msp.b_iq);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(jac);
    const double sv_min = svd.singularValues()(svd.singularValues().size() - 1);

    const auto quad = [](double b1, double b2) {
        return Eigen::Vector3d(b1 * b1, b2 * b2, 2.0 * b1 * b2);
    };
    Eigen::MatrixXd theta2(3, 2);
    theta2.col(0) = quad(msp.b_vp, msp.b_vq);
    theta2.col(1) = quad(msp.b_ip, msp.b_iq);
    const double norm1 = std::sqrt(msp.b_vp * msp.b_vp + msp.b_vq * msp.b_vq +
                                   msp.b_ip * msp.b_ip + msp.b_iq * msp.b_iq);
    const double want_gain = theta2.norm() / (sv_min * norm1);

    std::mt19937_64 rng(88222);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const int rows = 300;
    Eigen::MatrixXd a_true(rows, 3);
    for (int k = 0; k < rows; ++k) {
        const double sp = 1.0 + 0.3 * gauss(rng) * gauss(rng);
        const double sq = 1.2 + 0.3 * gauss(rng) * gauss(rng);
        a_true(k, 0) = sp * sp;
        a_true(k, 1) = sq * sq;
        a_true(k, 2) = 0.4 * sp * sq;
    }
    const Eigen::MatrixXd b_true = a_true * theta2;

    Eigen::MatrixXd da(rows, 3);
    for (int k = 0; k < rows; ++k)
        for (int j = 0; j < 3; ++j) da(k, j) = gauss(rng);
    da *= 0.005 * a_true.norm() / da.norm();

    const auto rep = error_bound(Method::variance, a_true, a_true + da, b_true, b_true, msp);
    CHECK(rep.map_gain == doctest::Approx(want_gain).epsilon(1e-10));
    CHECK(rep.bound == doctest::Approx(rep.map_gain * rep.raw_bound).epsilon(1e-12));
    CHECK(rep.bound > rep.raw_bound);  // the quadratic map contracts small sensitivities

    // The smallest-singular-value formula really is a local lower bound on
    // the map's gain: random small steps never shrink by more.
    std::mt19937_64 step_rng(88333);
    for (int k = 0; k < 100; ++k) {
        Eigen::Vector4d d;
        for (int j = 0; j < 4; ++j) d(j) = gauss(step_rng);
        d *= 1e-7 / d.norm();
        Eigen::MatrixXd shifted(3, 2);
        shifted.col(0) = quad(msp.b_vp + d(0), msp.b_vq + d(1));
        shifted.col(1) = quad(msp.b_ip + d(2), msp.b_iq + d(3));
        const double gain = (shifted - theta2).norm() / d.norm();
        CHECK(gain >= sv_min * (1.0 - 1e-5));
    }

    CHECK_THROWS_AS(error_bound(Method::variance, a_true, a_true + da, b_true, b_true),
                    ConfigError);
}

TEST_CASE("empirical autocovariance recovers an exponential decay") {
    const double ts = 0.01;

    SUBCASE("long ou record") {
        const std::vector<double> x = ou_segment(1000000, ts, 561001);
        const AutocovSpec est = estimate_autocov(x, ts);
        CHECK(est.is_empirical());
        CHECK(est.tau_c() > 0.95);
        CHECK(est.tau_c() < 1.05);
        CHECK(est.sigma2 > 0.94);
        CHECK(est.sigma2 < 1.06);
        CHECK(est.rho_at_lag(100) > 0.30);
        CHECK(est.rho_at_lag(100) < 0.45);

        // The estimated model feeds the calculators coherently.
        const auto exact = AutocovSpec::exponential(1.0, 1.0, ts);
        const double got = theoretical_snr(Method::variance, est, 500, est.sigma2);
        const double want = theoretical_snr(Method::variance, exact, 500, 1.0);
        CHECK(std::abs(got - want) < 0.5);
    }

    SUBCASE("gaps do not derail the estimate") {
        std::vector<double> x = ou_segment(400000, ts, 561002);
        std::mt19937_64 rng(561003);
        std::uniform_real_distribution<double> uni(0.0, 1.0);
        for (double& v : x)
            if (uni(rng) < 0.05) v = std::numeric_limits<double>::quiet_NaN();
        const AutocovSpec est = estimate_autocov(x, ts);
        CHECK(est.tau_c() > 0.90);
        CHECK(est.tau_c() < 1.10);
    }

    SUBCASE("white noise has a sub-sample correlation time") {
        std::mt19937_64 rng(561004);
        std::normal_distribution<double> gauss(0.0, 1.0);
        std::vector<double> x(100000);
        for (double& v : x) v = gauss(rng);
        const AutocovSpec est = estimate_autocov(x, ts);
        CHECK(est.tau_c() <= ts);
    }

    SUBCASE("degenerate inputs are rejected") {
        CHECK_THROWS_AS(estimate_autocov(std::vector<double>(5000, 3.25), ts), DataError);
        CHECK_THROWS_AS(estimate_autocov(std::vector<double>(500, 0.0), ts), DataError);
        CHECK_THROWS_AS(estimate_autocov(ou_segment(5000, ts, 561005), 0.0), ConfigError);
    }
}

TEST_CASE("window recommendations scale with the correlation time") {
    const auto fast = recommend_window(AutocovSpec::exponential(1.0, 1.0, 0.01));
    CHECK(fast.w == doctest::Approx(5.0).epsilon(1e-12));
    CHECK(fast.lo == doctest::Approx(5.0).epsilon(1e-12));
    CHECK(fast.hi == doctest::Approx(10.0).epsilon(1e-12));

    const auto slow = recommend_window(AutocovSpec::exponential(0.5, 1.0, 0.01));
    CHECK(slow.w == doctest::Approx(10.0).epsilon(1e-12));

    std::vector<double> rho(400);
    for (std::size_t l = 0; l < rho.size(); ++l)
        rho[l] = std::exp(-static_cast<double>(l) / 120.0);
    const auto emp = recommend_window(AutocovSpec::empirical(rho, 1.0, 0.01));
    CHECK(std::abs(emp.w - 6.0) < 1e-6);

    // Correlation that never decays far enough cannot recommend anything.
    CHECK_THROWS_AS(recommend_window(AutocovSpec::empirical({1.0, 0.9, 0.8}, 1.0, 0.01)),
                    DataError);
}

TEST_CASE("method selection reproduces the guidance examples") {
    const auto spec = AutocovSpec::exponential(1.0, 1.0, 0.01);
    const std::size_t n = 500;  // the recommended 5 s window

    const auto noisy = select_method(spec, 0.0, 0, 0.2, n);
    CHECK(noisy.recommended == Method::variance);

    const auto collinear = select_method(spec, 20.0, 0, 0.999, n);
    CHECK(collinear.recommended == Method::mean);

    const auto delayed = select_method(spec, 20.0, 10, 0.2, n);
    CHECK(delayed.recommended == Method::variance);

    // Scores carry the ingredients they were built from.
    for (const MethodScore& s : delayed.scores) {
        CHECK(s.score > 0.0);
        CHECK(s.kappa >= 1.0);
        CHECK(s.eps_r >= 0.0);
    }
    CHECK(delayed.scores[0].method == Method::baseline);
    CHECK(delayed.scores[1].method == Method::mean);
    CHECK(delayed.scores[2].method == Method::variance);
}

TEST_CASE("the aggregate report matches the individual calculators") {
    const auto spec = AutocovSpec::exponential(1.0, 1.0, 0.01);
    const std::size_t n = 500;
    const double snr_raw = 0.0;
    const long m = 3;
    const double r = 0.5;

    const TheoryReport rep = theory_report(spec, snr_raw, m, r, n);
    const double noise_var = 1.0;
    CHECK(rep.snr_raw_db == snr_raw);
    CHECK(rep.snr0_db ==
          doctest::Approx(theoretical_snr(Method::baseline, spec, n, noise_var)).epsilon(1e-12));
    CHECK(rep.snr1_db ==
          doctest::Approx(theoretical_snr(Method::mean, spec, n, noise_var)).epsilon(1e-12));
    CHECK(rep.snr2_db ==
          doctest::Approx(theoretical_snr(Method::variance, spec, n, noise_var)).epsilon(1e-12));
    CHECK(rep.eps_r[1] ==
          doctest::Approx(deviation_ratio(Method::mean, spec, n, m)).epsilon(1e-12));
    CHECK(rep.kappa[2] ==
          doctest::Approx(condition_number(Method::variance, r).kappa).epsilon(1e-12));
    CHECK(rep.recommended_w == doctest::Approx(5.0).epsilon(1e-12));
    CHECK(rep.snr2_db > rep.snr_raw_db);
    CHECK(rep.snr_raw_db > rep.snr0_db);
}

TEST_CASE("configuration rejections") {
    CHECK_THROWS_AS(AutocovSpec::exponential(0.0, 1.0, 0.01), ConfigError);
    CHECK_THROWS_AS(AutocovSpec::exponential(1.0, -1.0, 0.01), ConfigError);
    CHECK_THROWS_AS(AutocovSpec::exponential(1.0, 1.0, 0.0), ConfigError);
    CHECK_THROWS_AS(AutocovSpec::empirical({}, 1.0, 0.01), ConfigError);
    CHECK_THROWS_AS(AutocovSpec::empirical({0.9, 0.5}, 1.0, 0.01), ConfigError);
    CHECK_THROWS_AS(AutocovSpec::empirical({1.0, 1.5}, 1.0, 0.01), ConfigError);

    const auto spec = AutocovSpec::exponential(1.0, 1.0, 0.01);
    CHECK_THROWS_AS(theoretical_snr(Method::mean, spec, 1, 1.0), ConfigError);
    CHECK_THROWS_AS(theoretical_snr(Method::mean, spec, 100, 0.0), ConfigError);
    CHECK_THROWS_AS(deviation_ratio(Method::mean, spec, 100, -1), ConfigError);
    CHECK_THROWS_AS(build_cov_matrix(spec, 1, 0), ConfigError);
    CHECK_THROWS_AS(build_cov_matrix(spec, 10, -2), ConfigError);
    CHECK_THROWS_AS(select_method(spec, 0.0, 0, 0.2, 1), ConfigError);
}

}  // TEST_SUITE
