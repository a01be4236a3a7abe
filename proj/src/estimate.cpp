#include "tepid/estimate.hpp"

#include <cmath>
#include <utility>

#include <Eigen/Dense>
#include <Eigen/SVD>

namespace tepid {

namespace {

Eigen::MatrixXd centered(const Eigen::MatrixXd& x) {
    return x.rowwise() - x.colwise().mean();
}

double nan_mean(const std::vector<double>& x) {
    double acc = 0.0;
    std::size_t count = 0;
    for (double v : x) {
        if (std::isfinite(v)) {
            acc += v;
            ++count;
        }
    }
    if (count == 0) throw DataError("channel holds no finite samples");
    return acc / static_cast<double>(count);
}

// Inverts one quadratic feature column (b1^2, b2^2, 2 b1 b2) back to
// (b1, b2). want_negative pins the physical sign of the leading nonzero
// entry; the cross term supplies the relative sign.
std::pair<double, double> invert_quadratic_column(const Eigen::Vector3d& col,
                                                  bool want_negative,
                                                  bool* sign_assumed) {
    const double scale = col.cwiseAbs().maxCoeff();
    const double tol = 1e-6 * scale;

    double t1 = col(0);
    double t2 = col(1);
    const double t3 = col(2);
    for (double* t : {&t1, &t2}) {
        if (*t < 0.0) {
            if (*t < -tol)
                throw InconsistentQuadratic("a squared sensitivity came out negative");
            *t = 0.0;
        }
    }
    const double m1 = std::sqrt(t1);
    const double m2 = std::sqrt(t2);
    if (std::abs(t3) > 2.0 * m1 * m2 * 1.5 + tol)
        throw InconsistentQuadratic(
            "the cross term exceeds what the squared terms allow");

    double b1 = m1;
    double b2 = m2;
    if (m1 > 0.0 && m2 > 0.0) {
        if (std::abs(t3) > 1e-9 * scale) {
            if (t3 < 0.0) b2 = -b2;
        } else {
            // Ambiguous relative sign; same-sign is the physical pattern.
            if (sign_assumed != nullptr) *sign_assumed = true;
        }
    }
    // Flip the whole column so the leading nonzero entry has the expected
    // physical sign.
    const double lead = b1 != 0.0 ? b1 : b2;
    if (lead != 0.0 && ((lead > 0.0) == want_negative)) {
        b1 = -b1;
        b2 = -b2;
    }
    return {b1, b2};
}

}  // namespace

const char* to_string(Regressor reg) {
    switch (reg) {
        case Regressor::ols: return "ols";
        case Regressor::ridge: return "ridge";
        case Regressor::tls: return "tls";
    }
    return "ols";
}

Regressor regressor_from_string(const std::string& name) {
    if (name == "ols") return Regressor::ols;
    if (name == "ridge") return Regressor::ridge;
    if (name == "tls") return Regressor::tls;
    throw ConfigError("unknown regressor '" + name + "'");
}

RegressResult regress(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                      const RegressOptions& opts) {
    if (a.rows() != b.rows()) throw ConfigError("feature matrices disagree on rows");
    if (a.cols() < 1 || b.cols() < 1) throw ConfigError("feature matrices need columns");
    if (a.rows() < a.cols() + 2)
        throw DataError("too few feature rows for a meaningful fit");
    if (!a.allFinite() || !b.allFinite())
        throw DataError("feature matrices contain non-finite entries");

    const Eigen::MatrixXd ad = opts.center ? centered(a) : a;
    const Eigen::MatrixXd bd = opts.center ? centered(b) : b;

    Eigen::JacobiSVD<Eigen::MatrixXd> svd(ad);
    const Eigen::VectorXd sv = svd.singularValues();
    if (sv(sv.size() - 1) <= 1e-12 * sv(0))
        throw RankDeficient("design matrix is numerically rank deficient");

    RegressResult out;
    out.rows = static_cast<std::size_t>(a.rows());
    out.kappa = sv(0) / sv(sv.size() - 1);

    switch (opts.regressor) {
        case Regressor::ols: {
            out.theta = ad.colPivHouseholderQr().solve(bd);
            break;
        }
        case Regressor::ridge: {
            const double p = static_cast<double>(ad.cols());
            const double lambda =
                opts.ridge_lambda >= 0.0 ? opts.ridge_lambda
                                         : 1e-4 * ad.squaredNorm() / p;
            Eigen::MatrixXd gram = ad.transpose() * ad;
            gram.diagonal().array() += lambda;
            out.theta = gram.ldlt().solve(ad.transpose() * bd);
            break;
        }
        case Regressor::tls: {
            const Eigen::Index pc = ad.cols();
            const Eigen::Index qc = bd.cols();
            Eigen::MatrixXd stacked(ad.rows(), pc + qc);
            stacked << ad, bd;
            Eigen::JacobiSVD<Eigen::MatrixXd> joint(stacked, Eigen::ComputeFullV);
            const Eigen::MatrixXd v = joint.matrixV();
            const Eigen::MatrixXd v12 = v.block(0, pc, pc, qc);
            const Eigen::MatrixXd v22 = v.block(pc, pc, qc, qc);
            Eigen::FullPivLU<Eigen::MatrixXd> lu(v22);
            if (!lu.isInvertible())
                throw RankDeficient("total least squares correction is degenerate");
            out.theta = -v12 * lu.inverse();
            break;
        }
    }

    const double cells = static_cast<double>(bd.rows() * bd.cols());
    out.residual_rms = std::sqrt((bd - ad * out.theta).squaredNorm() / cells);
    return out;
}

Msp msp_from_theta(Method method, const Eigen::MatrixXd& theta, bool* sign_assumed) {
    if (sign_assumed != nullptr) *sign_assumed = false;
    if (theta.cols() != 2)
        throw ConfigError("sensitivity recovery expects voltage and current columns");

    Msp msp{};
    if (method == Method::variance) {
        if (theta.rows() != 3)
            throw ConfigError("quadratic recovery expects three coefficient rows");
        const auto v = invert_quadratic_column(theta.col(0), true, sign_assumed);
        const auto i = invert_quadratic_column(theta.col(1), false, sign_assumed);
        msp.b_vp = v.first;
        msp.b_vq = v.second;
        msp.b_ip = i.first;
        msp.b_iq = i.second;
    } else {
        if (theta.rows() != 2)
            throw ConfigError("linear recovery expects two coefficient rows");
        msp.b_vp = theta(0, 0);
        msp.b_vq = theta(1, 0);
        msp.b_ip = theta(0, 1);
        msp.b_iq = theta(1, 1);
    }
    return msp;
}

EstimationResult identify_pipeline(const MeasurementSeries& series,
                                   const PipelineConfig& cfg) {
    const MeasurementSeries* src = &series;
    MeasurementSeries screened;
    if (cfg.screen_outliers) {
        screened = clean_outliers(series, cfg.mad_factor);
        src = &screened;
    }

    const FeatureSet feats = build_features(*src, cfg.method, cfg.window);
    const RegressResult fit = regress(feats.a, feats.b, cfg.regress);

    EstimationResult out;
    out.method = cfg.method;
    out.theta = fit.theta;
    bool assumed = false;
    out.msp = msp_from_theta(cfg.method, fit.theta, &assumed);

    out.operating_point = PortState{nan_mean(src->p), nan_mean(src->q),
                                    nan_mean(src->v), nan_mean(src->i)};
    try {
        const TepSolveReport rep = solve_tep(out.operating_point, out.msp, cfg.solve);
        out.tep = rep.tep;
        out.diagnostics.solve_residual = rep.residual_norm;
    } catch (const NoConvergence& e) {
        throw EstimationInfeasible(std::string("source solve failed: ") + e.what());
    } catch (const InfeasibleSolution& e) {
        throw EstimationInfeasible(std::string("source solve failed: ") + e.what());
    }

    out.diagnostics.rows = fit.rows;
    out.diagnostics.dropped_rows = feats.dropped_rows;
    out.diagnostics.kappa = fit.kappa;
    out.diagnostics.residual_rms = fit.residual_rms;
    out.diagnostics.sign_pattern_assumed = assumed;
    return out;
}

}  // namespace tepid
