#include "tepid/model.hpp"

#include <cmath>
#include <string>

namespace tepid {

namespace {

struct PortRadicands {
    double d;      // discriminant
    double sd;     // sqrt(d)
    double v2;     // squared voltage magnitude
    double i2;     // squared current magnitude
    bool feasible;
};

// Evaluates both solution radicands without throwing. A tiny negative
// current radicand (roundoff at no-load) is clamped to zero.
PortRadicands port_radicands(const TheveninParams& tep, double p, double q) {
    PortRadicands out{};
    const double e2 = tep.e_th * tep.e_th;
    const double z2 = tep.r_th * tep.r_th + tep.x_th * tep.x_th;
    const double a = tep.r_th * p + tep.x_th * q;
    const double b = tep.x_th * p - tep.r_th * q;
    out.d = e2 * e2 - 4.0 * a * e2 - 4.0 * b * b;
    out.feasible = tep.e_th > 0.0 && tep.x_th > 0.0 && tep.r_th >= 0.0 &&
                   z2 > 0.0 && out.d > 0.0;
    if (!out.feasible) return out;
    out.sd = std::sqrt(out.d);
    const double s = e2 - 2.0 * a;
    out.v2 = 0.5 * (s + out.sd);
    double i2n = s - out.sd;
    if (i2n < 0.0 && i2n > -1e-9 * e2 * e2) i2n = 0.0;  // no-load roundoff
    out.i2 = i2n / (2.0 * z2);
    if (out.v2 <= 0.0 || out.i2 < 0.0) out.feasible = false;
    return out;
}

double msp_scale(double b) {
    const double m = std::abs(b);
    return m > 0.0 ? m : 1.0;
}

bool all_zero(const Msp& m) {
    return m.b_vp == 0.0 && m.b_vq == 0.0 && m.b_ip == 0.0 && m.b_iq == 0.0;
}

// Sensitivities evaluated with measured magnitudes v, i held fixed; only the
// discriminant depends on the candidate parameters.
Msp msp_at(const TheveninParams& tep, const PortState& port, double sd) {
    const double z2 = tep.r_th * tep.r_th + tep.x_th * tep.x_th;
    const double v = port.v_mag;
    const double i = port.i_mag;
    Msp m{};
    m.b_vp = -(z2 * port.p + tep.r_th * v * v) / (v * sd);
    m.b_vq = -(z2 * port.q + tep.x_th * v * v) / (v * sd);
    m.b_ip = (port.p + tep.r_th * i * i) / (i * sd);
    m.b_iq = (port.q + tep.x_th * i * i) / (i * sd);
    return m;
}

}  // namespace

double discriminant(const TheveninParams& tep, double p, double q) {
    const double e2 = tep.e_th * tep.e_th;
    const double a = tep.r_th * p + tep.x_th * q;
    const double b = tep.x_th * p - tep.r_th * q;
    return e2 * e2 - 4.0 * a * e2 - 4.0 * b * b;
}

PortState solve_port(const TheveninParams& tep, double p, double q) {
    const PortRadicands rad = port_radicands(tep, p, q);
    if (!rad.feasible)
        throw InfeasibleOperatingPoint("port unsolvable at p=" + std::to_string(p) +
                                       " q=" + std::to_string(q));
    return PortState{p, q, std::sqrt(rad.v2), std::sqrt(rad.i2)};
}

Msp theoretical_msp(const TheveninParams& tep, const PortState& port) {
    if (!(port.v_mag > 0.0) || !(port.i_mag > 0.0))
        throw InfeasibleOperatingPoint("sensitivities need v_mag > 0 and i_mag > 0");
    const double d = discriminant(tep, port.p, port.q);
    if (d <= 0.0) throw InfeasibleOperatingPoint("negative discriminant");
    return msp_at(tep, port, std::sqrt(d));
}

Eigen::Matrix<double, 6, 1> tep_residuals(const TheveninParams& tep,
                                          const PortState& port, const Msp& msp) {
    const PortRadicands rad = port_radicands(tep, port.p, port.q);
    if (!rad.feasible) throw InfeasibleOperatingPoint("residuals outside solvable region");
    const Msp mh = msp_at(tep, port, rad.sd);
    Eigen::Matrix<double, 6, 1> r;
    r(0) = (port.v_mag - std::sqrt(rad.v2)) / port.v_mag;
    r(1) = (port.i_mag - std::sqrt(rad.i2)) / port.i_mag;
    r(2) = (msp.b_vp - mh.b_vp) / msp_scale(msp.b_vp);
    r(3) = (msp.b_vq - mh.b_vq) / msp_scale(msp.b_vq);
    r(4) = (msp.b_ip - mh.b_ip) / msp_scale(msp.b_ip);
    r(5) = (msp.b_iq - mh.b_iq) / msp_scale(msp.b_iq);
    return r;
}

Eigen::Matrix<double, 6, 3> tep_residual_jacobian(const TheveninParams& tep,
                                                  const PortState& port,
                                                  const Msp& msp) {
    const double p = port.p, q = port.q;
    const double v = port.v_mag, i = port.i_mag;
    const double e = tep.e_th, r = tep.r_th, x = tep.x_th;
    const PortRadicands rad = port_radicands(tep, p, q);
    if (!rad.feasible) throw InfeasibleOperatingPoint("jacobian outside solvable region");
    const double sd = rad.sd;
    const double z2 = r * r + x * x;
    const double e2 = e * e;
    const double b = x * p - r * q;

    // Discriminant gradient.
    const double d_e = 4.0 * e2 * e - 8.0 * (r * p + x * q) * e;
    const double d_r = -4.0 * p * e2 + 8.0 * q * b;
    const double d_x = -4.0 * q * e2 - 8.0 * p * b;

    // Model magnitudes.
    const double vm = std::sqrt(rad.v2);
    const double im = std::sqrt(rad.i2);

    // dVm/dtheta = d(e^2 - 2(rp+xq) + sd)/dtheta / (4 Vm)
    const double va_e = 2.0 * e + d_e / (2.0 * sd);
    const double va_r = -2.0 * p + d_r / (2.0 * sd);
    const double va_x = -2.0 * q + d_x / (2.0 * sd);
    const double dvm_e = va_e / (4.0 * vm);
    const double dvm_r = va_r / (4.0 * vm);
    const double dvm_x = va_x / (4.0 * vm);

    // dIm/dtheta from Im^2 = (e^2 - 2(rp+xq) - sd) / (2 z2)
    const double nb = e2 - 2.0 * (r * p + x * q) - sd;
    const double nb_e = 2.0 * e - d_e / (2.0 * sd);
    const double nb_r = -2.0 * p - d_r / (2.0 * sd);
    const double nb_x = -2.0 * q - d_x / (2.0 * sd);
    const double di2_e = nb_e / (2.0 * z2);
    const double di2_r = nb_r / (2.0 * z2) - nb * r / (z2 * z2);
    const double di2_x = nb_x / (2.0 * z2) - nb * x / (z2 * z2);
    const double dim_e = di2_e / (2.0 * im);
    const double dim_r = di2_r / (2.0 * im);
    const double dim_x = di2_x / (2.0 * im);

    // Sensitivity partials; measured v, i are constants here.
    const double sd3 = 2.0 * sd * sd * sd;
    const double n_vp = z2 * p + r * v * v;
    const double n_vq = z2 * q + x * v * v;
    const double n_ip = p + r * i * i;
    const double n_iq = q + x * i * i;

    const double dbvp_e = n_vp * d_e / (v * sd3);
    const double dbvp_r = -(2.0 * r * p + v * v) / (v * sd) + n_vp * d_r / (v * sd3);
    const double dbvp_x = -(2.0 * x * p) / (v * sd) + n_vp * d_x / (v * sd3);

    const double dbvq_e = n_vq * d_e / (v * sd3);
    const double dbvq_r = -(2.0 * r * q) / (v * sd) + n_vq * d_r / (v * sd3);
    const double dbvq_x = -(2.0 * x * q + v * v) / (v * sd) + n_vq * d_x / (v * sd3);

    const double dbip_e = -n_ip * d_e / (i * sd3);
    const double dbip_r = i / sd - n_ip * d_r / (i * sd3);
    const double dbip_x = -n_ip * d_x / (i * sd3);

    const double dbiq_e = -n_iq * d_e / (i * sd3);
    const double dbiq_r = -n_iq * d_r / (i * sd3);
    const double dbiq_x = i / sd - n_iq * d_x / (i * sd3);

    Eigen::Matrix<double, 6, 3> j;
    j(0, 0) = -dvm_e / v;
    j(0, 1) = -dvm_r / v;
    j(0, 2) = -dvm_x / v;
    j(1, 0) = -dim_e / i;
    j(1, 1) = -dim_r / i;
    j(1, 2) = -dim_x / i;
    j(2, 0) = -dbvp_e / msp_scale(msp.b_vp);
    j(2, 1) = -dbvp_r / msp_scale(msp.b_vp);
    j(2, 2) = -dbvp_x / msp_scale(msp.b_vp);
    j(3, 0) = -dbvq_e / msp_scale(msp.b_vq);
    j(3, 1) = -dbvq_r / msp_scale(msp.b_vq);
    j(3, 2) = -dbvq_x / msp_scale(msp.b_vq);
    j(4, 0) = -dbip_e / msp_scale(msp.b_ip);
    j(4, 1) = -dbip_r / msp_scale(msp.b_ip);
    j(4, 2) = -dbip_x / msp_scale(msp.b_ip);
    j(5, 0) = -dbiq_e / msp_scale(msp.b_iq);
    j(5, 1) = -dbiq_r / msp_scale(msp.b_iq);
    j(5, 2) = -dbiq_x / msp_scale(msp.b_iq);
    return j;
}

TepSolveReport solve_tep(const PortState& port, const Msp& msp,
                         const TepSolveOptions& opts) {
    if (!(port.v_mag > 0.0) || !(port.i_mag > 0.0))
        throw InfeasibleSolution("solve_tep needs v_mag > 0 and i_mag > 0");
    if (all_zero(msp))
        throw InfeasibleSolution("all sensitivity entries are zero: no parameter information");

    TheveninParams th = opts.init.value_or(TheveninParams{
        1.05 * port.v_mag,
        0.1 * port.v_mag / port.i_mag,
        0.3 * port.v_mag / port.i_mag,
    });
    // A too-weak initial source can start outside the solvable region.
    for (int k = 0; k < 8 && !port_radicands(th, port.p, port.q).feasible; ++k)
        th.e_th *= 2.0;
    if (!port_radicands(th, port.p, port.q).feasible)
        throw InfeasibleSolution("no feasible initial point");

    auto theta_norm = [](const TheveninParams& t) {
        return std::sqrt(t.e_th * t.e_th + t.r_th * t.r_th + t.x_th * t.x_th);
    };
    auto feasible = [&](const TheveninParams& t) {
        return t.e_th > 0.0 && t.x_th > 0.0 && t.r_th >= 0.0 &&
               port_radicands(t, port.p, port.q).feasible;
    };

    Eigen::Matrix<double, 6, 1> res = tep_residuals(th, port, msp);
    double rnorm = res.norm();
    double lambda = 1e-3;
    int iter = 0;
    bool converged = rnorm < opts.residual_tol;

    while (!converged && iter < opts.max_iterations) {
        ++iter;
        const Eigen::Matrix<double, 6, 3> j = tep_residual_jacobian(th, port, msp);
        const Eigen::Matrix3d h = j.transpose() * j;
        const Eigen::Vector3d g = j.transpose() * res;
        Eigen::Matrix3d damped = h;
        for (int k = 0; k < 3; ++k)
            damped(k, k) += lambda * std::max(h(k, k), 1e-30);
        const Eigen::Vector3d step = damped.ldlt().solve(-g);

        // Shrink the step until it stays in the solvable region.
        double scale = 1.0;
        TheveninParams trial{};
        bool ok = false;
        for (int k = 0; k < 60; ++k) {
            trial = TheveninParams{th.e_th + scale * step(0), th.r_th + scale * step(1),
                                   th.x_th + scale * step(2)};
            if (feasible(trial)) {
                ok = true;
                break;
            }
            scale *= 0.5;
        }
        if (!ok) {
            lambda = std::min(lambda * 10.0, 1e12);
            continue;
        }

        const Eigen::Matrix<double, 6, 1> trial_res = tep_residuals(trial, port, msp);
        const double trial_norm = trial_res.norm();
        const double step_size = scale * step.norm();
        if (trial_norm < rnorm) {
            th = trial;
            res = trial_res;
            rnorm = trial_norm;
            lambda = std::max(lambda * 0.1, 1e-12);
            if (step_size < opts.step_tol * (1.0 + theta_norm(th)) ||
                rnorm < opts.residual_tol)
                converged = true;
        } else {
            lambda = std::min(lambda * 10.0, 1e12);
            // A maximally damped step that still cannot improve is a minimum.
            if (step_size < opts.step_tol * (1.0 + theta_norm(th))) converged = true;
        }
    }

    if (!converged) throw NoConvergence("parameter solve hit the iteration cap");
    if (!feasible(th)) throw InfeasibleSolution("converged outside the physical region");
    const double rms = rnorm / std::sqrt(6.0);
    if (rms > opts.fit_tol)
        throw InfeasibleSolution("converged fit is too poor (rms " + std::to_string(rms) + ")");
    return TepSolveReport{th, iter, rnorm};
}

}  // namespace tepid
