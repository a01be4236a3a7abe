#include <cmath>
#include <complex>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "tepid/model.hpp"

using namespace tepid;

namespace {

TheveninParams random_tep(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> e(180.0, 400.0);
    std::uniform_real_distribution<double> r(0.0, 40.0);
    std::uniform_real_distribution<double> x(15.0, 90.0);
    return TheveninParams{e(rng), r(rng), x(rng)};
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("solve_port matches the phasor bisection oracle") {
    std::mt19937_64 rng(0x5eed0001);
    std::uniform_real_distribution<double> load(5.0, 120.0);
    int tested = 0;
    for (int k = 0; k < 300; ++k) {
        const TheveninParams tep = random_tep(rng);
        const double p = load(rng), q = load(rng);
        const auto ref = oracle::port_by_bisection(tep, p, q);
        if (!ref) continue;  // oracle says infeasible; skip the corner
        ++tested;
        const PortState port = solve_port(tep, p, q);
        CHECK(port.v_mag == doctest::Approx(ref->v_mag).epsilon(1e-10));
        CHECK(port.i_mag == doctest::Approx(ref->i_mag).epsilon(1e-10));
    }
    CHECK(tested > 200);
}

TEST_CASE("solved port satisfies the source phasor equation") {
    std::mt19937_64 rng(0x5eed0002);
    std::uniform_real_distribution<double> load(1.0, 100.0);
    for (int k = 0; k < 100; ++k) {
        const TheveninParams tep = random_tep(rng);
        const double p = load(rng), q = load(rng);
        PortState port{};
        try {
            port = solve_port(tep, p, q);
        } catch (const InfeasibleOperatingPoint&) {
            continue;
        }
        const std::complex<double> v{port.v_mag, 0.0};
        const std::complex<double> z{tep.r_th, tep.x_th};
        const std::complex<double> cur = std::conj(std::complex<double>{p, q} / v);
        CHECK(std::abs(v + z * cur) == doctest::Approx(tep.e_th).epsilon(1e-9));
        CHECK(port.v_mag * port.i_mag ==
              doctest::Approx(std::hypot(p, q)).epsilon(1e-12));
    }
}

TEST_CASE("no load gives the source voltage and zero current") {
    const TheveninParams tep{270.0, 20.0, 50.0};
    const PortState port = solve_port(tep, 0.0, 0.0);
    CHECK(port.v_mag == doctest::Approx(270.0).epsilon(1e-12));
    CHECK(port.i_mag == doctest::Approx(0.0).scale(1.0).epsilon(1e-9));
    CHECK_THROWS_AS((void)theoretical_msp(tep, port), InfeasibleOperatingPoint);
}

TEST_CASE("a load beyond deliverability is rejected") {
    const TheveninParams tep{270.0, 20.0, 50.0};
    CHECK(discriminant(tep, 2000.0, 2000.0) < 0.0);
    CHECK_THROWS_AS((void)solve_port(tep, 2000.0, 2000.0), InfeasibleOperatingPoint);
}

TEST_CASE("sensitivities match central finite differences") {
    std::mt19937_64 rng(0x5eed0003);
    std::uniform_real_distribution<double> load(5.0, 120.0);
    int tested = 0;
    while (tested < 100) {
        const TheveninParams tep = random_tep(rng);
        const double p = load(rng), q = load(rng);
        PortState port{};
        try {
            port = solve_port(tep, p, q);
        } catch (const InfeasibleOperatingPoint&) {
            continue;
        }
        if (port.i_mag < 1e-6) continue;
        ++tested;
        const Msp m = theoretical_msp(tep, port);
        const Msp fd = oracle::msp_by_finite_difference(tep, p, q);
        CHECK(m.b_vp == doctest::Approx(fd.b_vp).epsilon(1e-6));
        CHECK(m.b_vq == doctest::Approx(fd.b_vq).epsilon(1e-6));
        CHECK(m.b_ip == doctest::Approx(fd.b_ip).epsilon(1e-6));
        CHECK(m.b_iq == doctest::Approx(fd.b_iq).epsilon(1e-6));
    }
}

TEST_CASE("sensitivity signs at a normal inductive operating point") {
    const TheveninParams tep{270.0, 20.0, 50.0};
    const PortState port = solve_port(tep, 50.0, 50.0);
    const Msp m = theoretical_msp(tep, port);
    CHECK(m.b_vp < 0.0);
    CHECK(m.b_vq < 0.0);
    CHECK(m.b_ip > 0.0);
    CHECK(m.b_iq > 0.0);
}

TEST_CASE("residuals vanish at the generating parameters") {
    const TheveninParams tep{270.0, 20.0, 50.0};
    const PortState port = solve_port(tep, 50.0, 50.0);
    const Msp msp = theoretical_msp(tep, port);
    CHECK(tep_residuals(tep, port, msp).norm() < 1e-12);
}

TEST_CASE("residual jacobian matches finite differences") {
    std::mt19937_64 rng(0x5eed0004);
    std::uniform_real_distribution<double> load(5.0, 100.0);
    int tested = 0;
    while (tested < 30) {
        const TheveninParams tep = random_tep(rng);
        const double p = load(rng), q = load(rng);
        PortState port{};
        try {
            port = solve_port(tep, p, q);
        } catch (const InfeasibleOperatingPoint&) {
            continue;
        }
        if (port.i_mag < 1e-6) continue;
        ++tested;
        const Msp msp = theoretical_msp(tep, port);
        // Evaluate away from the residual zero so every row is exercised.
        const TheveninParams at{tep.e_th * 1.03, tep.r_th + 2.0, tep.x_th * 0.95};
        if (discriminant(at, p, q) <= 0.0) continue;
        const auto j = tep_residual_jacobian(at, port, msp);
        const auto fd = oracle::residual_jacobian_by_fd(at, port, msp);
        for (int r = 0; r < 6; ++r)
            for (int c = 0; c < 3; ++c)
                CHECK(j(r, c) ==
                      doctest::Approx(fd(r, c)).epsilon(1e-5).scale(1.0 + std::abs(j(r, c))));
    }
}

TEST_CASE("solve_tep recovers the generating parameters from the default start") {
    const TheveninParams truth{270.0, 20.0, 50.0};
    const PortState port = solve_port(truth, 50.0, 50.0);
    const Msp msp = theoretical_msp(truth, port);
    const TepSolveReport rep = solve_tep(port, msp);
    CHECK(rep.tep.e_th == doctest::Approx(truth.e_th).epsilon(1e-6));
    CHECK(rep.tep.r_th == doctest::Approx(truth.r_th).epsilon(1e-6));
    CHECK(rep.tep.x_th == doctest::Approx(truth.x_th).epsilon(1e-6));
    CHECK(rep.iterations <= 200);
    CHECK(rep.residual_norm < 1e-8);
}

TEST_CASE("solve_tep round trip across random parameter draws") {
    std::mt19937_64 rng(0x5eed0005);
    std::uniform_real_distribution<double> load(10.0, 100.0);
    int tested = 0;
    while (tested < 50) {
        const TheveninParams truth = random_tep(rng);
        const double p = load(rng), q = load(rng);
        PortState port{};
        try {
            port = solve_port(truth, p, q);
        } catch (const InfeasibleOperatingPoint&) {
            continue;
        }
        if (port.i_mag < 1e-6) continue;
        ++tested;
        const Msp msp = theoretical_msp(truth, port);
        const TepSolveReport rep = solve_tep(port, msp);
        CHECK(rep.tep.e_th == doctest::Approx(truth.e_th).epsilon(1e-5));
        CHECK(rep.tep.r_th ==
              doctest::Approx(truth.r_th).epsilon(1e-5).scale(1.0 + truth.r_th));
        CHECK(rep.tep.x_th == doctest::Approx(truth.x_th).epsilon(1e-5));
    }
}

TEST_CASE("perturbed sensitivities move the solution boundedly") {
    const TheveninParams truth{270.0, 20.0, 50.0};
    const PortState port = solve_port(truth, 50.0, 50.0);
    Msp msp = theoretical_msp(truth, port);
    msp.b_vp *= 1.01;
    msp.b_vq *= 1.01;
    msp.b_ip *= 1.01;
    msp.b_iq *= 1.01;
    const TepSolveReport rep = solve_tep(port, msp);
    CHECK(std::abs(rep.tep.e_th / truth.e_th - 1.0) < 0.2);
    CHECK(std::abs(rep.tep.r_th / truth.r_th - 1.0) < 0.2);
    CHECK(std::abs(rep.tep.x_th / truth.x_th - 1.0) < 0.2);
}

TEST_CASE("all-zero sensitivities are rejected, never answered silently") {
    const TheveninParams truth{270.0, 20.0, 50.0};
    const PortState port = solve_port(truth, 50.0, 50.0);
    CHECK_THROWS_AS((void)solve_tep(port, Msp{0.0, 0.0, 0.0, 0.0}), InfeasibleSolution);
}

TEST_CASE("sign-flipped sensitivities cannot pass the fit gate") {
    const TheveninParams truth{270.0, 20.0, 50.0};
    const PortState port = solve_port(truth, 50.0, 50.0);
    Msp msp = theoretical_msp(truth, port);
    msp.b_vp = -msp.b_vp;
    msp.b_vq = -msp.b_vq;
    CHECK_THROWS_AS((void)solve_tep(port, msp), Error);
}

}  // TEST_SUITE
