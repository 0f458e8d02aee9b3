#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "diqcd/dynamics.hpp"
#include "diqcd/rng.hpp"
#include "oracles/dense_reference.hpp"

using namespace diqcd;

namespace {

Mat random_complex(int d, Rng& rng) {
    Mat m(d, d);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) m(i, j) = cd(rng.normal(), rng.normal());
    return m;
}

Mat random_hermitian(int d, Rng& rng) {
    const Mat m = random_complex(d, rng);
    return 0.5 * (m + m.adjoint());
}

Mat random_density(int d, Rng& rng) {
    Mat rho = Mat::Zero(d, d);
    for (int k = 0; k < 3; ++k) {
        Vec psi(d);
        for (int i = 0; i < d; ++i) psi(i) = cd(rng.normal(), rng.normal());
        psi /= psi.norm();
        rho += rng.uniform(0.1, 1.0) * density_from_ket(psi);
    }
    return rho / rho.trace().real();
}

double min_eigenvalue(const Mat& rho) {
    Eigen::SelfAdjointEigenSolver<Mat> es(Mat(0.5 * (rho + rho.adjoint())));
    return es.eigenvalues().minCoeff();
}

} // namespace

TEST_CASE("open-system step keeps states physical for any dt") {
    Rng rng = make_stream(2024ULL);
    StepWork work;
    for (int trial = 0; trial < 200; ++trial) {
        const int d = 2 + int(rng.raw() % 7);
        const Mat h = random_hermitian(d, rng);
        const int n_jumps = 1 + int(rng.raw() % 3);
        std::vector<Jump> jumps;
        std::vector<double> rates;
        for (int k = 0; k < n_jumps; ++k) {
            jumps.push_back(make_jump(random_complex(d, rng), 0));
            rates.push_back(rng.uniform(0.0, 2.0));
        }
        Mat rho = random_density(d, rng);
        work.resize(d);
        const double dt = rng.uniform(1e-3, 0.3);  // includes very coarse steps
        for (int s = 0; s < 5; ++s) {
            lindblad_step(rho, h, jumps, rates, dt, work);
            CHECK(std::abs(rho.trace().real() - 1.0) <= 1e-12);
            CHECK(min_eigenvalue(rho) >= -1e-10);
            CHECK((rho - rho.adjoint()).cwiseAbs().maxCoeff() < 1e-12);
        }
    }
}

TEST_CASE("step rejects bad inputs") {
    StepWork w;
    w.resize(2);
    Mat rho = density_from_ket(ket_up());
    CHECK_THROWS_AS(lindblad_step(rho, Mat::Zero(2, 2), {}, {}, 0.0, w),
                    ConfigError);
    CHECK_THROWS_AS(lindblad_step(rho, Mat::Zero(3, 3), {}, {}, 0.1, w),
                    ConfigError);
}

TEST_CASE("pure dephasing matches exp(-gamma t / 2)") {
    const double gamma = 0.5, dt = 1e-3, t_final = 2.0;
    Vec plus(2);
    plus << 1.0 / std::sqrt(2.0), 1.0 / std::sqrt(2.0);
    Mat rho = density_from_ket(plus);
    std::vector<Jump> jumps = {make_jump(spin_z(), 0)};
    std::vector<double> rates = {gamma};
    StepWork w;
    w.resize(2);
    const int n = int(std::llround(t_final / dt));
    for (int k = 0; k < n; ++k)
        lindblad_step(rho, Mat::Zero(2, 2), jumps, rates, dt, w);
    const double expect = 0.5 * std::exp(-gamma * t_final / 2.0);
    CHECK(std::abs(rho(0, 1).real() - expect) / expect < 1e-3);
}

TEST_CASE("Rabi oscillation matches cos^2(Omega t / 2)") {
    const double omega = 1.0, dt = 1e-3;
    const Mat h = 0.5 * omega * pauli_x();
    Mat rho = density_from_ket(ket_up());
    StepWork w;
    w.resize(2);
    double worst = 0.0;
    for (int k = 1; k <= 10000; ++k) {
        lindblad_step(rho, h, {}, {}, dt, w);
        const double t = k * dt;
        const double pup = rho(0, 0).real();
        const double c = std::cos(0.5 * omega * t);
        worst = std::max(worst, std::abs(pup - c * c));
    }
    CHECK(worst <= 1e-4);
}

TEST_CASE("depolarizing pulse at p = 3/4 erases the state") {
    Rng rng = make_stream(5ULL);
    const Mat rho0 = random_density(2, rng);
    Pulse p;
    p.err_param = 0;
    PulseOps ops = PulseOps::build(qubits(1), p);  // angle 0: U = I
    Mat rho = rho0;
    StepWork w;
    w.resize(2);
    apply_pulse(rho, ops, 0.75, w);
    CHECK((rho - Mat(0.5 * identity(2))).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("first-order convergence against the analytic dephasing factor") {
    const double gamma = 0.5, t_final = 2.0;
    Vec plus(2);
    plus << 1.0 / std::sqrt(2.0), 1.0 / std::sqrt(2.0);
    auto coherence_error = [&](double dt) {
        Mat rho = density_from_ket(plus);
        std::vector<Jump> jumps = {make_jump(spin_z(), 0)};
        std::vector<double> rates = {gamma};
        StepWork w;
        w.resize(2);
        const int n = int(std::llround(t_final / dt));
        for (int k = 0; k < n; ++k)
            lindblad_step(rho, Mat::Zero(2, 2), jumps, rates, dt, w);
        return std::abs(rho(0, 1).real() -
                        0.5 * std::exp(-gamma * t_final / 2.0));
    };
    const double e1 = coherence_error(0.02);
    const double e2 = coherence_error(0.01);
    const double order = std::log2(e1 / e2);
    CHECK(order >= 0.95);
    CHECK(order < 1.6);
}

TEST_CASE("stepped evolution agrees with the dense generator exponential") {
    Rng rng = make_stream(77ULL);
    for (int trial = 0; trial < 5; ++trial) {
        const int d = 3;
        const Mat h = random_hermitian(d, rng);
        std::vector<Mat> ls = {random_complex(d, rng)};
        std::vector<double> g = {rng.uniform(0.2, 1.0)};
        std::vector<Jump> jumps = {make_jump(ls[0], 0)};
        const Mat rho0 = random_density(d, rng);
        const Mat sup = oracle::lindblad_superop(h, ls, g);
        const double t_final = 0.2, dt = 2e-4;
        Mat rho = rho0;
        StepWork w;
        w.resize(d);
        for (int k = 0; k < int(std::llround(t_final / dt)); ++k)
            lindblad_step(rho, h, jumps, g, dt, w);
        const Mat exact = oracle::evolve_exact(rho0, sup, t_final);
        CHECK((rho - exact).cwiseAbs().maxCoeff() < 2e-3);
    }
}

TEST_CASE("Taylor unitary block step tracks the dense propagator") {
    Rng rng = make_stream(13ULL);
    const int d = 6;
    const Mat h = random_hermitian(d, rng);
    Mat psi(d, 2);
    for (int c = 0; c < 2; ++c) {
        Vec v(d);
        for (int i = 0; i < d; ++i) v(i) = cd(rng.normal(), rng.normal());
        psi.col(c) = v / v.norm();
    }
    const Mat psi0 = psi;
    Mat term(d, 2);
    const double dt = 0.05;
    for (int k = 0; k < 100; ++k) unitary_step(h, dt, 6, psi, term);
    const Mat exact = oracle::propagator(h, 100 * dt) * psi0;
    // Per-step truncation ~ (|H| dt)^7 / 7! accumulates to ~5e-8 here.
    CHECK((psi - exact).cwiseAbs().maxCoeff() < 5e-7);
    for (int c = 0; c < 2; ++c)
        CHECK(psi.col(c).norm() == Catch::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("observable pull-back equals measuring after the pulse") {
    Rng rng = make_stream(21ULL);
    const HilbertSpace space = qubits(1);
    Pulse pl;
    pl.axis = Eigen::Vector3d(0.3, -0.8, 0.5);
    pl.angle = 1.1;
    pl.err_param = 0;
    const PulseOps ops = PulseOps::build(space, pl);
    const double p = 0.12;
    const Mat obs = random_hermitian(2, rng);
    const Mat rho0 = random_density(2, rng);

    Mat rho = rho0;
    StepWork w;
    w.resize(2);
    apply_pulse(rho, ops, p, w);
    const double direct = frobenius_inner(obs.adjoint(), rho).real();

    const ObsPair eff = pull_back({obs, Mat::Zero(2, 2)}, ops, p);
    const double pulled = frobenius_inner(eff.o.adjoint(), rho0).real();
    CHECK(pulled == Catch::Approx(direct).epsilon(1e-12));

    // dodp tracks d<obs>/dp
    const double h = 1e-6;
    Mat rp = rho0, rm = rho0;
    apply_pulse(rp, ops, p + h, w);
    apply_pulse(rm, ops, p - h, w);
    const double fd = (frobenius_inner(obs.adjoint(), rp).real() -
                       frobenius_inner(obs.adjoint(), rm).real()) /
                      (2.0 * h);
    CHECK(frobenius_inner(eff.dodp.adjoint(), rho0).real() ==
          Catch::Approx(fd).epsilon(1e-6).margin(1e-10));
}

TEST_CASE("step reverse rule matches finite differences") {
    Rng rng = make_stream(31ULL);
    const int d = 3;
    const Mat h0 = random_hermitian(d, rng);
    const Mat v = random_hermitian(d, rng);
    std::vector<Jump> jumps = {make_jump(random_complex(d, rng), 0),
                               make_jump(random_complex(d, rng), 1)};
    std::vector<double> rates = {0.7, 0.3};
    const Mat rho0 = random_density(d, rng);
    const Mat obs = random_hermitian(d, rng);
    const double dt = 0.01;
    StepWork w;
    w.resize(d);

    auto value = [&](const Mat& h, const std::vector<double>& g, const Mat& r0) {
        Mat rho = r0;
        lindblad_step(rho, h, jumps, g, dt, w);
        return frobenius_inner(obs.adjoint(), rho).real();
    };

    Mat rho_in_bar(d, d), h_bar(d, d);
    std::vector<double> rate_bars(2, 0.0);
    lindblad_step_vjp(rho0, h0, jumps, rates, dt, obs, rho_in_bar, h_bar,
                      rate_bars, w);

    const double eps = 1e-5;
    // Hamiltonian direction
    const double fd_h = (value(h0 + eps * v, rates, rho0) -
                         value(h0 - eps * v, rates, rho0)) /
                        (2.0 * eps);
    CHECK(frobenius_inner(h_bar, v).real() ==
          Catch::Approx(fd_h).epsilon(1e-5).margin(1e-9));
    // rates
    for (int k = 0; k < 2; ++k) {
        std::vector<double> gp = rates, gm = rates;
        gp[size_t(k)] += eps;
        gm[size_t(k)] -= eps;
        const double fd = (value(h0, gp, rho0) - value(h0, gm, rho0)) /
                          (2.0 * eps);
        CHECK(rate_bars[size_t(k)] ==
              Catch::Approx(fd).epsilon(1e-5).margin(1e-9));
    }
    // input state, along a Hermitian direction
    const Mat dr = random_hermitian(d, rng);
    const double fd_r = (value(h0, rates, rho0 + eps * dr) -
                         value(h0, rates, rho0 - eps * dr)) /
                        (2.0 * eps);
    CHECK(frobenius_inner(rho_in_bar, dr).real() ==
          Catch::Approx(fd_r).epsilon(1e-5).margin(1e-9));
}

TEST_CASE("pulse reverse rule matches finite differences in p") {
    Rng rng = make_stream(41ULL);
    Pulse pl;
    pl.axis = Eigen::Vector3d::UnitY();
    pl.angle = 0.5 * std::numbers::pi;
    pl.err_param = 0;
    const PulseOps ops = PulseOps::build(qubits(1), pl);
    const Mat rho0 = random_density(2, rng);
    const Mat obs = random_hermitian(2, rng);
    const double p = 0.07;
    StepWork w;
    w.resize(2);

    Mat rho_in_bar(2, 2);
    double p_bar = 0.0;
    apply_pulse_vjp(rho0, ops, p, obs, rho_in_bar, p_bar, w);

    const double eps = 1e-6;
    auto value = [&](double pe) {
        Mat rho = rho0;
        apply_pulse(rho, ops, pe, w);
        return frobenius_inner(obs.adjoint(), rho).real();
    };
    CHECK(p_bar == Catch::Approx((value(p + eps) - value(p - eps)) /
                                 (2.0 * eps))
                       .epsilon(1e-6)
                       .margin(1e-10));
}

TEST_CASE("diagonal jump fast path equals the general sandwich") {
    Rng rng = make_stream(51ULL);
    const int d = 5;
    Mat ld = Mat::Zero(d, d);
    for (int i = 0; i < d; ++i) ld(i, i) = cd(rng.normal(), rng.normal());
    const Jump jd = make_jump(ld, 0);
    REQUIRE(jd.diagonal);
    Jump jg = jd;
    jg.diagonal = false;  // force the general path
    const Mat rho = random_density(d, rng);
    Mat out1 = Mat::Zero(d, d), out2 = Mat::Zero(d, d), scratch(d, d);
    add_jump_sandwich(jd, 0.37, rho, out1, scratch);
    add_jump_sandwich(jg, 0.37, rho, out2, scratch);
    CHECK((out1 - out2).cwiseAbs().maxCoeff() < 1e-14);
}
