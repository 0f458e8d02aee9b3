#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numbers>
#include <vector>

#include "diqcd/caf.hpp"

using namespace diqcd;
using namespace diqcd::caf;

namespace {

// Noise-free parameter set: positive-constrained values cannot sit at exactly
// zero, so amplitudes and rates get negligible stand-ins.
CaFConfig quiet_config() {
    CaFConfig c;
    c.line_amp = {1e-12, 1e-12, 1e-12, 1e-12};
    c.ou_amp = 1e-12;
    c.ou_tau = 1.0;
    c.static_w = 1e-12;
    c.gamma_x = 1e-30;
    c.gamma_z = 1e-30;
    c.pulse_err = 1e-12;
    return c;
}

double run_contrast(const ParamStore& store, const CaFParams& p, Scheme s,
                    double t, int batch, std::uint64_t seed) {
    ModelSpec m = one_molecule_model(p, s, t);
    SimOptions opts;
    opts.batch = batch;
    opts.dt = scheme_dt(s);
    opts.t_final = t;
    opts.sample_times = {t};
    opts.seed = seed;
    const TrajectoryStats st = simulate_ensemble(m, store, opts);
    return contrast_series(st)[0];
}

} // namespace

TEST_CASE("dipole coupling geometry") {
    const double j0 = 1.9423;
    const Eigen::Vector3d o = Eigen::Vector3d::Zero();

    // Perpendicular to the y quantization axis: J = j0 / r^3.
    CHECK(dipole_coupling(j0, o, Eigen::Vector3d(2.0, 0.0, 0.0)) ==
          Catch::Approx(j0 / 8.0).epsilon(1e-12));
    CHECK(dipole_coupling(j0, o, Eigen::Vector3d(0.0, 0.0, 2.0)) ==
          Catch::Approx(j0 / 8.0).epsilon(1e-12));

    // Along y: 1 - 3 = -2, sign flip.
    CHECK(dipole_coupling(j0, o, Eigen::Vector3d(0.0, 2.0, 0.0)) ==
          Catch::Approx(-2.0 * j0 / 8.0).epsilon(1e-12));

    // Magic angle cos^2 = 1/3 kills the coupling.
    const double c = 1.0 / std::sqrt(3.0);
    const double s = std::sqrt(2.0 / 3.0);
    CHECK(std::abs(dipole_coupling(j0, o, Eigen::Vector3d(2.0 * s, 2.0 * c, 0.0))) <
          1e-12);

    // Cubic decay and translation invariance.
    const Eigen::Vector3d shift(0.3, -0.2, 0.9);
    CHECK(dipole_coupling(j0, shift, shift + Eigen::Vector3d(4.0, 0.0, 0.0)) ==
          Catch::Approx(j0 / 64.0).epsilon(1e-12));

    CHECK_THROWS_AS(dipole_coupling(j0, shift, shift), NumericError);
}

TEST_CASE("scheme tables") {
    CHECK(scheme_from_name("plain") == Scheme::plain);
    CHECK(scheme_from_name("echo") == Scheme::echo);
    CHECK(scheme_from_name("xy8") == Scheme::xy8);
    CHECK_THROWS_AS(scheme_from_name("spin-lock"), ConfigError);
    for (Scheme s : {Scheme::plain, Scheme::echo, Scheme::xy8})
        CHECK(scheme_from_name(scheme_name(s)) == s);

    CHECK(scheme_dt(Scheme::plain) == 0.01);
    CHECK(scheme_dt(Scheme::echo) == 0.05);
    CHECK(scheme_dt(Scheme::xy8) == 0.1);

    const auto tp = scheme_times(Scheme::plain);
    const auto te = scheme_times(Scheme::echo);
    const auto tx = scheme_times(Scheme::xy8);
    REQUIRE(tp.size() == 7);
    REQUIRE(te.size() == 10);
    REQUIRE(tx.size() == 7);
    CHECK(tp.front() == 0.5);
    CHECK(tp.back() == 3.5);
    CHECK(te.back() == 25.0);
    // Every xy8 duration is a whole number of 1.6 ms blocks.
    for (double t : tx)
        CHECK(std::abs(t / xy8_block_one - std::llround(t / xy8_block_one)) <
              1e-12);
}

TEST_CASE("xy8 pulse layout") {
    ParamStore store;
    const CaFParams p = register_params(store, quiet_config());
    const double t_final = 2.0 * xy8_block_one;
    ModelSpec m = one_molecule_model(p, Scheme::xy8, t_final);

    // pi/2 preparation plus 8 pi pulses per block.
    REQUIRE(m.schedule.size() == 1 + 16);
    CHECK(m.schedule[0].time == 0.0);
    CHECK(m.schedule[0].angle == Catch::Approx(0.5 * std::numbers::pi));

    const bool is_y[8] = {false, true, false, true, true, false, true, false};
    const double tau = xy8_block_one / 8.0;
    for (int b = 0; b < 2; ++b)
        for (int k = 0; k < 8; ++k) {
            const Pulse& pl = m.schedule[size_t(1 + 8 * b + k)];
            CHECK(pl.time ==
                  Catch::Approx(b * xy8_block_one + (k + 0.5) * tau));
            CHECK(pl.angle == Catch::Approx(std::numbers::pi));
            CHECK(pl.err_param == p.pulse_err);
            const Eigen::Vector3d want =
                is_y[k] ? Eigen::Vector3d::UnitY() : Eigen::Vector3d::UnitX();
            CHECK((pl.axis - want).norm() < 1e-15);
        }

    CHECK_THROWS_AS(one_molecule_model(p, Scheme::xy8, 1.5 * xy8_block_one),
                    ConfigError);
}

TEST_CASE("read pulse composes with the preparation pulse") {
    const HilbertSpace space = qubits(1);
    StepWork work;
    Pulse prep;
    prep.slot = 0;
    prep.axis = Eigen::Vector3d::UnitX();
    prep.angle = 0.5 * std::numbers::pi;
    const PulseOps prep_ops = PulseOps::build(space, prep);
    const Mat pup = projector_up();

    // theta_last = pi stacks to a pi rotation: P_up = 0.
    Mat rho = density_from_ket(ket_up());
    apply_pulse(rho, prep_ops, 0.0, work);
    apply_pulse(rho, PulseOps::build(space, read_pulse(std::numbers::pi, -1)),
                0.0, work);
    CHECK(expectation_real(pup, rho) < 1e-12);

    // theta_last = 0 undoes the preparation: P_up = 1.
    rho = density_from_ket(ket_up());
    apply_pulse(rho, prep_ops, 0.0, work);
    apply_pulse(rho, PulseOps::build(space, read_pulse(0.0, -1)), 0.0, work);
    CHECK(expectation_real(pup, rho) == Catch::Approx(1.0).epsilon(1e-12));

    // theta_last = pi/2 lands on the equator: P_up = 1/2.
    rho = density_from_ket(ket_up());
    apply_pulse(rho, prep_ops, 0.0, work);
    apply_pulse(rho,
                PulseOps::build(space, read_pulse(0.5 * std::numbers::pi, -1)),
                0.0, work);
    CHECK(expectation_real(pup, rho) == Catch::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("echo cancels static detuning exactly") {
    CaFConfig cfg = quiet_config();
    cfg.static_w = 0.6;
    ParamStore store;
    const CaFParams p = register_params(store, cfg);
    // Refocusing is member-by-member, so a small batch suffices.
    for (double t : {5.0, 15.0})
        CHECK(run_contrast(store, p, Scheme::echo, t, 8, 11) ==
              Catch::Approx(1.0).margin(1e-6));
}

TEST_CASE("plain contrast dephases as sin(Wt)/(Wt)") {
    CaFConfig cfg = quiet_config();
    cfg.static_w = 0.6;
    ParamStore store;
    const CaFParams p = register_params(store, cfg);
    const int batch = 4096;
    for (double t : {1.0, 2.0, 3.5}) {
        const double x = cfg.static_w * t;
        const double want = std::abs(std::sin(x) / x);
        const double got = run_contrast(store, p, Scheme::plain, t, batch, 7);
        // Monte Carlo error ~ std(cos)/sqrt(batch) < 0.011.
        CHECK(got == Catch::Approx(want).margin(0.05));
    }
}

TEST_CASE("noise-free contrast is unity and data points carry the fidelity") {
    const CaFConfig cfg = quiet_config();
    ParamStore store;
    const CaFParams p = register_params(store, cfg);
    CHECK(run_contrast(store, p, Scheme::plain, 1.0, 4, 3) ==
          Catch::Approx(1.0).margin(1e-9));

    const auto sp = gen_scheme_data(store, p, cfg, Scheme::plain, {0.5, 1.0},
                                    4, 3);
    REQUIRE(sp.t.size() == 2);
    for (double c : sp.c)
        CHECK(c == Catch::Approx(cfg.prep_fidelity).margin(1e-9));
}

TEST_CASE("pinned Bell oscillation matches the ideal formula") {
    const CaFConfig cfg = quiet_config();
    ParamStore store;
    const CaFParams p = register_params(store, cfg);
    const double d = 2.0;
    const double period =
        std::numbers::pi / (0.25 * cfg.j0 / std::pow(d, 3));

    ModelSpec m = two_molecule_model(p, cfg, d, 0.0, false, true, false);
    CHECK(m.coupling.md_process < 0);
    CHECK(!m.track_trap_loss);

    SimOptions opts;
    opts.batch = 1;
    opts.dt = 0.002;
    const int n = int(std::ceil(period / 8.0 / opts.dt));
    opts.sample_times.clear();
    for (int i = 1; i <= 8; ++i) opts.sample_times.push_back(i * n * opts.dt);
    opts.t_final = opts.sample_times.back();
    const TrajectoryStats st = simulate_ensemble(m, store, opts);

    const int puu = m.observable_index("puu");
    for (size_t i = 0; i < st.times.size(); ++i) {
        const double want = ideal_bell_puu(cfg.j0, d, st.times[i]);
        CHECK(st.mean[size_t(puu)][i] == Catch::Approx(want).margin(1e-3));
    }
}

TEST_CASE("two-molecule model guards and structure") {
    const CaFConfig cfg = quiet_config();
    ParamStore store;
    const CaFParams p = register_params(store, cfg);

    CHECK_THROWS_AS(two_molecule_model(p, cfg, 1.5, 1.0, false, true),
                    RegimeError);

    // Thermal motion: MD process drives the exchange coefficient and trap
    // loss is tracked.
    ModelSpec mv = two_molecule_model(p, cfg, 2.0, 3.2, true, false);
    CHECK(mv.coupling.md_process >= 0);
    CHECK(mv.track_trap_loss);
    CHECK(mv.h0.norm() == 0.0);
    REQUIRE(mv.coupling.coeff);
    MdState s;
    s.r = {Eigen::Vector3d::Zero(), Eigen::Vector3d(2.0, 0.0, 0.0)};
    CHECK(mv.coupling.coeff(s) ==
          Catch::Approx(dipole_coupling(cfg.j0, s.r[0], s.r[1])));
    // One xy8 block on both qubits plus the two preparation pulses.
    CHECK(mv.schedule.size() == 2 + 16);
    REQUIRE(mv.observables.size() == 1);
    CHECK(mv.observables[0].read_pulses.size() == 2);

    ModelSpec mp = two_molecule_model(p, cfg, 2.0, 1.0, false, true);
    const double j = dipole_coupling(cfg.j0, Eigen::Vector3d::Zero(),
                                     Eigen::Vector3d(2.0, 0.0, 0.0));
    const Mat exchange = kron(spin_x(), spin_x()) + kron(spin_y(), spin_y());
    CHECK((mp.h0 - j * exchange).norm() < 1e-15);
}

TEST_CASE("tweezer field layout") {
    const CaFConfig cfg = ground_truth();
    const TrapField f = tweezer_field(cfg, 2.3);
    REQUIRE(f.centers.size() == 2);
    CHECK(f.centers[0].norm() == 0.0);
    CHECK((f.centers[1] - Eigen::Vector3d(2.3, 0.0, 0.0)).norm() == 0.0);
    CHECK(f.depth ==
          Catch::Approx(units::kB_md_per_uK * cfg.trap_depth_uK));
    CHECK(f.waist == cfg.waist_um);
    CHECK(f.wavelength == cfg.wavelength_um);
}

TEST_CASE("training assembly groups points by run") {
    ParamStore store;
    const CaFParams p = register_params(store, initial_guess());

    std::vector<SchemePoints> data(3);
    data[0].scheme = Scheme::plain;
    data[0].t = scheme_times(Scheme::plain);
    data[0].c.assign(7, 0.5);
    data[1].scheme = Scheme::echo;
    data[1].t = scheme_times(Scheme::echo);
    data[1].c.assign(10, 0.6);
    data[2].scheme = Scheme::xy8;
    data[2].t = scheme_times(Scheme::xy8);
    data[2].c.assign(7, 0.7);

    CaFTraining tr = build_caf_training(p, ground_truth(), data, 16);
    // plain and xy8 share one run each; echo rebuilds per duration.
    REQUIRE(tr.runs.size() == 12);
    REQUIRE(tr.terms.size() == 12);
    CHECK(tr.terms[0].times.size() == 7);
    CHECK(tr.terms[0].kind == SeriesKind::abs_diff_mean);
    for (double w : tr.terms[0].weight)
        CHECK(w == Catch::Approx(1.0 / 7.0));
    for (double v : tr.terms[0].target)
        CHECK(v == Catch::Approx(0.5 / 0.79));
    for (int i = 1; i <= 10; ++i) {
        CHECK(tr.terms[size_t(i)].times.size() == 1);
        CHECK(tr.terms[size_t(i)].weight[0] == Catch::Approx(0.1));
    }
    CHECK(tr.terms[11].times.size() == 7);

    data[1].c.pop_back();
    CHECK_THROWS_AS(build_caf_training(p, ground_truth(), data, 16),
                    ConfigError);

    std::vector<Run> runs;
    CHECK_THROWS_AS(append_scheme_runs(runs, p, Scheme::plain, {}, 8, 1),
                    ConfigError);
}

TEST_CASE("one training step moves the loss downhill") {
    ParamStore store;
    const CaFParams p = register_params(store, initial_guess());

    std::vector<SchemePoints> data(1);
    data[0].scheme = Scheme::plain;
    data[0].t = {0.5, 1.0};
    data[0].c = {0.70, 0.55};

    CaFTraining tr = build_caf_training(p, ground_truth(), data, 32);
    const TrainResult res = train_caf(tr, store, 8, 5);
    REQUIRE(res.loss_history.size() == 8);
    for (double l : res.loss_history) CHECK(std::isfinite(l));
    CHECK(res.loss_history.back() < res.loss_history.front());
}
