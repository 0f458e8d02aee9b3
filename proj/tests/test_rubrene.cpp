#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "diqcd/rubrene.hpp"
#include "oracles/dense_reference.hpp"

using namespace diqcd;
using namespace diqcd::rubrene;

namespace {

// Parameters with one negligible mode drive (the registry requires at least
// one mode; 1e-12 cm^-1 contributes < 1e-14 rad over any horizon here).
RubreneParams quiet_params(ParamStore& store, double eps0, double gamma) {
    return register_params(store, std::vector<double>{1e-12}, eps0, gamma);
}

TrajectoryStats run_fit_model(const ParamStore& store, const RubreneParams& p,
                              double phi, double dt,
                              std::vector<double> sample_times) {
    ModelSpec m = one_molecule_fit_model(p, phi);
    SimOptions opts;
    opts.batch = 1;
    opts.dt = dt;
    opts.t_final = sample_times.back();
    opts.sample_times = std::move(sample_times);
    return simulate_ensemble(m, store, opts);
}

} // namespace

TEST_CASE("polaron binding energy of the mode table") {
    const auto& t = mode_table();
    const double lambda =
        polaron_binding_cm(std::vector<Mode>(t.begin(), t.end()));
    // Independent sum over the nine (omega, g) pairs.
    double want = 0.0;
    for (const Mode& m : t) want += m.g * m.g * m.omega_cm;
    CHECK(lambda == Catch::Approx(want).epsilon(1e-14));
    CHECK(lambda == Catch::Approx(580.8921).epsilon(1e-6));
    // Within 2 percent of the 73 meV reorganization scale.
    const double ref = units::mev_to_wavenumber(73.0);
    CHECK(std::abs(lambda - ref) / ref < 0.02);

    CHECK_THROWS_AS(polaron_binding_cm({}), ConfigError);
}

TEST_CASE("thermal Fock truncation sizes") {
    CHECK(fock_levels(84.0, 300.0) == 25);
    CHECK(fock_levels(214.0, 300.0) == 11);
    CHECK(fock_levels(632.0, 300.0) == 6);
    CHECK(fock_levels(1594.0, 300.0) == 4);
    CHECK(fock_levels(84.0, 0.0) == 3);
    CHECK(fock_levels(84.0, -5.0) == 3);
}

TEST_CASE("thermal Fock sampler matches the Bose-Einstein mean") {
    Rng rng = make_stream(404);
    const int draws = 100000;

    double acc = 0.0;
    for (int i = 0; i < draws; ++i)
        acc += sample_thermal_fock(84.0, 300.0, 25, rng);
    const double nbar = units::bose_occupation(84.0, 300.0);
    CHECK(nbar == Catch::Approx(2.0157).epsilon(1e-3));
    CHECK(std::abs(acc / draws - nbar) < 0.03 * nbar);

    // Stiff mode at room temperature stays in the ground state.
    int zeros = 0;
    for (int i = 0; i < 10000; ++i)
        zeros += sample_thermal_fock(1594.0, 300.0, 4, rng) == 0;
    CHECK(zeros >= 9980);

    CHECK(sample_thermal_fock(84.0, 0.0, 25, rng) == 0);

    // Keeping 3 levels of the 84 cm^-1 mode at 300 K drops ~30 percent.
    CHECK_THROWS_AS(sample_thermal_fock(84.0, 300.0, 3, rng), ConfigError);
}

TEST_CASE("generator configuration guards") {
    GenConfig cfg;
    cfg.n_modes = 0;
    CHECK_THROWS_AS(gen_one_molecule_data(cfg), ConfigError);
    cfg.n_modes = 10;
    CHECK_THROWS_AS(gen_one_molecule_data(cfg), ConfigError);
    cfg = GenConfig{};
    cfg.temp_K = 0.0;
    CHECK_THROWS_AS(gen_one_molecule_data(cfg), ConfigError);
    cfg = GenConfig{};
    cfg.dt_fs = 0.3;  // does not divide 1 fs
    CHECK_THROWS_AS(gen_one_molecule_data(cfg), ConfigError);
    cfg = GenConfig{};
    cfg.phi = 0.0;
    CHECK_THROWS_AS(gen_one_molecule_data(cfg), ConfigError);
    cfg = GenConfig{};
    cfg.n_modes = 2;
    cfg.dim_cap = 100;  // 2 * 25 * 11 = 550
    CHECK_THROWS_AS(gen_one_molecule_data(cfg), ConfigError);
}

TEST_CASE("uncoupled generator holds the initial coherence") {
    GenConfig cfg;
    cfg.n_modes = 1;
    cfg.temp_K = 10.0;          // ground state dominates
    cfg.levels_override = {1};  // one level: number and coupling both vanish
    cfg.batch = 4;
    cfg.t_final_fs = 12.0;
    const GenResult r = gen_one_molecule_data(cfg);
    REQUIRE(r.t.size() == 12);
    CHECK(r.dim == 2);
    const double want = 2.0 * std::sqrt(cfg.phi * (1.0 - cfg.phi));
    for (size_t i = 0; i < r.t.size(); ++i) {
        CHECK(r.mean_sx[i] == Catch::Approx(want).margin(1e-12));
        CHECK(std::abs(r.mean_sy[i]) < 1e-12);
        CHECK(r.std_sx[i] < 1e-12);
    }
    CHECK(r.max_sz_drift < 1e-12);
}

TEST_CASE("generator matches the dense propagator for one mode") {
    GenConfig cfg;
    cfg.n_modes = 1;
    cfg.temp_K = 50.0;
    cfg.batch = 3;
    cfg.t_final_fs = 20.0;
    cfg.seed = 5;
    const GenResult r = gen_one_molecule_data(cfg);
    REQUIRE(r.levels.size() == 1);
    const int lv = r.levels[0];
    REQUIRE(r.dim == 2 * lv);
    CHECK(r.max_sz_drift < 1e-10);

    const rubrene::detail::SbSpace s = rubrene::detail::make_sb_space(cfg);
    const Mat h = Mat(rubrene::detail::spin_boson_h(s));
    CHECK((h - h.adjoint()).norm() < 1e-14);

    // Replicate the per-member thermal draws and evolve exactly.
    for (int row : {0, 7, 19}) {
        double msx = 0.0, msy = 0.0;
        for (int b = 0; b < cfg.batch; ++b) {
            Rng rng = make_stream(cfg.seed, std::uint64_t(b));
            const int n =
                sample_thermal_fock(84.0, cfg.temp_K, lv, rng);
            Vec psi0 = Vec::Zero(2 * lv);
            psi0(n) = std::sqrt(cfg.phi);
            psi0(lv + n) = std::sqrt(1.0 - cfg.phi);
            const Vec psi = oracle::propagator(h, double(row)) * psi0;
            const cd z = psi.head(lv).dot(psi.tail(lv));
            msx += 2.0 * z.real();
            msy += 2.0 * z.imag();
        }
        CHECK(r.mean_sx[size_t(row)] ==
              Catch::Approx(msx / cfg.batch).margin(1e-6));
        CHECK(r.mean_sy[size_t(row)] ==
              Catch::Approx(msy / cfg.batch).margin(1e-6));
    }
}

TEST_CASE("fit model decays at half the jump linewidth") {
    ParamStore store;
    const RubreneParams p = quiet_params(store, 0.0, 100.0);
    const double phi = 0.1;
    const TrajectoryStats st =
        run_fit_model(store, p, phi, 0.01, {10.0, 25.0, 40.0});
    const double rate = units::rad_fs_per_wavenumber * 100.0;
    for (size_t i = 0; i < st.times.size(); ++i) {
        const double want = 0.6 * std::exp(-0.5 * rate * st.times[i]);
        CHECK(st.mean[0][i] == Catch::Approx(want).epsilon(1e-3));
    }
}

TEST_CASE("static detuning rotates the coherence without shrinking it") {
    ParamStore store;
    const RubreneParams p = quiet_params(store, 150.0, 1e-12);
    const TrajectoryStats st =
        run_fit_model(store, p, 0.1, 0.01, {10.0, 25.0, 40.0});
    const double w = 2.0 * 150.0 * units::rad_fs_per_wavenumber;
    for (size_t i = 0; i < st.times.size(); ++i) {
        const double sx = st.mean[0][i], sy = st.mean[1][i];
        CHECK(sx == Catch::Approx(0.6 * std::cos(w * st.times[i])).margin(1e-5));
        CHECK(std::sqrt(sx * sx + sy * sy) ==
              Catch::Approx(0.6).margin(1e-6));
    }
}

TEST_CASE("fit training assembly") {
    GenConfig cfg;
    cfg.n_modes = 1;
    cfg.temp_K = 10.0;
    cfg.levels_override = {1};
    cfg.batch = 4;
    cfg.t_final_fs = 12.0;
    const GenResult data = gen_one_molecule_data(cfg);

    ParamStore store;
    const RubreneParams p = register_params(store, 1);
    CHECK(store.find("eps0_wavenumber") == p.eps0);
    CHECK(store.find("gamma_wavenumber") == p.gamma);
    CHECK(store.find("amp_84cm_wavenumber") == p.amp[0]);

    RubreneTraining tr = build_training(p, data, cfg.phi, 8.0, 0.1, 8, 0.1);
    REQUIRE(tr.runs.size() == 1);
    REQUIRE(tr.terms.size() == 4);
    CHECK(tr.runs[0].opts.t_final == 8.0);
    REQUIRE(tr.runs[0].opts.sample_times.size() == 9);  // rows 0..8
    CHECK(tr.terms[0].kind == SeriesKind::mean);
    CHECK(tr.terms[2].kind == SeriesKind::stddev);
    for (double w : tr.terms[0].weight) CHECK(w == 1.0);
    for (double w : tr.terms[2].weight) CHECK(w == Catch::Approx(0.1));
    for (size_t i = 0; i < tr.terms[0].target.size(); ++i)
        CHECK(tr.terms[0].target[i] == data.mean_sx[i]);

    CHECK_THROWS_AS(build_training(p, data, cfg.phi, 0.5), ConfigError);
    CHECK_THROWS_AS(register_params(store, std::vector<double>{}),
                    ConfigError);
}

TEST_CASE("bare lattice spreads ballistically") {
    ParamStore store;
    LatticeConfig lc;
    lc.sites = 31;
    lc.batch = 1;
    lc.dt_fs = 0.005;
    lc.t_final_fs = 12.0;
    lc.sample_every_fs = 4.0;
    const RubreneParams p = quiet_params(store, 0.0, 50.0);
    ModelSpec m = lattice_model(p, lc, false, false);
    const TrajectoryStats st =
        simulate_ensemble(m, store, lattice_options(lc, 1));
    const auto msd = msd_series(st);
    const double v = units::wavenumber_to_rad_fs(
        units::mev_to_wavenumber(hopping_mev));
    for (size_t i = 0; i < st.times.size(); ++i) {
        const double t = st.times[i];
        if (t == 0.0) {
            CHECK(std::abs(msd[i]) < 1e-12);
            continue;
        }
        CHECK(msd[i] == Catch::Approx(2.0 * v * v * t * t).epsilon(1e-3));
    }
}

TEST_CASE("frozen lattice holds its state") {
    ParamStore store;
    LatticeConfig lc;
    lc.sites = 10;
    lc.batch = 1;
    lc.t_final_fs = 5.0;
    const RubreneParams p = quiet_params(store, 0.0, 50.0);

    ModelSpec m = lattice_model(p, lc, false, false);
    m.h0.setZero();
    TrajectoryStats st = simulate_ensemble(m, store, lattice_options(lc, 1));
    for (double d : msd_series(st)) CHECK(std::abs(d) < 1e-12);

    // A flat superposition sits at the uniform-law variance (L^2 - 1) / 12.
    m.psi0 = Vec::Constant(lc.sites, 1.0 / std::sqrt(double(lc.sites)));
    st = simulate_ensemble(m, store, lattice_options(lc, 1));
    const double want = (lc.sites * lc.sites - 1.0) / 12.0;
    for (double d : msd_series(st))
        CHECK(d == Catch::Approx(want).margin(1e-8));
}

TEST_CASE("dephased lattice stays normalized and centered") {
    ParamStore store;
    LatticeConfig lc;
    lc.sites = 11;
    lc.batch = 1;
    lc.t_final_fs = 8.0;
    const RubreneParams p = quiet_params(store, 0.0, 100.0);
    ModelSpec m = lattice_model(p, lc, false, true);
    const TrajectoryStats st =
        simulate_ensemble(m, store, lattice_options(lc, 1));
    const int norm = m.observable_index("norm");
    const int site = m.observable_index("site");
    for (size_t i = 0; i < st.times.size(); ++i) {
        CHECK(st.mean[size_t(norm)][i] == Catch::Approx(1.0).margin(1e-10));
        // Reflection-symmetric dynamics pin the mean to the middle site.
        CHECK(st.mean[size_t(site)][i] ==
              Catch::Approx(double(lc.sites / 2)).margin(1e-8));
    }
}

TEST_CASE("mobility estimator on a synthetic diffusive series") {
    std::vector<double> t, msd, edge;
    for (int i = 0; i <= 100; ++i) {
        t.push_back(double(i));
        msd.push_back(1.5 + 0.02 * i);
        edge.push_back(0.0);
    }
    const MobilityReport rep = mobility(t, msd, edge, 300.0);
    CHECK(rep.slope_site2_per_fs == Catch::Approx(0.02).epsilon(1e-12));
    CHECK(rep.intercept == Catch::Approx(1.5).epsilon(1e-10));
    CHECK(rep.r2 == Catch::Approx(1.0).margin(1e-12));
    CHECK(rep.t_lo == Catch::Approx(60.0));
    CHECK(rep.n_points == 41);
    const double want = site_spacing_cm * site_spacing_cm * 0.02 * 1e15 /
                        (2.0 * units::volt_per_kelvin * 300.0);
    CHECK(rep.mu_cm2_per_Vs == Catch::Approx(want).epsilon(1e-12));

    // Doubling the site spacing quadruples the mobility.
    const MobilityReport wide =
        mobility(t, msd, edge, 300.0, 0.4, 2.0 * site_spacing_cm);
    CHECK(wide.mu_cm2_per_Vs ==
          Catch::Approx(4.0 * rep.mu_cm2_per_Vs).epsilon(1e-12));

    // Ballistic growth over the full window fails the linearity gate
    // (a straight line through t^2 on [0, T] caps at R^2 = 15/16).
    std::vector<double> ball;
    for (int i = 0; i <= 100; ++i) ball.push_back(1e-4 * i * i);
    CHECK_THROWS_AS(mobility(t, ball, edge, 300.0, 1.0), RegimeError);

    // Boundary contact inside the window is rejected.
    std::vector<double> touched = edge;
    touched[90] = 2e-3;
    CHECK_THROWS_AS(mobility(t, msd, touched, 300.0), RegimeError);

    CHECK_THROWS_AS(mobility({0.0, 1.0}, {0.0, 1.0}, {0.0, 0.0}, 300.0),
                    ConfigError);
    CHECK_THROWS_AS(mobility(t, msd, edge, 0.0), ConfigError);
    std::vector<double> short_msd(msd.begin(), msd.end() - 1);
    CHECK_THROWS_AS(mobility(t, short_msd, edge, 300.0), ConfigError);
}

TEST_CASE("lattice construction guards") {
    ParamStore store;
    const RubreneParams p = quiet_params(store, 0.0, 50.0);
    LatticeConfig lc;
    lc.sites = 1;
    CHECK_THROWS_AS(lattice_model(p, lc), ConfigError);
    lc = LatticeConfig{};
    lc.sample_every_fs = 0.07;  // not a multiple of dt
    CHECK_THROWS_AS(lattice_options(lc, 1), ConfigError);
}
