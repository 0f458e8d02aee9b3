#pragma once

// Rubrene carrier-transport case study.
//
// Data generation: exact unitary evolution of the effective one-molecule
// vibronic Hamiltonian
//   H = sum_m w_m b_m^+ b_m + sum_m (g_m w_m / 2)(b_m^+ + b_m)(1 + sigma_z)
// over a batch of trajectories whose initial Fock states are thermally
// sampled, recording mean and spread of <sigma_x>, <sigma_y> on an fs grid.
// Energies are wavenumbers internally, times fs.
//
// Model fitting: a two-level ansatz eps0 sigma_z + sum_m eps_m(t)(1+sigma_z)/2
// with one periodic drive per kept vibrational mode (fixed frequency, fitted
// amplitude, random phase) and a projector jump (1+sigma_z)/2 at a fitted
// rate, trained on the generated curves. Every fitted scalar lives in
// wavenumbers (the jump rate as an angular-frequency linewidth), so one
// optimizer step size suits them all; the models convert to rad/fs inside.
//
// Lattice: the fitted drives and jump are replicated per site (independent
// realizations of identical statistics) on top of nearest-neighbor hopping;
// carrier spread gives the MSD and, through a linear-regime fit, the
// mobility mu = e D^2 / (2 k_B T) * d(MSD)/dt.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "diqcd/grad.hpp"
#include "diqcd/units.hpp"

namespace diqcd::rubrene {

struct Mode {
    double omega_cm = 0.0;
    double g = 0.0;
};

// Kept vibrational modes, strongest-coupling first within each frequency
// group; ordering matches the per-mode tables used throughout.
inline const std::array<Mode, 9>& mode_table() {
    static const std::array<Mode, 9> t = {{{84.0, 0.96},
                                           {214.0, 0.37},
                                           {632.0, 0.25},
                                           {1002.0, 0.20},
                                           {1206.0, 0.15},
                                           {1351.0, 0.31},
                                           {1364.0, 0.13},
                                           {1535.0, 0.20},
                                           {1594.0, 0.31}}};
    return t;
}

constexpr double hopping_mev = 83.0;
constexpr double site_spacing_cm = 7.0e-8;  // 7 Angstrom

inline double polaron_binding_cm(const std::vector<Mode>& modes) {
    if (modes.empty()) throw ConfigError("polaron_binding: no modes");
    double s = 0.0;
    for (const Mode& m : modes) s += m.g * m.g * m.omega_cm;
    return s;
}

// Fock-space size for one mode: smallest count holding >= 1 - 1e-4 of the
// thermal weight, plus two headroom levels (the coupling displaces
// occupations upward).
inline int fock_levels(double omega_cm, double temp_K) {
    if (temp_K <= 0.0) return 3;
    const double q =
        std::exp(-omega_cm / (units::wavenumber_per_kelvin * temp_K));
    const int n =
        std::max(0, int(std::ceil(std::log(1e-4) / std::log(q))) - 1);
    return n + 3;
}

// Truncated geometric draw, renormalized over `levels` states.
inline int sample_thermal_fock(double omega_cm, double temp_K, int levels,
                               Rng& rng) {
    if (temp_K <= 0.0) return 0;
    const double q =
        std::exp(-omega_cm / (units::wavenumber_per_kelvin * temp_K));
    if (std::pow(q, levels) > 1e-4)
        throw ConfigError("thermal Fock truncation drops more than 1e-4 of "
                          "the distribution");
    const double u = rng.uniform01() * (1.0 - std::pow(q, levels));
    double cum = 0.0, pn = 1.0 - q;
    for (int n = 0; n < levels; ++n) {
        cum += pn;
        if (u < cum) return n;
        pn *= q;
    }
    return levels - 1;
}

// ---------------------------------------------------------------------------
// Spin-boson data generator.

struct GenConfig {
    int n_modes = 3;           // first K entries of mode_table()
    double temp_K = 300.0;
    double phi = 0.1;          // initial carrier amplitude
    int batch = 64;
    double dt_fs = 0.01;
    double t_final_fs = 100.0;  // rows at t = 0..t_final-1 fs
    int taylor_order = 6;
    Eigen::Index dim_cap = 200000;
    std::uint64_t seed = 1;
    std::vector<int> levels_override;  // optional per-mode truncation
};

struct GenResult {
    std::vector<double> t;  // fs
    std::vector<double> mean_sx, mean_sy, std_sx, std_sy;
    double max_sz_drift = 0.0;
    Eigen::Index dim = 0;
    std::vector<int> levels;
};

namespace detail {

struct SbSpace {
    HilbertSpace space;
    std::vector<int> levels;
    Eigen::Index vib_dim = 1;
    Eigen::Index dim = 2;
};

inline SbSpace make_sb_space(const GenConfig& cfg) {
    if (cfg.n_modes < 1 || cfg.n_modes > int(mode_table().size()))
        throw ConfigError("spin-boson generator: mode count out of range");
    SbSpace s;
    s.space.dims = {2};
    for (int m = 0; m < cfg.n_modes; ++m) {
        int lv = cfg.levels_override.empty()
                     ? fock_levels(mode_table()[size_t(m)].omega_cm, cfg.temp_K)
                     : cfg.levels_override.at(size_t(m));
        if (lv < 1) throw ConfigError("spin-boson generator: empty mode space");
        s.levels.push_back(lv);
        s.space.dims.push_back(lv);
        s.vib_dim *= lv;
    }
    s.dim = 2 * s.vib_dim;
    if (s.dim > cfg.dim_cap)
        throw ConfigError("spin-boson generator: joint dimension " +
                          std::to_string(s.dim) + " exceeds the cap " +
                          std::to_string(cfg.dim_cap));
    return s;
}

// H in rad/fs, sparse over spin x modes (spin is slot 0).
inline SpMat spin_boson_h(const SbSpace& s) {
    SpMat h(s.dim, s.dim);
    const Mat coupler = identity(2) + pauli_z();  // diag(2, 0)
    const SpMat spin_part = sparse_embed(s.space, 0, coupler);
    for (size_t m = 0; m < s.levels.size(); ++m) {
        const Mode& mode = mode_table()[m];
        const int lv = s.levels[m];
        const SpMat num =
            sparse_embed(s.space, int(m) + 1, boson_number(lv));
        const SpMat x = sparse_embed(
            s.space, int(m) + 1, boson_create(lv) + boson_destroy(lv));
        h += mode.omega_cm * num;
        h += (0.5 * mode.g * mode.omega_cm) * SpMat(x * spin_part);
    }
    return SpMat(units::rad_fs_per_wavenumber * h);
}

} // namespace detail

// Unitary ensemble evolution of the vibronic model; per-trajectory initial
// Fock states are thermally sampled from per-member streams. Returns the fs
// series of batch mean/spread of <sigma_x>, <sigma_y> and the worst
// <sigma_z> conservation drift (sigma_z commutes with H).
inline GenResult gen_one_molecule_data(const GenConfig& cfg) {
    if (cfg.temp_K <= 0.0)
        throw ConfigError("generator temperature must be > 0 K");
    if (cfg.dt_fs <= 0.0) throw ConfigError("generator dt must be > 0");
    if (cfg.phi <= 0.0 || cfg.phi >= 1.0)
        throw ConfigError("carrier amplitude phi must be in (0,1)");
    const detail::SbSpace s = detail::make_sb_space(cfg);
    const SpMat h = detail::spin_boson_h(s);

    const int steps_per_fs = int(std::llround(1.0 / cfg.dt_fs));
    if (std::abs(steps_per_fs * cfg.dt_fs - 1.0) > 1e-9)
        throw ConfigError("generator dt must divide 1 fs");
    const int rows = int(std::llround(cfg.t_final_fs));
    if (rows < 1) throw ConfigError("generator horizon too short");

    const int B = cfg.batch;
    Mat psi = Mat::Zero(s.dim, B);
    const double au = std::sqrt(cfg.phi), ad = std::sqrt(1.0 - cfg.phi);
    for (int b = 0; b < B; ++b) {
        Rng rng = make_stream(cfg.seed, std::uint64_t(b));
        Eigen::Index idx = 0;
        for (size_t m = 0; m < s.levels.size(); ++m) {
            const int n = sample_thermal_fock(mode_table()[m].omega_cm,
                                              cfg.temp_K, s.levels[m], rng);
            idx = idx * s.levels[m] + n;
        }
        psi(idx, b) = au;               // spin up block
        psi(s.vib_dim + idx, b) = ad;   // spin down block
    }

    GenResult out;
    out.dim = s.dim;
    out.levels = s.levels;
    std::vector<double> sz0(size_t(B), 0.0);
    Mat term(s.dim, B);
    for (int row = 0; row < rows; ++row) {
        out.t.push_back(double(row));
        double msx = 0, msy = 0, ssx = 0, ssy = 0;
        std::vector<double> vx(size_t(B), 0.0);
        std::vector<double> vy(size_t(B), 0.0);
        for (int b = 0; b < B; ++b) {
            const auto up = psi.col(b).head(s.vib_dim);
            const auto dn = psi.col(b).tail(s.vib_dim);
            const cd z = up.dot(dn);  // <up|dn>
            vx[size_t(b)] = 2.0 * z.real();
            vy[size_t(b)] = 2.0 * z.imag();
            const double sz = up.squaredNorm() - dn.squaredNorm();
            if (row == 0)
                sz0[size_t(b)] = sz;
            else
                out.max_sz_drift =
                    std::max(out.max_sz_drift, std::abs(sz - sz0[size_t(b)]));
            msx += vx[size_t(b)];
            msy += vy[size_t(b)];
        }
        msx /= B;
        msy /= B;
        for (int b = 0; b < B; ++b) {
            ssx += (vx[size_t(b)] - msx) * (vx[size_t(b)] - msx);
            ssy += (vy[size_t(b)] - msy) * (vy[size_t(b)] - msy);
        }
        out.mean_sx.push_back(msx);
        out.mean_sy.push_back(msy);
        out.std_sx.push_back(std::sqrt(ssx / B));
        out.std_sy.push_back(std::sqrt(ssy / B));
        if (row + 1 < rows)
            for (int k = 0; k < steps_per_fs; ++k)
                unitary_step(h, cfg.dt_fs, cfg.taylor_order, psi, term);
    }
    return out;
}

// ---------------------------------------------------------------------------
// DIQCD fit model (one molecule) and training recipe.

struct RubreneParams {
    int eps0 = -1;   // static sigma_z coefficient, wavenumbers (free sign)
    int gamma = -1;  // projector-jump linewidth, wavenumbers
    std::vector<int> amp;  // per-mode drive amplitude, wavenumbers
};

inline RubreneParams register_params(ParamStore& store,
                                     const std::vector<double>& amp0,
                                     double eps0 = -30.0,
                                     double gamma = 50.0) {
    if (amp0.empty() || amp0.size() > mode_table().size())
        throw ConfigError("rubrene params: mode count out of range");
    RubreneParams p;
    p.eps0 = store.add("eps0_wavenumber", eps0, Constraint::free_real, true, 0);
    p.gamma = store.add("gamma_wavenumber", gamma, Constraint::positive, true, 0);
    for (size_t m = 0; m < amp0.size(); ++m)
        p.amp.push_back(store.add(
            "amp_" + std::to_string(int(mode_table()[m].omega_cm)) +
                "cm_wavenumber",
            amp0[m], Constraint::positive, true, 0));
    return p;
}

inline RubreneParams register_params(ParamStore& store, int n_modes,
                                     double eps0 = -30.0, double gamma = 50.0,
                                     double amp = 150.0) {
    return register_params(store, std::vector<double>(size_t(n_modes), amp),
                           eps0, gamma);
}

// eps0 sigma_z + sum_m eps_m(t) (1+sigma_z)/2 with a (1+sigma_z)/2 jump.
// Parameters are wavenumbers; driven-term scales and a sqrt-scaled jump
// operator convert them to rad/fs and 1/fs.
inline ModelSpec one_molecule_fit_model(const RubreneParams& p, double phi) {
    ModelSpec m;
    m.space = qubits(1);
    m.h0 = Mat::Zero(2, 2);
    m.psi0 = (Vec(2) << std::sqrt(phi), std::sqrt(1.0 - phi)).finished();

    ProcessSpec stat;
    stat.kind = ProcessKind::constant;
    stat.label = "eps0";
    stat.amp = p.eps0;
    m.processes.push_back(stat);
    DrivenTerm t0;
    t0.procs = {0};
    t0.scale = units::rad_fs_per_wavenumber;
    t0.op = pauli_z();
    m.driven.push_back(std::move(t0));

    for (size_t k = 0; k < p.amp.size(); ++k) {
        ProcessSpec ps;
        ps.kind = ProcessKind::periodic;
        ps.label = "mode_" + std::to_string(int(mode_table()[k].omega_cm));
        ps.omega =
            units::wavenumber_to_rad_fs(mode_table()[k].omega_cm);
        ps.amp = p.amp[k];
        m.processes.push_back(ps);
        DrivenTerm dt;
        dt.procs = {int(k) + 1};
        dt.scale = units::rad_fs_per_wavenumber;
        dt.op = projector_up();  // (1+sigma_z)/2
        m.driven.push_back(std::move(dt));
    }
    m.jumps.push_back(make_jump(
        Mat(std::sqrt(units::rad_fs_per_wavenumber) * projector_up()),
        p.gamma));
    m.observables.push_back({"sx", pauli_x(), {}});
    m.observables.push_back({"sy", pauli_y(), {}});
    return m;
}

struct RubreneTraining {
    std::vector<Run> runs;
    std::vector<LossTerm> terms;
};

// Fit on [0, fit_horizon] fs with per-point weight 1 on the means and
// std_weight on the spreads.
inline RubreneTraining build_training(const RubreneParams& p,
                                      const GenResult& data, double phi,
                                      double fit_horizon_fs = 70.0,
                                      double std_weight = 0.1, int batch = 512,
                                      double dt_fs = 0.05, int threads = 1) {
    RubreneTraining tr;
    Run r;
    r.label = "one_molecule_fit";
    r.model = one_molecule_fit_model(p, phi);
    r.opts.batch = batch;
    r.opts.dt = dt_fs;
    r.opts.t_final = fit_horizon_fs;
    r.opts.threads = threads;

    std::vector<int> idx;
    for (int i = 0; i < int(data.t.size()); ++i)
        if (data.t[size_t(i)] <= fit_horizon_fs + 1e-9) {
            r.opts.sample_times.push_back(data.t[size_t(i)]);
            idx.push_back(i);
        }
    if (idx.size() < 2) throw ConfigError("fit window holds fewer than 2 rows");
    tr.runs.push_back(std::move(r));

    auto add_term = [&](SeriesKind kind, int obs,
                        const std::vector<double>& series, double w) {
        LossTerm lt;
        lt.run = 0;
        lt.kind = kind;
        lt.obs_a = obs;
        for (size_t i = 0; i < idx.size(); ++i) {
            lt.times.push_back(int(i));
            lt.target.push_back(series[size_t(idx[i])]);
            lt.weight.push_back(w);
        }
        tr.terms.push_back(std::move(lt));
    };
    add_term(SeriesKind::mean, 0, data.mean_sx, 1.0);
    add_term(SeriesKind::mean, 1, data.mean_sy, 1.0);
    add_term(SeriesKind::stddev, 0, data.std_sx, std_weight);
    add_term(SeriesKind::stddev, 1, data.std_sy, std_weight);
    return tr;
}

inline TrainResult train_rubrene(RubreneTraining& tr, ParamStore& store,
                                 int epochs, std::uint64_t seed,
                                 int log_every = 0) {
    TrainOptions opt;
    opt.epochs = epochs;
    opt.lr = {0.3};
    opt.seed = seed;
    opt.log_every = log_every;
    return train(tr.runs, tr.terms, store, opt);
}

// ---------------------------------------------------------------------------
// Lattice transport.

struct LatticeConfig {
    int sites = 50;
    int batch = 64;
    double dt_fs = 0.05;
    double t_final_fs = 80.0;
    double sample_every_fs = 1.0;
    int boundary_sites = 5;
    double temp_K = 300.0;
    int threads = 1;
};

// Hopping chain with the fitted per-site drives (independent phases per site
// and member) and per-site projector jumps at the fitted rate. The carrier
// starts on the middle site. A uniform eps0 shift is a global phase on this
// model, so it is not replicated.
inline ModelSpec lattice_model(const RubreneParams& p, const LatticeConfig& lc,
                               bool with_noise = true,
                               bool with_jumps = true) {
    if (lc.sites < 2) throw ConfigError("lattice needs at least 2 sites");
    ModelSpec m;
    const int L = lc.sites;
    m.space = single(L);
    const double v = units::wavenumber_to_rad_fs(
        units::mev_to_wavenumber(hopping_mev));
    m.h0 = lattice_hopping(L, v);
    m.psi0 = Vec::Zero(L);
    m.psi0(L / 2) = 1.0;

    for (int n = 0; n < L; ++n) {
        const Mat pn = site_projector(L, n);
        if (with_noise)
            for (size_t k = 0; k < p.amp.size(); ++k) {
                ProcessSpec ps;
                ps.kind = ProcessKind::periodic;
                ps.label = "site_" + std::to_string(n) + "_mode_" +
                           std::to_string(int(mode_table()[k].omega_cm));
                ps.omega = units::wavenumber_to_rad_fs(mode_table()[k].omega_cm);
                ps.amp = p.amp[k];
                m.processes.push_back(ps);
                DrivenTerm dt;
                dt.procs = {int(m.processes.size()) - 1};
                dt.scale = units::rad_fs_per_wavenumber;
                dt.op = pn;
                m.driven.push_back(std::move(dt));
            }
        if (with_jumps)
            m.jumps.push_back(make_jump(
                Mat(std::sqrt(units::rad_fs_per_wavenumber) * pn), p.gamma));
    }

    Mat edge = Mat::Zero(L, L);
    const int bs = std::min(lc.boundary_sites, L / 2);
    for (int n = 0; n < bs; ++n) {
        edge(n, n) = 1.0;
        edge(L - 1 - n, L - 1 - n) = 1.0;
    }
    m.observables.push_back({"site", site_number(L), {}});
    m.observables.push_back(
        {"site_sq", Mat(site_number(L) * site_number(L)), {}});
    m.observables.push_back({"edge", edge, {}});
    m.observables.push_back({"norm", identity(L), {}});
    return m;
}

inline SimOptions lattice_options(const LatticeConfig& lc,
                                  std::uint64_t seed) {
    SimOptions o;
    o.batch = lc.batch;
    o.dt = lc.dt_fs;
    o.t_final = lc.t_final_fs;
    o.seed = seed;
    o.threads = lc.threads;
    const int every = int(std::llround(lc.sample_every_fs / lc.dt_fs));
    if (every < 1 ||
        std::abs(every * lc.dt_fs - lc.sample_every_fs) > 1e-9)
        throw ConfigError("lattice sample interval must be a multiple of dt");
    for (double t = 0.0; t <= lc.t_final_fs + 1e-9; t += lc.sample_every_fs)
        o.sample_times.push_back(t);
    return o;
}

// Per-time ensemble MSD: mean over members of Tr(rho n^2) - Tr(rho n)^2.
inline std::vector<double> msd_series(const TrajectoryStats& st,
                                      int obs_n = 0, int obs_n2 = 1) {
    std::vector<double> out(st.times.size(), 0.0);
    for (int t = 0; t < int(st.times.size()); ++t) {
        double acc = 0.0;
        int alive = 0;
        for (int b = 0; b < st.batch; ++b) {
            const double n1 = st.member(obs_n, t, b);
            const double n2 = st.member(obs_n2, t, b);
            if (!std::isfinite(n1)) continue;
            acc += n2 - n1 * n1;
            ++alive;
        }
        out[size_t(t)] = alive > 0 ? acc / alive : 0.0;
    }
    return out;
}

struct MobilityReport {
    double mu_cm2_per_Vs = 0.0;
    double slope_site2_per_fs = 0.0;
    double intercept = 0.0;
    double r2 = 0.0;
    double t_lo = 0.0, t_hi = 0.0;  // fs
    double boundary_occupation = 0.0;
    int n_points = 0;
};

// Least-squares slope of MSD(t) over the trailing window_frac of the
// horizon; rejects sub-linear/ballistic regimes (R^2) and runs that touched
// the lattice edge (boundary occupation within the window).
inline MobilityReport mobility(const std::vector<double>& t_fs,
                               const std::vector<double>& msd,
                               const std::vector<double>& edge_occ,
                               double temp_K, double window_frac = 0.4,
                               double site_cm = site_spacing_cm) {
    if (t_fs.size() != msd.size() || t_fs.size() != edge_occ.size())
        throw ConfigError("mobility: series length mismatch");
    if (t_fs.size() < 4) throw ConfigError("mobility: too few points");
    if (temp_K <= 0.0) throw ConfigError("mobility: temperature must be > 0");
    const double t_end = t_fs.back();
    const double t_lo = t_end - window_frac * (t_end - t_fs.front());
    double sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0, occ = 0;
    int n = 0;
    for (size_t i = 0; i < t_fs.size(); ++i) {
        if (t_fs[i] < t_lo - 1e-12) continue;
        const double x = t_fs[i], y = msd[i];
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
        syy += y * y;
        occ = std::max(occ, edge_occ[i]);
        ++n;
    }
    if (n < 3) throw ConfigError("mobility: fit window has fewer than 3 points");
    const double det = n * sxx - sx * sx;
    const double slope = (n * sxy - sx * sy) / det;
    const double intercept = (sy - slope * sx) / n;
    double ss_res = 0, ss_tot = 0;
    const double ybar = sy / n;
    for (size_t i = 0; i < t_fs.size(); ++i) {
        if (t_fs[i] < t_lo - 1e-12) continue;
        const double e = msd[i] - (slope * t_fs[i] + intercept);
        ss_res += e * e;
        ss_tot += (msd[i] - ybar) * (msd[i] - ybar);
    }
    MobilityReport rep;
    rep.slope_site2_per_fs = slope;
    rep.intercept = intercept;
    rep.r2 = ss_tot > 0 ? 1.0 - ss_res / ss_tot : 0.0;
    rep.t_lo = t_lo;
    rep.t_hi = t_end;
    rep.boundary_occupation = occ;
    rep.n_points = n;
    rep.mu_cm2_per_Vs = site_cm * site_cm * slope * 1e15 /
                        (2.0 * units::volt_per_kelvin * temp_K);
    if (rep.r2 < 0.99)
        throw RegimeError("no linear MSD regime in the fit window (R^2 = " +
                          std::to_string(rep.r2) + ")");
    if (occ > 1e-3)
        throw RegimeError(
            "carrier reached the lattice boundary (edge occupation " +
            std::to_string(occ) + ")");
    return rep;
}

} // namespace diqcd::rubrene
