#pragma once

// CaF tweezer-qubit case study.
//
// One molecule: qubit with H(t) = sum_j eps_j(t) Sz driven by six detuning
// processes (four mains harmonics, one OU drift, one static shot-to-shot
// offset), jump operators Sx and Sz, and pi/2 // pi pulse schemes (plain
// Ramsey, spin echo, XY8 trains). Read-out contrast is
//   C(t) = |P_up(t, theta_last=pi) - P_up(t, theta_last=0)|,
// with both read-out variants folded into virtual observables so one run
// serves both on an identical noise tape.
//
// Two molecules: adds the dipolar exchange J(r1,r2) (Sx Sx + Sy Sy) with J
// recomputed each step from Langevin positions in the tweezer field, global
// pulses, and Bell-type read-out P_upup after final pi/2 pulses on both
// qubits. Members whose molecule hops to the other trap are dropped from the
// statistics from that moment on.
//
// Model-to-data comparisons always scale the model by the state-preparation
// fidelity (data by its inverse); the factor never enters dynamics.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "diqcd/grad.hpp"
#include "diqcd/units.hpp"

namespace diqcd::caf {

// Physical configuration. Amplitudes rad/ms, times ms, lengths um,
// temperatures uK, trap depth as k_B x temperature.
struct CaFConfig {
    std::array<double, 4> line_amp{};  // mains harmonics l = 1..4
    double ou_amp = 0.0;
    double ou_tau = 1.0;
    double static_w = 0.0;
    double gamma_x = 0.0;
    double gamma_z = 0.0;
    double pulse_err = 1e-4;

    double prep_fidelity = 0.79;
    double j0 = 1.9423;              // rad/ms um^3 dipolar coupling
    double trap_depth_uK = 130.0;    // gate depth
    double trap_full_uK = 1280.0;    // full depth (loading; not used in gates)
    double waist_um = 0.73;
    double wavelength_um = 0.781;
    double temp_radial_uK = 6.0;
    double temp_axial_uK = 18.0;
    double damping_ms = 100.0;
};

// Documented ground truth for synthetic datasets and CI.
inline CaFConfig ground_truth() {
    CaFConfig c;
    c.line_amp = {0.15, 0.10, 0.07, 0.05};
    c.ou_amp = 0.25;
    c.ou_tau = 12.0;
    c.static_w = 0.6;
    c.gamma_x = 0.01;
    c.gamma_z = 0.05;
    c.pulse_err = 0.004;
    return c;
}

// Deliberately detuned starting point for fits.
inline CaFConfig initial_guess() {
    CaFConfig c;
    c.line_amp = {0.10, 0.10, 0.10, 0.10};
    c.ou_amp = 0.15;
    c.ou_tau = 8.0;
    c.static_w = 0.4;
    c.gamma_x = 0.02;
    c.gamma_z = 0.02;
    c.pulse_err = 0.002;
    return c;
}

// Learning-rate groups: 0 = amplitudes and pulse error, 1 = damping rates.
struct CaFParams {
    std::array<int, 4> line_amp{};
    int ou_amp = -1, ou_tau = -1, static_w = -1;
    int gamma_x = -1, gamma_z = -1;
    int pulse_err = -1;
};

inline CaFParams register_params(ParamStore& store, const CaFConfig& cfg) {
    CaFParams p;
    for (int l = 0; l < 4; ++l)
        p.line_amp[size_t(l)] =
            store.add("line_amp_" + std::to_string(l + 1) + "_rad_per_ms",
                      cfg.line_amp[size_t(l)], Constraint::positive, true, 0);
    p.ou_amp = store.add("ou_amp_rad_per_ms", cfg.ou_amp, Constraint::positive,
                         true, 0);
    p.ou_tau = store.add("ou_tau_ms", cfg.ou_tau, Constraint::positive, true, 0);
    p.static_w = store.add("static_w_rad_per_ms", cfg.static_w,
                           Constraint::positive, true, 0);
    p.gamma_x = store.add("gamma_x_per_ms", cfg.gamma_x, Constraint::positive,
                          true, 1);
    p.gamma_z = store.add("gamma_z_per_ms", cfg.gamma_z, Constraint::positive,
                          true, 1);
    p.pulse_err = store.add("pulse_err", cfg.pulse_err,
                            Constraint::unit_interval, true, 0);
    return p;
}

// J = (J0/r^3)(1 - 3 cos^2 theta'), theta' measured from the y quantization
// axis. Zero at the magic angle, cubic decay, sign flips along y.
inline double dipole_coupling(double j0, const Eigen::Vector3d& r1,
                              const Eigen::Vector3d& r2) {
    const Eigen::Vector3d d = r1 - r2;
    const double r = d.norm();
    if (r <= 0.0) throw NumericError("dipole_coupling: coincident positions");
    const double c = d.y() / r;
    return j0 * (1.0 - 3.0 * c * c) / (r * r * r);
}

enum class Scheme { plain, echo, xy8 };

inline const char* scheme_name(Scheme s) {
    switch (s) {
        case Scheme::plain: return "plain";
        case Scheme::echo: return "echo";
        case Scheme::xy8: return "xy8";
    }
    return "?";
}

inline Scheme scheme_from_name(const std::string& s) {
    if (s == "plain") return Scheme::plain;
    if (s == "echo") return Scheme::echo;
    if (s == "xy8") return Scheme::xy8;
    throw ConfigError("unknown scheme: " + s);
}

inline double scheme_dt(Scheme s) {
    switch (s) {
        case Scheme::plain: return 0.01;
        case Scheme::echo: return 0.05;
        case Scheme::xy8: return 0.1;
    }
    return 0.01;
}

// Default measurement durations: 7 + 10 + 7 points.
inline std::vector<double> scheme_times(Scheme s) {
    std::vector<double> t;
    switch (s) {
        case Scheme::plain:
            for (int i = 1; i <= 7; ++i) t.push_back(0.5 * i);
            break;
        case Scheme::echo:
            for (int i = 1; i <= 10; ++i) t.push_back(2.5 * i);
            break;
        case Scheme::xy8:
            for (int i = 1; i <= 7; ++i) t.push_back(6.4 * i);
            break;
    }
    return t;
}

constexpr double xy8_block_one = 1.6;  // ms
constexpr double xy8_block_two = 3.2;  // ms, two-molecule Bell sequence

// Final pi/2 read-out pulse at phase theta_last: theta_last = pi composes
// with the initial pi/2(x) to a pi rotation (P_up = 0 noise-free),
// theta_last = 0 undoes it (P_up = 1).
inline Pulse read_pulse(double theta_last, int err_param, int slot = 0) {
    Pulse p;
    p.slot = slot;
    p.axis = Eigen::Vector3d(-std::cos(theta_last), -std::sin(theta_last), 0.0);
    p.angle = 0.5 * std::numbers::pi;
    p.err_param = err_param;
    return p;
}

namespace detail {

// X Y X Y Y X Y X, pi pulses at (k - 1/2) block/8, on every listed slot.
inline void append_xy8(std::vector<Pulse>& schedule, double block,
                       double t_final, int err_param,
                       const std::vector<int>& slots) {
    const double tau = block / 8.0;
    const int blocks = int(std::llround(t_final / block));
    if (std::abs(blocks * block - t_final) > 1e-9)
        throw ConfigError("xy8 horizon must be a whole number of blocks");
    const bool is_y[8] = {false, true, false, true, true, false, true, false};
    for (int b = 0; b < blocks; ++b)
        for (int k = 0; k < 8; ++k) {
            const double t = b * block + (k + 0.5) * tau;
            for (int slot : slots) {
                Pulse p;
                p.time = t;
                p.slot = slot;
                p.axis = is_y[k] ? Eigen::Vector3d::UnitY()
                                 : Eigen::Vector3d::UnitX();
                p.angle = std::numbers::pi;
                p.err_param = err_param;
                schedule.push_back(p);
            }
        }
}

inline void append_noise_processes(ModelSpec& m, const CaFParams& p,
                                   const std::string& suffix, int slot) {
    const Mat sz = embed(m.space, slot, spin_z());
    auto drive = [&](ProcessSpec ps) {
        m.processes.push_back(std::move(ps));
        DrivenTerm term;
        term.procs = {int(m.processes.size()) - 1};
        term.op = sz;
        m.driven.push_back(std::move(term));
    };
    for (int l = 0; l < 4; ++l) {
        ProcessSpec ps;
        ps.kind = ProcessKind::periodic;
        ps.label = "line_" + std::to_string(l + 1) + suffix;
        ps.omega = (l + 1) * units::mains_omega_rad_ms;
        ps.amp = p.line_amp[size_t(l)];
        drive(std::move(ps));
    }
    ProcessSpec ou;
    ou.kind = ProcessKind::ornstein_uhlenbeck;
    ou.label = "ou" + suffix;
    ou.amp = p.ou_amp;
    ou.tau = p.ou_tau;
    drive(std::move(ou));
    ProcessSpec st;
    st.kind = ProcessKind::static_uniform;
    st.label = "static" + suffix;
    st.amp = p.static_w;
    drive(std::move(st));
}

} // namespace detail

// Single-qubit scheme model over [0, t_final]: initial state |up>, pi/2(x)
// at t=0, scheme pulses, and the two virtual read-out observables
// pup_pi / pup_0 (all pulses carry the depolarizing error).
inline ModelSpec one_molecule_model(const CaFParams& p, Scheme scheme,
                                    double t_final) {
    ModelSpec m;
    m.space = qubits(1);
    m.h0 = Mat::Zero(2, 2);
    m.psi0 = ket_up();
    detail::append_noise_processes(m, p, "", 0);
    m.jumps.push_back(make_jump(spin_x(), p.gamma_x));
    m.jumps.push_back(make_jump(spin_z(), p.gamma_z));

    Pulse first;
    first.time = 0.0;
    first.slot = 0;
    first.axis = Eigen::Vector3d::UnitX();
    first.angle = 0.5 * std::numbers::pi;
    first.err_param = p.pulse_err;
    m.schedule.push_back(first);
    if (scheme == Scheme::echo) {
        Pulse mid = first;
        mid.time = 0.5 * t_final;
        mid.angle = std::numbers::pi;
        m.schedule.push_back(mid);
    } else if (scheme == Scheme::xy8) {
        detail::append_xy8(m.schedule, xy8_block_one, t_final, p.pulse_err,
                           {0});
    }

    m.observables.push_back(
        {"pup_pi", projector_up(), {read_pulse(std::numbers::pi, p.pulse_err)}});
    m.observables.push_back(
        {"pup_0", projector_up(), {read_pulse(0.0, p.pulse_err)}});
    return m;
}

// C(t) from a stats block holding pup_pi / pup_0 (model scale, no fidelity).
inline std::vector<double> contrast_series(const TrajectoryStats& st,
                                           int obs_pi = 0, int obs_0 = 1) {
    std::vector<double> c(st.times.size(), 0.0);
    for (size_t i = 0; i < st.times.size(); ++i)
        c[i] = std::abs(st.mean[size_t(obs_pi)][i] - st.mean[size_t(obs_0)][i]);
    return c;
}

inline TrapField tweezer_field(const CaFConfig& cfg, double separation) {
    TrapField f;
    f.centers = {Eigen::Vector3d::Zero(),
                 Eigen::Vector3d(separation, 0.0, 0.0)};
    f.depth = units::kB_md_per_uK * cfg.trap_depth_uK;
    f.waist = cfg.waist_um;
    f.wavelength = cfg.wavelength_um;
    return f;
}

// Two-qubit Bell model: |upup>, global pi/2(x), optional XY8 train
// (3.2 ms blocks), dipolar exchange from pinned or thermally moving
// molecules separated along x, and the P_upup observable read out through
// final pi/2(x) pulses on both qubits.
inline ModelSpec two_molecule_model(const CaFParams& p, const CaFConfig& cfg,
                                    double separation, double t_final,
                                    bool with_xy8, bool pinned,
                                    bool with_noise = true) {
    if (separation < 1.68)
        throw RegimeError(
            "tweezer separation below 1.68 um is outside the supported "
            "regime (parametric heating)");
    ModelSpec m;
    m.space = qubits(2);
    m.h0 = Mat::Zero(4, 4);
    m.psi0 = Vec::Zero(4);
    m.psi0(0) = 1.0;  // |up,up>
    const Mat exchange = kron(spin_x(), spin_x()) + kron(spin_y(), spin_y());

    if (with_noise) {
        detail::append_noise_processes(m, p, "_q0", 0);
        detail::append_noise_processes(m, p, "_q1", 1);
    }
    m.jumps.push_back(make_jump(embed(m.space, 0, spin_x()), p.gamma_x));
    m.jumps.push_back(make_jump(embed(m.space, 1, spin_x()), p.gamma_x));
    m.jumps.push_back(make_jump(embed(m.space, 0, spin_z()), p.gamma_z));
    m.jumps.push_back(make_jump(embed(m.space, 1, spin_z()), p.gamma_z));

    const TrapField field = tweezer_field(cfg, separation);
    if (pinned) {
        const double j =
            dipole_coupling(cfg.j0, field.centers[0], field.centers[1]);
        m.h0 += j * exchange;
    } else {
        ProcessSpec md;
        md.kind = ProcessKind::langevin_md;
        md.label = "md";
        md.md.field = field;
        md.md.mass = units::caf_mass_amu;
        md.md.temp_radial = cfg.temp_radial_uK;
        md.md.temp_axial = cfg.temp_axial_uK;
        md.md.friction = 1.0 / cfg.damping_ms;
        md.md.molecules = 2;
        m.processes.push_back(md);
        m.coupling.md_process = int(m.processes.size()) - 1;
        m.coupling.op = exchange;
        const double j0 = cfg.j0;
        m.coupling.coeff = [j0](const MdState& s) {
            return dipole_coupling(j0, s.r[0], s.r[1]);
        };
        m.track_trap_loss = true;
    }

    for (int slot : {0, 1}) {
        Pulse first;
        first.time = 0.0;
        first.slot = slot;
        first.axis = Eigen::Vector3d::UnitX();
        first.angle = 0.5 * std::numbers::pi;
        first.err_param = p.pulse_err;
        m.schedule.push_back(first);
    }
    if (with_xy8)
        detail::append_xy8(m.schedule, xy8_block_two, t_final, p.pulse_err,
                           {0, 1});

    Pulse r0;
    r0.slot = 0;
    r0.axis = Eigen::Vector3d::UnitX();
    r0.angle = 0.5 * std::numbers::pi;
    r0.err_param = p.pulse_err;
    Pulse r1 = r0;
    r1.slot = 1;
    m.observables.push_back(
        {"puu", kron(projector_up(), projector_up()), {r0, r1}});
    return m;
}

// Ideal Bell oscillation for pinned molecules at separation d (model scale).
inline double ideal_bell_puu(double j0, double separation, double t) {
    const double s = std::sin(0.25 * j0 * t / std::pow(separation, 3));
    return s * s;
}

// ---------------------------------------------------------------------------
// Scheme runs, synthetic datasets, and the joint training recipe.

struct SchemePoints {
    Scheme scheme = Scheme::plain;
    std::vector<double> t;  // ms
    std::vector<double> c;  // contrast, data scale (fidelity applied)
};

// Appends the runs needed to evaluate one scheme at the given durations.
// plain/xy8 share pulses across durations, so they use one run sampled at
// every duration; echo needs one run per duration (the pi pulse moves).
// Returns, per duration, (run index, sample index) into the appended runs.
inline std::vector<std::pair<int, int>> append_scheme_runs(
    std::vector<Run>& runs, const CaFParams& p, Scheme scheme,
    const std::vector<double>& times, int batch, int threads) {
    std::vector<std::pair<int, int>> where;
    if (times.empty()) throw ConfigError("scheme has no measurement times");
    if (scheme == Scheme::echo) {
        for (double t : times) {
            Run r;
            r.label = std::string("echo_") + std::to_string(t);
            r.model = one_molecule_model(p, scheme, t);
            r.opts.batch = batch;
            r.opts.threads = threads;
            r.opts.dt = scheme_dt(scheme);
            r.opts.t_final = t;
            r.opts.sample_times = {t};
            where.emplace_back(int(runs.size()), 0);
            runs.push_back(std::move(r));
        }
    } else {
        Run r;
        r.label = scheme_name(scheme);
        r.model = one_molecule_model(p, scheme, times.back());
        r.opts.batch = batch;
        r.opts.threads = threads;
        r.opts.dt = scheme_dt(scheme);
        r.opts.t_final = times.back();
        r.opts.sample_times = times;
        const int idx = int(runs.size());
        runs.push_back(std::move(r));
        for (int i = 0; i < int(times.size()); ++i) where.emplace_back(idx, i);
    }
    return where;
}

// Simulates one scheme with the given parameter values and returns the
// data-scale contrast curve (multiplied by the preparation fidelity).
inline SchemePoints gen_scheme_data(const ParamStore& store,
                                    const CaFParams& p, const CaFConfig& cfg,
                                    Scheme scheme,
                                    const std::vector<double>& times,
                                    int batch, std::uint64_t seed,
                                    int threads = 1) {
    std::vector<Run> runs;
    const auto where =
        append_scheme_runs(runs, p, scheme, times, batch, threads);
    std::vector<TrajectoryStats> stats;
    for (int i = 0; i < int(runs.size()); ++i) {
        runs[size_t(i)].opts.seed = seed;
        runs[size_t(i)].opts.run_id = std::uint64_t(i);
        stats.push_back(
            simulate_ensemble(runs[size_t(i)].model, store, runs[size_t(i)].opts));
    }
    SchemePoints out;
    out.scheme = scheme;
    out.t = times;
    for (auto [ri, si] : where) {
        const auto c = contrast_series(stats[size_t(ri)]);
        out.c.push_back(cfg.prep_fidelity * c[size_t(si)]);
    }
    return out;
}

struct CaFTraining {
    std::vector<Run> runs;
    std::vector<LossTerm> terms;
};

// Joint three-scheme fit: per-point weights 1/7 (plain), 1/10 (echo),
// 1/7 (xy8); targets are data divided by the preparation fidelity.
inline CaFTraining build_caf_training(const CaFParams& p, const CaFConfig& cfg,
                                      const std::vector<SchemePoints>& data,
                                      int batch, int threads = 1) {
    CaFTraining tr;
    for (const SchemePoints& sp : data) {
        if (sp.t.size() != sp.c.size())
            throw ConfigError("scheme dataset: time/value size mismatch");
        const double w = 1.0 / double(sp.t.size());
        const auto where =
            append_scheme_runs(tr.runs, p, sp.scheme, sp.t, batch, threads);
        // group points sharing a run into one term
        for (size_t i = 0; i < where.size();) {
            LossTerm lt;
            lt.run = where[i].first;
            lt.kind = SeriesKind::abs_diff_mean;
            lt.obs_a = 0;  // pup_pi
            lt.obs_b = 1;  // pup_0
            size_t j = i;
            for (; j < where.size() && where[j].first == where[i].first; ++j) {
                lt.times.push_back(where[j].second);
                lt.target.push_back(sp.c[j] / cfg.prep_fidelity);
                lt.weight.push_back(w);
            }
            tr.terms.push_back(std::move(lt));
            i = j;
        }
    }
    return tr;
}

inline TrainResult train_caf(CaFTraining& tr, ParamStore& store, int epochs,
                             std::uint64_t seed, int log_every = 0) {
    TrainOptions opt;
    opt.epochs = epochs;
    opt.lr = {0.1, 0.001};
    opt.seed = seed;
    opt.log_every = log_every;
    return train(tr.runs, tr.terms, store, opt);
}

} // namespace diqcd::caf
