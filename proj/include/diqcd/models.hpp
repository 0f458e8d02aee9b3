#pragma once

// Model assembly and ensemble simulation.
//
// A model couples a fixed Hamiltonian H0 to classical drive processes
// (H(t) = H0 + sum_j f_j(eps(t)) S_j, optionally + J(r1,r2) S_12 from live
// molecular positions), a set of jump operators with trainable rates, a pulse
// schedule, and named observables. simulate_ensemble runs a batch of members,
// each with its own noise realization, on a fixed time grid:
//
//   grid point k: pulses at t_k, then observable samples at t_k,
//   then process half-step -> H at t_k + dt/2 -> open-system step -> half-step.
//
// Scheme read-out pulses are folded into the observables (Heisenberg picture),
// so one run yields every read-out variant with a shared noise tape. With
// opts.record set, per-member state checkpoints and drive histories are kept
// for the reverse pass.

#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <thread>
#include <vector>

#include "diqcd/dynamics.hpp"
#include "diqcd/processes.hpp"

namespace diqcd {

// Coefficient f = scale * prod(eps over procs) + offset applied to op.
struct DrivenTerm {
    std::vector<int> procs;
    double scale = 1.0;
    double offset = 0.0;
    Mat op;
};

// Two-body coefficient computed from live molecular positions each step.
struct PositionCoupling {
    int md_process = -1;  // process index carrying the positions
    std::function<double(const MdState&)> coeff;
    Mat op;
    bool enabled() const { return md_process >= 0; }
};

// Observable = Hermitian base operator, optionally preceded by virtual
// read-out pulses (applied in listed order before the measurement).
struct Observable {
    std::string name;
    Mat base;
    std::vector<Pulse> read_pulses;
};

struct ModelSpec {
    HilbertSpace space;
    Mat h0;
    std::vector<DrivenTerm> driven;
    std::vector<Jump> jumps;
    std::vector<ProcessSpec> processes;
    PositionCoupling coupling;
    std::vector<Pulse> schedule;
    std::vector<Observable> observables;
    Vec psi0;
    bool track_trap_loss = false;

    int observable_index(const std::string& name) const {
        for (int i = 0; i < int(observables.size()); ++i)
            if (observables[size_t(i)].name == name) return i;
        throw ConfigError("unknown observable: " + name);
    }
};

struct SimOptions {
    int batch = 1;
    double dt = 0.0;
    double t_final = 0.0;
    std::vector<double> sample_times;
    std::uint64_t seed = 0;
    std::uint64_t run_id = 0;   // folded into member streams
    int threads = 1;
    bool record = false;
    int checkpoint_stride = 1;  // state kept every this many steps when recording
};

struct TrajectoryStats {
    std::vector<double> times;
    std::vector<std::string> names;
    std::vector<std::vector<double>> mean;    // [obs][time]
    std::vector<std::vector<double>> stddev;  // population, over alive members
    std::vector<double> lost_fraction;        // [time]
    int batch = 0;
    // member values, index (obs * T + t) * batch + b; NaN for lost members
    std::vector<double> member_vals;

    double member(int obs, int t, int b) const {
        return member_vals[size_t((obs * int(times.size()) + t) * batch + b)];
    }
};

// Time grid layout shared by forward and reverse passes.
struct RunPlan {
    int n_steps = 0;
    double dt = 0.0;
    std::vector<std::vector<int>> pulses_at;  // [grid] -> schedule indices
    std::vector<int> sample_at;               // grid index per sample time
};

struct MemberTape {
    std::vector<Mat> rho_ckpt;  // state at grid k (before pulses), k % stride == 0
    std::vector<ProcessRealization> procs;
    std::vector<double> j_coeff;  // per step, position coupling only
    int lost_step = std::numeric_limits<int>::max();
};

struct Tape {
    RunPlan plan;
    int checkpoint_stride = 1;
    std::vector<MemberTape> members;
};

// Pulled-back pulses and parameter values frozen for one run.
struct RunContext {
    std::vector<PulseOps> pulse_ops;
    std::vector<double> pulse_p;
    std::vector<ObsPair> obs_eff;
    std::vector<double> rates;
};

inline RunPlan make_run_plan(const ModelSpec& model, const SimOptions& opts) {
    if (opts.dt <= 0.0) throw ConfigError("simulate: dt must be > 0");
    if (opts.t_final < 0.0) throw ConfigError("simulate: horizon must be >= 0");
    if (opts.batch < 1) throw ConfigError("simulate: batch must be >= 1");
    RunPlan plan;
    plan.dt = opts.dt;
    const double n_real = opts.t_final / opts.dt;
    plan.n_steps = int(std::llround(n_real));
    if (std::abs(plan.n_steps * opts.dt - opts.t_final) >
        1e-6 * std::max(1.0, opts.t_final))
        throw ConfigError("simulate: horizon is not a multiple of dt");
    plan.pulses_at.assign(size_t(plan.n_steps) + 1, {});
    for (int i = 0; i < int(model.schedule.size()); ++i) {
        const double tp = model.schedule[size_t(i)].time;
        const int k = int(std::llround(tp / opts.dt));
        if (k < 0 || k > plan.n_steps ||
            std::abs(k * opts.dt - tp) > 0.5 * opts.dt)
            throw ConfigError("simulate: pulse at t=" + std::to_string(tp) +
                              " is farther than dt/2 from the grid");
        plan.pulses_at[size_t(k)].push_back(i);
    }
    for (double ts : opts.sample_times) {
        const int k = int(std::llround(ts / opts.dt));
        if (ts < 0.0 || ts > opts.t_final + 1e-9)
            throw ConfigError("simulate: sample time outside [0, horizon]");
        if (std::abs(k * opts.dt - ts) > 1e-6 * opts.dt)
            throw ConfigError("simulate: sample time off the step grid: " +
                              std::to_string(ts));
        plan.sample_at.push_back(k);
    }
    return plan;
}

inline RunContext make_run_context(const ModelSpec& model,
                                   const ParamStore& store) {
    RunContext ctx;
    for (const Pulse& p : model.schedule) {
        ctx.pulse_ops.push_back(PulseOps::build(model.space, p));
        ctx.pulse_p.push_back(p.err_param >= 0 ? store.value(p.err_param) : 0.0);
    }
    for (const Observable& ob : model.observables) {
        ObsPair pair{ob.base, Mat::Zero(ob.base.rows(), ob.base.cols())};
        // measurement after pulses P1, P2 == measurement of
        // Adj(P1)(Adj(P2)(O)) before them: pull back in reverse order
        for (auto it = ob.read_pulses.rbegin(); it != ob.read_pulses.rend();
             ++it) {
            const PulseOps ops = PulseOps::build(model.space, *it);
            const double p =
                it->err_param >= 0 ? store.value(it->err_param) : 0.0;
            pair = pull_back(pair, ops, p);
        }
        ctx.obs_eff.push_back(std::move(pair));
    }
    for (const Jump& j : model.jumps) ctx.rates.push_back(store.value(j.rate_param));
    return ctx;
}

// H for one step given current drive values and (optional) coupling value.
inline void assemble_h(const ModelSpec& model,
                       const std::vector<double>& eps, double j_coeff,
                       Mat& h) {
    h = model.h0;
    for (const DrivenTerm& term : model.driven) {
        double f = term.scale;
        for (int p : term.procs) f *= eps[size_t(p)];
        f += term.offset;
        h.noalias() += f * term.op;
    }
    if (model.coupling.enabled()) h.noalias() += j_coeff * model.coupling.op;
}

namespace detail {

inline void simulate_member(const ModelSpec& model, const ParamStore& store,
                            const RunContext& ctx, const RunPlan& plan,
                            const SimOptions& opts, int member,
                            MemberTape* tape, double* obs_out, int* lost_step_out) {
    const int d = model.space.dim();
    const int n_obs = int(model.observables.size());
    const int n_samples = int(plan.sample_at.size());
    const double h = 0.5 * opts.dt;

    std::vector<ProcessRealization> procs(model.processes.size());
    for (size_t j = 0; j < model.processes.size(); ++j) {
        procs[j].spec = &model.processes[j];
        procs[j].init(store, make_stream(opts.seed, opts.run_id,
                                         std::uint64_t(member), j));
    }
    std::vector<double> eps(model.processes.size(), 0.0);

    Mat rho = density_from_ket(model.psi0);
    Mat ham(d, d);
    StepWork work;
    work.resize(d);

    int lost_step = std::numeric_limits<int>::max();
    auto classify_lost = [&](int grid) {
        if (!model.track_trap_loss || grid >= lost_step) return;
        const int mdp = model.coupling.md_process;
        if (mdp < 0) return;
        const ProcessRealization& md = procs[size_t(mdp)];
        const TrapField& field = md.spec->md.field;
        bool lost = md.md_lost;
        for (int i = 0; i < int(md.md.r.size()) && !lost; ++i)
            if (nearest_trap(field, md.md.r[size_t(i)]) != i) lost = true;
        if (lost) lost_step = grid;
    };
    classify_lost(0);

    int next_sample = 0;
    for (int k = 0; k <= plan.n_steps; ++k) {
        if (tape && k % opts.checkpoint_stride == 0 && k < plan.n_steps)
            tape->rho_ckpt.push_back(rho);
        for (int pi : plan.pulses_at[size_t(k)])
            apply_pulse(rho, ctx.pulse_ops[size_t(pi)],
                        ctx.pulse_p[size_t(pi)], work);
        while (next_sample < n_samples && plan.sample_at[size_t(next_sample)] == k) {
            for (int o = 0; o < n_obs; ++o) {
                const double v =
                    frobenius_inner(ctx.obs_eff[size_t(o)].o.adjoint(), rho).real();
                if (!std::isfinite(v))
                    throw NumericError("simulate: non-finite observable value");
                obs_out[o * n_samples + next_sample] = v;
            }
            ++next_sample;
        }
        if (k == plan.n_steps) break;

        const double t_mid = k * opts.dt + h;
        for (size_t j = 0; j < procs.size(); ++j) {
            procs[j].half_step(store, t_mid, h);
            eps[j] = procs[j].eps;
        }
        double jc = 0.0;
        if (model.coupling.enabled())
            jc = model.coupling.coeff(procs[size_t(model.coupling.md_process)].md);
        if (tape && model.coupling.enabled()) tape->j_coeff.push_back(jc);
        assemble_h(model, eps, jc, ham);
        lindblad_step(rho, ham, model.jumps, ctx.rates, opts.dt, work);
        for (auto& pr : procs) pr.half_step(store, (k + 1) * opts.dt, h);
        classify_lost(k + 1);
    }

    *lost_step_out = lost_step;
    if (tape) {
        tape->procs = std::move(procs);
        tape->lost_step = lost_step;
    }
}

} // namespace detail

// Runs the batch; every member is independent given its derived stream, so
// the result is bit-identical for a fixed (model, opts, seed) regardless of
// thread count: per-member slots are reduced in member order afterwards.
inline TrajectoryStats simulate_ensemble(const ModelSpec& model,
                                         const ParamStore& store,
                                         const SimOptions& opts,
                                         Tape* tape_out = nullptr) {
    if (model.psi0.size() != model.space.dim())
        throw ConfigError("simulate: initial state does not match space");
    const RunPlan plan = make_run_plan(model, opts);
    const RunContext ctx = make_run_context(model, store);
    const int B = opts.batch;
    const int n_obs = int(model.observables.size());
    const int n_samples = int(plan.sample_at.size());

    std::vector<double> vals(size_t(n_obs) * size_t(n_samples) * size_t(B), 0.0);
    std::vector<int> lost(size_t(B), 0);
    if (tape_out) {
        tape_out->plan = plan;
        tape_out->checkpoint_stride = opts.checkpoint_stride;
        tape_out->members.assign(size_t(B), {});
    }

    auto run_range = [&](int b0, int b1) {
        for (int b = b0; b < b1; ++b) {
            std::vector<double> slice(size_t(n_obs) * size_t(n_samples), 0.0);
            MemberTape* mt = tape_out ? &tape_out->members[size_t(b)] : nullptr;
            detail::simulate_member(model, store, ctx, plan, opts, b, mt,
                                    slice.data(), &lost[size_t(b)]);
            for (int o = 0; o < n_obs; ++o)
                for (int t = 0; t < n_samples; ++t)
                    vals[size_t((o * n_samples + t) * B + b)] =
                        slice[size_t(o * n_samples + t)];
        }
    };
    const int n_threads = std::max(1, std::min(opts.threads, B));
    if (n_threads == 1) {
        run_range(0, B);
    } else {
        std::vector<std::thread> pool;
        std::vector<std::exception_ptr> errs{size_t(n_threads)};
        const int chunk = (B + n_threads - 1) / n_threads;
        for (int t = 0; t < n_threads; ++t) {
            const int b0 = t * chunk, b1 = std::min(B, b0 + chunk);
            if (b0 >= b1) continue;
            pool.emplace_back([&, t, b0, b1] {
                try {
                    run_range(b0, b1);
                } catch (...) {
                    errs[size_t(t)] = std::current_exception();
                }
            });
        }
        for (auto& th : pool) th.join();
        for (auto& e : errs)
            if (e) std::rethrow_exception(e);
    }

    TrajectoryStats stats;
    stats.times = opts.sample_times;
    stats.batch = B;
    stats.lost_fraction.assign(size_t(n_samples), 0.0);
    stats.member_vals = std::move(vals);
    for (const auto& ob : model.observables) stats.names.push_back(ob.name);
    stats.mean.assign(size_t(n_obs), std::vector<double>(size_t(n_samples), 0.0));
    stats.stddev.assign(size_t(n_obs), std::vector<double>(size_t(n_samples), 0.0));
    for (int t = 0; t < n_samples; ++t) {
        const int grid = plan.sample_at[size_t(t)];
        int alive = 0;
        for (int b = 0; b < B; ++b)
            if (grid < lost[size_t(b)]) ++alive;
        stats.lost_fraction[size_t(t)] = double(B - alive) / double(B);
        for (int o = 0; o < n_obs; ++o) {
            double m = 0.0;
            for (int b = 0; b < B; ++b)
                if (grid < lost[size_t(b)])
                    m += stats.member_vals[size_t((o * n_samples + t) * B + b)];
            m = alive > 0 ? m / alive : 0.0;
            double var = 0.0;
            for (int b = 0; b < B; ++b)
                if (grid < lost[size_t(b)]) {
                    const double dvi =
                        stats.member_vals[size_t((o * n_samples + t) * B + b)] - m;
                    var += dvi * dvi;
                }
            stats.mean[size_t(o)][size_t(t)] = m;
            stats.stddev[size_t(o)][size_t(t)] =
                alive > 0 ? std::sqrt(var / alive) : 0.0;
        }
        // mask lost members in the retained values
        for (int o = 0; o < n_obs; ++o)
            for (int b = 0; b < B; ++b)
                if (grid >= lost[size_t(b)])
                    stats.member_vals[size_t((o * n_samples + t) * B + b)] =
                        std::numeric_limits<double>::quiet_NaN();
    }
    return stats;
}

} // namespace diqcd
