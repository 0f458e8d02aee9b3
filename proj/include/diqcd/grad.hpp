#pragma once

// Reverse-mode differentiation through recorded ensemble runs, plus the loss
// layer and the optimizer.
//
// The forward pass (simulate_ensemble with opts.record) keeps, per member,
// state checkpoints every checkpoint_stride steps and the full scalar drive
// history. The backward pass walks the run segment by segment: it replays the
// forward states inside one segment from its checkpoint (bit-identical, since
// every random draw was recorded), then runs the step/pulse reverse rules,
// scattering the Hamiltonian adjoint onto the drive values and collecting
// jump-rate and pulse-error contributions. Drive-value adjoints finally fold
// into parameter gradients through each process's own reverse rule.
//
// Losses are weighted squared residuals on per-time-point series: an
// observable's ensemble mean, its ensemble spread, or |mean_a - mean_b|
// (read-out contrast). Members lost to trap hopping are masked out of both
// the statistics and the gradient.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "diqcd/models.hpp"

namespace diqcd {

// Common depolarizing-error parameter of an observable's read-out pulses.
inline int observable_err_param(const Observable& ob) {
    int p = -1;
    for (const Pulse& rp : ob.read_pulses)
        if (rp.err_param >= 0) {
            if (p >= 0 && p != rp.err_param)
                throw ConfigError(
                    "read-out pulses of one observable must share an error "
                    "parameter");
            p = rp.err_param;
        }
    return p;
}

namespace detail {

// Forward states inside one checkpoint segment: steps [c0, c1), grids
// c0..c1. pre[i] is the state at grid c0+i before that grid's pulses,
// post[i] after them. The last segment also covers the final grid's pulses.
struct ReplayCache {
    int c0 = 0, c1 = 0;
    bool tail = false;
    std::vector<Mat> pre, post;
    std::vector<std::vector<Mat>> pulse_pre;
};

inline void replay_segment(const ModelSpec& model, const RunContext& ctx,
                           const RunPlan& plan, const MemberTape& mt,
                           int stride, int c0, bool tail, ReplayCache& cache,
                           std::vector<double>& eps, Mat& ham, StepWork& work) {
    const int c1 = std::min(c0 + stride, plan.n_steps);
    const int span = c1 - c0;
    cache.c0 = c0;
    cache.c1 = c1;
    cache.tail = tail;
    cache.pre.assign(size_t(span) + 1, Mat());
    cache.post.assign(size_t(span) + 1, Mat());
    cache.pulse_pre.assign(size_t(span) + 1, {});

    Mat rho = mt.rho_ckpt[size_t(c0 / stride)];
    for (int j = c0; j <= c1; ++j) {
        const int i = j - c0;
        cache.pre[size_t(i)] = rho;
        if (j == c1 && !tail) break;
        for (int pi : plan.pulses_at[size_t(j)]) {
            cache.pulse_pre[size_t(i)].push_back(rho);
            apply_pulse(rho, ctx.pulse_ops[size_t(pi)], ctx.pulse_p[size_t(pi)],
                        work);
        }
        cache.post[size_t(i)] = rho;
        if (j == c1) break;
        for (size_t p = 0; p < model.processes.size(); ++p)
            eps[p] = mt.procs[p].eps_hist[size_t(2 * j + 1)];
        const double jc =
            model.coupling.enabled() ? mt.j_coeff[size_t(j)] : 0.0;
        assemble_h(model, eps, jc, ham);
        lindblad_step(rho, ham, model.jumps, ctx.rates, plan.dt, work);
    }
}

} // namespace detail

// Accumulates dLoss/d(internal params) for one recorded run into grad.
// obars[(o * T + t) * B + b] = dLoss/d(member value); entries for lost
// members must already be zero.
inline void backward_run(const ModelSpec& model, const ParamStore& store,
                         const Tape& tape, const std::vector<double>& obars,
                         std::vector<double>& grad) {
    const RunPlan& plan = tape.plan;
    const int stride = tape.checkpoint_stride;
    const int B = int(tape.members.size());
    const int T = int(plan.sample_at.size());
    const int n_obs = int(model.observables.size());
    const int n_hist = 2 * plan.n_steps + 1;
    const int d = model.space.dim();

    const RunContext ctx = make_run_context(model, store);
    std::vector<int> obs_err(size_t(n_obs), -1);
    for (int o = 0; o < n_obs; ++o)
        obs_err[size_t(o)] = observable_err_param(model.observables[size_t(o)]);

    // samples grouped by grid index
    std::vector<std::vector<int>> samples_at(size_t(plan.n_steps) + 1);
    for (int t = 0; t < T; ++t)
        samples_at[size_t(plan.sample_at[size_t(t)])].push_back(t);

    std::vector<double> rate_bars(model.jumps.size(), 0.0);
    std::vector<double> pulse_pbar(model.schedule.size(), 0.0);
    std::vector<std::vector<double>> eps_bar(model.processes.size());
    std::vector<double> eps(model.processes.size(), 0.0);
    Mat ham(d, d), h_bar(d, d), rho_bar(d, d), rho_tmp(d, d);
    StepWork work;
    work.resize(d);
    detail::ReplayCache cache;

    auto obar_at = [&](int o, int t, int b) {
        return obars[size_t((o * T + t) * B + b)];
    };

    for (int b = 0; b < B; ++b) {
        bool any = false;
        for (int o = 0; o < n_obs && !any; ++o)
            for (int t = 0; t < T && !any; ++t)
                if (obar_at(o, t, b) != 0.0) any = true;
        if (!any) continue;

        const MemberTape& mt = tape.members[size_t(b)];
        for (size_t p = 0; p < eps_bar.size(); ++p)
            eps_bar[p].assign(size_t(n_hist), 0.0);
        rho_bar.setZero(d, d);

        auto inject_samples = [&](int grid, const Mat& rho_sample) {
            for (int t : samples_at[size_t(grid)])
                for (int o = 0; o < n_obs; ++o) {
                    const double ob = obar_at(o, t, b);
                    if (ob == 0.0) continue;
                    rho_bar.noalias() +=
                        ob * ctx.obs_eff[size_t(o)].o.adjoint();
                    if (obs_err[size_t(o)] >= 0) {
                        const double dvdp =
                            frobenius_inner(
                                ctx.obs_eff[size_t(o)].dodp.adjoint(),
                                rho_sample)
                                .real();
                        grad[size_t(obs_err[size_t(o)])] +=
                            ob * dvdp * store.slope(obs_err[size_t(o)]);
                    }
                }
        };
        auto reverse_pulses = [&](int grid, int offset) {
            const auto& at = plan.pulses_at[size_t(grid)];
            for (int i = int(at.size()) - 1; i >= 0; --i) {
                const int pi = at[size_t(i)];
                apply_pulse_vjp(cache.pulse_pre[size_t(offset)][size_t(i)],
                                ctx.pulse_ops[size_t(pi)],
                                ctx.pulse_p[size_t(pi)], rho_bar, rho_tmp,
                                pulse_pbar[size_t(pi)], work);
                rho_bar.swap(rho_tmp);
            }
        };

        const int n_segments =
            plan.n_steps == 0 ? 1 : (plan.n_steps + stride - 1) / stride;
        for (int seg = n_segments - 1; seg >= 0; --seg) {
            const int c0 = seg * stride;
            const bool tail = seg == n_segments - 1;
            detail::replay_segment(model, ctx, plan, mt, stride, c0, tail,
                                   cache, eps, ham, work);
            if (tail) {
                const int off = cache.c1 - c0;
                inject_samples(cache.c1, cache.post[size_t(off)]);
                reverse_pulses(cache.c1, off);
            }
            for (int k = cache.c1 - 1; k >= c0; --k) {
                const int off = k - c0;
                for (size_t p = 0; p < model.processes.size(); ++p)
                    eps[p] = mt.procs[p].eps_hist[size_t(2 * k + 1)];
                const double jc =
                    model.coupling.enabled() ? mt.j_coeff[size_t(k)] : 0.0;
                assemble_h(model, eps, jc, ham);
                lindblad_step_vjp(cache.post[size_t(off)], ham, model.jumps,
                                  ctx.rates, plan.dt, rho_bar, rho_tmp, h_bar,
                                  rate_bars, work);
                rho_bar.swap(rho_tmp);
                if (!rho_bar.allFinite())
                    throw NumericError(
                        "backward pass: non-finite adjoint at step " +
                        std::to_string(k));
                for (const DrivenTerm& term : model.driven) {
                    const double fbar =
                        frobenius_inner(h_bar, term.op).real();
                    if (fbar == 0.0) continue;
                    for (size_t pi = 0; pi < term.procs.size(); ++pi) {
                        double others = term.scale;
                        for (size_t q = 0; q < term.procs.size(); ++q)
                            if (q != pi)
                                others *= eps[size_t(term.procs[q])];
                        eps_bar[size_t(term.procs[pi])][size_t(2 * k + 1)] +=
                            fbar * others;
                    }
                }
                inject_samples(k, cache.post[size_t(off)]);
                reverse_pulses(k, off);
            }
        }

        const double h = 0.5 * plan.dt;
        for (size_t p = 0; p < model.processes.size(); ++p)
            accumulate_process_grads(store, mt.procs[p], eps_bar[p], h, grad);
    }

    for (size_t j = 0; j < model.jumps.size(); ++j) {
        const int rp = model.jumps[j].rate_param;
        grad[size_t(rp)] += rate_bars[j] * store.slope(rp);
    }
    for (size_t i = 0; i < model.schedule.size(); ++i) {
        const int ep = model.schedule[i].err_param;
        if (ep >= 0) grad[size_t(ep)] += pulse_pbar[i] * store.slope(ep);
    }
}

// ---------------------------------------------------------------------------
// Loss layer.

struct Run {
    std::string label;
    ModelSpec model;
    SimOptions opts;
};

enum class SeriesKind { mean, stddev, abs_diff_mean };

// One weighted least-squares block: sum_i w_i (series(t_i) - y_i)^2, where
// series is taken from run `run` at sample-time indices `times`.
struct LossTerm {
    int run = 0;
    SeriesKind kind = SeriesKind::mean;
    int obs_a = 0;
    int obs_b = 0;  // abs_diff_mean only
    std::vector<int> times;
    std::vector<double> target;
    std::vector<double> weight;
};

namespace detail {

// Adds the term's loss; when obars != nullptr also adds dLoss/d(member value).
inline double term_loss(const LossTerm& lt, const TrajectoryStats& st,
                        std::vector<double>* obars) {
    if (lt.times.size() != lt.target.size() ||
        lt.times.size() != lt.weight.size())
        throw ConfigError("loss term: times/target/weight size mismatch");
    const int B = st.batch;
    const int T = int(st.times.size());
    double total = 0.0;
    for (size_t i = 0; i < lt.times.size(); ++i) {
        const int t = lt.times[i];
        if (t < 0 || t >= T) throw ConfigError("loss term: time index range");
        const double w = lt.weight[i], y = lt.target[i];
        int alive = 0;
        for (int b = 0; b < B; ++b)
            if (std::isfinite(st.member(lt.obs_a, t, b))) ++alive;
        if (alive == 0)
            throw NumericError("loss term: every member lost at a fit point");
        double value = 0.0, sign = 1.0;
        const double ma = st.mean[size_t(lt.obs_a)][size_t(t)];
        const double sa = st.stddev[size_t(lt.obs_a)][size_t(t)];
        switch (lt.kind) {
            case SeriesKind::mean: value = ma; break;
            case SeriesKind::stddev: value = sa; break;
            case SeriesKind::abs_diff_mean: {
                const double mb = st.mean[size_t(lt.obs_b)][size_t(t)];
                sign = ma >= mb ? 1.0 : -1.0;
                value = sign * (ma - mb);
                break;
            }
        }
        const double r = value - y;
        total += w * r * r;
        if (!obars) continue;
        const double dv = 2.0 * w * r;
        auto add = [&](int o, int b, double g) {
            (*obars)[size_t((o * T + t) * B + b)] += g;
        };
        switch (lt.kind) {
            case SeriesKind::mean:
                for (int b = 0; b < B; ++b)
                    if (std::isfinite(st.member(lt.obs_a, t, b)))
                        add(lt.obs_a, b, dv / alive);
                break;
            case SeriesKind::stddev:
                if (sa > 1e-12)
                    for (int b = 0; b < B; ++b) {
                        const double ov = st.member(lt.obs_a, t, b);
                        if (std::isfinite(ov))
                            add(lt.obs_a, b, dv * (ov - ma) / (alive * sa));
                    }
                break;
            case SeriesKind::abs_diff_mean:
                for (int b = 0; b < B; ++b) {
                    if (std::isfinite(st.member(lt.obs_a, t, b)))
                        add(lt.obs_a, b, dv * sign / alive);
                    if (std::isfinite(st.member(lt.obs_b, t, b)))
                        add(lt.obs_b, b, -dv * sign / alive);
                }
                break;
        }
    }
    return total;
}

} // namespace detail

// Evaluates the total loss over all runs; with grad != nullptr also
// accumulates dLoss/d(internal params) via the reverse pass. Runs are
// re-seeded with `seed`; run_id is the position in `runs`, so a run list is
// reproducible independent of labels.
inline double eval_runs(std::vector<Run>& runs,
                        const std::vector<LossTerm>& terms,
                        const ParamStore& store, std::uint64_t seed,
                        std::vector<double>* grad,
                        std::vector<TrajectoryStats>* stats_out = nullptr) {
    if (grad) grad->assign(size_t(store.size()), 0.0);
    if (stats_out) stats_out->clear();
    double total = 0.0;
    for (int r = 0; r < int(runs.size()); ++r) {
        Run& run = runs[size_t(r)];
        run.opts.seed = seed;
        run.opts.run_id = std::uint64_t(r);
        run.opts.record = grad != nullptr;
        bool used = stats_out != nullptr;
        for (const LossTerm& lt : terms)
            if (lt.run == r) used = true;
        if (!used) continue;

        Tape tape;
        const TrajectoryStats st = simulate_ensemble(
            run.model, store, run.opts, grad ? &tape : nullptr);
        const int n_obs = int(run.model.observables.size());
        std::vector<double> obars;
        if (grad)
            obars.assign(size_t(n_obs) * st.times.size() * size_t(st.batch),
                         0.0);
        for (const LossTerm& lt : terms)
            if (lt.run == r)
                total += detail::term_loss(lt, st, grad ? &obars : nullptr);
        if (grad) backward_run(run.model, store, tape, obars, *grad);
        if (stats_out) stats_out->push_back(st);
    }
    return total;
}

// ---------------------------------------------------------------------------
// Optimizer: Adam on the internal (unconstrained) coordinates of every
// flexible parameter; lr is selected per parameter by its lr_group.

struct TrainOptions {
    int epochs = 200;
    std::vector<double> lr = {1e-3};
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t seed = 1;
    bool freeze_noise = false;  // reuse epoch-0 noise every epoch
    int log_every = 0;          // stderr progress; 0 = quiet
};

struct TrainResult {
    std::vector<double> loss_history;  // loss at the start of each epoch
};

// Optimizer moments; persisting them alongside the parameters makes a
// paused-and-resumed training bitwise identical to an uninterrupted one.
struct AdamState {
    std::vector<double> m, v;
    int t = 0;  // completed updates
};

inline void adam_step(ParamStore& store, const std::vector<double>& grad,
                      const TrainOptions& opt, AdamState& st) {
    ++st.t;
    const double b1c = 1.0 - std::pow(opt.beta1, st.t);
    const double b2c = 1.0 - std::pow(opt.beta2, st.t);
    for (int i = 0; i < store.size(); ++i) {
        const Param& p = store.at(i);
        if (!p.flexible) continue;
        const double g = grad[size_t(i)];
        if (!std::isfinite(g))
            throw NumericError("train: non-finite gradient for " + p.name);
        if (p.lr_group < 0 || p.lr_group >= int(opt.lr.size()))
            throw ConfigError("train: no learning rate for group of " + p.name);
        st.m[size_t(i)] = opt.beta1 * st.m[size_t(i)] + (1.0 - opt.beta1) * g;
        st.v[size_t(i)] = opt.beta2 * st.v[size_t(i)] + (1.0 - opt.beta2) * g * g;
        const double step = opt.lr[size_t(p.lr_group)] * (st.m[size_t(i)] / b1c) /
                            (std::sqrt(st.v[size_t(i)] / b2c) + opt.eps);
        store.set_internal(i, store.internal(i) - step);
    }
}

// Each epoch draws a fresh noise realization (seed + epoch), evaluates loss
// and gradient over every run, and applies one Adam update. The fitted model
// is whatever the last epoch leaves in the store. Passing a state continues
// a previous session exactly (the caller advances opt.seed by the epochs
// already done).
inline TrainResult train(std::vector<Run>& runs,
                         const std::vector<LossTerm>& terms, ParamStore& store,
                         const TrainOptions& opt, AdamState* state = nullptr) {
    AdamState local;
    AdamState& st = state ? *state : local;
    if (st.m.empty()) {
        st.m.assign(size_t(store.size()), 0.0);
        st.v.assign(size_t(store.size()), 0.0);
    }
    if (int(st.m.size()) != store.size() || int(st.v.size()) != store.size())
        throw ConfigError("train: optimizer state size mismatch");
    std::vector<double> grad;
    TrainResult res;
    for (int e = 0; e < opt.epochs; ++e) {
        const std::uint64_t seed_e =
            opt.freeze_noise ? opt.seed : opt.seed + std::uint64_t(e);
        const double loss = eval_runs(runs, terms, store, seed_e, &grad);
        if (!std::isfinite(loss))
            throw NumericError("train: non-finite loss at epoch " +
                               std::to_string(e));
        adam_step(store, grad, opt, st);
        res.loss_history.push_back(loss);
        if (opt.log_every > 0 && (e % opt.log_every == 0 || e == opt.epochs - 1))
            std::fprintf(stderr, "epoch %4d  loss %.6e\n", e, loss);
    }
    return res;
}

} // namespace diqcd
