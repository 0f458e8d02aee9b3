#pragma once

// Quantum stepping kernels.
//
// Open-system step (first order, structure preserving for any dt):
//   M0  = I - (i H + 1/2 sum_k g_k L_k^+ L_k) dt
//   rho'= M0 rho M0^+ + dt sum_k g_k L_k rho L_k^+
//   rho <- rho' / tr(rho')
// Both terms are congruences, so rho stays positive semidefinite no matter
// how large dt is, and the division pins the trace at one. Expanding M0 rho
// M0^+ recovers the usual generator to first order in dt.
//
// Each kernel is paired with its reverse-mode rule. Adjoints of complex
// matrices use the convention  Abar_ij = dL/dRe(A_ij) + i dL/dIm(A_ij)
// for a real scalar loss L, under which a product C = A B propagates as
// Abar += Cbar B^+, Bbar += A^+ Cbar, and a real parameter t with C(t)
// receives dL/dt = Re<Cbar, dC/dt>_F.

#include <cmath>
#include <complex>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "diqcd/errors.hpp"
#include "diqcd/hilbert.hpp"

namespace diqcd {

inline cd frobenius_inner(const Mat& a, const Mat& b) {
    return (a.conjugate().cwiseProduct(b)).sum();
}

struct Jump {
    Mat L;
    int rate_param = -1;
    Mat LdL;        // L^+ L, fixed
    bool diagonal = false;
    Vec ldiag;      // diagonal entries when `diagonal`
};

inline Jump make_jump(const Mat& L, int rate_param) {
    Jump j;
    j.L = L;
    j.rate_param = rate_param;
    j.LdL = L.adjoint() * L;
    j.diagonal = true;
    for (Eigen::Index r = 0; r < L.rows() && j.diagonal; ++r)
        for (Eigen::Index c = 0; c < L.cols(); ++c)
            if (r != c && std::abs(L(r, c)) > 0.0) {
                j.diagonal = false;
                break;
            }
    if (j.diagonal) j.ldiag = L.diagonal();
    return j;
}

struct StepWork {
    Mat m0, x, rho_new, a, b;
    void resize(Eigen::Index d) {
        m0.resize(d, d);
        x.resize(d, d);
        rho_new.resize(d, d);
        a.resize(d, d);
        b.resize(d, d);
    }
};

// Jump sandwich L rho L^+ added into `out` with weight w; diagonal jumps run
// elementwise, which keeps lattice dephasing at O(d^2) instead of O(d^3).
inline void add_jump_sandwich(const Jump& j, double w, const Mat& rho,
                              Mat& out, Mat& scratch) {
    if (j.diagonal) {
        const Eigen::Index d = rho.rows();
        for (Eigen::Index c = 0; c < d; ++c) {
            const cd dc = std::conj(j.ldiag(c));
            for (Eigen::Index r = 0; r < d; ++r)
                out(r, c) += w * j.ldiag(r) * dc * rho(r, c);
        }
    } else {
        scratch.noalias() = j.L * rho;
        out.noalias() += w * (scratch * j.L.adjoint());
    }
}

// One open-system step in place; returns the pre-normalization trace.
inline double lindblad_step(Mat& rho, const Mat& h,
                            const std::vector<Jump>& jumps,
                            const std::vector<double>& rates, double dt,
                            StepWork& w) {
    if (dt <= 0.0) throw ConfigError("lindblad_step: dt must be > 0");
    const Eigen::Index d = rho.rows();
    if (h.rows() != d || h.cols() != d)
        throw ConfigError("lindblad_step: H/state dimension mismatch");
    w.m0 = cd(0.0, -dt) * h;
    for (size_t k = 0; k < jumps.size(); ++k)
        w.m0 -= (0.5 * dt * rates[k]) * jumps[k].LdL;
    w.m0.diagonal().array() += 1.0;
    w.x.noalias() = w.m0 * rho;
    w.rho_new.noalias() = w.x * w.m0.adjoint();
    for (size_t k = 0; k < jumps.size(); ++k)
        add_jump_sandwich(jumps[k], dt * rates[k], rho, w.rho_new, w.a);
    const double s = w.rho_new.trace().real();
    if (!std::isfinite(s) || s <= 0.0)
        throw NumericError("lindblad_step: non-finite or non-positive trace");
    rho = w.rho_new / s;
    return s;
}

// Reverse rule for one step. Inputs are the pre-step state and the adjoint of
// the normalized output; outputs are the adjoint of the input state, the
// Hamiltonian adjoint, and dL/d(rate_k) accumulated into rate_bars.
inline void lindblad_step_vjp(const Mat& rho_in, const Mat& h,
                              const std::vector<Jump>& jumps,
                              const std::vector<double>& rates, double dt,
                              const Mat& rho_out_bar, Mat& rho_in_bar,
                              Mat& h_bar, std::vector<double>& rate_bars,
                              StepWork& w) {
    const Eigen::Index d = rho_in.rows();
    // replay the forward internals
    w.m0 = cd(0.0, -dt) * h;
    for (size_t k = 0; k < jumps.size(); ++k)
        w.m0 -= (0.5 * dt * rates[k]) * jumps[k].LdL;
    w.m0.diagonal().array() += 1.0;
    w.x.noalias() = w.m0 * rho_in;              // M0 rho
    w.rho_new.noalias() = w.x * w.m0.adjoint(); // before jump terms
    for (size_t k = 0; k < jumps.size(); ++k)
        add_jump_sandwich(jumps[k], dt * rates[k], rho_in, w.rho_new, w.a);
    const double s = w.rho_new.trace().real();

    // normalization: rho_out = rho' / s, s = Re tr rho'
    const double s_bar =
        -frobenius_inner(rho_out_bar, w.rho_new).real() / (s * s);
    w.a = rho_out_bar / s;                      // rho'_bar
    w.a.diagonal().array() += s_bar;

    // jump sandwiches: rho_bar += dt g L^+ rho'_bar L; g_bar via inner product
    rho_in_bar.setZero(d, d);
    for (size_t k = 0; k < jumps.size(); ++k) {
        const Jump& j = jumps[k];
        if (j.diagonal) {
            cd acc(0.0, 0.0);
            for (Eigen::Index c = 0; c < d; ++c) {
                const cd dc = std::conj(j.ldiag(c));
                for (Eigen::Index r = 0; r < d; ++r) {
                    const cd sand = j.ldiag(r) * dc * rho_in(r, c);
                    rho_in_bar(r, c) +=
                        dt * rates[k] * std::conj(j.ldiag(r) * dc) * w.a(r, c);
                    acc += std::conj(w.a(r, c)) * sand;
                }
            }
            rate_bars[k] += dt * acc.real();
        } else {
            w.b.noalias() = j.L.adjoint() * w.a;
            rho_in_bar.noalias() += (dt * rates[k]) * (w.b * j.L);
            w.b.noalias() = j.L * rho_in;
            const cd acc = frobenius_inner(w.a, w.b * j.L.adjoint());
            rate_bars[k] += dt * acc.real();
        }
    }

    // congruence M0 rho M0^+:
    //   rho_bar += M0^+ rho'_bar M0
    //   M0_bar   = rho'_bar M0 rho^+ + rho'_bar^+ M0 rho
    w.b.noalias() = w.m0.adjoint() * w.a;
    rho_in_bar.noalias() += w.b * w.m0;
    w.x.noalias() = w.m0 * rho_in.adjoint();
    w.b.noalias() = w.a * w.x;                  // rho'_bar M0 rho^+
    w.x.noalias() = w.m0 * rho_in;
    w.b.noalias() += w.a.adjoint() * w.x;       // + rho'_bar^+ M0 rho
    // M0 = I - (iH + 1/2 sum g LdL) dt
    h_bar = cd(0.0, dt) * w.b;
    for (size_t k = 0; k < jumps.size(); ++k)
        rate_bars[k] +=
            (-0.5 * dt) * frobenius_inner(w.b, jumps[k].LdL).real();
}

// ---------------------------------------------------------------------------
// Closed-system propagation for the data generators: fixed-order Taylor
// expansion of exp(-i H dt) applied to a block of state columns, followed by
// per-column norm restoration. Order 6 keeps the per-step norm defect near
// machine precision for |H| dt < 0.1.

template <class HMat>
void unitary_step(const HMat& h, double dt, int order, Mat& psi, Mat& term) {
    term = psi;
    for (int k = 1; k <= order; ++k) {
        term = (h * term).eval();
        term *= cd(0.0, -dt / k);
        psi += term;
    }
    for (Eigen::Index c = 0; c < psi.cols(); ++c) {
        const double n = psi.col(c).norm();
        if (!std::isfinite(n) || n <= 0.0)
            throw NumericError("unitary_step: state norm lost");
        psi.col(c) /= n;
    }
}

// ---------------------------------------------------------------------------
// Instantaneous control pulses. A pulse is a rotation on one spin slot
// followed by a depolarizing error of probability p:
//   rho -> (1-p) U rho U^+ + p/3 sum_i s_i U rho U^+ s_i

inline Mat rotation2(const Eigen::Vector3d& axis, double angle) {
    const Eigen::Vector3d n = axis.normalized();
    const cd c = std::cos(0.5 * angle);
    const cd is = cd(0.0, -std::sin(0.5 * angle));
    return c * identity(2) +
           is * (n.x() * pauli_x() + n.y() * pauli_y() + n.z() * pauli_z());
}

struct Pulse {
    double time = 0.0;
    int slot = 0;
    Eigen::Vector3d axis = Eigen::Vector3d::UnitX();
    double angle = 0.0;
    int err_param = -1;  // depolarizing probability; -1 = ideal
};

// Embedded matrices for one pulse, built once per run.
struct PulseOps {
    Mat u, sx, sy, sz;
    int err_param = -1;

    static PulseOps build(const HilbertSpace& space, const Pulse& p) {
        PulseOps ops;
        ops.u = embed(space, p.slot, rotation2(p.axis, p.angle));
        ops.sx = embed(space, p.slot, pauli_x());
        ops.sy = embed(space, p.slot, pauli_y());
        ops.sz = embed(space, p.slot, pauli_z());
        ops.err_param = p.err_param;
        return ops;
    }
};

inline void apply_pulse(Mat& rho, const PulseOps& ops, double p, StepWork& w) {
    w.x.noalias() = ops.u * rho;
    w.rho_new.noalias() = w.x * ops.u.adjoint();
    if (p != 0.0) {
        w.a.noalias() = ops.sx * w.rho_new;
        w.b.noalias() = w.a * ops.sx;
        w.a.noalias() = ops.sy * w.rho_new;
        w.b.noalias() += w.a * ops.sy;
        w.a.noalias() = ops.sz * w.rho_new;
        w.b.noalias() += w.a * ops.sz;
        rho = (1.0 - p) * w.rho_new + (p / 3.0) * w.b;
    } else {
        rho = w.rho_new;
    }
}

// Reverse rule for apply_pulse; p_bar accumulates dL/dp.
inline void apply_pulse_vjp(const Mat& rho_in, const PulseOps& ops, double p,
                            const Mat& rho_out_bar, Mat& rho_in_bar,
                            double& p_bar, StepWork& w) {
    w.x.noalias() = ops.u * rho_in;
    w.rho_new.noalias() = w.x * ops.u.adjoint();  // rho_u
    // rho_u_bar = (1-p) Cbar + p/3 sum s Cbar s
    w.b.noalias() = ops.sx * rho_out_bar * ops.sx;
    w.b.noalias() += ops.sy * rho_out_bar * ops.sy;
    w.b.noalias() += ops.sz * rho_out_bar * ops.sz;
    if (ops.err_param >= 0) {
        // d rho_out / dp = -rho_u + 1/3 sum s rho_u s
        w.a.noalias() = ops.sx * w.rho_new * ops.sx;
        w.a.noalias() += ops.sy * w.rho_new * ops.sy;
        w.a.noalias() += ops.sz * w.rho_new * ops.sz;
        w.a = (1.0 / 3.0) * w.a - w.rho_new;
        p_bar += frobenius_inner(rho_out_bar, w.a).real();
    }
    w.a = (1.0 - p) * rho_out_bar + (p / 3.0) * w.b;
    w.x.noalias() = ops.u.adjoint() * w.a;
    rho_in_bar.noalias() = w.x * ops.u;
}

// Heisenberg-picture pull-back of an observable through a pulse channel,
// tracking d/dp alongside. Measuring O after the pulse equals measuring
//   U^+ [(1-p) O + p/3 sum_i s_i O s_i] U
// before it, so a scheme's final read-out pulse never has to be stepped.
struct ObsPair {
    Mat o, dodp;
};

inline ObsPair pull_back(const ObsPair& in, const PulseOps& ops, double p) {
    ObsPair out;
    if (ops.err_param < 0 && p == 0.0) {
        out.o = ops.u.adjoint() * in.o * ops.u;
        out.dodp = ops.u.adjoint() * in.dodp * ops.u;
        return out;
    }
    const Mat mix = (ops.sx * in.o * ops.sx + ops.sy * in.o * ops.sy +
                     ops.sz * in.o * ops.sz);
    out.o = ops.u.adjoint() * ((1.0 - p) * in.o + (p / 3.0) * mix) * ops.u;
    const Mat dmix = (ops.sx * in.dodp * ops.sx + ops.sy * in.dodp * ops.sy +
                      ops.sz * in.dodp * ops.sz);
    Mat d = (1.0 - p) * in.dodp + (p / 3.0) * dmix;
    if (ops.err_param >= 0) d += (1.0 / 3.0) * mix - in.o;
    out.dodp = ops.u.adjoint() * d * ops.u;
    return out;
}

} // namespace diqcd
