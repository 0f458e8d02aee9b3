#pragma once

// Classical drive processes for time-dependent Hamiltonian coefficients.
//
// Every process draws its randomness from a per-member stream and records the
// draws, so a trajectory is deterministic given (params, noise record, t, dt)
// and can be replayed exactly. Parameters live in a ParamStore in
// unconstrained internal coordinates; smooth maps take them onto their
// constraint sets so the optimizer never sees a boundary. Each process kind
// also carries its reverse pass: given dLoss/d(value at each half-step), it
// accumulates dLoss/d(internal parameters) along the recorded path.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "diqcd/errors.hpp"
#include "diqcd/rng.hpp"
#include "diqcd/units.hpp"

namespace diqcd {

enum class Constraint { free_real, positive, unit_interval };

// positive: ext = s * softplus(x/s). Identity above the knee s, smooth and
// strictly increasing everywhere, so a rate sitting at 0.01 still moves by
// ~lr per optimizer step instead of stalling on a log scale.
inline double constrain(Constraint c, double x, double s) {
    switch (c) {
        case Constraint::free_real: return x;
        case Constraint::positive: {
            const double u = x / s;
            return u > 30.0 ? x : s * std::log1p(std::exp(u));
        }
        case Constraint::unit_interval: return 1.0 / (1.0 + std::exp(-x));
    }
    return x;
}

inline double constrain_slope(Constraint c, double x, double s) {
    switch (c) {
        case Constraint::free_real: return 1.0;
        case Constraint::positive: {
            const double u = x / s;
            return u > 30.0 ? 1.0 : 1.0 / (1.0 + std::exp(-u));
        }
        case Constraint::unit_interval: {
            const double p = 1.0 / (1.0 + std::exp(-x));
            return p * (1.0 - p);
        }
    }
    return 1.0;
}

inline double unconstrain(Constraint c, double y, double s) {
    switch (c) {
        case Constraint::free_real: return y;
        case Constraint::positive: {
            if (y <= 0.0) throw ConfigError("positive parameter must be > 0");
            const double u = y / s;
            return u > 30.0 ? y : s * std::log(std::expm1(u));
        }
        case Constraint::unit_interval: {
            if (y <= 0.0 || y >= 1.0)
                throw ConfigError("unit-interval parameter must be in (0,1)");
            return std::log(y / (1.0 - y));
        }
    }
    return y;
}

struct Param {
    std::string name;
    double internal = 0.0;
    Constraint constraint = Constraint::free_real;
    double knee = 1e-3;  // softplus scale for positive params
    bool flexible = false;
    int lr_group = 0;
};

// Registry of every scalar the optimizer can see. Model pieces reference
// parameters by index; one physical parameter is registered exactly once even
// if several terms share it.
class ParamStore {
public:
    int add(const std::string& name, double value, Constraint c, bool flexible,
            int lr_group = 0, double knee = 1e-3) {
        for (const auto& p : params_)
            if (p.name == name)
                throw ConfigError("parameter registered twice: " + name);
        Param p;
        p.name = name;
        p.constraint = c;
        p.knee = knee;
        p.internal = unconstrain(c, value, knee);
        p.flexible = flexible;
        p.lr_group = lr_group;
        params_.push_back(p);
        return int(params_.size()) - 1;
    }

    double value(int idx) const {
        const Param& p = at(idx);
        return constrain(p.constraint, p.internal, p.knee);
    }

    // d(external)/d(internal), for chaining gradients into optimizer space.
    double slope(int idx) const {
        const Param& p = at(idx);
        return constrain_slope(p.constraint, p.internal, p.knee);
    }

    void set_value(int idx, double v) {
        Param& p = params_.at(size_t(idx));
        p.internal = unconstrain(p.constraint, v, p.knee);
    }

    double internal(int idx) const { return at(idx).internal; }
    void set_internal(int idx, double x) { params_.at(size_t(idx)).internal = x; }

    const Param& at(int idx) const { return params_.at(size_t(idx)); }
    int size() const { return int(params_.size()); }

    int find(const std::string& name) const {
        for (int i = 0; i < size(); ++i)
            if (params_[size_t(i)].name == name) return i;
        throw ConfigError("unknown parameter: " + name);
    }

private:
    std::vector<Param> params_;
};

// ---------------------------------------------------------------------------
// Optical tweezer field: sum of Gaussian-beam traps.
// U(r, z) = -V (w0/w(z))^2 exp(-2 r^2 / w(z)^2),  w(z) = w0 sqrt(1+(z/zR)^2).
// Lengths um, energies amu um^2/ms^2; no interference between beams.

struct TrapField {
    std::vector<Eigen::Vector3d> centers;
    double depth = 0.0;       // V
    double waist = 0.0;       // w0
    double wavelength = 0.0;  // lambda

    double rayleigh() const {
        return std::numbers::pi * waist * waist / wavelength;
    }
};

inline double trap_potential(const TrapField& f, const Eigen::Vector3d& pos) {
    const double w0sq = f.waist * f.waist;
    const double zr2 = f.rayleigh() * f.rayleigh();
    double u = 0.0;
    for (const auto& c : f.centers) {
        const Eigen::Vector3d d = pos - c;
        const double r2 = d.x() * d.x() + d.y() * d.y();
        const double s = w0sq * (1.0 + d.z() * d.z() / zr2);
        u += -f.depth * (w0sq / s) * std::exp(-2.0 * r2 / s);
    }
    return u;
}

inline Eigen::Vector3d trap_force(const TrapField& f, const Eigen::Vector3d& pos) {
    const double w0sq = f.waist * f.waist;
    const double zr2 = f.rayleigh() * f.rayleigh();
    Eigen::Vector3d force = Eigen::Vector3d::Zero();
    for (const auto& c : f.centers) {
        const Eigen::Vector3d d = pos - c;
        const double r2 = d.x() * d.x() + d.y() * d.y();
        const double s = w0sq * (1.0 + d.z() * d.z() / zr2);
        const double e = std::exp(-2.0 * r2 / s);
        const double dudx = 4.0 * f.depth * w0sq * e / (s * s);
        // dU/ds * ds/dz, with d(E/s)/ds = E (2 r^2 - s) / s^3
        const double dudz = -2.0 * f.depth * w0sq * w0sq * d.z() * e *
                            (2.0 * r2 - s) / (zr2 * s * s * s);
        force.x() -= dudx * d.x();
        force.y() -= dudx * d.y();
        force.z() -= dudz;
    }
    return force;
}

// Index of the closest trap center; ties resolve to the lowest index.
inline int nearest_trap(const TrapField& f, const Eigen::Vector3d& pos) {
    if (f.centers.empty()) throw ConfigError("nearest_trap: no trap centers");
    int best = 0;
    double best_d = (pos - f.centers[0]).squaredNorm();
    for (int i = 1; i < int(f.centers.size()); ++i) {
        const double d = (pos - f.centers[size_t(i)]).squaredNorm();
        if (d < best_d) {
            best_d = d;
            best = i;
        }
    }
    return best;
}

// Harmonic curvature at a trap center, used to pick integrator substeps and
// to sample initial thermal conditions. Radial: 4V/(m w0^2); axial: 2V/(m zR^2).
inline double trap_omega_radial(const TrapField& f, double mass) {
    return std::sqrt(4.0 * f.depth / (mass * f.waist * f.waist));
}
inline double trap_omega_axial(const TrapField& f, double mass) {
    const double zr = f.rayleigh();
    return std::sqrt(2.0 * f.depth / (mass * zr * zr));
}

struct MdConfig {
    TrapField field;
    double mass = units::caf_mass_amu;  // amu
    double temp_radial = 0.0;           // uK
    double temp_axial = 0.0;            // uK
    double friction = 0.0;              // 1/ms
    int molecules = 0;
    int substeps = 0;  // per half-step; 0 = auto from trap curvature
};

// ---------------------------------------------------------------------------

enum class ProcessKind {
    periodic,             // A sin(w t + phi), phi ~ U[0, 2pi) per member
    ornstein_uhlenbeck,   // exact discretization of overdamped Langevin
    static_uniform,       // W u, u ~ U(-1, 1), frozen per member
    white_noise,          // A xi, fresh xi per half-step
    constant,             // time-independent scalar parameter
    langevin_md           // positions in the trap field (no gradient path)
};

struct ProcessSpec {
    ProcessKind kind = ProcessKind::constant;
    std::string label;
    double omega = 0.0;  // periodic: fixed angular frequency
    int amp = -1;        // param index: A / W / constant value
    int tau = -1;        // param index: OU correlation time
    MdConfig md;
};

struct MdState {
    std::vector<Eigen::Vector3d> r, v;
};

// Per-member realization. eps_hist[k] is the value after the k-th half-step
// (k = 0 is the initial draw), which is exactly what the reverse pass needs.
struct ProcessRealization {
    const ProcessSpec* spec = nullptr;
    Rng rng;
    double eps = 0.0;
    double phase = 0.0;             // periodic
    double u = 0.0;                 // static_uniform
    std::vector<double> noise;      // normals in draw order
    std::vector<double> eps_hist;
    MdState md;
    bool md_lost = false;           // non-finite integration

    void init(const ParamStore& ps, Rng stream) {
        rng = stream;
        noise.clear();
        eps_hist.clear();
        md_lost = false;
        switch (spec->kind) {
            case ProcessKind::periodic: {
                phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
                eps = ps.value(spec->amp) * std::sin(phase);
                break;
            }
            case ProcessKind::ornstein_uhlenbeck: {
                // stationary start: eps(0) = A xi
                const double xi = rng.normal();
                noise.push_back(xi);
                eps = ps.value(spec->amp) * xi;
                break;
            }
            case ProcessKind::static_uniform: {
                u = rng.uniform(-1.0, 1.0);
                eps = ps.value(spec->amp) * u;
                break;
            }
            case ProcessKind::white_noise: {
                const double xi = rng.normal();
                noise.push_back(xi);
                eps = ps.value(spec->amp) * xi;
                break;
            }
            case ProcessKind::constant: {
                eps = ps.value(spec->amp);
                break;
            }
            case ProcessKind::langevin_md: {
                init_md();
                break;
            }
        }
        eps_hist.push_back(eps);
    }

    // Advance to absolute time t_new = t_old + h.
    void half_step(const ParamStore& ps, double t_new, double h) {
        switch (spec->kind) {
            case ProcessKind::periodic:
                eps = ps.value(spec->amp) * std::sin(spec->omega * t_new + phase);
                break;
            case ProcessKind::ornstein_uhlenbeck: {
                const double tau = ps.value(spec->tau);
                const double a = std::exp(-h / tau);
                const double b = std::sqrt(1.0 - a * a);
                const double xi = rng.normal();
                noise.push_back(xi);
                eps = a * eps + ps.value(spec->amp) * b * xi;
                break;
            }
            case ProcessKind::static_uniform:
                eps = ps.value(spec->amp) * u;
                break;
            case ProcessKind::white_noise: {
                const double xi = rng.normal();
                noise.push_back(xi);
                eps = ps.value(spec->amp) * xi;
                break;
            }
            case ProcessKind::constant:
                eps = ps.value(spec->amp);
                break;
            case ProcessKind::langevin_md:
                step_md(h);
                break;
        }
        eps_hist.push_back(eps);
    }

    void init_md() {
        const MdConfig& c = spec->md;
        if (int(c.field.centers.size()) < c.molecules)
            throw ConfigError("langevin_md: fewer trap centers than molecules");
        md.r.assign(size_t(c.molecules), Eigen::Vector3d::Zero());
        md.v.assign(size_t(c.molecules), Eigen::Vector3d::Zero());
        const double wr = trap_omega_radial(c.field, c.mass);
        const double wa = trap_omega_axial(c.field, c.mass);
        const double kTr = units::kB_md_per_uK * c.temp_radial;
        const double kTa = units::kB_md_per_uK * c.temp_axial;
        // locally-harmonic thermal draw around each molecule's own center
        for (int i = 0; i < c.molecules; ++i) {
            const double sx = wr > 0 ? std::sqrt(kTr / c.mass) / wr : 0.0;
            const double sz = wa > 0 ? std::sqrt(kTa / c.mass) / wa : 0.0;
            Eigen::Vector3d dr(sx * rng.normal(), sx * rng.normal(),
                               sz * rng.normal());
            Eigen::Vector3d dv(std::sqrt(kTr / c.mass) * rng.normal(),
                               std::sqrt(kTr / c.mass) * rng.normal(),
                               std::sqrt(kTa / c.mass) * rng.normal());
            md.r[size_t(i)] = c.field.centers[size_t(i)] + dr;
            md.v[size_t(i)] = dv;
        }
    }

    // BAOAB Langevin over h, substepped so the fastest trap frequency is
    // resolved regardless of the quantum step size.
    void step_md(double h) {
        const MdConfig& c = spec->md;
        int n = c.substeps;
        if (n <= 0) {
            const double wmax =
                std::max(trap_omega_radial(c.field, c.mass),
                         trap_omega_axial(c.field, c.mass));
            n = std::max(1, int(std::ceil(h * wmax / 0.1)));
        }
        const double dt = h / n;
        const double c1 = std::exp(-c.friction * dt);
        const double kTr = units::kB_md_per_uK * c.temp_radial;
        const double kTa = units::kB_md_per_uK * c.temp_axial;
        const double s2 = std::sqrt(1.0 - c1 * c1);
        const double cr = s2 * std::sqrt(kTr / c.mass);
        const double ca = s2 * std::sqrt(kTa / c.mass);
        for (int k = 0; k < n; ++k) {
            for (int i = 0; i < c.molecules; ++i) {
                Eigen::Vector3d& r = md.r[size_t(i)];
                Eigen::Vector3d& v = md.v[size_t(i)];
                v += (0.5 * dt / c.mass) * trap_force(c.field, r);
                r += 0.5 * dt * v;
                v.x() = c1 * v.x() + cr * rng.normal();
                v.y() = c1 * v.y() + cr * rng.normal();
                v.z() = c1 * v.z() + ca * rng.normal();
                r += 0.5 * dt * v;
                v += (0.5 * dt / c.mass) * trap_force(c.field, r);
            }
        }
        for (int i = 0; i < c.molecules; ++i)
            if (!md.r[size_t(i)].allFinite() || !md.v[size_t(i)].allFinite())
                md_lost = true;
    }
};

// Reverse pass: eps_bar[k] = dLoss/d(eps_hist[k]). Adds dLoss/d(internal)
// into grad for every flexible parameter this process owns. h is the
// half-step used on the forward pass; half-step k sat at time k*h.
inline void accumulate_process_grads(const ParamStore& ps,
                                     const ProcessRealization& re,
                                     const std::vector<double>& eps_bar,
                                     double h, std::vector<double>& grad) {
    const ProcessSpec& sp = *re.spec;
    const int K = int(re.eps_hist.size()) - 1;
    switch (sp.kind) {
        case ProcessKind::periodic: {
            if (!ps.at(sp.amp).flexible) return;
            double g = 0.0;
            for (int k = 0; k <= K; ++k) {
                const double t = (k == 0) ? 0.0 : k * h;
                g += eps_bar[size_t(k)] * std::sin(sp.omega * t + re.phase);
            }
            grad[size_t(sp.amp)] += g * ps.slope(sp.amp);
            break;
        }
        case ProcessKind::ornstein_uhlenbeck: {
            const double tau = ps.value(sp.tau);
            const double A = ps.value(sp.amp);
            const double a = std::exp(-h / tau);
            const double b = std::sqrt(1.0 - a * a);
            const double da_dtau = a * h / (tau * tau);
            const double db_dtau = -a * a * h / (tau * tau * b);
            double gA = 0.0, gT = 0.0, w = 0.0;
            for (int k = K; k >= 1; --k) {
                w += eps_bar[size_t(k)];
                gA += w * b * re.noise[size_t(k)];
                gT += w * (da_dtau * re.eps_hist[size_t(k - 1)] +
                           A * db_dtau * re.noise[size_t(k)]);
                w *= a;
            }
            w += eps_bar[0];
            gA += w * re.noise[0];
            if (ps.at(sp.amp).flexible) grad[size_t(sp.amp)] += gA * ps.slope(sp.amp);
            if (ps.at(sp.tau).flexible) grad[size_t(sp.tau)] += gT * ps.slope(sp.tau);
            break;
        }
        case ProcessKind::static_uniform: {
            if (!ps.at(sp.amp).flexible) return;
            double g = 0.0;
            for (int k = 0; k <= K; ++k) g += eps_bar[size_t(k)];
            grad[size_t(sp.amp)] += g * re.u * ps.slope(sp.amp);
            break;
        }
        case ProcessKind::white_noise: {
            if (!ps.at(sp.amp).flexible) return;
            double g = 0.0;
            for (int k = 0; k <= K; ++k)
                g += eps_bar[size_t(k)] * re.noise[size_t(k)];
            grad[size_t(sp.amp)] += g * ps.slope(sp.amp);
            break;
        }
        case ProcessKind::constant: {
            if (!ps.at(sp.amp).flexible) return;
            double g = 0.0;
            for (int k = 0; k <= K; ++k) g += eps_bar[size_t(k)];
            grad[size_t(sp.amp)] += g * ps.slope(sp.amp);
            break;
        }
        case ProcessKind::langevin_md:
            break;  // positions carry no trainable parameters
    }
}

} // namespace diqcd
