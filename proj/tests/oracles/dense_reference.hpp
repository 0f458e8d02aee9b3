#pragma once

// Independent dense references the production kernels are checked against:
// the Lindblad generator exponentiated as a superoperator on vec(rho), a
// dense unitary propagator, and a central-difference gradient harness.
// Everything here is deliberately brute force.

#include <cstdint>
#include <vector>

#include <unsupported/Eigen/MatrixFunctions>

#include "diqcd/grad.hpp"
#include "diqcd/hilbert.hpp"

namespace oracle {

using diqcd::cd;
using diqcd::Mat;
using diqcd::Vec;

// Column-stacked vec(rho); vec(A rho B) = (B^T kron A) vec(rho).
inline Mat lindblad_superop(const Mat& h, const std::vector<Mat>& ls,
                            const std::vector<double>& g) {
    const Eigen::Index d = h.rows();
    const Mat id = Mat::Identity(d, d);
    Mat sup = cd(0.0, -1.0) *
              (diqcd::kron(id, h) - diqcd::kron(h.transpose(), id));
    for (size_t k = 0; k < ls.size(); ++k) {
        const Mat& L = ls[k];
        const Mat ldl = L.adjoint() * L;
        sup += g[k] * (diqcd::kron(L.conjugate(), L) -
                       0.5 * diqcd::kron(id, ldl) -
                       0.5 * diqcd::kron(ldl.transpose(), id));
    }
    return sup;
}

inline Mat evolve_exact(const Mat& rho0, const Mat& sup, double t) {
    const Mat p = (sup * t).exp();
    const Vec v = Eigen::Map<const Vec>(rho0.data(), rho0.size());
    const Vec w = p * v;
    return Eigen::Map<const Mat>(w.data(), rho0.rows(), rho0.cols());
}

inline Mat propagator(const Mat& h, double t) {
    return (cd(0.0, -1.0) * t * h).exp();
}

// Central finite differences of the total loss in internal coordinates, with
// the noise tape shared across evaluations through the fixed seed.
inline std::vector<double> fd_gradient(std::vector<diqcd::Run>& runs,
                                       const std::vector<diqcd::LossTerm>& terms,
                                       diqcd::ParamStore& store,
                                       std::uint64_t seed, double h = 1e-4) {
    std::vector<double> g(size_t(store.size()), 0.0);
    for (int i = 0; i < store.size(); ++i) {
        if (!store.at(i).flexible) continue;
        const double u0 = store.internal(i);
        store.set_internal(i, u0 + h);
        const double lp = diqcd::eval_runs(runs, terms, store, seed, nullptr);
        store.set_internal(i, u0 - h);
        const double lm = diqcd::eval_runs(runs, terms, store, seed, nullptr);
        store.set_internal(i, u0);
        g[size_t(i)] = (lp - lm) / (2.0 * h);
    }
    return g;
}

} // namespace oracle
