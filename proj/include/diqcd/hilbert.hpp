#pragma once

// Finite-dimensional state spaces and the operator constructors used by the
// model builders: Pauli/spin matrices, truncated boson ladders, tight-binding
// chains, and tensor-product embedding of subsystem operators.

#include <cmath>
#include <complex>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "diqcd/errors.hpp"

namespace diqcd {

using cd = std::complex<double>;
using Mat = Eigen::MatrixXcd;
using Vec = Eigen::VectorXcd;
using SpMat = Eigen::SparseMatrix<cd>;

// Ordered list of subsystem dimensions; the joint space is their tensor
// product with the first factor leftmost (most significant in the index).
struct HilbertSpace {
    std::vector<int> dims;

    int dim() const {
        int d = 1;
        for (int k : dims) d *= k;
        return d;
    }
    int slots() const { return static_cast<int>(dims.size()); }
};

inline HilbertSpace qubits(int n) {
    return HilbertSpace{std::vector<int>(static_cast<size_t>(n), 2)};
}

inline HilbertSpace single(int d) { return HilbertSpace{{d}}; }

inline Mat identity(int d) { return Mat::Identity(d, d); }

inline Mat pauli_x() { return (Mat(2, 2) << 0, 1, 1, 0).finished(); }
inline Mat pauli_y() { return (Mat(2, 2) << 0, cd(0, -1), cd(0, 1), 0).finished(); }
inline Mat pauli_z() { return (Mat(2, 2) << 1, 0, 0, -1).finished(); }

// Spin-1/2 components, hbar = 1.
inline Mat spin_x() { return 0.5 * pauli_x(); }
inline Mat spin_y() { return 0.5 * pauli_y(); }
inline Mat spin_z() { return 0.5 * pauli_z(); }

// |0> = spin up; the computational basis is ordered {up, down}.
inline Vec ket_up() { return (Vec(2) << 1, 0).finished(); }
inline Vec ket_down() { return (Vec(2) << 0, 1).finished(); }

inline Mat projector_up() { return ket_up() * ket_up().adjoint(); }

// Truncated boson annihilation operator on n_levels Fock states.
inline Mat boson_destroy(int n_levels) {
    Mat b = Mat::Zero(n_levels, n_levels);
    for (int n = 1; n < n_levels; ++n) b(n - 1, n) = std::sqrt(double(n));
    return b;
}

inline Mat boson_create(int n_levels) { return boson_destroy(n_levels).adjoint(); }

inline Mat boson_number(int n_levels) {
    Mat n = Mat::Zero(n_levels, n_levels);
    for (int k = 0; k < n_levels; ++k) n(k, k) = double(k);
    return n;
}

// Open-boundary nearest-neighbour hopping: V * sum_n (|n+1><n| + h.c.).
inline Mat lattice_hopping(int sites, double v) {
    if (sites < 2) throw ConfigError("lattice_hopping: need at least 2 sites");
    Mat h = Mat::Zero(sites, sites);
    for (int n = 0; n + 1 < sites; ++n) {
        h(n + 1, n) = v;
        h(n, n + 1) = v;
    }
    return h;
}

// Site-index operator diag(0, 1, ..., L-1).
inline Mat site_number(int sites) {
    Mat n = Mat::Zero(sites, sites);
    for (int k = 0; k < sites; ++k) n(k, k) = double(k);
    return n;
}

inline Mat site_projector(int sites, int n) {
    Mat p = Mat::Zero(sites, sites);
    p(n, n) = 1.0;
    return p;
}

inline Mat kron(const Mat& a, const Mat& b) {
    Mat out(a.rows() * b.rows(), a.cols() * b.cols());
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = 0; j < a.cols(); ++j)
            out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
    return out;
}

// op acting on subsystem `slot`, identity elsewhere.
inline Mat embed(const HilbertSpace& space, int slot, const Mat& op) {
    if (slot < 0 || slot >= space.slots())
        throw ConfigError("embed: slot " + std::to_string(slot) + " out of range");
    if (op.rows() != space.dims[size_t(slot)] || op.cols() != op.rows())
        throw ConfigError("embed: operator does not match subsystem dimension");
    Mat out = (slot == 0) ? op : identity(space.dims[0]);
    for (int s = 1; s < space.slots(); ++s)
        out = kron(out, (s == slot) ? op : identity(space.dims[size_t(s)]));
    return out;
}

inline SpMat sparse_kron(const SpMat& a, const SpMat& b) {
    SpMat out(a.rows() * b.rows(), a.cols() * b.cols());
    std::vector<Eigen::Triplet<cd>> trip;
    trip.reserve(size_t(a.nonZeros()) * size_t(b.nonZeros()));
    for (int ka = 0; ka < a.outerSize(); ++ka)
        for (SpMat::InnerIterator ia(a, ka); ia; ++ia)
            for (int kb = 0; kb < b.outerSize(); ++kb)
                for (SpMat::InnerIterator ib(b, kb); ib; ++ib)
                    trip.emplace_back(int(ia.row() * b.rows() + ib.row()),
                                      int(ia.col() * b.cols() + ib.col()),
                                      ia.value() * ib.value());
    out.setFromTriplets(trip.begin(), trip.end());
    return out;
}

inline SpMat to_sparse(const Mat& m, double prune = 0.0) {
    SpMat s = m.sparseView(prune, 1.0);
    s.makeCompressed();
    return s;
}

// Sparse embedding for large joint spaces (vibronic generator).
inline SpMat sparse_embed(const HilbertSpace& space, int slot, const Mat& op) {
    SpMat out = to_sparse(identity(1));
    for (int s = 0; s < space.slots(); ++s) {
        SpMat factor = (s == slot) ? to_sparse(op)
                                   : to_sparse(identity(space.dims[size_t(s)]));
        out = sparse_kron(out, factor);
    }
    return out;
}

inline Mat density_from_ket(const Vec& psi) { return psi * psi.adjoint(); }

// Tr(O rho); whole-trace form, valid for any pair of equal-sized matrices.
inline cd expectation(const Mat& op, const Mat& rho) {
    if (op.rows() != rho.rows() || op.cols() != rho.cols())
        throw ConfigError("expectation: operator/state dimension mismatch");
    return (op * rho).trace();
}

// Real expectation of a Hermitian observable; a residual imaginary part
// above tol means the state or operator lost Hermiticity.
inline double expectation_real(const Mat& op, const Mat& rho, double tol = 1e-10) {
    const cd v = expectation(op, rho);
    if (std::abs(v.imag()) > tol)
        throw NumericError("expectation_real: imaginary residue " +
                           std::to_string(v.imag()));
    return v.real();
}

} // namespace diqcd
