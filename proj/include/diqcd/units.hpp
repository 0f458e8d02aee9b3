#pragma once

// Unit system, fixed throughout: hbar = 1.
//
// Molecular tweezer runs:  time in ms, Hamiltonian coefficients in rad/ms,
//   lengths in um, masses in amu.  Trap depths are quoted as k_B * temperature,
//   so k_B is carried in amu um^2 / (ms^2 uK).
// Vibronic / transport runs:  time in fs, energies quoted in cm^-1
//   (spectroscopic convention: E = h c nu_tilde) and converted to rad/fs by
//   2 pi c * 1e-15 before they enter any propagator.

#include <cmath>

namespace diqcd::units {

// 2 pi c * 1e-15 with c = 2.99792458e10 cm/s: rad/fs per cm^-1.
inline constexpr double rad_fs_per_wavenumber = 1.88365156731e-4;

// k_B / (h c): cm^-1 per kelvin, for Bose occupations of cm^-1 frequencies.
inline constexpr double wavenumber_per_kelvin = 0.695034800;

inline constexpr double wavenumber_per_mev = 8.065543937;

// k_B / e in volt per kelvin (thermal voltage).
inline constexpr double volt_per_kelvin = 8.617333262e-5;

// k_B in amu um^2 / (ms^2 uK); numerically R / 1000 by cancellation.
inline constexpr double kB_md_per_uK = 8.31446261815e3;

inline constexpr double caf_mass_amu = 59.076403; // Ca 40.078 + F 18.998403

// Mains fundamental, angular: 2 pi * 60 Hz in rad/ms.
inline constexpr double mains_omega_rad_ms = 0.376991118431;

inline double mev_to_wavenumber(double mev) { return mev * wavenumber_per_mev; }
inline double wavenumber_to_rad_fs(double wn) { return wn * rad_fs_per_wavenumber; }

// Bose-Einstein mean occupation of a mode at nu_tilde cm^-1 and T kelvin.
inline double bose_occupation(double wavenumber, double temperature_K) {
    const double beta_w = wavenumber / (wavenumber_per_kelvin * temperature_K);
    return 1.0 / (std::expm1(beta_w));
}

} // namespace diqcd::units
