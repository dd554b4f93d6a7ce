#pragma once

#include <array>
#include <complex>
#include <vector>

#include "penning/constants.hpp"
#include "penning/laser.hpp"
#include "penning/modes.hpp"
#include "penning/trap.hpp"

// Shared fixtures and independent oracles for the test suite.

namespace testsupport {

using cplx = std::complex<double>;

// Operating point used throughout: Ca+ (40 u) at U0 = 4 V, B = 0.98 T, trap
// size calibrated so the axial frequency is 141 kHz.
inline penning::TrapConfig reference_trap() {
    penning::TrapConfig trap;
    trap.ion.mass_amu = 40.0;
    trap.ion.charge = 1;
    trap.u0_volts = 4.0;
    trap.b_tesla = 0.98;
    trap.r_squared_m2 = penning::calibrate_r_squared(
        penning::constants::two_pi * 141e3, trap.u0_volts, trap.ion);
    return trap;
}

// 397 nm beam, linewidth 2 pi 23 MHz, red-detuned by half a linewidth,
// waist 36 um, displaced 18 um below the axis: alpha and beta both positive,
// with the bare magnetron cooling rate in the few-per-second range.
inline penning::LaserBeam reference_beam() {
    penning::LaserBeam beam;
    beam.wavelength_m = 397e-9;
    beam.linewidth = penning::constants::two_pi * 23e6;
    beam.detuning = -0.5 * beam.linewidth;
    beam.waist_m = 36e-6;
    beam.offset_y_m = -18e-6;
    beam.saturation_rate = 1e5;
    return beam;
}

// All roots of c[0] + c[1] z + ... + c[n] z^n (Durand-Kerner iteration).
std::vector<cplx> polynomial_roots(std::vector<cplx> coeffs);

// One laboratory-frame line per root: frequency Re, damping rate Im.
struct LineOracle {
    std::array<cplx, 4> lab; // omega + i gamma, rad/s and s^-1
};

// Exact eigenvalues of the driven cooled radial system, independent of the
// library's first-order closed form. In the frame rotating at
// omega_r = omega_a/2 the substitution v = a e^{i w t} + b conj-partner turns
// the equation of motion into
//   P(w) Q(w) = eps^2,  P(w) = -w^2 + i A w + C,  Q(w) = -w^2 + i A* w + C*
//   A = beta + 2 i Delta,  C = omega_1^2 - Delta^2 + i (omega_r beta - alpha)
// a quartic solved here numerically; lab lines are the roots shifted by
// omega_r (damping = imaginary part).
LineOracle dressed_lines_oracle(const penning::CoolingCoefficients& cool,
                                const penning::AxializationDrive& drive,
                                const penning::ModeSet& modes);

} // namespace testsupport
