#pragma once

#include <cstdint>

// Static Penning trap model: ideal quadrupole potential
//   phi(r, z) = U0 (2 z^2 - r^2) / R^2,   R^2 = r0^2 + 2 z0^2
// in a uniform magnetic field B along -z. A single ion of charge q = Z e
// oscillates axially at
//   omega_z = sqrt(4 q U0 / (m R^2))
// and radially splits the true cyclotron frequency omega_c = q B / m into
//   omega_c' = omega_c/2 + omega_1   (modified cyclotron)
//   omega_m  = omega_c/2 - omega_1   (magnetron)
// with omega_1 = sqrt(omega_c^2/4 - omega_z^2/2). Radial confinement needs
// omega_c^2 > 2 omega_z^2.

namespace penning {

struct IonSpecies {
    double mass_amu = 40.0; // atomic mass units
    int charge = 1;         // multiples of e, >= 1

    double mass_kg() const;
    double charge_coulomb() const;
};

struct TrapConfig {
    IonSpecies ion;
    double u0_volts = 0.0;     // ring-endcap bias U0, > 0 for positive ions
    double b_tesla = 0.0;      // field magnitude, > 0
    double r_squared_m2 = 0.0; // effective trap dimension R^2 = r0^2 + 2 z0^2, > 0
};

// All four single-ion frequencies, angular (rad/s).
struct ModeSet {
    double omega_z = 0.0;  // axial
    double omega_c = 0.0;  // true cyclotron
    double omega_1 = 0.0;  // rotating-frame radial frequency
    double omega_cp = 0.0; // modified cyclotron omega_c'
    double omega_m = 0.0;  // magnetron

    // Invariants of the ideal trap, exact in this parameterization:
    //   omega_m + omega_cp = omega_c,  omega_m * omega_cp = omega_z^2 / 2.

    // Build directly from measured (omega_c, omega_m), inverting the
    // identities; used when fitting data rather than modeling a trap.
    static ModeSet from_cyclotron_magnetron(double omega_c, double omega_m);
};

double axial_frequency(const TrapConfig& trap);         // omega_z, rad/s
double true_cyclotron_frequency(const TrapConfig& trap); // omega_c, rad/s

// Full mode set; throws UnstableTrapError when omega_c^2 <= 2 omega_z^2.
ModeSet mode_set(const TrapConfig& trap);

// R^2 that reproduces a target axial frequency at the given bias.
double calibrate_r_squared(double target_omega_z, double u0_volts, const IonSpecies& ion);

} // namespace penning
