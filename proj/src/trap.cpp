#include "penning/trap.hpp"

#include <cmath>
#include <string>

#include "penning/constants.hpp"
#include "penning/errors.hpp"

namespace penning {

namespace {

void require(bool ok, const std::string& what) {
    if (!ok) throw ConfigError(what);
}

void validate(const TrapConfig& trap) {
    require(std::isfinite(trap.ion.mass_amu) && trap.ion.mass_amu > 0.0,
            "trap: ion mass must be positive");
    require(trap.ion.charge >= 1, "trap: ion charge must be a positive integer");
    require(std::isfinite(trap.u0_volts) && trap.u0_volts > 0.0,
            "trap: U0 must be positive");
    require(std::isfinite(trap.b_tesla) && trap.b_tesla > 0.0,
            "trap: B must be positive");
    require(std::isfinite(trap.r_squared_m2) && trap.r_squared_m2 > 0.0,
            "trap: R^2 must be positive");
}

} // namespace

double IonSpecies::mass_kg() const { return mass_amu * constants::atomic_mass_unit; }

double IonSpecies::charge_coulomb() const {
    return static_cast<double>(charge) * constants::elementary_charge;
}

double axial_frequency(const TrapConfig& trap) {
    validate(trap);
    return std::sqrt(4.0 * trap.ion.charge_coulomb() * trap.u0_volts /
                     (trap.ion.mass_kg() * trap.r_squared_m2));
}

double true_cyclotron_frequency(const TrapConfig& trap) {
    validate(trap);
    return trap.ion.charge_coulomb() * trap.b_tesla / trap.ion.mass_kg();
}

ModeSet mode_set(const TrapConfig& trap) {
    ModeSet m;
    m.omega_z = axial_frequency(trap);
    m.omega_c = true_cyclotron_frequency(trap);
    // omega_1^2 = omega_c^2/4 - omega_z^2/2; real only for a stable trap.
    const double w1_sq = 0.25 * m.omega_c * m.omega_c - 0.5 * m.omega_z * m.omega_z;
    if (w1_sq <= 0.0) {
        throw UnstableTrapError("trap: omega_c^2 <= 2 omega_z^2 (no radial confinement); "
                                "reduce U0 or raise B");
    }
    m.omega_1 = std::sqrt(w1_sq);
    m.omega_cp = 0.5 * m.omega_c + m.omega_1;
    // Small root via omega_m omega_c' = omega_z^2/2; the difference
    // omega_c/2 - omega_1 cancels badly for shallow wells.
    m.omega_m = 0.5 * m.omega_z * m.omega_z / m.omega_cp;
    return m;
}

ModeSet ModeSet::from_cyclotron_magnetron(double omega_c, double omega_m) {
    if (!(std::isfinite(omega_c) && std::isfinite(omega_m) && omega_c > 0.0 &&
          omega_m > 0.0 && omega_m < 0.5 * omega_c)) {
        throw ConfigError("mode set: need 0 < omega_m < omega_c/2");
    }
    ModeSet m;
    m.omega_c = omega_c;
    m.omega_m = omega_m;
    m.omega_cp = omega_c - omega_m;           // omega_m + omega_c' = omega_c
    m.omega_1 = 0.5 * (m.omega_cp - omega_m); // omega_c' - omega_m = 2 omega_1
    m.omega_z = std::sqrt(2.0 * omega_m * m.omega_cp); // omega_m omega_c' = omega_z^2/2
    return m;
}

double calibrate_r_squared(double target_omega_z, double u0_volts, const IonSpecies& ion) {
    if (!(std::isfinite(target_omega_z) && target_omega_z > 0.0))
        throw ConfigError("calibrate: target omega_z must be positive");
    if (!(std::isfinite(u0_volts) && u0_volts > 0.0))
        throw ConfigError("calibrate: U0 must be positive");
    if (!(ion.mass_amu > 0.0) || ion.charge < 1)
        throw ConfigError("calibrate: bad ion species");
    return 4.0 * ion.charge_coulomb() * u0_volts /
           (ion.mass_kg() * target_omega_z * target_omega_z);
}

} // namespace penning
