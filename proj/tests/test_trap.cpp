#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "penning/constants.hpp"
#include "penning/errors.hpp"
#include "penning/rng.hpp"
#include "penning/trap.hpp"
#include "support.hpp"

using namespace penning;
using testsupport::reference_trap;

namespace {
constexpr double khz = constants::two_pi * 1e3;
}

TEST_CASE("axial calibration reproduces the target frequency") {
    const TrapConfig trap = reference_trap();
    // U0 / R^2 from the 141 kHz calibration, computed independently:
    // R^2 = 4 q U0 / (m omega_z^2).
    CHECK(trap.r_squared_m2 == doctest::Approx(4.9172617364499904e-05).epsilon(1e-13));
    CHECK(axial_frequency(trap) == doctest::Approx(141.0 * khz).epsilon(1e-13));
}

TEST_CASE("reference trap mode frequencies") {
    const TrapConfig trap = reference_trap();
    const ModeSet modes = mode_set(trap);

    CHECK(true_cyclotron_frequency(trap) ==
          doctest::Approx(2363890.637838005).epsilon(1e-13));
    CHECK(modes.omega_c == doctest::Approx(2363890.637838005).epsilon(1e-13));
    CHECK(modes.omega_1 == doctest::Approx(1002277.170606229).epsilon(1e-12));
    CHECK(modes.omega_cp == doctest::Approx(2184222.4895252315).epsilon(1e-12));
    CHECK(modes.omega_m == doctest::Approx(179668.14831277356).epsilon(1e-12));

    // In kHz for the record: f_c 376.22, f_c' 347.63, f_m 28.60.
    CHECK(modes.omega_c / khz == doctest::Approx(376.2248799405719).epsilon(1e-12));
    CHECK(modes.omega_cp / khz == doctest::Approx(347.6298060204262).epsilon(1e-12));
    CHECK(modes.omega_m / khz == doctest::Approx(28.59507392014569).epsilon(1e-12));
}

TEST_CASE("mode identities hold over randomized stable traps") {
    Rng rng(0x7a51c0ffee);
    int built = 0;
    while (built < 1000) {
        TrapConfig trap;
        trap.ion.mass_amu = 5.0 + 195.0 * rng.uniform();
        trap.ion.charge = 1 + int(3.0 * rng.uniform());
        trap.u0_volts = 0.5 + 29.5 * rng.uniform();
        trap.b_tesla = 0.05 + 6.95 * rng.uniform();
        trap.r_squared_m2 = 1e-5 + 1e-3 * rng.uniform();

        const double wz = axial_frequency(trap);
        const double wc = true_cyclotron_frequency(trap);
        if (wc * wc <= 2.0 * wz * wz * 1.0001) continue; // skip unstable draws

        const ModeSet modes = mode_set(trap);
        ++built;
        CHECK(modes.omega_m + modes.omega_cp ==
              doctest::Approx(modes.omega_c).epsilon(1e-12));
        CHECK(modes.omega_m * modes.omega_cp ==
              doctest::Approx(0.5 * wz * wz).epsilon(1e-12));
        CHECK(modes.omega_cp - modes.omega_m ==
              doctest::Approx(2.0 * modes.omega_1).epsilon(1e-12));
        CHECK(modes.omega_m > 0.0);
        CHECK(modes.omega_cp > modes.omega_m);
    }
}

TEST_CASE("unstable trap is rejected") {
    TrapConfig trap = reference_trap();
    trap.u0_volts = 400.0; // omega_z too large for B = 0.98 T
    CHECK_THROWS_AS(mode_set(trap), UnstableTrapError);
    trap.u0_volts = -4.0; // inverted well
    CHECK_THROWS_AS(mode_set(trap), ConfigError);
}

TEST_CASE("mode set from measured cyclotron and magnetron frequencies") {
    const ModeSet ref = mode_set(reference_trap());
    const ModeSet rebuilt = ModeSet::from_cyclotron_magnetron(ref.omega_c, ref.omega_m);
    CHECK(rebuilt.omega_1 == doctest::Approx(ref.omega_1).epsilon(1e-12));
    CHECK(rebuilt.omega_cp == doctest::Approx(ref.omega_cp).epsilon(1e-12));
    CHECK(rebuilt.omega_z == doctest::Approx(ref.omega_z).epsilon(1e-12));
}
