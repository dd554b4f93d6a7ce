#pragma once

// Physical constants (CODATA 2018) used across the library. Everything
// internal is SI with angular frequencies in rad/s; conversion to/from
// the kHz and mV units used at the I/O boundary lives here as well.

namespace penning {
namespace constants {

inline constexpr double elementary_charge = 1.602176634e-19;  // C (exact)
inline constexpr double atomic_mass_unit = 1.66053906660e-27; // kg
inline constexpr double hbar = 1.054571817e-34;               // J s (derived, exact h)
inline constexpr double pi = 3.141592653589793238462643383279502884;
inline constexpr double two_pi = 2.0 * pi;

} // namespace constants

// Angular frequency <-> ordinary frequency in the units used for I/O.
inline constexpr double rad_s_from_khz(double f_khz) {
    return constants::two_pi * f_khz * 1e3;
}
inline constexpr double khz_from_rad_s(double w) {
    return w / (constants::two_pi * 1e3);
}
inline constexpr double rad_s_from_hz(double f_hz) { return constants::two_pi * f_hz; }
inline constexpr double hz_from_rad_s(double w) { return w / constants::two_pi; }

} // namespace penning
