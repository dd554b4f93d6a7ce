#pragma once

// Cooling/detection laser model. The beam propagates along +x, displaced by
// offset_y from the trap centre in y, with a Gaussian intensity profile
// (1/e^2 radius = waist) and a peak-normalized Lorentzian scattering
// lineshape of FWHM = linewidth. An ion at lateral position y moving with
// velocity xdot along the beam scatters at
//
//   S(y, xdot) = S0 * L(detuning - k*xdot) * G(y - offset_y)
//   L(d) = (Gamma/2)^2 / (d^2 + (Gamma/2)^2)      (peak 1 at d = 0)
//   G(d) = exp(-2 d^2 / waist^2)                  (peak 1 on the beam axis)
//
// where k = 2 pi / wavelength and the Doppler term (detuning - k*xdot) is the
// detuning seen in the ion frame. The radiation-pressure force along +x is
// F = hbar k S. This particular lineshape/profile product is a modeling
// choice; everything downstream consumes only S and its local derivatives,
// and (alpha, beta) can be supplied directly instead (see modes.hpp).

namespace penning {

struct LaserBeam {
    double wavelength_m = 397e-9;  // transition wavelength
    double linewidth = 0.0;        // natural linewidth Gamma, angular FWHM, rad/s
    double detuning = 0.0;         // laser - atom frequency, rad/s (< 0 = red)
    double waist_m = 0.0;          // 1/e^2 intensity radius
    double offset_y_m = 0.0;       // beam axis displacement from trap centre
    double saturation_rate = 0.0;  // S0: peak scattering rate, photons/s

    double wavenumber() const;     // k = 2 pi / wavelength
};

// Scattering rate S(y, xdot) in photons/s; 0 <= S <= S0 always, which makes
// S0 an exact thinning bound for photon generation.
double scattering_rate(const LaserBeam& beam, double y_m, double xdot_m_s);

// Validates ranges (throws ConfigError): positive wavelength/linewidth/waist/
// saturation rate, finite detuning and offset.
void validate(const LaserBeam& beam);

} // namespace penning
