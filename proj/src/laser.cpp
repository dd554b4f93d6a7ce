#include "penning/laser.hpp"

#include <cmath>

#include "penning/constants.hpp"
#include "penning/errors.hpp"

namespace penning {

double LaserBeam::wavenumber() const { return constants::two_pi / wavelength_m; }

void validate(const LaserBeam& beam) {
    auto bad = [](double v) { return !std::isfinite(v); };
    if (bad(beam.wavelength_m) || beam.wavelength_m <= 0.0)
        throw ConfigError("beam: wavelength must be positive");
    if (bad(beam.linewidth) || beam.linewidth <= 0.0)
        throw ConfigError("beam: linewidth must be positive");
    if (bad(beam.waist_m) || beam.waist_m <= 0.0)
        throw ConfigError("beam: waist must be positive");
    if (bad(beam.saturation_rate) || beam.saturation_rate <= 0.0)
        throw ConfigError("beam: saturation rate must be positive");
    if (bad(beam.detuning) || bad(beam.offset_y_m))
        throw ConfigError("beam: detuning and offset must be finite");
}

double scattering_rate(const LaserBeam& beam, double y_m, double xdot_m_s) {
    const double half = 0.5 * beam.linewidth;
    const double d = beam.detuning - beam.wavenumber() * xdot_m_s; // ion-frame detuning
    const double lorentz = half * half / (d * d + half * half);
    const double dy = y_m - beam.offset_y_m;
    const double gauss = std::exp(-2.0 * dy * dy / (beam.waist_m * beam.waist_m));
    return beam.saturation_rate * lorentz * gauss;
}

} // namespace penning
