#pragma once

#include <array>
#include <optional>
#include <vector>

#include "penning/laser.hpp"
#include "penning/trap.hpp"

// Laser-cooled radial dynamics and the azimuthal-quadrupole (axialization)
// drive, in the linearized model
//
//   u'' + (beta - i omega_c) u' - (omega_z^2/2 + i alpha) u
//      + eps * conj(u) * e^{+i omega_a t} = 0,        u = x + i y
//
// where alpha (s^-2) is the position-push coefficient and beta (s^-1) the
// velocity-drag coefficient of the cooling laser, and eps (s^-2) couples the
// two radial modes when the drive frequency omega_a = omega_c + 2 Delta sits
// near the sum omega_m + omega_c' = omega_c. In the frame rotating at
// omega_r = omega_a / 2 (v = u e^{-i omega_r t}) the coupled branches have
// frequencies omega_1 + delta0 and damping gamma0 with
//
//   M  = (2 alpha - beta omega_c) / (2 omega_1)
//   N  = Delta^2 - M^2/4 + eps^2 / (4 omega_1^2)
//   delta0 = +/- sqrt( (N + sqrt(N^2 + Delta^2 M^2)) / 2 )
//   gamma0 = beta/2 + Delta M / (2 delta0)
//
// and the laboratory-frame lines sit at omega_c' + Delta + delta0 and
// omega_m + Delta - delta0, each damped at its branch's gamma0. Without the
// drive the modes damp at (beta omega_c' - alpha)/(2 omega_1) (cyclotron)
// and (alpha - beta omega_m)/(2 omega_1) (magnetron); both are positive only
// inside the cooling window omega_m < alpha/beta < omega_c'.

namespace penning {

struct CoolingCoefficients {
    double alpha = 0.0; // position push, s^-2
    double beta = 0.0;  // velocity drag, s^-1

    // Linearized-model validity: |alpha| << omega_z^2 and beta << omega_c.
    // Recorded (not enforced) so reports can flag questionable inputs.
    bool alpha_small = true;
    bool beta_small = true;
    double alpha_ratio = 0.0; // |alpha| / omega_z^2
    double beta_ratio = 0.0;  // |beta| / omega_c
};

// Attach validity flags given the mode set; threshold is the ratio above
// which the linearization is considered suspect.
CoolingCoefficients make_cooling(double alpha, double beta, const ModeSet& modes,
                                 double validity_threshold = 1e-2);

// (alpha, beta) from the beam model: central finite differences (with step
// refinement) of the radiation-pressure force F = hbar k S(y, xdot) at the
// trap centre, F_alpha = -2 alpha m y and F_beta = -2 beta m xdot. A beam
// red-detuned and displaced to -y gives alpha > 0, beta > 0.
CoolingCoefficients beam_linearization(const LaserBeam& beam, const IonSpecies& ion,
                                       const ModeSet& modes,
                                       double validity_threshold = 1e-2);

struct UnaxializedRates {
    double gamma_cyclotron = 0.0; // (beta omega_c' - alpha) / (2 omega_1), s^-1
    double gamma_magnetron = 0.0; // (alpha - beta omega_m) / (2 omega_1), s^-1
};

// Damping rates of the two uncoupled radial modes (positive = cooling).
UnaxializedRates unaxialized_rates(const CoolingCoefficients& cool, const ModeSet& modes);

struct CoolingWindow {
    double lower = 0.0; // omega_m
    double upper = 0.0; // omega_c'
    double ratio = 0.0; // alpha / beta
    bool both_cooled = false;
};

// Throws ConfigError when beta == 0 (ratio undefined).
CoolingWindow cooling_window(const CoolingCoefficients& cool, const ModeSet& modes);

struct AxializationDrive {
    double epsilon = 0.0; // coupling strength e V0 / (2 m r0^2), s^-2, >= 0
    double omega_a = 0.0; // drive angular frequency = omega_c + 2 Delta, rad/s
    double delta = 0.0;   // half-detuning Delta from omega_c, rad/s

    // Provenance when constructed from a physical drive amplitude.
    std::optional<double> v0_volts;
    std::optional<double> r0_m;

    static AxializationDrive from_epsilon(double epsilon, double delta,
                                          const ModeSet& modes);
    static AxializationDrive from_voltage(double v0_volts, double r0_m,
                                          const IonSpecies& ion, double delta,
                                          const ModeSet& modes);
};

enum class Regime { weak, intermediate, strong };

// Strong when (eps/omega_1)^2 > K M^2, weak when < M^2/K, intermediate
// otherwise; K is the dominance factor (default 100).
Regime regime_classify(const CoolingCoefficients& cool, const AxializationDrive& drive,
                       const ModeSet& modes, double k_threshold = 100.0);

const char* regime_name(Regime r);

// One laboratory-frame spectral line of the driven system.
struct DressedLine {
    double omega = 0.0;  // rad/s
    double gamma = 0.0;  // s^-1
    int branch = +1;     // +1: delta0 >= 0 branch, -1: the mirrored branch
    bool near_magnetron = false; // omega_m + Delta - delta0 family (else cyclotron)
};

struct DressedModeTable {
    double m_coeff = 0.0; // M
    double n_coeff = 0.0; // N
    double delta0 = 0.0;  // the +branch value, > 0
    std::array<double, 2> gamma0{}; // [0]: + branch, [1]: - branch
    std::array<DressedLine, 4> lines{}; // cyc+, cyc-, mag+, mag- (by family, branch)

    const DressedLine& line(bool near_magnetron, int branch) const;
};

// Dressed branches of the driven, cooled system. Throws DegenerateBranchError
// when delta0 = 0 (branches coincide; damping splitting is outside this
// closed form).
DressedModeTable dressed_modes(const CoolingCoefficients& cool,
                               const AxializationDrive& drive, const ModeSet& modes);

// Frequencies and damping rates on a grid of drive frequencies. Branch
// index 0/1 is continuous in omega_a (nearest-neighbour tracking), with
// branch 0 starting as the lower near-magnetron line at the first point.
struct AvoidedCrossingCurve {
    std::vector<double> omega_a;
    std::vector<double> delta;
    std::array<std::vector<double>, 2> mag_freq, mag_gamma; // near-magnetron pair
    std::array<std::vector<double>, 2> cyc_freq, cyc_gamma; // near-cyclotron pair
};

AvoidedCrossingCurve avoided_crossing_curve(const CoolingCoefficients& cool,
                                            double epsilon, const ModeSet& modes,
                                            const std::vector<double>& omega_a_grid);

// Magnetron damping rate with the drive exactly on resonance (Delta = 0),
// valid through the weak/strong threshold where dressed_modes' closed form
// is 0/0: gamma = (beta - Re sqrt(M^2 - (eps/omega_1)^2)) / 2, i.e. the
// bare magnetron rate at eps = 0 rising to the beta/2 plateau at
// eps >= |M| omega_1. The drive amplitude sweep runs on this curve.
double resonant_magnetron_rate(const CoolingCoefficients& cool, double epsilon,
                               const ModeSet& modes);

// One resonance of the driven system as a measurement would see it: lab-frame
// line frequency and half-width.
struct ResonancePole {
    double omega = 0.0; // rad/s
    double gamma = 0.0; // 1/s
};

// Exact resonances: the four poles of the driven linear response, i.e. roots
// of the characteristic quartic P(nu) Q(nu) = eps^2 in the frame rotating at
// omega_a/2 (same P, Q as the closed-form response). dressed_modes keeps only
// the leading order in the coupling; the true lines sit ~(eps/omega_1)^2 /
// (8 omega_1) away from it, which outruns the linewidth once a strong drive
// has narrowed the lines to beta/2. Sorted by frequency: [0..1] the
// near-magnetron pair, [2..3] the near-cyclotron pair.
std::array<ResonancePole, 4> response_poles(const CoolingCoefficients& cool,
                                            const AxializationDrive& drive,
                                            const ModeSet& modes);

} // namespace penning
