#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "penning/dynamics.hpp"
#include "penning/fitting.hpp"
#include "penning/laser.hpp"
#include "penning/rng.hpp"

// Fluorescence measurement chain: photon arrival times from the motion by
// Poisson thinning, a start-stop correlator referenced to an RF oscillator,
// and the damped-sinusoid fit that turns a histogram into a motional phase.

namespace penning {

struct EventStream {
    std::vector<double> times; // sorted arrival times, s
    double t_begin = 0.0;
    double t_end = 0.0;
    std::uint64_t candidates = 0; // thinning proposals consumed

    std::uint64_t accepted() const { return times.size(); }
};

// Inhomogeneous Poisson sampler. Candidates arrive at the constant bound S0
// (the Lorentzian and Gaussian factors never exceed 1) and are kept with
// probability rate/S0. Exactly two RNG draws per candidate, accepted or not,
// so the stream is reproducible whatever the motion does. Trajectories may be
// fed in abutting chunks to cap memory.
class PhotonGenerator {
  public:
    // omega_fast: fastest modulation in the motion (probe or modified
    // cyclotron); each chunk's sampling must resolve its period ten-fold.
    PhotonGenerator(const LaserBeam& beam, double omega_fast, std::uint64_t seed);

    void extend(const Trajectory& chunk);
    EventStream finish(); // the generator is spent afterwards

  private:
    LaserBeam beam_;
    double omega_fast_ = 0.0;
    Rng rng_;
    EventStream stream_;
    double t_next_ = 0.0;
    bool primed_ = false;
};

// Single-trajectory convenience wrapper.
EventStream generate_photons(const Trajectory& traj, const LaserBeam& beam, double omega_fast,
                             std::uint64_t seed);

struct CorrelationHistogram {
    double bin_width = 0.0; // s
    double omega_ref = 0.0; // rad/s
    std::vector<double> counts;
    std::uint64_t starts = 0; // zero crossings that armed the converter
    std::uint64_t stops = 0;  // armed windows stopped by a photon

    std::size_t bins() const { return counts.size(); }
    double delay_at(std::size_t i) const { return (static_cast<double>(i) + 0.5) * bin_width; }
    double total() const;
};

// Start-stop correlator: each upward zero crossing of the reference
// (t = k 2pi/omega_ref) arms the converter, the first photon after it stops
// it, and the converter stays dead until the next crossing after that photon.
// Stops beyond max_delay are counted but land outside the histogram. With a
// rate-modulated photon stream the histogram carries the modulation phase;
// photon-photon delays would not, since they forget the drive epoch.
CorrelationHistogram correlation_histogram(const EventStream& events, double omega_ref,
                                           double bin_width, double max_delay);

// Histogram model count(dt) = exp(-a dt) (b + c sin(omega_ref dt - phi)).
struct CorrelationFit {
    double envelope_rate = 0.0; // a: mean stop rate, s^-1
    double offset = 0.0;        // b: counts per bin
    double amplitude = 0.0;     // c >= 0: modulation, counts per bin
    double phase = 0.0;         // phi in (-pi, pi]
    double omega_ref = 0.0;
    std::vector<double> covariance; // 4 x 4 row-major (a, b, c, phi)
    double residual_norm = 0.0;
    bool converged = false;
};

// Seeds the envelope from per-period window means (log-linear) and the
// modulation from demodulating the flattened histogram, then refines all four
// parameters. Throws InsufficientDataError when the histogram spans fewer
// than two reference periods or holds too few counts.
CorrelationFit fit_correlation(const CorrelationHistogram& hist);

// --------------------------------------------------------------------------
// Correlation phase versus probe frequency across a motional line.

struct PhaseScanPoint {
    double omega = 0.0;         // probe frequency, rad/s
    double phase = 0.0;         // correlation phase, rad
    double amplitude = 0.0;     // fitted modulation, counts per bin
    double envelope_rate = 0.0; // fitted TAC envelope rate, s^-1
    std::uint64_t stops = 0;
    bool valid = false;
    std::string error; // why the point was dropped
};

struct PhaseScanConfig {
    double dt = 0.0;              // integration step, s
    double duration = 1.0;        // photon record per point, s
    double settle_periods = 8.0;  // of the slowest predicted damping time
    double bin_width = 0.0;       // 0: (2pi/omega)/50
    double max_delay = 0.0;       // 0: 10 periods of the probe
    double chunk_duration = 0.05; // trajectory chunking, s

    // Per-point probe amplitudes (same length as the grid; empty = keep the
    // base probe's). Wide scans need this: the response dies off resonance,
    // so a constant drive leaves the far points with no modulation to fit.
    std::vector<double> amplitudes;
};

struct PhaseScanResult {
    std::vector<PhaseScanPoint> points; // in omega_grid order
    PhaseCurveFit curve;                // arctan fit through the valid points
};

// Runs the full stochastic chain per grid point: settle, integrate, thin,
// correlate against the point's own probe, fit. base.probe provides the
// probe amplitude and kind; each point overrides the frequency. Point seeds
// derive from (seed, index), so results do not depend on jobs. Per-point
// physics/fit failures are recorded; fewer than 5 valid points raises
// ScanFitError.
PhaseScanResult phase_scan(const ForceConfig& base, const LaserBeam& beam,
                           const std::vector<double>& omega_grid, const PhaseScanConfig& cfg,
                           std::uint64_t seed, int jobs);

} // namespace penning
