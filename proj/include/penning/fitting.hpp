#pragma once

#include <cstddef>
#include <functional>
#include <vector>

// Deterministic nonlinear least squares: Levenberg-Marquardt (damped
// Gauss-Newton) with numerically differenced Jacobians by default (central
// differences, relative step 1e-6) or an analytic Jacobian supplied by the
// model. No randomized pivoting or threading anywhere, so identical inputs
// give identical fits.

namespace penning {

struct FitProblem {
    // Fill residuals r (size residual_size) for parameters p.
    std::function<void(const std::vector<double>& p, std::vector<double>& r)> residual;

    // Optional analytic Jacobian: fill row-major J (residual_size x n_params).
    std::function<void(const std::vector<double>& p, std::vector<double>& jac)> jacobian;

    std::size_t residual_size = 0;
    std::vector<double> initial;

    std::vector<double> weights; // per-residual, > 0; empty = all 1
    std::vector<double> lower;   // box bounds; empty = unbounded
    std::vector<double> upper;
    std::vector<double> scales;  // typical parameter magnitudes for FD steps; empty = 1

    int max_iterations = 200;
    double step_tol = 1e-14;  // stop when the scaled step is this small
    double cost_tol = 1e-15;  // stop on relative cost decrease this small
};

struct FitResult {
    std::vector<double> params;
    std::vector<double> covariance;   // n x n row-major, sigma^2 (J^T W J)^-1
    double residual_norm = 0.0;       // sqrt(sum w r^2)
    int iterations = 0;
    bool converged = false;
};

// Throws SingularJacobianError when the damped normal equations cannot be
// solved at any damping level; returns converged = false (best point so far)
// when the iteration cap is hit.
FitResult least_squares(const FitProblem& problem);

// ---------------------------------------------------------------------------
// Avoided-crossing fit: data points (omega_a, omega) near the magnetron
// branch pair are modeled, with the cooling asymmetry M fixed to 0, as
//   Delta = (omega_a - omega_c)/2
//   omega_lower/upper = omega_m + Delta -/+ sqrt(Delta^2 + g^2/4)
// with parameters omega_c, omega_m and gap g = eps/omega_1. Each point is
// assigned to the nearer branch during the fit.

struct CrossingPointDatum {
    double omega_a = 0.0; // drive frequency, rad/s
    double omega = 0.0;   // measured line frequency, rad/s
};

struct CrossingFit {
    double omega_c = 0.0;
    double omega_m = 0.0;
    double gap = 0.0;                 // eps/omega_1, rad/s
    std::vector<int> branch;          // per point: 0 = lower, 1 = upper
    std::vector<double> covariance;   // 3 x 3 row-major
    double residual_norm = 0.0;
    bool converged = false;
};

// Initial values are data-driven: omega_c from the drive frequency of minimum
// pair separation, the gap from that separation, omega_m from the pair mean
// there. Throws ScanFitError for fewer than 4 usable points and
// BranchAssignmentError when a point fits both (well separated) branches
// equally well.
CrossingFit fit_avoided_crossing(const std::vector<CrossingPointDatum>& data);

// ---------------------------------------------------------------------------
// Resonance phase curve: a single damped pole crossed by a probe produces
//   phi(omega) = phi0 + sign * atan((omega - omega0) / gamma)
// so the fitted gamma is the half-width of the line and the phase steps by pi
// across it.

struct PhasePointDatum {
    double omega = 0.0; // probe frequency, rad/s
    double phase = 0.0; // measured phase, rad (any branch; unwrapped internally)
};

struct PhaseCurveFit {
    double omega0 = 0.0; // line centre, rad/s
    double gamma = 0.0;  // half-width at half-maximum, s^-1 (> 0)
    double phi0 = 0.0;   // phase at the centre, rad
    int sign = +1;       // sense of the step, fixed from the data trend
    double span = 0.0;   // max - min of the unwrapped data, rad (pi for a full step)
    std::vector<PhasePointDatum> unwrapped; // sorted by omega, phases unwrapped
    std::vector<double> covariance;          // 3 x 3 row-major (omega0, gamma, phi0)
    double residual_norm = 0.0;
    bool converged = false;
};

// Sorts by frequency, unwraps phases by nearest-2pi steps, fixes the step
// sense from the overall trend and fits (omega0, gamma, phi0). Throws
// ScanFitError for fewer than 5 points or non-distinct frequencies.
PhaseCurveFit fit_phase_curve(std::vector<PhasePointDatum> data);

} // namespace penning
