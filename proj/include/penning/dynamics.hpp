#pragma once

#include <complex>
#include <cstddef>
#include <optional>
#include <vector>

#include "penning/modes.hpp"
#include "penning/trap.hpp"

// Time-domain integration of the radial equation of motion. The laboratory
// frame integrates
//
//   u'' = -(beta - i omega_c) u' + (omega_z^2/2 + i alpha) u
//         - eps conj(u) e^{+i omega_a t} + f(t)
//
// and the frame rotating at omega_r = omega_a/2 (v = u e^{-i omega_r t}) the
// equivalent constant-coefficient form
//
//   v'' = -(beta + 2 i Delta) v' - (omega_1^2 - Delta^2 + i (omega_r beta - alpha)) v
//         - eps conj(v) + f(t) e^{-i omega_r t}.
//
// f(t) is an optional probe: a linear dipole A cos(omega t) along x (default)
// or a rotating dipole A e^{i omega t}. Fixed-step RK4; the conj() coupling
// just makes the vector field non-holomorphic, which RK4 does not care about.

namespace penning {

struct RadialState {
    std::complex<double> u{0.0, 0.0};     // x + i y, metres
    std::complex<double> u_dot{0.0, 0.0}; // velocity, m/s
    double t = 0.0;                       // seconds
};

enum class Frame { lab, rotating };
enum class ProbeKind { linear, rotating };

struct Probe {
    double amplitude = 0.0; // force per mass, m/s^2
    double omega = 0.0;     // excitation angular frequency, rad/s
    ProbeKind kind = ProbeKind::linear;
};

struct ForceConfig {
    ModeSet modes;
    CoolingCoefficients cool;
    std::optional<AxializationDrive> drive; // absent: eps = 0, no coupling term
    std::optional<Probe> probe;
    Frame frame = Frame::lab;
};

// Instantaneous acceleration for the configured frame; state.t matters for
// the lab-frame coupling phase and the probe.
std::complex<double> equation_of_motion(const ForceConfig& fc, const RadialState& state);

struct IntegrationSpec {
    double dt = 0.0;              // step, s; must satisfy dt <= (2 pi / omega_cp) / 20
    double duration = 0.0;        // total integration time, s
    std::size_t record_stride = 1; // store every n-th step; 0 = first and last only
    double divergence_bound_m = 1.0; // throw DivergenceError past this radius
};

// Uniformly sampled at t0 + i * sample_dt (sample_dt = record_stride * dt).
struct Trajectory {
    double t0 = 0.0;
    double sample_dt = 0.0;
    std::vector<std::complex<double>> u;
    std::vector<std::complex<double>> u_dot;
    Frame frame = Frame::lab;

    std::size_t size() const { return u.size(); }
    double time(std::size_t i) const { return t0 + sample_dt * static_cast<double>(i); }
    RadialState state(std::size_t i) const { return {u[i], u_dot[i], time(i)}; }
};

Trajectory integrate(const ForceConfig& fc, const RadialState& initial,
                     const IntegrationSpec& spec);

// Frame transforms at a single instant (v = u e^{-i omega_r t}).
RadialState lab_to_rotating(const RadialState& lab, double omega_r);
RadialState rotating_to_lab(const RadialState& rot, double omega_r);

// One damped complex exponential amp * e^{(i omega - gamma) t}.
struct ExtractedMode {
    double omega = 0.0;  // rad/s
    double gamma = 0.0;  // s^-1 (positive = decaying)
    std::complex<double> amplitude{0.0, 0.0}; // at the trajectory's t0
};

// Fits n_modes damped complex exponentials to a trajectory: spectral peaks
// (Blackman-Harris window, zero-padded FFT) seed a variable-projection
// refinement where the linear amplitudes are solved exactly and only
// (omega_k, gamma_k) iterate. Modes return sorted by |amplitude| descending.
// Throws InsufficientDataError for records shorter than 10 periods of the
// slowest detected mode and FitError when the residual exceeds
// residual_tol * ||data||.
std::vector<ExtractedMode> extract_modes(const Trajectory& traj, int n_modes,
                                         double residual_tol = 1e-2);

// Phase of the driven motion at the probe frequency relative to the probe,
// in (-pi, pi]: integrate past the transient (settle_periods of the slowest
// predicted damping time), then demodulate u(t) at omega over an integer
// number of probe periods. demod_duration <= 0 picks a default from the
// predicted rates. Requires a probe and damped dynamics.
double steady_state_phase(const ForceConfig& fc, double settle_periods, double dt,
                          double demod_duration = 0.0);

// Closed-form steady-state phasor of u's e^{+i omega t} component under the
// probe's co-rotating part (A/2 for a linear probe, A rotating). With the
// drive on, the conj coupling mixes in a partner tone at omega_a - omega and
// the response picks up the dressed poles:
//   U = F Q(nu) / (P(nu) Q(nu) - eps^2),  nu = omega - omega_a/2,
// P, Q the rotating-frame quadratics; eps = 0 reduces to the bare lab pole
// pair. The counter-rotating response (far off resonance) is not included.
// This is what a phase scan measures, up to the detection convention.
std::complex<double> probe_response(const ForceConfig& fc, double omega);

// Slowest predicted damping rate of the configured dynamics (dressed when a
// drive is present, otherwise the two uncoupled rates); throws PhysicsError
// if any rate is non-positive (no steady state to settle to).
double slowest_damping_rate(const ForceConfig& fc);

} // namespace penning
