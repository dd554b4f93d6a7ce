#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <complex>
#include <vector>

#include "penning/constants.hpp"
#include "penning/dynamics.hpp"
#include "penning/errors.hpp"
#include "penning/modes.hpp"
#include "penning/trap.hpp"
#include "support.hpp"

using namespace penning;
using testsupport::reference_beam;
using testsupport::reference_trap;

namespace {

using cplx = std::complex<double>;
constexpr double kTwoPi = constants::two_pi;

const ModeSet kModes = mode_set(reference_trap());

CoolingCoefficients reference_cooling() {
    return beam_linearization(reference_beam(), reference_trap().ion, kModes);
}

CoolingCoefficients no_cooling() { return make_cooling(0.0, 0.0, kModes); }

// Exact eigenvalues (u = e^{lambda t}) of the drive-free equation of motion
// u'' = c1 u' + c0 u with c1 = -beta + i omega_c, c0 = omega_z^2/2 + i alpha.
std::array<cplx, 2> bare_eigenvalues(const CoolingCoefficients& cool, const ModeSet& m) {
    const cplx c1(-cool.beta, m.omega_c);
    const cplx c0(0.5 * m.omega_z * m.omega_z, cool.alpha);
    const cplx root = std::sqrt(c1 * c1 + 4.0 * c0);
    cplx hi = 0.5 * (c1 + root), lo = 0.5 * (c1 - root);
    if (hi.imag() < lo.imag()) std::swap(hi, lo); // [0]: cyclotron, [1]: magnetron
    return {hi, lo};
}

// RK4 stability polynomial: one step of u' = lambda u multiplies by R(lambda dt),
// so the numerical trajectory is exactly exp(mu t) with mu = log R / dt.
cplx rk4_numerical_eigenvalue(cplx lambda, double dt) {
    const cplx z = lambda * dt;
    const cplx r = 1.0 + z * (1.0 + z * (0.5 + z * (1.0 / 6.0 + z / 24.0)));
    return std::log(r) / dt;
}

ForceConfig bare_config(const CoolingCoefficients& cool) {
    ForceConfig fc;
    fc.modes = kModes;
    fc.cool = cool;
    return fc;
}

} // namespace

TEST_CASE("equation of motion reproduces circular orbits at the mode frequencies") {
    const ForceConfig fc = bare_config(no_cooling());
    const cplx u0(7.3e-5, -2.1e-5);
    for (double w : {kModes.omega_m, kModes.omega_cp}) {
        const RadialState s{u0, cplx(0.0, w) * u0, 0.37};
        const cplx acc = equation_of_motion(fc, s);
        const cplx expect = -w * w * u0;
        CHECK(std::abs(acc - expect) < 1e-12 * w * w * std::abs(u0));
    }
}

TEST_CASE("integrator error falls at fourth order in the step") {
    // Pure cyclotron circle over five periods; halving dt must cut the final
    // position error by ~2^4.
    const ForceConfig fc = bare_config(no_cooling());
    const double radius = 1e-4;
    const RadialState init{radius, cplx(0.0, kModes.omega_cp) * radius, 0.0};

    auto final_error = [&](double dt, double duration) {
        IntegrationSpec spec;
        spec.dt = dt;
        spec.duration = duration;
        spec.record_stride = 0; // first and last samples only
        const Trajectory traj = integrate(fc, init, spec);
        const double t_end = traj.time(traj.size() - 1);
        const cplx exact = radius * std::polar(1.0, kModes.omega_cp * t_end);
        return std::abs(traj.u.back() - exact);
    };

    const double period = kTwoPi / kModes.omega_cp;
    const double e1 = final_error(period / 25.0, 5.0 * period);
    const double e2 = final_error(period / 50.0, 5.0 * period);
    CHECK(e1 / e2 > 13.0);
    CHECK(e1 / e2 < 19.0);
}

TEST_CASE("cooled free modes decay at the RK4 image of the exact eigenvalues") {
    const CoolingCoefficients cool = reference_cooling();
    const auto lam = bare_eigenvalues(cool, kModes);
    // lam[0] is the cyclotron root (larger |Im|), lam[1] the magnetron root.
    REQUIRE(lam[0].imag() == doctest::Approx(kModes.omega_cp).epsilon(1e-4));
    REQUIRE(lam[1].imag() == doctest::Approx(kModes.omega_m).epsilon(1e-4));

    const cplx a_cyc(6e-5, 0.0), a_mag(-3e-5, 7e-5);
    RadialState init;
    init.u = a_cyc + a_mag;
    init.u_dot = lam[0] * a_cyc + lam[1] * a_mag;

    IntegrationSpec spec;
    spec.dt = 1.44e-8; // T_c'/200: keeps the RK4 eigenvalue shift ~1e-8 relative
    spec.duration = 0.16;
    spec.record_stride = 64;
    const Trajectory traj = integrate(bare_config(cool), init, spec);

    const auto found = extract_modes(traj, 2);
    REQUIRE(found.size() == 2);
    // Sorted by |amplitude|: magnetron component is larger here.
    const ExtractedMode& mag = found[0];
    const ExtractedMode& cyc = found[1];

    const cplx mu_cyc = rk4_numerical_eigenvalue(lam[0], spec.dt);
    const cplx mu_mag = rk4_numerical_eigenvalue(lam[1], spec.dt);

    CHECK(cyc.omega == doctest::Approx(mu_cyc.imag()).epsilon(1e-9));
    CHECK(mag.omega == doctest::Approx(mu_mag.imag()).epsilon(1e-9));
    CHECK(cyc.gamma == doctest::Approx(-mu_cyc.real()).epsilon(1e-6));
    CHECK(mag.gamma == doctest::Approx(-mu_mag.real()).epsilon(1e-6));
    CHECK(std::abs(cyc.amplitude - a_cyc) < 1e-6 * std::abs(a_cyc));
    CHECK(std::abs(mag.amplitude - a_mag) < 1e-6 * std::abs(a_mag));

    // The numerical eigenvalues sit on the exact ones to the discretization
    // error bound: relative (omega dt)^4/120 in frequency.
    CHECK(mu_cyc.imag() == doctest::Approx(lam[0].imag()).epsilon(2e-8));
    CHECK(mu_cyc.real() == doctest::Approx(lam[0].real()).epsilon(2e-5));
    CHECK(mu_mag.imag() == doctest::Approx(lam[1].imag()).epsilon(2e-8));
    CHECK(mu_mag.real() == doctest::Approx(lam[1].real()).epsilon(2e-5));
}

TEST_CASE("laboratory and rotating frames describe the same motion") {
    const CoolingCoefficients cool = reference_cooling();
    const auto drive =
        AxializationDrive::from_epsilon(2e3 * kTwoPi * kModes.omega_1, kTwoPi * 1e3, kModes);
    const double omega_r = 0.5 * drive.omega_a;

    RadialState init;
    init.u = cplx(1e-4, 0.0);
    init.u_dot = cplx(0.0, kModes.omega_m * 1e-4);

    IntegrationSpec spec;
    spec.dt = 1.44e-8;
    spec.duration = 10e-3;
    spec.record_stride = 0;

    ForceConfig lab = bare_config(cool);
    lab.drive = drive;
    const Trajectory in_lab = integrate(lab, init, spec);

    ForceConfig rot = lab;
    rot.frame = Frame::rotating;
    const Trajectory in_rot = integrate(rot, lab_to_rotating(init, omega_r), spec);

    // The frames accumulate different RK4 phase errors (the lab integrates
    // the fast omega_c' oscillation): expect agreement to the lab-frame
    // truncation scale omega t (omega dt)^4/120 ~ 2e-4 relative here.
    const std::size_t last = in_lab.size() - 1;
    const RadialState back =
        rotating_to_lab(in_rot.state(last), omega_r);
    CHECK(std::abs(back.u - in_lab.u[last]) < 5e-4 * std::abs(in_lab.u[last]));
    CHECK(std::abs(back.u_dot - in_lab.u_dot[last]) < 5e-4 * std::abs(in_lab.u_dot[last]));

    // Round trip of the instantaneous transform is exact to rounding.
    const RadialState rt = rotating_to_lab(lab_to_rotating(in_lab.state(last), omega_r),
                                           omega_r);
    CHECK(std::abs(rt.u - in_lab.u[last]) < 1e-14 * std::abs(in_lab.u[last]));
    CHECK(std::abs(rt.u_dot - in_lab.u_dot[last]) < 1e-14 * std::abs(in_lab.u_dot[last]));
}

TEST_CASE("extracted dressed lines match the exact dispersion roots") {
    // Integrate the driven cooled system in the rotating frame and pull out
    // all four lines; the quartic oracle gives the exact eigenvalues, so the
    // only slack needed is RK4 discretization and fit error.
    const CoolingCoefficients cool = reference_cooling();
    const auto drive =
        AxializationDrive::from_epsilon(kTwoPi * 2e3 * kModes.omega_1, kTwoPi * 600.0, kModes);
    REQUIRE(regime_classify(cool, drive, kModes) == Regime::strong);

    ForceConfig fc = bare_config(cool);
    fc.drive = drive;
    fc.frame = Frame::rotating;

    RadialState init;
    init.u = cplx(9e-5, 2e-5);
    init.u_dot = cplx(0.0, kModes.omega_m * 5e-5);

    IntegrationSpec spec;
    spec.dt = 7.3e-8;
    spec.duration = 60e-3;
    spec.record_stride = 16;
    const Trajectory traj = integrate(fc, init, spec);

    const auto found = extract_modes(traj, 4);
    REQUIRE(found.size() == 4);

    const auto oracle = testsupport::dressed_lines_oracle(cool, drive, kModes);
    const double omega_r = 0.5 * drive.omega_a;
    for (const ExtractedMode& mode : found) {
        const double lab_omega = mode.omega + omega_r;
        const cplx* best = &oracle.lab[0];
        for (const cplx& cand : oracle.lab)
            if (std::abs(cand.real() - lab_omega) < std::abs(best->real() - lab_omega))
                best = &cand;
        CHECK(std::abs(lab_omega - best->real()) < 2.0);   // rad/s
        CHECK(std::abs(mode.gamma - best->imag()) < 0.05); // s^-1
        CHECK(std::abs(mode.amplitude) > 1e-7);
    }
}

TEST_CASE("integration guards") {
    const ForceConfig fc = bare_config(reference_cooling());
    const RadialState init{cplx(1e-4, 0.0), cplx(0.0, 0.0), 0.0};

    IntegrationSpec spec;
    spec.dt = kTwoPi / kModes.omega_cp / 10.0; // too coarse: above the T'/20 cap
    spec.duration = 1e-4;
    CHECK_THROWS_AS(integrate(fc, init, spec), ConfigError);

    spec.dt = 0.0;
    CHECK_THROWS_AS(integrate(fc, init, spec), ConfigError);

    // Active heating walks the radius past the divergence bound.
    ForceConfig hot = bare_config(make_cooling(0.0, -5e3, kModes));
    IntegrationSpec blow;
    blow.dt = 7.3e-8;
    blow.duration = 20e-3;
    blow.record_stride = 0;
    blow.divergence_bound_m = 1e-4;
    const RadialState near_edge{cplx(9e-5, 0.0), cplx(0.0, kModes.omega_cp * 9e-5), 0.0};
    CHECK_THROWS_AS(integrate(hot, near_edge, blow), DivergenceError);
}

TEST_CASE("trajectory recording strides") {
    const ForceConfig fc = bare_config(no_cooling());
    const RadialState init{cplx(1e-5, 0.0), cplx(0.0, kModes.omega_m * 1e-5), 0.0};

    IntegrationSpec spec;
    spec.dt = 1e-7;
    spec.duration = 100e-7; // exactly 100 steps
    spec.record_stride = 7;
    const Trajectory traj = integrate(fc, init, spec);
    // Samples at steps 0, 7, ..., 98: 15 of them; the last step is not on
    // the stride grid and is not recorded.
    CHECK(traj.size() == 15);
    CHECK(traj.sample_dt == doctest::Approx(7e-7).epsilon(1e-15));

    spec.record_stride = 0;
    const Trajectory ends = integrate(fc, init, spec);
    CHECK(ends.size() == 2);
    CHECK(ends.time(1) == doctest::Approx(100e-7).epsilon(1e-12));
}

TEST_CASE("mode extraction separates two overlapping decaying tones") {
    Trajectory traj;
    traj.t0 = 0.0;
    traj.sample_dt = 5e-7;
    traj.frame = Frame::rotating;
    const cplx amp_a(3e-5, 0.0);
    const cplx amp_b = 1e-4 * std::polar(1.0, constants::pi / 3.0);
    const double wa = 1.00e6, ga = 300.0, wb = 1.05e6, gb = 80.0;
    for (int i = 0; i < 4096; ++i) {
        const double t = traj.sample_dt * i;
        const cplx va = amp_a * std::polar(std::exp(-ga * t), wa * t);
        const cplx vb = amp_b * std::polar(std::exp(-gb * t), wb * t);
        traj.u.push_back(va + vb);
        traj.u_dot.push_back(cplx(0.0, wa) * va + cplx(0.0, wb) * vb -
                             ga * va - gb * vb);
    }

    const auto modes = extract_modes(traj, 2);
    REQUIRE(modes.size() == 2);
    CHECK(modes[0].omega == doctest::Approx(wb).epsilon(1e-8));
    CHECK(modes[0].gamma == doctest::Approx(gb).epsilon(1e-6));
    CHECK(std::abs(modes[0].amplitude - amp_b) < 1e-6 * std::abs(amp_b));
    CHECK(modes[1].omega == doctest::Approx(wa).epsilon(1e-8));
    CHECK(modes[1].gamma == doctest::Approx(ga).epsilon(1e-6));
    CHECK(std::abs(modes[1].amplitude - amp_a) < 1e-6 * std::abs(amp_a));

    // One mode cannot explain the pair within a tight residual budget.
    CHECK_THROWS_AS(extract_modes(traj, 1, 1e-3), FitError);

    // Records shorter than ten periods of the slowest line are refused:
    // 64 us of a 1 kHz tone fits fine but cannot support its frequency.
    Trajectory brief;
    brief.sample_dt = 1e-6;
    brief.frame = Frame::rotating;
    for (int i = 0; i < 64; ++i) {
        const double t = brief.sample_dt * i;
        const cplx v = 1e-5 * std::polar(std::exp(-50.0 * t), kTwoPi * 1e3 * t);
        brief.u.push_back(v);
        brief.u_dot.push_back((cplx(0.0, kTwoPi * 1e3) - 50.0) * v);
    }
    CHECK_THROWS_AS(extract_modes(brief, 1), InsufficientDataError);

    CHECK_THROWS_AS(extract_modes(traj, 0), ConfigError);
    CHECK_THROWS_AS(extract_modes(traj, 13), ConfigError);
}

TEST_CASE("steady-state phase equals the analytic transfer function") {
    // Fast-damping synthetic operating point keeps the settle time short.
    const double beta = 2e4;
    const double alpha = beta * (kModes.omega_m + 0.5 * 2.0 * kModes.omega_1);
    const CoolingCoefficients cool = make_cooling(alpha, beta, kModes);

    ForceConfig fc = bare_config(cool);
    Probe probe;
    probe.amplitude = 1e2; // m/s^2
    probe.omega = 1.02 * kModes.omega_m;
    probe.kind = ProbeKind::linear;
    fc.probe = probe;

    const double dt = 7.2e-8;
    const double measured = steady_state_phase(fc, 12.0, dt);

    // u'' = c1 u' + c0 u + A cos(omega t): the co-rotating response is
    // U+ = (A/2) / (-omega^2 - i omega c1 - c0).
    const cplx c1(-cool.beta, kModes.omega_c);
    const cplx c0(0.5 * kModes.omega_z * kModes.omega_z, cool.alpha);
    const double w = probe.omega;
    const cplx u_plus = (0.5 * probe.amplitude) / (-w * w - cplx(0.0, w) * c1 - c0);
    const double expected = std::arg(u_plus);

    CHECK(std::abs(std::remainder(measured - expected, kTwoPi)) < 5e-3);

    // A rotating probe drives only the co-rotating response: same phase.
    fc.probe->kind = ProbeKind::rotating;
    const double rot_phase = steady_state_phase(fc, 12.0, dt);
    CHECK(std::abs(std::remainder(rot_phase - expected, kTwoPi)) < 5e-3);

    // Guards: a probe is required, and the lab frame only.
    ForceConfig bare = bare_config(cool);
    CHECK_THROWS_AS(steady_state_phase(bare, 12.0, dt), ConfigError);
}

TEST_CASE("driven steady-state phase matches the coupled transfer function") {
    // With the quadrupole drive on, the integrated steady state must land on
    // the closed-form response the phase scans are fitted against. Fast
    // synthetic damping keeps the transient short (all four dressed rates
    // are near beta/2 here).
    const double beta = 2e4;
    const double alpha = beta * (kModes.omega_m + 1.1 * kModes.omega_1);
    const CoolingCoefficients cool = make_cooling(alpha, beta, kModes);

    ForceConfig fc = bare_config(cool);
    fc.drive = AxializationDrive::from_epsilon(6e10, kTwoPi * 800.0, kModes);
    Probe probe;
    probe.amplitude = 1e2; // m/s^2
    probe.kind = ProbeKind::linear;
    fc.probe = probe;

    const auto poles = response_poles(cool, *fc.drive, kModes);
    const double dt = 7.2e-8;
    for (double w : {poles[0].omega, poles[0].omega + 3.0 * poles[0].gamma,
                     poles[1].omega - poles[1].gamma, 0.9 * kModes.omega_m,
                     1.4 * kModes.omega_m}) {
        fc.probe->omega = w;
        const double measured = steady_state_phase(fc, 12.0, dt);
        const double expected = std::arg(probe_response(fc, w));
        CHECK(std::abs(std::remainder(measured - expected, kTwoPi)) < 5e-3);
    }

    // The rotating probe sees the same poles with twice the co-rotating
    // drive: equal phase at equal frequency.
    fc.probe->omega = poles[1].omega;
    fc.probe->kind = ProbeKind::rotating;
    CHECK(std::abs(std::remainder(steady_state_phase(fc, 12.0, dt) -
                                      std::arg(probe_response(fc, fc.probe->omega)),
                                  kTwoPi)) < 5e-3);
}

TEST_CASE("slowest damping rate picks the bottleneck mode") {
    const CoolingCoefficients cool = reference_cooling();
    ForceConfig fc = bare_config(cool);
    CHECK(slowest_damping_rate(fc) == doctest::Approx(3.079661522808385).epsilon(1e-9));

    fc.drive = AxializationDrive::from_epsilon(35266046973.38629, 0.0, kModes);
    CHECK(slowest_damping_rate(fc) ==
          doctest::Approx(0.5 * 83.45663199975942).epsilon(1e-9));

    ForceConfig hot = bare_config(make_cooling(-1e7, -50.0, kModes));
    CHECK_THROWS_AS(slowest_damping_rate(hot), PhysicsError);
}
