#include "penning/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "penning/constants.hpp"
#include "penning/errors.hpp"
#include "penning/fitting.hpp"

namespace penning {

namespace {

using cplx = std::complex<double>;

// Constant coefficients of u'' = c1 u' + c0 u + coupling + probe for the
// selected frame; phases are carried separately as phasors.
struct Coeffs {
    cplx c1{0.0, 0.0};
    cplx c0{0.0, 0.0};
    double eps = 0.0;     // coupling strength, 0 when no drive
    double omega_a = 0.0; // lab coupling phase frequency
    double omega_r = 0.0; // rotation rate (rotating frame only)
    bool lab = true;
    bool has_probe = false;
    bool probe_rotating = false;
    double probe_amp = 0.0;
    double probe_omega = 0.0;
};

Coeffs make_coeffs(const ForceConfig& fc) {
    Coeffs co;
    co.lab = fc.frame == Frame::lab;
    const double beta = fc.cool.beta;
    const double alpha = fc.cool.alpha;
    if (!co.lab && !fc.drive)
        throw ConfigError("rotating frame requires an axialization drive to fix omega_r");
    if (co.lab) {
        co.c1 = cplx(-beta, fc.modes.omega_c);
        co.c0 = cplx(0.5 * fc.modes.omega_z * fc.modes.omega_z, alpha);
    } else {
        const double omega_r = 0.5 * fc.drive->omega_a;
        const double delta = fc.drive->delta;
        co.c1 = cplx(-beta, -2.0 * delta);
        co.c0 = cplx(delta * delta - fc.modes.omega_1 * fc.modes.omega_1,
                     alpha - omega_r * beta);
        co.omega_r = omega_r;
    }
    if (fc.drive) {
        co.eps = fc.drive->epsilon;
        co.omega_a = fc.drive->omega_a;
    }
    if (fc.probe) {
        if (fc.probe->omega < 0.0)
            throw ConfigError("probe frequency must be non-negative");
        co.has_probe = fc.probe->amplitude != 0.0;
        co.probe_amp = fc.probe->amplitude;
        co.probe_omega = fc.probe->omega;
        co.probe_rotating = fc.probe->kind == ProbeKind::rotating;
    }
    return co;
}

// drive_ph = e^{i omega_a t}, probe_ph = e^{i omega_probe t},
// frame_ph = e^{i omega_r t}; inactive phasors are passed as 1.
inline cplx acceleration(const Coeffs& co, cplx u, cplx w, cplx drive_ph, cplx probe_ph,
                         cplx frame_ph) {
    cplx a = co.c1 * w + co.c0 * u;
    if (co.eps != 0.0)
        a -= co.lab ? co.eps * std::conj(u) * drive_ph : co.eps * std::conj(u);
    if (co.has_probe) {
        cplx f = co.probe_rotating ? co.probe_amp * probe_ph
                                   : cplx(co.probe_amp * probe_ph.real(), 0.0);
        if (!co.lab)
            f *= std::conj(frame_ph); // lab force seen from the rotating frame
        a += f;
    }
    return a;
}

} // namespace

std::complex<double> equation_of_motion(const ForceConfig& fc, const RadialState& state) {
    const Coeffs co = make_coeffs(fc);
    const cplx one{1.0, 0.0};
    const cplx dph = (co.lab && co.eps != 0.0) ? std::polar(1.0, co.omega_a * state.t) : one;
    const cplx pph = co.has_probe ? std::polar(1.0, co.probe_omega * state.t) : one;
    const cplx fph = (!co.lab && co.has_probe) ? std::polar(1.0, co.omega_r * state.t) : one;
    return acceleration(co, state.u, state.u_dot, dph, pph, fph);
}

RadialState lab_to_rotating(const RadialState& lab, double omega_r) {
    const cplx e = std::polar(1.0, -omega_r * lab.t);
    return {lab.u * e, (lab.u_dot - cplx(0.0, omega_r) * lab.u) * e, lab.t};
}

RadialState rotating_to_lab(const RadialState& rot, double omega_r) {
    const cplx e = std::polar(1.0, omega_r * rot.t);
    return {rot.u * e, (rot.u_dot + cplx(0.0, omega_r) * rot.u) * e, rot.t};
}

Trajectory integrate(const ForceConfig& fc, const RadialState& initial,
                     const IntegrationSpec& spec) {
    const Coeffs co = make_coeffs(fc);
    if (!(spec.dt > 0.0))
        throw ConfigError("integrate: dt must be positive");
    // 20 steps per fast period keeps the RK4 phase/amplitude error of the
    // modified-cyclotron line below the fit tolerances used downstream.
    const double dt_max = constants::two_pi / fc.modes.omega_cp / 20.0;
    if (spec.dt > dt_max * (1.0 + 1e-12)) {
        char buf[160];
        std::snprintf(buf, sizeof buf,
                      "integrate: dt = %.3e s exceeds (2 pi / omega_cp)/20 = %.3e s",
                      spec.dt, dt_max);
        throw ConfigError(buf);
    }
    if (!(spec.divergence_bound_m > 0.0))
        throw ConfigError("integrate: divergence bound must be positive");
    const double dt = spec.dt;
    const auto n_steps = static_cast<std::size_t>(std::llround(spec.duration / dt));
    if (n_steps < 1)
        throw ConfigError("integrate: duration is shorter than one step");
    const std::size_t stride = spec.record_stride == 0 ? n_steps : spec.record_stride;

    Trajectory traj;
    traj.t0 = initial.t;
    traj.sample_dt = static_cast<double>(stride) * dt;
    traj.frame = fc.frame;
    traj.u.reserve(n_steps / stride + 1);
    traj.u_dot.reserve(n_steps / stride + 1);

    const double h2 = 0.5 * dt, h6 = dt / 6.0;
    const double bound2 = spec.divergence_bound_m * spec.divergence_bound_m;

    const bool drive_act = co.lab && co.eps != 0.0;
    const bool probe_act = co.has_probe;
    const bool frame_act = !co.lab && co.has_probe;
    const cplx one{1.0, 0.0};
    // Phase factors advance by multiplication with half-step rotations and are
    // re-anchored to t = t0 + n dt every 2^16 steps to stop drift.
    cplx dph = drive_act ? std::polar(1.0, co.omega_a * initial.t) : one;
    cplx pph = probe_act ? std::polar(1.0, co.probe_omega * initial.t) : one;
    cplx fph = frame_act ? std::polar(1.0, co.omega_r * initial.t) : one;
    const cplx dhalf = drive_act ? std::polar(1.0, co.omega_a * h2) : one;
    const cplx phalf = probe_act ? std::polar(1.0, co.probe_omega * h2) : one;
    const cplx fhalf = frame_act ? std::polar(1.0, co.omega_r * h2) : one;

    cplx u = initial.u;
    cplx w = initial.u_dot;

    for (std::size_t n = 0;; ++n) {
        if (n % stride == 0) {
            traj.u.push_back(u);
            traj.u_dot.push_back(w);
        }
        if (n == n_steps)
            break;
        if ((n & 0xFFFF) == 0 && n != 0) {
            const double t = initial.t + dt * static_cast<double>(n);
            if (drive_act) dph = std::polar(1.0, co.omega_a * t);
            if (probe_act) pph = std::polar(1.0, co.probe_omega * t);
            if (frame_act) fph = std::polar(1.0, co.omega_r * t);
        }
        const cplx d0 = dph, dh = d0 * dhalf, d1 = dh * dhalf;
        const cplx p0 = pph, ph = p0 * phalf, p1 = ph * phalf;
        const cplx f0 = fph, fh = f0 * fhalf, f1 = fh * fhalf;

        const cplx a1 = acceleration(co, u, w, d0, p0, f0);
        const cplx u2 = u + h2 * w, w2 = w + h2 * a1;
        const cplx a2 = acceleration(co, u2, w2, dh, ph, fh);
        const cplx u3 = u + h2 * w2, w3 = w + h2 * a2;
        const cplx a3 = acceleration(co, u3, w3, dh, ph, fh);
        const cplx u4 = u + dt * w3, w4 = w + dt * a3;
        const cplx a4 = acceleration(co, u4, w4, d1, p1, f1);

        u += h6 * (w + 2.0 * (w2 + w3) + w4);
        w += h6 * (a1 + 2.0 * (a2 + a3) + a4);
        dph = d1;
        pph = p1;
        fph = f1;

        const double r2 = std::norm(u);
        if (!(r2 <= bound2)) { // catches NaN as well
            char buf[160];
            std::snprintf(buf, sizeof buf, "trajectory diverged: |u| = %.3e m at t = %.6e s",
                          std::sqrt(r2), initial.t + dt * static_cast<double>(n + 1));
            throw DivergenceError(buf);
        }
    }
    return traj;
}

// --------------------------------------------------------------------------
// Mode extraction.

namespace {

// In-place iterative radix-2 FFT, forward sign convention e^{-2 pi i jk/N}.
void fft_inplace(std::vector<cplx>& a) {
    const std::size_t n = a.size();
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1)
            j ^= bit;
        j ^= bit;
        if (i < j)
            std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const cplx wl = std::polar(1.0, -constants::two_pi / static_cast<double>(len));
        for (std::size_t i = 0; i < n; i += len) {
            cplx w{1.0, 0.0};
            for (std::size_t k = 0; k < len / 2; ++k) {
                const cplx even = a[i + k];
                const cplx odd = a[i + k + len / 2] * w;
                a[i + k] = even + odd;
                a[i + k + len / 2] = even - odd;
                w *= wl;
            }
        }
    }
}

// Frequency seeds: 4-term Blackman-Harris window (-92 dB sidelobes, so a weak
// line is not shadowed by a strong one), 4x zero-padded FFT, greedy peaks with
// a mainlobe-wide exclusion zone, parabolic refinement on log magnitude.
std::vector<double> spectral_seeds(const std::vector<cplx>& y, double dt, int n_modes) {
    const std::size_t n = y.size();
    std::size_t nfft = 1;
    while (nfft < 4 * n)
        nfft <<= 1;
    std::vector<cplx> buf(nfft, cplx(0.0, 0.0));
    const double a0 = 0.35875, a1 = 0.48829, a2 = 0.14128, a3 = 0.01168;
    for (std::size_t i = 0; i < n; ++i) {
        const double x = constants::two_pi * static_cast<double>(i) / static_cast<double>(n - 1);
        const double win = a0 - a1 * std::cos(x) + a2 * std::cos(2.0 * x) - a3 * std::cos(3.0 * x);
        buf[i] = y[i] * win;
    }
    fft_inplace(buf);
    std::vector<double> mag(nfft);
    for (std::size_t j = 0; j < nfft; ++j)
        mag[j] = std::abs(buf[j]);

    const std::size_t excl = std::max<std::size_t>(4, 5 * nfft / n);
    std::vector<double> seeds;
    for (int m = 0; m < n_modes; ++m) {
        const std::size_t jmax =
            static_cast<std::size_t>(std::max_element(mag.begin(), mag.end()) - mag.begin());
        if (mag[jmax] <= 0.0)
            throw FitError("extract_modes: fewer spectral peaks than requested modes");
        const double c = std::log(mag[jmax] + 1e-300);
        const double l = std::log(mag[(jmax + nfft - 1) % nfft] + 1e-300);
        const double r = std::log(mag[(jmax + 1) % nfft] + 1e-300);
        const double denom = l - 2.0 * c + r;
        double shift = 0.0;
        if (denom < 0.0)
            shift = std::clamp(0.5 * (l - r) / denom, -1.0, 1.0);
        double bin = static_cast<double>(jmax) + shift;
        if (bin > 0.5 * static_cast<double>(nfft))
            bin -= static_cast<double>(nfft); // negative-frequency half
        seeds.push_back(constants::two_pi * bin / (static_cast<double>(nfft) * dt));
        for (std::size_t o = 0; o <= 2 * excl; ++o)
            mag[(jmax + nfft - excl + o) % nfft] = 0.0;
    }
    return seeds;
}

// Basis e^{(i omega_k - gamma_k) i dt} (times relative to the first sample)
// and the linearly optimal amplitudes for it. Params interleave as
// [omega_0, gamma_0, omega_1, gamma_1, ...].
struct LinearStage {
    std::vector<cplx> basis; // n x k, row-major
    std::vector<cplx> amps;  // k
};

// Hermitian positive-definite solve via Cholesky; false when not PD.
bool solve_hpd(std::vector<cplx> g, std::vector<cplx> rhs, int k, std::vector<cplx>& x) {
    for (int j = 0; j < k; ++j) {
        double d = g[j * k + j].real();
        for (int p = 0; p < j; ++p)
            d -= std::norm(g[j * k + p]);
        if (!(d > 0.0))
            return false;
        const double ljj = std::sqrt(d);
        g[j * k + j] = ljj;
        for (int i = j + 1; i < k; ++i) {
            cplx s = g[i * k + j];
            for (int p = 0; p < j; ++p)
                s -= g[i * k + p] * std::conj(g[j * k + p]);
            g[i * k + j] = s / ljj;
        }
    }
    // L y = rhs, then L^H x = y.
    for (int i = 0; i < k; ++i) {
        cplx s = rhs[i];
        for (int p = 0; p < i; ++p)
            s -= g[i * k + p] * rhs[p];
        rhs[i] = s / g[i * k + i].real();
    }
    x.assign(k, cplx(0.0, 0.0));
    for (int i = k - 1; i >= 0; --i) {
        cplx s = rhs[i];
        for (int p = i + 1; p < k; ++p)
            s -= std::conj(g[p * k + i]) * x[p];
        x[i] = s / g[i * k + i].real();
    }
    return true;
}

LinearStage solve_amplitudes(const std::vector<cplx>& y, double dt,
                             const std::vector<double>& params) {
    const std::size_t n = y.size();
    const int k = static_cast<int>(params.size() / 2);
    LinearStage st;
    st.basis.resize(n * static_cast<std::size_t>(k));
    for (int m = 0; m < k; ++m) {
        const cplx step = std::exp(cplx(-params[2 * m + 1] * dt, params[2 * m] * dt));
        cplx v{1.0, 0.0};
        for (std::size_t i = 0; i < n; ++i) {
            st.basis[i * k + m] = v;
            v *= step;
        }
    }
    std::vector<cplx> gram(static_cast<std::size_t>(k) * k, cplx(0.0, 0.0));
    std::vector<cplx> rhs(k, cplx(0.0, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
        const cplx* row = &st.basis[i * k];
        for (int a = 0; a < k; ++a) {
            const cplx ca = std::conj(row[a]);
            rhs[a] += ca * y[i];
            for (int b = a; b < k; ++b)
                gram[a * k + b] += ca * row[b];
        }
    }
    for (int a = 0; a < k; ++a)
        for (int b = 0; b < a; ++b)
            gram[a * k + b] = std::conj(gram[b * k + a]);

    double trace = 0.0;
    for (int a = 0; a < k; ++a)
        trace += gram[a * k + a].real();
    double ridge = 0.0;
    for (int attempt = 0; attempt < 8; ++attempt) {
        std::vector<cplx> g = gram;
        for (int a = 0; a < k; ++a)
            g[a * k + a] += ridge;
        if (solve_hpd(std::move(g), rhs, k, st.amps))
            return st;
        ridge = std::max(ridge * 100.0, 1e-14 * trace / k);
    }
    throw SingularJacobianError("extract_modes: amplitude normal equations are singular");
}

} // namespace

std::vector<ExtractedMode> extract_modes(const Trajectory& traj, int n_modes,
                                         double residual_tol) {
    if (n_modes < 1 || n_modes > 12)
        throw ConfigError("extract_modes: n_modes must be in [1, 12]");
    const std::size_t n = traj.size();
    if (n < std::max<std::size_t>(32, 8 * static_cast<std::size_t>(n_modes)))
        throw InsufficientDataError("extract_modes: too few samples for a mode fit");
    const double dt = traj.sample_dt;
    const double t_rec = dt * static_cast<double>(n - 1);
    const std::vector<cplx>& y = traj.u;

    double y_norm2 = 0.0;
    for (const cplx& v : y)
        y_norm2 += std::norm(v);
    if (!(y_norm2 > 0.0))
        throw FitError("extract_modes: trajectory is identically zero");

    const std::vector<double> omega_seeds = spectral_seeds(y, dt, n_modes);
    const int k = n_modes;
    std::vector<double> p0(2 * k);
    for (int m = 0; m < k; ++m) {
        p0[2 * m] = omega_seeds[m];
        p0[2 * m + 1] = 2.0 / t_rec; // refined by the fit
    }

    FitProblem prob;
    prob.residual_size = 2 * n;
    prob.initial = p0;
    prob.scales.resize(2 * k);
    for (int m = 0; m < k; ++m) {
        prob.scales[2 * m] = std::max(std::abs(p0[2 * m]), constants::two_pi / t_rec);
        prob.scales[2 * m + 1] = 1.0 / t_rec;
    }
    prob.residual = [&y, dt, k](const std::vector<double>& p, std::vector<double>& r) {
        const LinearStage st = solve_amplitudes(y, dt, p);
        const std::size_t n_s = y.size();
        for (std::size_t i = 0; i < n_s; ++i) {
            cplx model{0.0, 0.0};
            const cplx* row = &st.basis[i * k];
            for (int m = 0; m < k; ++m)
                model += st.amps[m] * row[m];
            const cplx d = y[i] - model;
            r[2 * i] = d.real();
            r[2 * i + 1] = d.imag();
        }
    };
    // Variable-projection Jacobian with the amplitudes held at their current
    // linear optimum: d r_i / d omega_m = -a_m (i t_i) E_im, d r_i / d gamma_m
    // = +a_m t_i E_im.
    prob.jacobian = [&y, dt, k](const std::vector<double>& p, std::vector<double>& jac) {
        const LinearStage st = solve_amplitudes(y, dt, p);
        const std::size_t n_s = y.size();
        const int np = 2 * k;
        for (std::size_t i = 0; i < n_s; ++i) {
            const double t = dt * static_cast<double>(i);
            const cplx* row = &st.basis[i * k];
            for (int m = 0; m < k; ++m) {
                const cplx c = st.amps[m] * row[m] * t;
                jac[(2 * i) * np + 2 * m] = c.imag();
                jac[(2 * i) * np + 2 * m + 1] = c.real();
                jac[(2 * i + 1) * np + 2 * m] = -c.real();
                jac[(2 * i + 1) * np + 2 * m + 1] = c.imag();
            }
        }
    };

    const FitResult res = least_squares(prob);

    const LinearStage st = solve_amplitudes(y, dt, res.params);
    double r_norm2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        cplx model{0.0, 0.0};
        const cplx* row = &st.basis[i * k];
        for (int m = 0; m < k; ++m)
            model += st.amps[m] * row[m];
        r_norm2 += std::norm(y[i] - model);
    }
    const double rel = std::sqrt(r_norm2 / y_norm2);
    if (!(rel <= residual_tol)) {
        char buf[120];
        std::snprintf(buf, sizeof buf, "extract_modes: relative residual %.3e exceeds %.3e",
                      rel, residual_tol);
        throw FitError(buf);
    }

    std::vector<ExtractedMode> modes(k);
    double slowest = 0.0;
    for (int m = 0; m < k; ++m) {
        modes[m].omega = res.params[2 * m];
        modes[m].gamma = res.params[2 * m + 1];
        modes[m].amplitude = st.amps[m];
        if (m == 0 || std::abs(modes[m].omega) < slowest)
            slowest = std::abs(modes[m].omega);
    }
    if (slowest * t_rec < 10.0 * constants::two_pi)
        throw InsufficientDataError(
            "extract_modes: record covers fewer than 10 periods of the slowest mode");
    std::sort(modes.begin(), modes.end(), [](const ExtractedMode& a, const ExtractedMode& b) {
        return std::abs(a.amplitude) > std::abs(b.amplitude);
    });
    return modes;
}

// --------------------------------------------------------------------------
// Driven steady state.

double slowest_damping_rate(const ForceConfig& fc) {
    double gmin;
    if (fc.drive && fc.drive->epsilon != 0.0) {
        const DressedModeTable table = dressed_modes(fc.cool, *fc.drive, fc.modes);
        gmin = std::min(table.gamma0[0], table.gamma0[1]);
    } else {
        const UnaxializedRates rates = unaxialized_rates(fc.cool, fc.modes);
        gmin = std::min(rates.gamma_cyclotron, rates.gamma_magnetron);
    }
    if (!(gmin > 0.0))
        throw PhysicsError("no steady state: a radial mode is undamped or heating");
    return gmin;
}

double steady_state_phase(const ForceConfig& fc, double settle_periods, double dt,
                          double demod_duration) {
    if (fc.frame != Frame::lab)
        throw ConfigError("steady_state_phase works on the lab-frame response");
    if (!fc.probe || fc.probe->amplitude == 0.0)
        throw ConfigError("steady_state_phase requires a probe");
    const double omega_e = fc.probe->omega;
    if (!(omega_e > 0.0))
        throw ConfigError("steady_state_phase requires probe omega > 0");
    if (!(settle_periods >= 0.0))
        throw ConfigError("steady_state_phase: settle_periods must be >= 0");

    const double gmin = slowest_damping_rate(fc);
    const double t_probe = constants::two_pi / omega_e;

    RadialState state; // from rest: only the driven response survives settling
    if (settle_periods > 0.0) {
        IntegrationSpec settle;
        settle.dt = dt;
        settle.duration = settle_periods / gmin;
        settle.record_stride = 0;
        const Trajectory s = integrate(fc, state, settle);
        state = s.state(s.size() - 1);
    }

    const double t_dem =
        demod_duration > 0.0 ? demod_duration : std::max(2.0 / gmin, 50.0 * t_probe);
    IntegrationSpec rec;
    rec.dt = dt;
    rec.duration = t_dem;
    rec.record_stride =
        static_cast<std::size_t>(std::max(1.0, std::floor(t_probe / (30.0 * dt))));
    const Trajectory traj = integrate(fc, state, rec);
    if (traj.size() < 16)
        throw InsufficientDataError("steady_state_phase: demodulation record too short");

    // Trapezoid demodulation against the probe's own phase reference
    // cos(omega_e t); counter-rotating and idler terms average out over the
    // long window.
    cplx acc{0.0, 0.0};
    const std::size_t last = traj.size() - 1;
    for (std::size_t i = 0; i <= last; ++i) {
        const double wgt = (i == 0 || i == last) ? 0.5 : 1.0;
        acc += wgt * traj.u[i] * std::polar(1.0, -omega_e * traj.time(i));
    }
    if (acc == cplx(0.0, 0.0))
        throw PhysicsError("steady_state_phase: no response at the probe frequency");
    return std::arg(acc);
}

std::complex<double> probe_response(const ForceConfig& fc, double omega) {
    if (!fc.probe)
        throw ConfigError("probe_response requires a probe");
    if (!(omega > 0.0))
        throw ConfigError("probe_response requires omega > 0");
    const double co_amp =
        fc.probe->kind == ProbeKind::linear ? 0.5 * fc.probe->amplitude : fc.probe->amplitude;
    const double beta = fc.cool.beta;
    const double alpha = fc.cool.alpha;
    if (!fc.drive || fc.drive->epsilon == 0.0) {
        // Bare lab poles: (-w^2 + i w (beta - i omega_c) - omega_z^2/2 - i alpha) U = F.
        const cplx den = cplx(-omega * omega + omega * fc.modes.omega_c -
                                  0.5 * fc.modes.omega_z * fc.modes.omega_z,
                              omega * beta - alpha);
        return co_amp / den;
    }
    const double w1 = fc.modes.omega_1;
    const double delta = fc.drive->delta;
    const double w_r = 0.5 * fc.drive->omega_a;
    const double nu = omega - w_r;
    const cplx a_coeff{beta, 2.0 * delta};                          // v' coefficient
    const cplx c_coeff{w1 * w1 - delta * delta, w_r * beta - alpha}; // v coefficient
    const cplx i{0.0, 1.0};
    const cplx p = -nu * nu + i * a_coeff * nu + c_coeff;
    const cplx q = -nu * nu + i * std::conj(a_coeff) * nu + std::conj(c_coeff);
    return co_amp * q / (p * q - fc.drive->epsilon * fc.drive->epsilon);
}

} // namespace penning
