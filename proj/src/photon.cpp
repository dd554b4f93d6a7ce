#include "penning/photon.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <complex>
#include <cstdio>
#include <exception>
#include <thread>

#include "penning/constants.hpp"
#include "penning/errors.hpp"

namespace penning {

namespace {

using cplx = std::complex<double>;

} // namespace

PhotonGenerator::PhotonGenerator(const LaserBeam& beam, double omega_fast, std::uint64_t seed)
    : beam_(beam), omega_fast_(omega_fast), rng_(seed) {
    validate(beam_);
    if (!(omega_fast_ > 0.0))
        throw ConfigError("photon generator: omega_fast must be positive");
}

void PhotonGenerator::extend(const Trajectory& chunk) {
    if (chunk.frame != Frame::lab)
        throw ConfigError("photon generation needs a lab-frame trajectory");
    if (chunk.size() < 2)
        throw ConfigError("photon generation: chunk needs at least two samples");
    const double t_mod = constants::two_pi / omega_fast_;
    if (chunk.sample_dt > 0.1 * t_mod * (1.0 + 1e-12)) {
        char buf[160];
        std::snprintf(buf, sizeof buf,
                      "photon generation: sample dt = %.3e s undersamples the fastest "
                      "modulation period %.3e s (need 10 per period)",
                      chunk.sample_dt, t_mod);
        throw ConfigError(buf);
    }
    const double s0 = beam_.saturation_rate;
    if (!primed_) {
        stream_.t_begin = chunk.t0;
        t_next_ = chunk.t0 + rng_.exponential(s0);
        primed_ = true;
    } else if (std::abs(chunk.t0 - stream_.t_end) > 0.5 * chunk.sample_dt) {
        throw ConfigError("photon generation: trajectory chunks must abut in time");
    }
    const double t_end_chunk = chunk.time(chunk.size() - 1);
    const double inv_dt = 1.0 / chunk.sample_dt;
    while (t_next_ < t_end_chunk) {
        double fi = (t_next_ - chunk.t0) * inv_dt;
        if (fi < 0.0)
            fi = 0.0;
        std::size_t i = static_cast<std::size_t>(fi);
        if (i >= chunk.size() - 1)
            i = chunk.size() - 2;
        const double frac = fi - static_cast<double>(i);
        const double y = (1.0 - frac) * chunk.u[i].imag() + frac * chunk.u[i + 1].imag();
        const double xd = (1.0 - frac) * chunk.u_dot[i].real() + frac * chunk.u_dot[i + 1].real();
        const double rate = scattering_rate(beam_, y, xd);
        ++stream_.candidates;
        if (rng_.uniform() * s0 < rate)
            stream_.times.push_back(t_next_);
        t_next_ += rng_.exponential(s0);
    }
    stream_.t_end = t_end_chunk;
}

EventStream PhotonGenerator::finish() {
    primed_ = false;
    return std::move(stream_);
}

EventStream generate_photons(const Trajectory& traj, const LaserBeam& beam, double omega_fast,
                             std::uint64_t seed) {
    PhotonGenerator gen(beam, omega_fast, seed);
    gen.extend(traj);
    return gen.finish();
}

double CorrelationHistogram::total() const {
    double s = 0.0;
    for (double c : counts)
        s += c;
    return s;
}

CorrelationHistogram correlation_histogram(const EventStream& events, double omega_ref,
                                           double bin_width, double max_delay) {
    if (!(omega_ref > 0.0))
        throw ConfigError("correlation: omega_ref must be positive");
    if (!(bin_width > 0.0))
        throw ConfigError("correlation: bin width must be positive");
    if (!(max_delay >= bin_width))
        throw ConfigError("correlation: max_delay must cover at least one bin");
    const double n_bins = std::ceil(max_delay / bin_width - 1e-9);
    if (!(n_bins <= 2e7))
        throw ConfigError("correlation: histogram would exceed 2e7 bins");

    CorrelationHistogram h;
    h.bin_width = bin_width;
    h.omega_ref = omega_ref;
    h.counts.assign(static_cast<std::size_t>(n_bins), 0.0);

    const double t_ref = constants::two_pi / omega_ref;
    const std::vector<double>& ts = events.times;
    std::size_t j = 0;
    double k = std::ceil(events.t_begin / t_ref - 1e-12);
    while (true) {
        const double t_start = k * t_ref;
        if (t_start >= events.t_end)
            break;
        ++h.starts;
        while (j < ts.size() && ts[j] <= t_start)
            ++j;
        if (j == ts.size())
            break; // armed at the end of the record, never stopped
        ++h.stops;
        const double delta = ts[j] - t_start;
        const auto bin = static_cast<std::size_t>(delta / bin_width);
        if (bin < h.counts.size())
            h.counts[bin] += 1.0;
        k = std::floor(ts[j] / t_ref) + 1.0; // dead until the next crossing
    }
    return h;
}

CorrelationFit fit_correlation(const CorrelationHistogram& hist) {
    if (hist.counts.empty() || !(hist.bin_width > 0.0) || !(hist.omega_ref > 0.0))
        throw ConfigError("fit_correlation: malformed histogram");
    const std::size_t nb = hist.counts.size();
    const double t_ref = constants::two_pi / hist.omega_ref;
    const double span = static_cast<double>(nb) * hist.bin_width;
    const int n_periods = static_cast<int>(std::floor(span / t_ref + 1e-9));
    if (n_periods < 2)
        throw InsufficientDataError(
            "fit_correlation: histogram spans fewer than two reference periods");
    if (hist.total() < 100.0)
        throw InsufficientDataError("fit_correlation: too few counts to fit");

    // Envelope seed: whole-period window means kill the modulation, leaving
    // mean_w ~ b exp(-a t_w); fit the log-line.
    std::vector<double> wt, wy;
    for (int w = 0; w < n_periods; ++w) {
        const double lo = w * t_ref, hi = (w + 1) * t_ref;
        double sum = 0.0;
        int cnt = 0;
        for (std::size_t i = 0; i < nb; ++i) {
            const double t = hist.delay_at(i);
            if (t >= lo && t < hi) {
                sum += hist.counts[i];
                ++cnt;
            }
        }
        if (cnt > 0 && sum > 0.0) {
            wt.push_back(0.5 * (lo + hi));
            wy.push_back(std::log(sum / cnt));
        }
    }
    if (wt.size() < 2)
        throw InsufficientDataError("fit_correlation: envelope windows are empty");
    double st = 0.0, sy = 0.0, stt = 0.0, sty = 0.0;
    for (std::size_t i = 0; i < wt.size(); ++i) {
        st += wt[i];
        sy += wy[i];
        stt += wt[i] * wt[i];
        sty += wt[i] * wy[i];
    }
    const double nw = static_cast<double>(wt.size());
    const double denom = nw * stt - st * st;
    const double slope = denom > 0.0 ? (nw * sty - st * sy) / denom : 0.0;
    const double intercept = (sy - slope * st) / nw;
    const double a0 = std::max(-slope, 0.01 / span);
    const double b0 = std::exp(intercept);

    // Modulation seed: flatten by the envelope estimate and demodulate. The
    // oscillation is fitted in quadrature components p sin + q cos rather
    // than amplitude/phase: (c, phi) is singular at c = 0, where a poorly
    // seeded phase can pin the amplitude against its bound and stall the
    // minimiser; (p, q) is degeneracy-free. 2<r e^{-iwt}> = q - i p.
    const double t_use = std::min(span, 3.0 / a0);
    cplx z{0.0, 0.0};
    std::size_t n_used = 0;
    for (std::size_t i = 0; i < nb; ++i) {
        const double t = hist.delay_at(i);
        if (t > t_use)
            break;
        z += hist.counts[i] * std::exp(a0 * t) * std::polar(1.0, -hist.omega_ref * t);
        ++n_used;
    }
    z *= 2.0 / static_cast<double>(std::max<std::size_t>(n_used, 1));
    const double p0 = -z.imag();
    const double q0 = z.real();
    const double qscale = std::max(std::abs(z), 0.1 * b0);

    FitProblem prob;
    prob.residual_size = nb;
    prob.initial = {a0, b0, p0, q0};
    prob.scales = {a0, std::max(b0, 1.0), qscale, qscale};
    const double huge = 1e300;
    prob.lower = {0.0, 0.0, -huge, -huge};
    prob.upper = {huge, huge, huge, huge};
    const double omega = hist.omega_ref;
    const double bw = hist.bin_width;
    const std::vector<double>& counts = hist.counts;
    prob.residual = [omega, bw, &counts](const std::vector<double>& p, std::vector<double>& r) {
        for (std::size_t i = 0; i < counts.size(); ++i) {
            const double t = (static_cast<double>(i) + 0.5) * bw;
            const double osc = p[2] * std::sin(omega * t) + p[3] * std::cos(omega * t);
            r[i] = counts[i] - std::exp(-p[0] * t) * (p[1] + osc);
        }
    };
    const FitResult res = least_squares(prob);

    // p sin + q cos = c sin(w t - phi) with c = |(p, q)|, phi = atan2(-q, p).
    const double pc = res.params[2];
    const double qc = res.params[3];
    const double amp = std::hypot(pc, qc);

    CorrelationFit out;
    out.envelope_rate = res.params[0];
    out.offset = res.params[1];
    out.amplitude = amp;
    out.phase = std::atan2(-qc, pc);
    out.omega_ref = hist.omega_ref;
    out.covariance = res.covariance;
    if (amp > 0.0 && out.covariance.size() == 16) {
        // Push Sigma through d(c, phi)/d(p, q) so the reported uncertainties
        // stay in amplitude/phase terms.
        const double jc[2] = {pc / amp, qc / amp};
        const double jf[2] = {qc / (amp * amp), -pc / (amp * amp)};
        std::vector<double> cov = out.covariance;
        auto mix = [&](const double* ja, const double* jb) {
            return ja[0] * (jb[0] * cov[2 * 4 + 2] + jb[1] * cov[2 * 4 + 3]) +
                   ja[1] * (jb[0] * cov[3 * 4 + 2] + jb[1] * cov[3 * 4 + 3]);
        };
        for (int k = 0; k < 2; ++k) { // rows a, b against the polar pair
            const double sc = jc[0] * cov[k * 4 + 2] + jc[1] * cov[k * 4 + 3];
            const double sf = jf[0] * cov[k * 4 + 2] + jf[1] * cov[k * 4 + 3];
            out.covariance[k * 4 + 2] = out.covariance[2 * 4 + k] = sc;
            out.covariance[k * 4 + 3] = out.covariance[3 * 4 + k] = sf;
        }
        out.covariance[2 * 4 + 2] = mix(jc, jc);
        out.covariance[2 * 4 + 3] = out.covariance[3 * 4 + 2] = mix(jc, jf);
        out.covariance[3 * 4 + 3] = mix(jf, jf);
    }
    out.residual_norm = res.residual_norm;
    out.converged = res.converged;
    return out;
}

// --------------------------------------------------------------------------
// Stochastic phase scan.

namespace {

PhaseScanPoint scan_point(const ForceConfig& base, const LaserBeam& beam, double omega_probe,
                          double amplitude, const PhaseScanConfig& cfg,
                          std::uint64_t point_seed) {
    PhaseScanPoint pt;
    pt.omega = omega_probe;
    try {
        ForceConfig fc = base;
        fc.probe->omega = omega_probe;
        if (amplitude > 0.0) fc.probe->amplitude = amplitude;
        const double gmin = slowest_damping_rate(fc);
        const double dt = cfg.dt;

        RadialState state;
        if (cfg.settle_periods > 0.0) {
            IntegrationSpec settle;
            settle.dt = dt;
            settle.duration = cfg.settle_periods / gmin;
            settle.record_stride = 0;
            const Trajectory s = integrate(fc, state, settle);
            state = s.state(s.size() - 1);
        }

        const double omega_fast = std::max(fc.modes.omega_cp, omega_probe);
        const double t_mod = constants::two_pi / omega_fast;
        const auto stride =
            static_cast<std::size_t>(std::max(1.0, std::floor(t_mod / (10.0 * dt))));
        const auto round_up = [stride](double steps) {
            const auto n = static_cast<std::size_t>(std::llround(steps));
            return (n + stride - 1) / stride * stride;
        };
        const std::size_t steps_total = std::max(round_up(cfg.duration / dt), stride);
        const std::size_t steps_chunk = std::max(round_up(cfg.chunk_duration / dt), stride);

        PhotonGenerator gen(beam, omega_fast, point_seed);
        std::size_t done = 0;
        while (done < steps_total) {
            const std::size_t n = std::min(steps_chunk, steps_total - done);
            IntegrationSpec spec;
            spec.dt = dt;
            spec.duration = static_cast<double>(n) * dt;
            spec.record_stride = stride;
            const Trajectory chunk = integrate(fc, state, spec);
            gen.extend(chunk);
            state = chunk.state(chunk.size() - 1);
            done += n;
        }
        const EventStream events = gen.finish();

        const double t_ref = constants::two_pi / omega_probe;
        const double bw = cfg.bin_width > 0.0 ? cfg.bin_width : t_ref / 50.0;
        const double md = cfg.max_delay > 0.0 ? cfg.max_delay : 10.0 * t_ref;
        const CorrelationHistogram hist = correlation_histogram(events, omega_probe, bw, md);
        const CorrelationFit fit = fit_correlation(hist);

        pt.phase = fit.phase;
        pt.amplitude = fit.amplitude;
        pt.envelope_rate = fit.envelope_rate;
        pt.stops = hist.stops;
        pt.valid = fit.converged;
        if (!fit.converged)
            pt.error = "correlation fit did not converge";
    } catch (const ConfigError&) {
        throw; // caller mistake, not a statistical casualty
    } catch (const Error& e) {
        pt.valid = false;
        pt.error = e.what();
    }
    return pt;
}

} // namespace

PhaseScanResult phase_scan(const ForceConfig& base, const LaserBeam& beam,
                           const std::vector<double>& omega_grid, const PhaseScanConfig& cfg,
                           std::uint64_t seed, int jobs) {
    if (omega_grid.empty())
        throw ConfigError("phase_scan: empty frequency grid");
    if (!base.probe || (base.probe->amplitude == 0.0 && cfg.amplitudes.empty()))
        throw ConfigError("phase_scan requires a probe with non-zero amplitude");
    if (base.frame != Frame::lab)
        throw ConfigError("phase_scan operates on the lab-frame motion");
    if (!(cfg.dt > 0.0))
        throw ConfigError("phase_scan: dt must be positive");
    if (!(cfg.duration > 0.0) || !(cfg.chunk_duration > 0.0))
        throw ConfigError("phase_scan: durations must be positive");
    if (!cfg.amplitudes.empty() && cfg.amplitudes.size() != omega_grid.size())
        throw ConfigError("phase_scan: amplitudes must match the frequency grid");
    for (double a : cfg.amplitudes)
        if (!(a > 0.0))
            throw ConfigError("phase_scan: amplitudes must be positive");

    const std::size_t n = omega_grid.size();
    const auto amp_at = [&cfg](std::size_t i) {
        return cfg.amplitudes.empty() ? 0.0 : cfg.amplitudes[i];
    };
    PhaseScanResult out;
    out.points.resize(n);

    int n_jobs = jobs > 0 ? jobs : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    n_jobs = std::min<int>(n_jobs, static_cast<int>(n));

    if (n_jobs <= 1) {
        for (std::size_t i = 0; i < n; ++i)
            out.points[i] =
                scan_point(base, beam, omega_grid[i], amp_at(i), cfg, derive_seed(seed, i));
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n_jobs));
        std::vector<std::thread> pool;
        pool.reserve(static_cast<std::size_t>(n_jobs));
        for (int w = 0; w < n_jobs; ++w) {
            pool.emplace_back([&, w]() {
                try {
                    for (std::size_t i; (i = next.fetch_add(1)) < n;)
                        out.points[i] = scan_point(base, beam, omega_grid[i], amp_at(i), cfg,
                                                   derive_seed(seed, i));
                } catch (...) {
                    errors[static_cast<std::size_t>(w)] = std::current_exception();
                }
            });
        }
        for (std::thread& t : pool)
            t.join();
        for (const std::exception_ptr& e : errors)
            if (e)
                std::rethrow_exception(e);
    }

    std::vector<PhasePointDatum> good;
    for (const PhaseScanPoint& pt : out.points)
        if (pt.valid)
            good.push_back({pt.omega, pt.phase});
    if (good.size() < 5) {
        char buf[120];
        std::snprintf(buf, sizeof buf, "phase_scan: only %zu of %zu points usable", good.size(),
                      n);
        throw ScanFitError(buf);
    }
    out.curve = fit_phase_curve(std::move(good));
    return out;
}

} // namespace penning
