#include "penning/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <exception>
#include <fstream>
#include <limits>
#include <mutex>
#include <ostream>
#include <set>
#include <thread>
#include <utility>

#include "penning/constants.hpp"
#include "penning/errors.hpp"
#include "penning/io.hpp"
#include "penning/photon.hpp"
#include "penning/rng.hpp"
#include "penning/version.hpp"

namespace penning {

using nlohmann::json;

namespace {

std::string fmt(const char* f, ...) {
    char buf[512];
    va_list args;
    va_start(args, f);
    std::vsnprintf(buf, sizeof buf, f, args);
    va_end(args);
    return buf;
}

// Strict object reader: every access marks its key, finish() rejects the
// rest. Unknown keys are the usual symptom of a unit mistake (the units are
// part of the key names), so the diagnostics carry the full field path.
class Fields {
  public:
    Fields(const json& j, std::string path) : j_(&j), path_(std::move(path)) {
        if (!j.is_object())
            throw ConfigError("config: " + (path_.empty() ? std::string("document") : path_) +
                              " must be an object");
    }

    bool has(const char* key) const { return j_->contains(key); }

    std::string at(const char* key) const {
        return path_.empty() ? std::string(key) : path_ + "." + key;
    }

    const json* take(const char* key) {
        auto it = j_->find(key);
        if (it == j_->end()) return nullptr;
        seen_.insert(key);
        return &*it;
    }

    const json* object(const char* key) {
        const json* v = take(key);
        if (!v) return nullptr;
        if (!v->is_object()) throw ConfigError("config: " + at(key) + " must be an object");
        return v;
    }

    std::optional<double> maybe_number(const char* key) {
        const json* v = take(key);
        if (!v) return std::nullopt;
        if (!v->is_number()) throw ConfigError("config: " + at(key) + " must be a number");
        return v->get<double>();
    }

    double number(const char* key) {
        auto v = maybe_number(key);
        if (!v) throw ConfigError("config: missing required field " + at(key));
        return *v;
    }

    std::optional<std::int64_t> maybe_integer(const char* key) {
        const json* v = take(key);
        if (!v) return std::nullopt;
        if (!v->is_number_integer())
            throw ConfigError("config: " + at(key) + " must be an integer");
        return v->get<std::int64_t>();
    }

    std::optional<std::uint64_t> maybe_u64(const char* key) {
        const json* v = take(key);
        if (!v) return std::nullopt;
        if (!v->is_number_unsigned() && !(v->is_number_integer() && v->get<std::int64_t>() >= 0))
            throw ConfigError("config: " + at(key) + " must be a non-negative integer");
        return v->get<std::uint64_t>();
    }

    std::optional<bool> maybe_bool(const char* key) {
        const json* v = take(key);
        if (!v) return std::nullopt;
        if (!v->is_boolean()) throw ConfigError("config: " + at(key) + " must be a boolean");
        return v->get<bool>();
    }

    std::optional<std::string> maybe_string(const char* key) {
        const json* v = take(key);
        if (!v) return std::nullopt;
        if (!v->is_string()) throw ConfigError("config: " + at(key) + " must be a string");
        return v->get<std::string>();
    }

    std::optional<std::vector<double>> maybe_number_list(const char* key) {
        const json* v = take(key);
        if (!v) return std::nullopt;
        if (!v->is_array()) throw ConfigError("config: " + at(key) + " must be an array of numbers");
        std::vector<double> out;
        out.reserve(v->size());
        for (const auto& e : *v) {
            if (!e.is_number())
                throw ConfigError("config: " + at(key) + " must contain only numbers");
            out.push_back(e.get<double>());
        }
        return out;
    }

    void finish() {
        for (auto it = j_->begin(); it != j_->end(); ++it)
            if (seen_.find(it.key()) == seen_.end())
                throw ConfigError("config: unknown field " + at(it.key().c_str()));
    }

  private:
    const json* j_;
    std::string path_;
    std::set<std::string> seen_;
};

bool known_experiment(const std::string& e) {
    return e == "modes" || e == "amplitude-sweep" || e == "phase-scan" ||
           e == "avoided-crossing" || e == "trajectory";
}

void parse_trap(Fields& top, ExperimentConfig& cfg) {
    const json* t = top.object("trap");
    if (!t) throw ConfigError("config: missing required section trap");
    Fields f(*t, "trap");

    cfg.ion.mass_amu = f.maybe_number("mass_amu").value_or(40.0);
    if (auto z = f.maybe_integer("charge_e")) cfg.ion.charge = static_cast<int>(*z);
    if (cfg.ion.mass_amu <= 0.0) throw ConfigError("config: trap.mass_amu must be > 0");
    if (cfg.ion.charge < 1) throw ConfigError("config: trap.charge_e must be >= 1");

    const bool physical = f.has("B_T");
    const bool measured = f.has("f_c_kHz") || f.has("f_m_kHz");
    if (physical == measured)
        throw ConfigError("config: trap needs either B_T + U0_V (+ R2_m2 or f_z_kHz) "
                          "or measured f_c_kHz + f_m_kHz");

    if (physical) {
        TrapConfig trap;
        trap.ion = cfg.ion;
        trap.b_tesla = f.number("B_T");
        trap.u0_volts = f.number("U0_V");
        const bool has_r2 = f.has("R2_m2");
        const bool has_fz = f.has("f_z_kHz");
        if (has_r2 == has_fz)
            throw ConfigError("config: trap needs exactly one of R2_m2, f_z_kHz");
        if (has_r2)
            trap.r_squared_m2 = f.number("R2_m2");
        else
            trap.r_squared_m2 =
                calibrate_r_squared(rad_s_from_khz(f.number("f_z_kHz")), trap.u0_volts, cfg.ion);
        cfg.trap = trap;
        cfg.modes = mode_set(trap);
    } else {
        const double fc = f.number("f_c_kHz");
        const double fm = f.number("f_m_kHz");
        cfg.modes = ModeSet::from_cyclotron_magnetron(rad_s_from_khz(fc), rad_s_from_khz(fm));
    }
    if (auto fm = f.maybe_number("f_m_measured_kHz")) {
        if (!physical)
            throw ConfigError("config: trap.f_m_measured_kHz only applies to the physical "
                              "form; the measured form already takes f_m_kHz");
        if (*fm <= 0.0) throw ConfigError("config: trap.f_m_measured_kHz must be > 0");
        cfg.omega_m_measured = rad_s_from_khz(*fm);
    }
    f.finish();
}

void parse_cooling(Fields& top, ExperimentConfig& cfg) {
    const json* c = top.object("cooling");
    if (!c) throw ConfigError("config: missing required section cooling");
    Fields f(*c, "cooling");

    if (const json* b = f.object("beam")) {
        Fields bf(*b, "cooling.beam");
        LaserBeam beam;
        beam.wavelength_m = bf.maybe_number("wavelength_nm").value_or(397.0) * 1e-9;
        beam.linewidth = rad_s_from_hz(bf.number("linewidth_MHz") * 1e6);
        const auto det_mhz = bf.maybe_number("detuning_MHz");
        const auto det_lw = bf.maybe_number("detuning_linewidths");
        if (det_mhz && det_lw)
            throw ConfigError("config: cooling.beam detuning_MHz and detuning_linewidths "
                              "are exclusive");
        if (det_mhz)
            beam.detuning = rad_s_from_hz(*det_mhz * 1e6);
        else if (det_lw)
            beam.detuning = *det_lw * beam.linewidth;
        else
            throw ConfigError("config: cooling.beam needs detuning_MHz or detuning_linewidths");
        beam.waist_m = bf.number("waist_um") * 1e-6;
        beam.offset_y_m = bf.number("offset_y_um") * 1e-6;
        beam.saturation_rate = bf.number("S0_per_s");
        bf.finish();
        validate(beam);
        cfg.beam = beam;
    }

    const bool has_alpha = f.has("alpha_per_s2");
    const bool has_beta = f.has("beta_per_s");
    if (has_alpha != has_beta)
        throw ConfigError("config: cooling needs both alpha_per_s2 and beta_per_s or neither");
    if (has_alpha) {
        cfg.cool = make_cooling(f.number("alpha_per_s2"), f.number("beta_per_s"), cfg.modes);
    } else if (cfg.beam) {
        cfg.cool = beam_linearization(*cfg.beam, cfg.ion, cfg.modes);
        cfg.cool_from_beam = true;
    } else {
        throw ConfigError("config: cooling needs a beam or direct alpha_per_s2 + beta_per_s");
    }
    f.finish();
}

void parse_drive(Fields& top, ExperimentConfig& cfg) {
    const json* d = top.object("drive");
    if (!d) return;
    Fields f(*d, "drive");

    const bool has_fa = f.has("f_a_kHz");
    const bool has_delta = f.has("delta_kHz");
    if (has_fa && has_delta)
        throw ConfigError("config: drive.f_a_kHz and drive.delta_kHz are exclusive");
    double delta = 0.0;
    if (has_fa)
        delta = 0.5 * (rad_s_from_khz(f.number("f_a_kHz")) - cfg.modes.omega_c);
    else if (has_delta)
        delta = rad_s_from_khz(f.number("delta_kHz"));

    const int forms = int(f.has("eps_per_s2")) + int(f.has("g_kHz")) + int(f.has("V0_mV"));
    if (forms != 1)
        throw ConfigError("config: drive needs exactly one of eps_per_s2, g_kHz, V0_mV");
    if (f.has("eps_per_s2")) {
        cfg.drive = AxializationDrive::from_epsilon(f.number("eps_per_s2"), delta, cfg.modes);
    } else if (f.has("g_kHz")) {
        const double g = rad_s_from_khz(f.number("g_kHz"));
        cfg.drive = AxializationDrive::from_epsilon(g * cfg.modes.omega_1, delta, cfg.modes);
    } else {
        const double v0 = f.number("V0_mV") * 1e-3;
        const double r0 = f.number("r0_mm") * 1e-3;
        cfg.drive = AxializationDrive::from_voltage(v0, r0, cfg.ion, delta, cfg.modes);
    }
    f.finish();
}

void parse_probe(Fields& top, ExperimentConfig& cfg) {
    const json* p = top.object("probe");
    if (!p) return;
    Fields f(*p, "probe");

    Probe probe;
    const auto amp = f.maybe_number("amplitude_m_s2");
    const auto target = f.maybe_number("response_target_um");
    if (amp && target)
        throw ConfigError("config: probe.amplitude_m_s2 and probe.response_target_um "
                          "are exclusive");
    if (!amp && !target)
        throw ConfigError("config: probe needs amplitude_m_s2 or response_target_um");
    if (amp) {
        if (*amp <= 0.0) throw ConfigError("config: probe.amplitude_m_s2 must be > 0");
        probe.amplitude = *amp;
    } else {
        if (*target <= 0.0) throw ConfigError("config: probe.response_target_um must be > 0");
        cfg.probe_target_m = *target * 1e-6;
    }
    probe.omega = rad_s_from_khz(f.maybe_number("f_kHz").value_or(0.0));
    if (probe.omega < 0.0) throw ConfigError("config: probe.f_kHz must be >= 0");
    if (auto k = f.maybe_string("kind")) {
        if (*k == "linear")
            probe.kind = ProbeKind::linear;
        else if (*k == "rotating")
            probe.kind = ProbeKind::rotating;
        else
            throw ConfigError("config: probe.kind must be \"linear\" or \"rotating\"");
    }
    f.finish();
    cfg.probe = probe;
}

void parse_sections(Fields& top, ExperimentConfig& cfg) {
    if (const json* s = top.object("integration")) {
        Fields f(*s, "integration");
        cfg.dt = f.maybe_number("dt_s").value_or(0.0);
        if (cfg.dt < 0.0) throw ConfigError("config: integration.dt_s must be >= 0");
        cfg.settle_periods = f.maybe_number("settle_periods").value_or(8.0);
        if (cfg.settle_periods <= 0.0)
            throw ConfigError("config: integration.settle_periods must be > 0");
        f.finish();
    }
    if (const json* s = top.object("statistics")) {
        Fields f(*s, "statistics");
        cfg.photons_per_point = f.maybe_number("photons_per_point").value_or(1e5);
        if (cfg.photons_per_point <= 0.0)
            throw ConfigError("config: statistics.photons_per_point must be > 0");
        if (auto seed = f.maybe_u64("seed")) cfg.seed = *seed;
        f.finish();
    }
    if (const json* s = top.object("execution")) {
        Fields f(*s, "execution");
        if (auto a = f.maybe_bool("analytic")) cfg.analytic = *a;
        if (auto j = f.maybe_integer("jobs")) {
            if (*j < 0) throw ConfigError("config: execution.jobs must be >= 0");
            cfg.jobs = static_cast<int>(*j);
        }
        f.finish();
    }
    if (const json* s = top.object("output")) {
        Fields f(*s, "output");
        if (auto dir = f.maybe_string("dir")) {
            if (dir->empty()) throw ConfigError("config: output.dir must not be empty");
            cfg.out_dir = *dir;
        }
        f.finish();
    }
    if (const json* s = top.object("phase_scan")) {
        Fields f(*s, "phase_scan");
        if (auto c = f.maybe_number("centre_kHz")) {
            if (*c <= 0.0) throw ConfigError("config: phase_scan.centre_kHz must be > 0");
            cfg.scan_centre = rad_s_from_khz(*c);
        }
        cfg.scan_span_gammas = f.maybe_number("span_gammas").value_or(3.0);
        if (cfg.scan_span_gammas <= 0.0)
            throw ConfigError("config: phase_scan.span_gammas must be > 0");
        if (auto n = f.maybe_integer("points")) cfg.scan_points = static_cast<int>(*n);
        if (cfg.scan_points < 5)
            throw ConfigError("config: phase_scan.points must be >= 5 (the arctan fit "
                              "needs five points)");
        f.finish();
    }
    if (const json* s = top.object("amplitude_sweep")) {
        Fields f(*s, "amplitude_sweep");
        auto v0 = f.maybe_number_list("V0_mV");
        auto eps = f.maybe_number_list("eps_per_s2");
        if (bool(v0) == bool(eps))
            throw ConfigError("config: amplitude_sweep needs exactly one of V0_mV, eps_per_s2");
        const auto r0 = f.maybe_number("r0_mm");
        if (v0) {
            if (v0->empty()) throw ConfigError("config: amplitude_sweep.V0_mV must not be empty");
            for (double v : *v0)
                if (v < 0.0) throw ConfigError("config: amplitude_sweep.V0_mV must be >= 0");
            if (!r0 || *r0 <= 0.0)
                throw ConfigError("config: amplitude_sweep.V0_mV needs r0_mm > 0");
            cfg.sweep_v0_volts.reserve(v0->size());
            for (double v : *v0) cfg.sweep_v0_volts.push_back(v * 1e-3);
            cfg.sweep_r0_m = *r0 * 1e-3;
        } else {
            if (eps->empty())
                throw ConfigError("config: amplitude_sweep.eps_per_s2 must not be empty");
            for (double e : *eps)
                if (e < 0.0) throw ConfigError("config: amplitude_sweep.eps_per_s2 must be >= 0");
            cfg.sweep_epsilon = *eps;
        }
        f.finish();
    }
    if (const json* s = top.object("avoided_crossing")) {
        Fields f(*s, "avoided_crossing");
        if (auto h = f.maybe_number("half_span_kHz")) {
            if (*h <= 0.0) throw ConfigError("config: avoided_crossing.half_span_kHz must be > 0");
            cfg.crossing_half_span = rad_s_from_khz(*h);
        }
        if (auto n = f.maybe_integer("points")) cfg.crossing_points = static_cast<int>(*n);
        if (cfg.crossing_points < 2)
            throw ConfigError("config: avoided_crossing.points must be >= 2");
        cfg.crossing_span_gammas = f.maybe_number("span_gammas").value_or(1.5);
        if (cfg.crossing_span_gammas <= 0.0)
            throw ConfigError("config: avoided_crossing.span_gammas must be > 0");
        if (auto n = f.maybe_integer("scan_points"))
            cfg.crossing_scan_points = static_cast<int>(*n);
        if (cfg.crossing_scan_points < 5)
            throw ConfigError("config: avoided_crossing.scan_points must be >= 5");
        f.finish();
    }
    if (const json* s = top.object("trajectory")) {
        Fields f(*s, "trajectory");
        cfg.duration = f.maybe_number("duration_s").value_or(0.0);
        if (cfg.duration < 0.0) throw ConfigError("config: trajectory.duration_s must be > 0");
        if (auto n = f.maybe_u64("record_stride")) cfg.record_stride = *n;
        if (auto fr = f.maybe_string("frame")) {
            if (*fr == "lab")
                cfg.frame = Frame::lab;
            else if (*fr == "rotating")
                cfg.frame = Frame::rotating;
            else
                throw ConfigError("config: trajectory.frame must be \"lab\" or \"rotating\"");
        }
        const double x0 = f.maybe_number("x0_um").value_or(0.0) * 1e-6;
        const double y0 = f.maybe_number("y0_um").value_or(0.0) * 1e-6;
        const double vx0 = f.maybe_number("vx0_m_s").value_or(0.0);
        const double vy0 = f.maybe_number("vy0_m_s").value_or(0.0);
        cfg.u0 = {x0, y0};
        cfg.u_dot0 = {vx0, vy0};
        f.finish();
    }
}

// --------------------------------------------------------------------------
// Runner plumbing.

using Clock = std::chrono::steady_clock;

double elapsed_s(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

int effective_jobs(const ExperimentConfig& cfg) {
    if (cfg.jobs > 0) return cfg.jobs;
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

double default_dt(const ExperimentConfig& cfg) {
    return cfg.dt > 0.0 ? cfg.dt : (constants::two_pi / cfg.modes.omega_cp) / 40.0;
}

// Index-ordered worker pool: results land in caller-owned slots keyed by i,
// so the output order never depends on scheduling. The first exception wins
// and is rethrown on the caller's thread after everyone joins.
template <typename Body>
void parallel_for(std::size_t n, int jobs, Body&& body) {
    const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(std::max(jobs, 1)), n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::mutex mtx;
    std::exception_ptr first;
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (;;) {
                const std::size_t i = next.fetch_add(1);
                if (i >= n) return;
                try {
                    body(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(mtx);
                    if (!first) first = std::current_exception();
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    if (first) std::rethrow_exception(first);
}

json manifest_base(const ExperimentConfig& cfg) {
    return json{{"experiment", cfg.experiment},
                {"seed", cfg.seed},
                {"jobs", effective_jobs(cfg)},
                {"analytic", cfg.analytic},
                {"versions", {{"penning", version}, {"config_schema", config_schema_version}}},
                {"config", cfg.raw},
                {"outputs", json::array()}};
}

void finish_manifest(const ExperimentConfig& cfg, json& man, Clock::time_point t0,
                     std::ostream& report) {
    man["timings"] = {{"total_s", elapsed_s(t0)}};
    write_json(cfg.out_dir / "manifest.json", man);
    report << "wrote " << (cfg.out_dir / "manifest.json").string();
    for (const auto& o : man["outputs"]) report << ", " << cfg.out_dir.string() << "/" << o.get<std::string>();
    report << "\n";
}

ForceConfig base_force(const ExperimentConfig& cfg) {
    ForceConfig fc;
    fc.modes = cfg.modes;
    fc.cool = cfg.cool;
    fc.drive = cfg.drive;
    fc.probe = cfg.probe;
    fc.frame = Frame::lab;
    return fc;
}

// Probe auto-gain: amplitude that makes the modelled response at omega equal
// the configured target displacement, so scans at very different line widths
// (and the off-resonant tails of wide scans) all run at the same modulation
// depth.
double gain_for_target(const ExperimentConfig& cfg, ForceConfig fc, double omega) {
    fc.probe->amplitude = 1.0;
    const double unit = std::abs(probe_response(fc, omega));
    return *cfg.probe_target_m / unit;
}

std::vector<double> gains_for_grid(const ExperimentConfig& cfg, ForceConfig fc,
                                   const std::vector<double>& grid) {
    fc.probe->amplitude = 1.0;
    std::vector<double> amps;
    amps.reserve(grid.size());
    for (double w : grid) amps.push_back(*cfg.probe_target_m / std::abs(probe_response(fc, w)));
    return amps;
}

// Model expectation for where the near-magnetron line sits and how wide it
// is, used to build scan grids. On exact resonance the dressed closed form
// degenerates below threshold, so that case goes through the resonant-rate
// expression with the lines at omega_m -/+ delta0 (delta0 = 0 when weak).
struct LineChoice {
    double centre = 0.0; // rad/s
    double gamma = 0.0;  // s^-1
};

LineChoice magnetron_line(const CoolingCoefficients& cool, const ModeSet& modes,
                          const std::optional<AxializationDrive>& drive) {
    if (!drive || drive->epsilon == 0.0) {
        const UnaxializedRates bare = unaxialized_rates(cool, modes);
        return {modes.omega_m, bare.gamma_magnetron};
    }
    if (drive->delta == 0.0) {
        const double w1 = modes.omega_1;
        const double m_coeff = (2.0 * cool.alpha - cool.beta * modes.omega_c) / (2.0 * w1);
        const double eps = drive->epsilon;
        const double disc = eps * eps - m_coeff * m_coeff * w1 * w1;
        const double delta0 = disc > 0.0 ? std::sqrt(disc) / (2.0 * w1) : 0.0;
        return {modes.omega_m - delta0, resonant_magnetron_rate(cool, eps, modes)};
    }
    const DressedModeTable tab = dressed_modes(cool, *drive, modes);
    const DressedLine& ln = tab.line(true, drive->delta > 0.0 ? +1 : -1);
    return {ln.omega, ln.gamma};
}

// Where a measurement actually finds the near-magnetron line: the exact
// response pole, not the leading-order table (strong drives shift the lines
// by more than their beta/2 width). Of the pole pair, an experimenter locks
// onto whichever sits nearer the bare magnetron frequency; if the pair is
// not resolved within its own widths, the narrow one dominates the signal.
LineChoice magnetron_pole(const CoolingCoefficients& cool, const ModeSet& modes,
                          const std::optional<AxializationDrive>& drive) {
    if (!drive || drive->epsilon == 0.0) {
        const UnaxializedRates bare = unaxialized_rates(cool, modes);
        return {modes.omega_m, bare.gamma_magnetron};
    }
    const auto poles = response_poles(cool, *drive, modes);
    const ResonancePole& lo = poles[0];
    const ResonancePole& hi = poles[1];
    const double d_lo = std::abs(lo.omega - modes.omega_m);
    const double d_hi = std::abs(hi.omega - modes.omega_m);
    if (std::abs(d_lo - d_hi) <= 0.5 * (lo.gamma + hi.gamma))
        return lo.gamma <= hi.gamma ? LineChoice{lo.omega, lo.gamma}
                                    : LineChoice{hi.omega, hi.gamma};
    return d_lo <= d_hi ? LineChoice{lo.omega, lo.gamma} : LineChoice{hi.omega, hi.gamma};
}

std::vector<double> scan_grid(double centre, double half_span, int n) {
    std::vector<double> grid(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const double x = n == 1 ? 0.0 : 2.0 * i / (n - 1.0) - 1.0;
        grid[static_cast<std::size_t>(i)] = centre + half_span * x;
    }
    for (double w : grid)
        if (w <= 0.0)
            throw ConfigError(fmt("scan grid reaches a non-positive frequency "
                                  "(centre %.6g rad/s, half-span %.6g rad/s)",
                                  centre, half_span));
    return grid;
}

PhaseScanConfig scan_config(const ExperimentConfig& cfg) {
    if (!cfg.beam) throw ConfigError(cfg.experiment + ": stochastic mode needs cooling.beam "
                                     "(or run with --analytic)");
    const double rate0 = scattering_rate(*cfg.beam, 0.0, 0.0);
    if (rate0 <= 0.0)
        throw ConfigError(cfg.experiment + ": beam scattering rate at the trap centre is 0");
    PhaseScanConfig pcfg;
    pcfg.dt = default_dt(cfg);
    pcfg.duration = cfg.photons_per_point / rate0;
    pcfg.settle_periods = cfg.settle_periods;
    return pcfg;
}

json curve_json(const PhaseCurveFit& curve) {
    return json{{"f0_kHz", khz_from_rad_s(curve.omega0)},
                {"gamma_per_s", curve.gamma},
                {"phi0_rad", curve.phi0},
                {"sign", curve.sign},
                {"span_rad", curve.span},
                {"residual_norm", curve.residual_norm},
                {"converged", curve.converged}};
}

void report_curve(std::ostream& report, const PhaseCurveFit& curve) {
    report << fmt("fit: f0 = %.6f kHz   half-width = %.6g s^-1   span = %.4f rad   "
                  "sign %+d   %s\n",
                  khz_from_rad_s(curve.omega0), curve.gamma, curve.span, curve.sign,
                  curve.converged ? "converged" : "NOT converged");
}

} // namespace

// ---------------------------------------------------------------------------
// Configuration.

ExperimentConfig parse_config(const json& doc) {
    ExperimentConfig cfg;
    cfg.raw = doc;
    Fields top(doc, "");

    if (auto e = top.maybe_string("experiment")) {
        if (!known_experiment(*e))
            throw ConfigError("config: experiment must be one of modes, amplitude-sweep, "
                              "phase-scan, avoided-crossing, trajectory (got \"" + *e + "\")");
        cfg.experiment = *e;
    }

    parse_trap(top, cfg);
    parse_cooling(top, cfg);
    parse_drive(top, cfg);
    parse_probe(top, cfg);
    parse_sections(top, cfg);
    top.finish();
    return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path.string());
    json doc;
    try {
        doc = json::parse(in, nullptr, /*allow_exceptions=*/true, /*ignore_comments=*/true);
    } catch (const json::parse_error& e) {
        throw ConfigError("config: " + path.string() + ": " + e.what());
    }
    return parse_config(doc);
}

void apply_overrides(ExperimentConfig& cfg, const ConfigOverrides& ov) {
    if (ov.experiment) {
        if (!known_experiment(*ov.experiment))
            throw ConfigError("config: unknown experiment \"" + *ov.experiment + "\"");
        cfg.experiment = *ov.experiment;
    }
    if (ov.seed) cfg.seed = *ov.seed;
    if (ov.out_dir) cfg.out_dir = *ov.out_dir;
    if (ov.analytic) cfg.analytic = *ov.analytic;
    if (ov.jobs) {
        if (*ov.jobs < 0) throw ConfigError("config: jobs must be >= 0");
        cfg.jobs = *ov.jobs;
    }
}

// ---------------------------------------------------------------------------
// modes: static report of the frequency/damping structure.

json run_modes(const ExperimentConfig& cfg, std::ostream& report) {
    const auto t0 = Clock::now();
    const ModeSet& m = cfg.modes;
    json man = manifest_base(cfg);

    const double half_wz2 = 0.5 * m.omega_z * m.omega_z;
    const double sum_rel = std::abs(m.omega_m + m.omega_cp - m.omega_c) / m.omega_c;
    const double prod_rel = std::abs(m.omega_m * m.omega_cp - half_wz2) / half_wz2;
    const bool sum_ok = sum_rel < 1e-12;
    const bool prod_ok = prod_rel < 1e-12;

    report << "mode frequencies (kHz)\n"
           << fmt("  f_z  = %12.6f\n", khz_from_rad_s(m.omega_z))
           << fmt("  f_c  = %12.6f\n", khz_from_rad_s(m.omega_c))
           << fmt("  f_c' = %12.6f\n", khz_from_rad_s(m.omega_cp))
           << fmt("  f_m  = %12.6f\n", khz_from_rad_s(m.omega_m))
           << fmt("  f_1  = %12.6f\n", khz_from_rad_s(m.omega_1));
    report << "identities (relative error)\n"
           << fmt("  f_m + f_c' = f_c       %.2e  %s\n", sum_rel, sum_ok ? "pass" : "FAIL")
           << fmt("  f_m * f_c' = f_z^2/2   %.2e  %s\n", prod_rel, prod_ok ? "pass" : "FAIL");
    if (cfg.omega_m_measured) {
        const double meas = khz_from_rad_s(*cfg.omega_m_measured);
        const double model = khz_from_rad_s(m.omega_m);
        report << fmt("  measured f_m = %.4f kHz vs ideal quadrupole %.4f kHz "
                      "(dev %+.4f kHz, %+.2f%%)\n",
                      meas, model, meas - model, 100.0 * (meas - model) / model);
    }

    const UnaxializedRates bare = unaxialized_rates(cfg.cool, m);
    const CoolingWindow win = cooling_window(cfg.cool, m);
    report << "cooling\n"
           << fmt("  alpha = %.6e s^-2  (|alpha|/omega_z^2 = %.1e%s)\n", cfg.cool.alpha,
                  cfg.cool.alpha_ratio, cfg.cool.alpha_small ? "" : ", OUTSIDE linear regime")
           << fmt("  beta  = %.6e s^-1  (beta/omega_c = %.1e%s)\n", cfg.cool.beta,
                  cfg.cool.beta_ratio, cfg.cool.beta_small ? "" : ", OUTSIDE linear regime")
           << fmt("  gamma_cyclotron = %.6g s^-1   gamma_magnetron = %.6g s^-1\n",
                  bare.gamma_cyclotron, bare.gamma_magnetron)
           << fmt("  window: alpha/beta = %.4f kHz in (f_m, f_c') = (%.4f, %.4f)  %s\n",
                  khz_from_rad_s(win.ratio), khz_from_rad_s(win.lower),
                  khz_from_rad_s(win.upper), win.both_cooled ? "pass" : "FAIL");

    man["results"] = {
        {"f_z_kHz", khz_from_rad_s(m.omega_z)},
        {"f_c_kHz", khz_from_rad_s(m.omega_c)},
        {"f_cp_kHz", khz_from_rad_s(m.omega_cp)},
        {"f_m_kHz", khz_from_rad_s(m.omega_m)},
        {"f_1_kHz", khz_from_rad_s(m.omega_1)},
        {"identities",
         {{"sum_rel", sum_rel}, {"product_rel", prod_rel}, {"pass", sum_ok && prod_ok}}},
        {"cooling",
         {{"alpha_per_s2", cfg.cool.alpha},
          {"beta_per_s", cfg.cool.beta},
          {"from_beam", cfg.cool_from_beam},
          {"linearization_ok", cfg.cool.alpha_small && cfg.cool.beta_small},
          {"gamma_cyclotron_per_s", bare.gamma_cyclotron},
          {"gamma_magnetron_per_s", bare.gamma_magnetron},
          {"window",
           {{"lower_kHz", khz_from_rad_s(win.lower)},
            {"upper_kHz", khz_from_rad_s(win.upper)},
            {"ratio_kHz", khz_from_rad_s(win.ratio)},
            {"both_cooled", win.both_cooled}}}}},
    };
    if (cfg.omega_m_measured) {
        const double meas = khz_from_rad_s(*cfg.omega_m_measured);
        man["results"]["f_m_measured_kHz"] = meas;
        man["results"]["f_m_measured_dev_kHz"] = meas - khz_from_rad_s(m.omega_m);
    }

    CsvTable table;
    table.columns = {"f_kHz", "gamma_per_s", "branch", "near_magnetron"};

    if (cfg.drive) {
        const AxializationDrive& d = *cfg.drive;
        const double g = d.epsilon / m.omega_1;
        const Regime reg = regime_classify(cfg.cool, d, m);
        report << "axialization drive\n"
               << fmt("  eps = %.6e s^-2   eps/omega_1 = %.6f kHz\n", d.epsilon,
                      khz_from_rad_s(g))
               << fmt("  f_a = %.6f kHz  (Delta = %+.6f kHz)\n", khz_from_rad_s(d.omega_a),
                      khz_from_rad_s(d.delta))
               << fmt("  regime: %s\n", regime_name(reg));
        json drive_j{{"eps_per_s2", d.epsilon},
                     {"g_kHz", khz_from_rad_s(g)},
                     {"f_a_kHz", khz_from_rad_s(d.omega_a)},
                     {"delta_kHz", khz_from_rad_s(d.delta)},
                     {"regime", regime_name(reg)}};

        json lines_j = json::array();
        try {
            const DressedModeTable tab = dressed_modes(cfg.cool, d, m);
            report << "dressed lines\n";
            for (const DressedLine& ln : tab.lines) {
                report << fmt("  %s %c   f = %12.6f kHz   gamma = %12.6g s^-1\n",
                              ln.near_magnetron ? "mag" : "cyc", ln.branch > 0 ? '+' : '-',
                              khz_from_rad_s(ln.omega), ln.gamma);
                table.rows.push_back({khz_from_rad_s(ln.omega), ln.gamma,
                                      static_cast<double>(ln.branch),
                                      ln.near_magnetron ? 1.0 : 0.0});
                lines_j.push_back({{"f_kHz", khz_from_rad_s(ln.omega)},
                                   {"gamma_per_s", ln.gamma},
                                   {"branch", ln.branch},
                                   {"near_magnetron", ln.near_magnetron}});
            }
            if (d.epsilon == 0.0) {
                // Inert drive: the dressed pair must hand back the bare rates.
                const double lo = std::min(tab.gamma0[0], tab.gamma0[1]);
                const double hi = std::max(tab.gamma0[0], tab.gamma0[1]);
                const double blo = std::min(bare.gamma_cyclotron, bare.gamma_magnetron);
                const double bhi = std::max(bare.gamma_cyclotron, bare.gamma_magnetron);
                const double rel = std::max(std::abs(lo - blo) / std::abs(blo),
                                            std::abs(hi - bhi) / std::abs(bhi));
                report << fmt("  eps = 0 reduction: dressed rates = bare rates to %.2e  %s\n",
                              rel, rel < 1e-9 ? "pass" : "FAIL");
                drive_j["reduction_rel"] = rel;
                drive_j["reduction_pass"] = rel < 1e-9;
            }
        } catch (const DegenerateBranchError& e) {
            report << "  dressed branches degenerate: " << e.what() << "\n";
            if (d.epsilon == 0.0) {
                report << "  drive is inert (eps = 0, Delta = 0); rates are the bare pair\n";
                table.rows.push_back({khz_from_rad_s(m.omega_cp), bare.gamma_cyclotron, 0.0, 0.0});
                table.rows.push_back({khz_from_rad_s(m.omega_m), bare.gamma_magnetron, 0.0, 1.0});
            } else {
                // Weak drive on exact resonance: frequencies coincide per
                // family while the damping pair splits.
                const double glo = resonant_magnetron_rate(cfg.cool, d.epsilon, m);
                const double ghi = cfg.cool.beta - glo;
                report << fmt("  coincident lines: each family carries the rate pair "
                              "(%.6g, %.6g) s^-1\n",
                              glo, ghi);
                table.rows.push_back({khz_from_rad_s(m.omega_cp + d.delta), glo, +1.0, 0.0});
                table.rows.push_back({khz_from_rad_s(m.omega_cp + d.delta), ghi, -1.0, 0.0});
                table.rows.push_back({khz_from_rad_s(m.omega_m + d.delta), glo, +1.0, 1.0});
                table.rows.push_back({khz_from_rad_s(m.omega_m + d.delta), ghi, -1.0, 1.0});
                drive_j["rate_pair_per_s"] = {glo, ghi};
            }
            drive_j["degenerate"] = true;
        }
        drive_j["lines"] = lines_j;
        if (d.epsilon > 0.0) {
            const auto poles = response_poles(cfg.cool, d, m);
            report << "response poles (exact; scans centre here)\n";
            json poles_j = json::array();
            for (const ResonancePole& p : poles) {
                report << fmt("  f = %12.6f kHz   gamma = %12.6g s^-1\n",
                              khz_from_rad_s(p.omega), p.gamma);
                poles_j.push_back(
                    {{"f_kHz", khz_from_rad_s(p.omega)}, {"gamma_per_s", p.gamma}});
            }
            drive_j["poles"] = poles_j;
        }
        man["results"]["drive"] = drive_j;
    } else {
        table.rows.push_back({khz_from_rad_s(m.omega_cp), bare.gamma_cyclotron, 0.0, 0.0});
        table.rows.push_back({khz_from_rad_s(m.omega_m), bare.gamma_magnetron, 0.0, 1.0});
    }

    write_csv(cfg.out_dir / "modes.csv", table);
    man["outputs"].push_back("modes.csv");
    finish_manifest(cfg, man, t0, report);
    return man;
}

// ---------------------------------------------------------------------------
// trajectory: one integration dumped for external plotting.

json run_trajectory(const ExperimentConfig& cfg, std::ostream& report) {
    const auto t0 = Clock::now();
    if (cfg.duration <= 0.0)
        throw ConfigError("trajectory: trajectory.duration_s must be > 0");

    ForceConfig fc = base_force(cfg);
    fc.frame = cfg.frame;
    if (fc.probe) {
        if (fc.probe->omega <= 0.0)
            throw ConfigError("trajectory: probe.f_kHz must be > 0 when a probe is present");
        if (cfg.probe_target_m) fc.probe->amplitude = gain_for_target(cfg, fc, fc.probe->omega);
    }

    const double dt = default_dt(cfg);
    std::size_t stride = cfg.record_stride;
    if (stride == 0)
        stride = std::max<std::size_t>(1, static_cast<std::size_t>(cfg.duration / dt / 2000.0));

    IntegrationSpec spec;
    spec.dt = dt;
    spec.duration = cfg.duration;
    spec.record_stride = stride;

    const RadialState init{cfg.u0, cfg.u_dot0, 0.0};
    const Trajectory traj = integrate(fc, init, spec);

    CsvTable table;
    table.columns = {"t_s", "x_m", "y_m", "vx_m_s", "vy_m_s"};
    table.rows.reserve(traj.size());
    double max_r = 0.0;
    for (std::size_t i = 0; i < traj.size(); ++i) {
        max_r = std::max(max_r, std::abs(traj.u[i]));
        table.rows.push_back({traj.time(i), traj.u[i].real(), traj.u[i].imag(),
                              traj.u_dot[i].real(), traj.u_dot[i].imag()});
    }
    const double final_r = traj.size() ? std::abs(traj.u.back()) : std::abs(cfg.u0);

    report << fmt("trajectory: %.6g s at dt = %.3e s (%s frame), %zu samples "
                  "(stride %zu)\n",
                  cfg.duration, dt, cfg.frame == Frame::lab ? "lab" : "rotating", traj.size(),
                  stride)
           << fmt("  |u|: start %.6e m, final %.6e m, max %.6e m\n", std::abs(cfg.u0), final_r,
                  max_r);

    json man = manifest_base(cfg);
    man["results"] = {{"samples", traj.size()},
                      {"dt_s", dt},
                      {"record_stride", stride},
                      {"frame", cfg.frame == Frame::lab ? "lab" : "rotating"},
                      {"start_radius_m", std::abs(cfg.u0)},
                      {"final_radius_m", final_r},
                      {"max_radius_m", max_r}};
    write_csv(cfg.out_dir / "trajectory.csv", table);
    man["outputs"].push_back("trajectory.csv");
    finish_manifest(cfg, man, t0, report);
    return man;
}

// ---------------------------------------------------------------------------
// phase-scan: correlation phase versus probe frequency across one line.

json run_phase_scan(const ExperimentConfig& cfg, std::ostream& report) {
    const auto t0 = Clock::now();

    const LineChoice line = magnetron_pole(cfg.cool, cfg.modes, cfg.drive);
    const double centre = cfg.scan_centre.value_or(line.centre);
    const std::vector<double> grid =
        scan_grid(centre, cfg.scan_span_gammas * line.gamma, cfg.scan_points);

    report << fmt("phase scan: %d points across f = %.6f kHz "
                  "(expected half-width %.6g s^-1, +/- %.1f widths)\n",
                  cfg.scan_points, khz_from_rad_s(centre), line.gamma, cfg.scan_span_gammas);

    json man = manifest_base(cfg);
    json pts = json::array();
    CsvTable table;
    table.columns = {"f_kHz", "phase_rad", "amplitude_arb", "envelope_rate_per_s", "stops",
                     "valid"};

    PhaseCurveFit curve;
    double probe_amp = cfg.probe ? cfg.probe->amplitude : 0.0;

    if (cfg.analytic) {
        ForceConfig fc = base_force(cfg);
        if (!fc.probe) fc.probe = Probe{1.0, 0.0, ProbeKind::linear};
        std::vector<double> amps;
        if (cfg.probe_target_m) amps = gains_for_grid(cfg, fc, grid);
        std::vector<PhasePointDatum> data;
        data.reserve(grid.size());
        for (std::size_t i = 0; i < grid.size(); ++i) {
            const double w = grid[i];
            if (!amps.empty()) fc.probe->amplitude = amps[i];
            const std::complex<double> u = probe_response(fc, w);
            data.push_back({w, std::arg(u)});
            table.rows.push_back({khz_from_rad_s(w), std::arg(u), std::abs(u), 0.0, 0.0, 1.0});
            pts.push_back({{"f_kHz", khz_from_rad_s(w)},
                           {"phase_rad", std::arg(u)},
                           {"amplitude", std::abs(u)},
                           {"valid", true}});
        }
        probe_amp = amps.empty() ? fc.probe->amplitude : amps[amps.size() / 2];
        curve = fit_phase_curve(data);
    } else {
        if (!cfg.probe) throw ConfigError("phase-scan: needs a probe");
        ForceConfig fc = base_force(cfg);
        PhaseScanConfig pcfg = scan_config(cfg);
        if (cfg.probe_target_m) pcfg.amplitudes = gains_for_grid(cfg, fc, grid);
        probe_amp = pcfg.amplitudes.empty() ? fc.probe->amplitude
                                            : pcfg.amplitudes[pcfg.amplitudes.size() / 2];
        const PhaseScanResult res =
            phase_scan(fc, *cfg.beam, grid, pcfg, cfg.seed, effective_jobs(cfg));
        for (const PhaseScanPoint& pt : res.points) {
            table.rows.push_back({khz_from_rad_s(pt.omega), pt.phase, pt.amplitude,
                                  pt.envelope_rate, static_cast<double>(pt.stops),
                                  pt.valid ? 1.0 : 0.0});
            json pj{{"f_kHz", khz_from_rad_s(pt.omega)},
                    {"phase_rad", pt.phase},
                    {"amplitude", pt.amplitude},
                    {"envelope_rate_per_s", pt.envelope_rate},
                    {"stops", pt.stops},
                    {"valid", pt.valid}};
            if (!pt.valid) pj["error"] = pt.error;
            pts.push_back(pj);
        }
        curve = res.curve;
    }

    for (const auto& pj : pts) {
        if (pj["valid"].get<bool>())
            report << fmt("  f = %12.6f kHz   phase = %+8.4f rad\n", pj["f_kHz"].get<double>(),
                          pj["phase_rad"].get<double>());
        else
            report << fmt("  f = %12.6f kHz   dropped: %s\n", pj["f_kHz"].get<double>(),
                          pj["error"].get<std::string>().c_str());
    }
    report_curve(report, curve);

    man["results"] = {{"centre_kHz", khz_from_rad_s(centre)},
                      {"expected_gamma_per_s", line.gamma},
                      {"probe_amplitude_m_s2", probe_amp},
                      {"points", pts},
                      {"curve", curve_json(curve)}};
    write_csv(cfg.out_dir / "phase_scan.csv", table);
    man["outputs"].push_back("phase_scan.csv");
    finish_manifest(cfg, man, t0, report);
    return man;
}

// ---------------------------------------------------------------------------
// amplitude-sweep: magnetron damping rate versus drive amplitude.

json run_amplitude_sweep(const ExperimentConfig& cfg, std::ostream& report) {
    const auto t0 = Clock::now();
    const bool volt_form = !cfg.sweep_v0_volts.empty();
    if (!volt_form && cfg.sweep_epsilon.empty())
        throw ConfigError("amplitude-sweep: needs amplitude_sweep.V0_mV or "
                          "amplitude_sweep.eps_per_s2");
    const double delta = cfg.drive ? cfg.drive->delta : 0.0;
    const std::size_t n = volt_form ? cfg.sweep_v0_volts.size() : cfg.sweep_epsilon.size();

    struct Row {
        double v0_mv = std::numeric_limits<double>::quiet_NaN();
        double eps = 0.0;
        double gamma = std::numeric_limits<double>::quiet_NaN();
        double f0_khz = std::numeric_limits<double>::quiet_NaN();
        std::uint64_t stops = 0;
        bool valid = false;
        std::string error;
    };
    std::vector<Row> rows(n);
    std::vector<AxializationDrive> drives(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (volt_form) {
            drives[i] = AxializationDrive::from_voltage(cfg.sweep_v0_volts[i], *cfg.sweep_r0_m,
                                                        cfg.ion, delta, cfg.modes);
            rows[i].v0_mv = cfg.sweep_v0_volts[i] * 1e3;
        } else {
            drives[i] = AxializationDrive::from_epsilon(cfg.sweep_epsilon[i], delta, cfg.modes);
        }
        rows[i].eps = drives[i].epsilon;
    }

    report << fmt("amplitude sweep: %zu points at Delta = %+.6f kHz (%s)\n", n,
                  khz_from_rad_s(delta), cfg.analytic ? "analytic" : "stochastic");

    if (cfg.analytic) {
        for (std::size_t i = 0; i < n; ++i) {
            const std::optional<AxializationDrive> d =
                drives[i].epsilon > 0.0 ? std::optional<AxializationDrive>(drives[i])
                                        : std::nullopt;
            const LineChoice line = magnetron_line(cfg.cool, cfg.modes, d);
            rows[i].gamma = line.gamma;
            rows[i].f0_khz = khz_from_rad_s(line.centre);
            rows[i].valid = true;
        }
    } else {
        const PhaseScanConfig pcfg = scan_config(cfg);
        if (!cfg.probe) throw ConfigError("amplitude-sweep: needs a probe");
        parallel_for(n, effective_jobs(cfg), [&](std::size_t i) {
            try {
                ForceConfig fc = base_force(cfg);
                fc.drive = drives[i].epsilon > 0.0 ? std::optional<AxializationDrive>(drives[i])
                                                   : std::nullopt;
                const LineChoice line = magnetron_pole(cfg.cool, cfg.modes, fc.drive);
                const std::vector<double> grid =
                    scan_grid(line.centre, cfg.scan_span_gammas * line.gamma, cfg.scan_points);
                PhaseScanConfig p = pcfg;
                if (cfg.probe_target_m) p.amplitudes = gains_for_grid(cfg, fc, grid);
                const PhaseScanResult res =
                    phase_scan(fc, *cfg.beam, grid, p, derive_seed(cfg.seed, i), 1);
                rows[i].gamma = res.curve.gamma;
                rows[i].f0_khz = khz_from_rad_s(res.curve.omega0);
                for (const PhaseScanPoint& pt : res.points) rows[i].stops += pt.stops;
                rows[i].valid = true;
            } catch (const ConfigError&) {
                throw; // a broken configuration poisons every point alike
            } catch (const Error& e) {
                rows[i].error = e.what();
            }
        });
    }

    // The closed-form rate approaches the beta/2 plateau monotonically from
    // gamma_magnetron (rising when the cyclotron is cooled harder, M < 0;
    // falling when M > 0); report whether the extracted rates do the same
    // over the below-threshold points (noise allowance in stochastic mode).
    const double w1 = cfg.modes.omega_1;
    const double m_coeff = (2.0 * cfg.cool.alpha - cfg.cool.beta * cfg.modes.omega_c) / (2.0 * w1);
    const double eps_threshold = std::abs(m_coeff) * w1;
    const double slack = cfg.analytic ? 1e-9 : 0.1;
    const double dir = m_coeff <= 0.0 ? 1.0 : -1.0;
    bool monotone = true;
    double prev = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
        if (!rows[i].valid || rows[i].eps > eps_threshold) continue;
        const double v = dir * rows[i].gamma;
        if (v < prev - slack * std::abs(prev)) monotone = false;
        prev = std::max(prev, v);
    }

    CsvTable table;
    table.columns = {"V0_mV", "eps_per_s2", "g_kHz", "gamma_per_s", "f0_kHz", "stops", "valid"};
    json pts = json::array();
    for (const Row& r : rows) {
        const double g_khz = khz_from_rad_s(r.eps / w1);
        table.rows.push_back({r.v0_mv, r.eps, g_khz, r.gamma, r.f0_khz,
                              static_cast<double>(r.stops), r.valid ? 1.0 : 0.0});
        json pj{{"V0_mV", r.v0_mv}, {"eps_per_s2", r.eps}, {"g_kHz", g_khz},
                {"gamma_per_s", r.gamma}, {"f0_kHz", r.f0_khz}, {"stops", r.stops},
                {"valid", r.valid}};
        if (!r.error.empty()) pj["error"] = r.error;
        pts.push_back(pj);
        if (r.valid)
            report << fmt("  eps = %.6e s^-2 (g = %8.4f kHz)   gamma = %10.6g s^-1\n", r.eps,
                          g_khz, r.gamma);
        else
            report << fmt("  eps = %.6e s^-2   dropped: %s\n", r.eps, r.error.c_str());
    }
    report << fmt("below-threshold rate monotone: %s   (threshold eps = %.6e s^-2, "
                  "plateau beta/2 = %.6g s^-1)\n",
                  monotone ? "yes" : "NO", eps_threshold, 0.5 * cfg.cool.beta);

    json man = manifest_base(cfg);
    man["results"] = {{"delta_kHz", khz_from_rad_s(delta)},
                      {"eps_threshold_per_s2", eps_threshold},
                      {"beta_half_per_s", 0.5 * cfg.cool.beta},
                      {"monotone_below_threshold", monotone},
                      {"points", pts}};
    write_csv(cfg.out_dir / "amplitude_sweep.csv", table);
    man["outputs"].push_back("amplitude_sweep.csv");
    finish_manifest(cfg, man, t0, report);
    return man;
}

// ---------------------------------------------------------------------------
// avoided-crossing: near-magnetron branch pair versus drive frequency.

json run_avoided_crossing(const ExperimentConfig& cfg, std::ostream& report) {
    const auto t0 = Clock::now();
    if (!cfg.drive)
        throw ConfigError("avoided-crossing: needs a drive (its amplitude sets the gap)");
    const double eps = cfg.drive->epsilon;
    const double half = cfg.crossing_half_span > 0.0 ? cfg.crossing_half_span
                                                     : rad_s_from_khz(2.0);
    const int npts = cfg.crossing_points;
    std::vector<double> deltas(static_cast<std::size_t>(npts));
    std::vector<double> omega_a(static_cast<std::size_t>(npts));
    for (int i = 0; i < npts; ++i) {
        deltas[static_cast<std::size_t>(i)] =
            npts == 1 ? 0.0 : -half + 2.0 * half * i / (npts - 1.0);
        omega_a[static_cast<std::size_t>(i)] =
            cfg.modes.omega_c + 2.0 * deltas[static_cast<std::size_t>(i)];
    }

    report << fmt("avoided crossing: eps/omega_1 = %.6f kHz, %d drive points, "
                  "Delta in +/- %.6f kHz (%s)\n",
                  khz_from_rad_s(eps / cfg.modes.omega_1), npts, khz_from_rad_s(half),
                  cfg.analytic ? "analytic" : "stochastic");

    json man = manifest_base(cfg);
    std::vector<CrossingPointDatum> data;
    json pts = json::array();
    double min_sep = std::numeric_limits<double>::infinity();

    if (cfg.analytic) {
        AvoidedCrossingCurve curve;
        if (eps == 0.0) {
            // Decoupled limit: the magnetron line and the drive image of the
            // cyclotron line cross in straight lines.
            const UnaxializedRates bare = unaxialized_rates(cfg.cool, cfg.modes);
            curve.omega_a = omega_a;
            curve.delta = deltas;
            for (int i = 0; i < npts; ++i) {
                const double d = deltas[static_cast<std::size_t>(i)];
                curve.mag_freq[0].push_back(cfg.modes.omega_m);
                curve.mag_freq[1].push_back(cfg.modes.omega_m + 2.0 * d);
                curve.mag_gamma[0].push_back(bare.gamma_magnetron);
                curve.mag_gamma[1].push_back(bare.gamma_cyclotron);
                curve.cyc_freq[0].push_back(cfg.modes.omega_cp);
                curve.cyc_freq[1].push_back(cfg.modes.omega_cp + 2.0 * d);
                curve.cyc_gamma[0].push_back(bare.gamma_cyclotron);
                curve.cyc_gamma[1].push_back(bare.gamma_magnetron);
            }
        } else {
            curve = avoided_crossing_curve(cfg.cool, eps, cfg.modes, omega_a);
        }

        CsvTable table;
        table.columns = {"f_a_kHz", "delta_kHz", "f_mag0_kHz", "f_mag1_kHz",
                         "gamma_mag0_per_s", "gamma_mag1_per_s", "f_cyc0_kHz", "f_cyc1_kHz",
                         "gamma_cyc0_per_s", "gamma_cyc1_per_s"};
        for (int i = 0; i < npts; ++i) {
            const auto k = static_cast<std::size_t>(i);
            min_sep = std::min(min_sep, std::abs(curve.mag_freq[1][k] - curve.mag_freq[0][k]));
            table.rows.push_back({khz_from_rad_s(curve.omega_a[k]),
                                  khz_from_rad_s(curve.delta[k]),
                                  khz_from_rad_s(curve.mag_freq[0][k]),
                                  khz_from_rad_s(curve.mag_freq[1][k]), curve.mag_gamma[0][k],
                                  curve.mag_gamma[1][k], khz_from_rad_s(curve.cyc_freq[0][k]),
                                  khz_from_rad_s(curve.cyc_freq[1][k]), curve.cyc_gamma[0][k],
                                  curve.cyc_gamma[1][k]});
            for (int b = 0; b < 2; ++b) {
                data.push_back({curve.omega_a[k], curve.mag_freq[static_cast<std::size_t>(b)][k]});
                pts.push_back({{"f_a_kHz", khz_from_rad_s(curve.omega_a[k])},
                               {"delta_kHz", khz_from_rad_s(curve.delta[k])},
                               {"branch", b},
                               {"f_kHz", khz_from_rad_s(
                                             curve.mag_freq[static_cast<std::size_t>(b)][k])},
                               {"gamma_per_s", curve.mag_gamma[static_cast<std::size_t>(b)][k]},
                               {"valid", true}});
            }
        }
        write_csv(cfg.out_dir / "crossing.csv", table);
        man["outputs"].push_back("crossing.csv");
    } else {
        if (!cfg.probe) throw ConfigError("avoided-crossing: needs a probe");
        const PhaseScanConfig pcfg = scan_config(cfg);

        struct Meas {
            double omega_a = 0.0;
            double delta = 0.0;
            int branch = 0;
            double f_meas = std::numeric_limits<double>::quiet_NaN();
            double gamma = std::numeric_limits<double>::quiet_NaN();
            std::uint64_t stops = 0;
            bool valid = false;
            std::string error;
        };
        std::vector<Meas> meas(static_cast<std::size_t>(npts) * 2);
        parallel_for(meas.size(), effective_jobs(cfg), [&](std::size_t k) {
            const std::size_t i = k / 2;
            const int branch_val = (k % 2 == 0) ? +1 : -1;
            Meas& out = meas[k];
            out.omega_a = omega_a[i];
            out.delta = deltas[i];
            out.branch = static_cast<int>(k % 2);
            try {
                const AxializationDrive d =
                    AxializationDrive::from_epsilon(eps, deltas[i], cfg.modes);
                const auto poles = response_poles(cfg.cool, d, cfg.modes);
                const ResonancePole& ln = poles[branch_val > 0 ? 0 : 1];
                const ResonancePole& other = poles[branch_val > 0 ? 1 : 0];
                const double window = cfg.crossing_span_gammas * ln.gamma;
                if (std::abs(ln.omega - other.omega) < 2.0 * window)
                    throw ScanFitError(fmt("branch pair separated by %.3g rad/s, under the "
                                           "2 x %.3g rad/s the scans need",
                                           std::abs(ln.omega - other.omega), window));
                ForceConfig fc = base_force(cfg);
                fc.drive = d;
                const std::vector<double> grid =
                    scan_grid(ln.omega, window, cfg.crossing_scan_points);
                PhaseScanConfig p = pcfg;
                if (cfg.probe_target_m) p.amplitudes = gains_for_grid(cfg, fc, grid);
                const PhaseScanResult res = phase_scan(fc, *cfg.beam, grid, p,
                                                       derive_seed(cfg.seed, k), 1);
                out.f_meas = res.curve.omega0;
                out.gamma = res.curve.gamma;
                for (const PhaseScanPoint& pt : res.points) out.stops += pt.stops;
                out.valid = true;
            } catch (const ConfigError&) {
                throw;
            } catch (const Error& e) {
                out.error = e.what();
            }
        });

        CsvTable table;
        table.columns = {"f_a_kHz", "delta_kHz", "branch", "f_kHz", "gamma_per_s", "stops",
                         "valid"};
        for (std::size_t i = 0; i < static_cast<std::size_t>(npts); ++i) {
            if (meas[2 * i].valid && meas[2 * i + 1].valid)
                min_sep = std::min(min_sep, std::abs(meas[2 * i].f_meas - meas[2 * i + 1].f_meas));
        }
        for (const Meas& mm : meas) {
            table.rows.push_back({khz_from_rad_s(mm.omega_a), khz_from_rad_s(mm.delta),
                                  static_cast<double>(mm.branch),
                                  std::isnan(mm.f_meas) ? mm.f_meas : khz_from_rad_s(mm.f_meas),
                                  mm.gamma, static_cast<double>(mm.stops),
                                  mm.valid ? 1.0 : 0.0});
            json pj{{"f_a_kHz", khz_from_rad_s(mm.omega_a)},
                    {"delta_kHz", khz_from_rad_s(mm.delta)},
                    {"branch", mm.branch},
                    {"f_kHz", std::isnan(mm.f_meas) ? mm.f_meas : khz_from_rad_s(mm.f_meas)},
                    {"gamma_per_s", mm.gamma},
                    {"stops", mm.stops},
                    {"valid", mm.valid}};
            if (!mm.error.empty()) pj["error"] = mm.error;
            pts.push_back(pj);
            if (mm.valid) data.push_back({mm.omega_a, mm.f_meas});
            else
                report << fmt("  f_a = %12.6f kHz branch %d dropped: %s\n",
                              khz_from_rad_s(mm.omega_a), mm.branch, mm.error.c_str());
        }
        write_csv(cfg.out_dir / "crossing_points.csv", table);
        man["outputs"].push_back("crossing_points.csv");
    }

    const CrossingFit fit = fit_avoided_crossing(data);
    report << fmt("fit: f_c = %.6f kHz   f_m = %.6f kHz   gap = %.6f kHz   %s\n",
                  khz_from_rad_s(fit.omega_c), khz_from_rad_s(fit.omega_m),
                  khz_from_rad_s(fit.gap), fit.converged ? "converged" : "NOT converged");
    report << fmt("model: f_c = %.6f kHz   f_m = %.6f kHz   gap = %.6f kHz   "
                  "min pair separation on grid = %.6f kHz\n",
                  khz_from_rad_s(cfg.modes.omega_c), khz_from_rad_s(cfg.modes.omega_m),
                  khz_from_rad_s(eps / cfg.modes.omega_1), khz_from_rad_s(min_sep));

    man["results"] = {{"injected",
                       {{"f_c_kHz", khz_from_rad_s(cfg.modes.omega_c)},
                        {"f_m_kHz", khz_from_rad_s(cfg.modes.omega_m)},
                        {"g_kHz", khz_from_rad_s(eps / cfg.modes.omega_1)}}},
                      {"fit",
                       {{"f_c_kHz", khz_from_rad_s(fit.omega_c)},
                        {"f_m_kHz", khz_from_rad_s(fit.omega_m)},
                        {"gap_kHz", khz_from_rad_s(fit.gap)},
                        {"residual_norm", fit.residual_norm},
                        {"converged", fit.converged}}},
                      {"min_separation_kHz", khz_from_rad_s(min_sep)},
                      {"points", pts}};
    finish_manifest(cfg, man, t0, report);
    return man;
}

json run_experiment(const ExperimentConfig& cfg, std::ostream& report) {
    if (cfg.experiment.empty())
        throw ConfigError("config: no experiment selected (set the experiment field or use a "
                          "subcommand)");
    if (cfg.experiment == "modes") return run_modes(cfg, report);
    if (cfg.experiment == "trajectory") return run_trajectory(cfg, report);
    if (cfg.experiment == "phase-scan") return run_phase_scan(cfg, report);
    if (cfg.experiment == "amplitude-sweep") return run_amplitude_sweep(cfg, report);
    if (cfg.experiment == "avoided-crossing") return run_avoided_crossing(cfg, report);
    throw ConfigError("config: unknown experiment \"" + cfg.experiment + "\"");
}

} // namespace penning
