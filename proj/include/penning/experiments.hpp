#pragma once

#include <complex>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "penning/dynamics.hpp"
#include "penning/laser.hpp"
#include "penning/modes.hpp"
#include "penning/trap.hpp"

// Experiment orchestration: a parsed configuration plus one runner per
// experiment. Runners write CSV tables and a manifest.json under out_dir,
// print a human-readable report, and return the manifest document. The
// config file schema (units are part of the key names) is documented in
// README.md; frequencies cross the I/O boundary in kHz, everything internal
// is rad/s.

namespace penning {

struct ExperimentConfig {
    // modes | amplitude-sweep | phase-scan | avoided-crossing | trajectory
    std::string experiment;

    IonSpecies ion;
    std::optional<TrapConfig> trap; // absent when modes were given as measured values
    // A measured magnetron frequency to report against the ideal-quadrupole
    // model (real traps deviate); never fed back into the dynamics.
    std::optional<double> omega_m_measured;
    ModeSet modes;

    std::optional<LaserBeam> beam; // photon statistics; default source of (alpha, beta)
    CoolingCoefficients cool;
    bool cool_from_beam = false;

    std::optional<AxializationDrive> drive;
    std::optional<Probe> probe;                   // omega may be 0: set by the scan grid
    std::optional<double> probe_target_m;         // auto-gain: pick amplitude so the
                                                  // modelled response at the line is this

    double dt = 0.0;             // integration step, s; 0 = (2 pi / omega_c') / 40
    double settle_periods = 8.0; // of the slowest damping time, before photons

    double photons_per_point = 1e5; // sets the record length per scan point
    std::uint64_t seed = 1;

    bool analytic = false; // closed-form modes/responses instead of the photon chain
    int jobs = 0;          // worker threads for sweep points; 0 = hardware count
    std::filesystem::path out_dir = "out";

    // trajectory
    double duration = 0.0;         // s
    std::size_t record_stride = 0; // 0 = keep roughly 2000 samples
    Frame frame = Frame::lab;
    std::complex<double> u0{0.0, 0.0};
    std::complex<double> u_dot0{0.0, 0.0};

    // phase-scan grid: points spread over centre +/- span_gammas * expected width
    std::optional<double> scan_centre; // rad/s; default: model near-magnetron line
    double scan_span_gammas = 3.0;
    int scan_points = 7;

    // amplitude-sweep grid (exactly one form; voltages need the electrode radius)
    std::vector<double> sweep_v0_volts;
    std::vector<double> sweep_epsilon;
    std::optional<double> sweep_r0_m;

    // avoided-crossing: drive-frequency grid omega_c + 2 Delta, Delta in
    // +/- half_span, and the per-point mini phase scans in stochastic mode
    double crossing_half_span = 0.0; // rad/s; 0 = 2 pi * 2 kHz
    int crossing_points = 9;
    double crossing_span_gammas = 1.5;
    int crossing_scan_points = 5;

    nlohmann::json raw; // file snapshot, embedded in the manifest
};

// Command-line values that beat the file's (presence = the flag was given).
struct ConfigOverrides {
    std::optional<std::string> experiment;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out_dir;
    std::optional<bool> analytic;
    std::optional<int> jobs;
};

// Strict parse: unknown keys, wrong types, and inconsistent combinations are
// ConfigErrors whose message carries the field path (units live in the key
// names, so a stray key usually means a unit mistake).
ExperimentConfig parse_config(const nlohmann::json& doc);
ExperimentConfig load_config(const std::filesystem::path& path);
void apply_overrides(ExperimentConfig& cfg, const ConfigOverrides& ov);

// Dispatch on cfg.experiment. All runners: CSV outputs + manifest.json under
// cfg.out_dir, human-readable report to `report`, manifest returned. Reruns
// with the same config and seed produce byte-identical CSV files.
nlohmann::json run_experiment(const ExperimentConfig& cfg, std::ostream& report);

nlohmann::json run_modes(const ExperimentConfig& cfg, std::ostream& report);
nlohmann::json run_trajectory(const ExperimentConfig& cfg, std::ostream& report);
nlohmann::json run_phase_scan(const ExperimentConfig& cfg, std::ostream& report);
nlohmann::json run_amplitude_sweep(const ExperimentConfig& cfg, std::ostream& report);
nlohmann::json run_avoided_crossing(const ExperimentConfig& cfg, std::ostream& report);

} // namespace penning
