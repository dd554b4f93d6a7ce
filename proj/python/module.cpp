#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>
#include <sstream>
#include <string>

#include "json.hpp"

#include "penning/errors.hpp"
#include "penning/experiments.hpp"
#include "penning/laser.hpp"
#include "penning/modes.hpp"
#include "penning/trap.hpp"
#include "penning/version.hpp"

namespace py = pybind11;
using namespace penning;

namespace {

// Config dicts and manifests cross the boundary as JSON text; both sides
// already speak it and nothing here is performance-sensitive.
nlohmann::json to_json(const py::object& obj) {
    const auto dumped =
        py::module_::import("json").attr("dumps")(obj).cast<std::string>();
    return nlohmann::json::parse(dumped);
}

py::object from_json(const nlohmann::json& j) {
    return py::module_::import("json").attr("loads")(j.dump());
}

} // namespace

PYBIND11_MODULE(penningsim, m) {
    m.doc() = "Laser-cooled ion in a Penning trap with an axializing quadrupole drive";
    m.attr("__version__") = version;

    const py::exception<Error> err(m, "Error");
    py::register_exception<ConfigError>(m, "ConfigError", err.ptr());
    py::register_exception<PhysicsError>(m, "PhysicsError", err.ptr());
    py::register_exception<FitError>(m, "FitError", err.ptr());

    py::class_<IonSpecies>(m, "IonSpecies")
        .def(py::init([](double mass_amu, int charge) {
                 return IonSpecies{mass_amu, charge};
             }),
             py::arg("mass_amu") = 40.0, py::arg("charge") = 1)
        .def_readwrite("mass_amu", &IonSpecies::mass_amu)
        .def_readwrite("charge", &IonSpecies::charge)
        .def("mass_kg", &IonSpecies::mass_kg);

    py::class_<TrapConfig>(m, "TrapConfig")
        .def(py::init([](const IonSpecies& ion, double u0_volts, double b_tesla,
                         double r_squared_m2) {
                 return TrapConfig{ion, u0_volts, b_tesla, r_squared_m2};
             }),
             py::arg("ion"), py::arg("u0_volts"), py::arg("b_tesla"),
             py::arg("r_squared_m2"))
        .def_readwrite("ion", &TrapConfig::ion)
        .def_readwrite("u0_volts", &TrapConfig::u0_volts)
        .def_readwrite("b_tesla", &TrapConfig::b_tesla)
        .def_readwrite("r_squared_m2", &TrapConfig::r_squared_m2);

    py::class_<ModeSet>(m, "ModeSet")
        .def_readonly("omega_z", &ModeSet::omega_z)
        .def_readonly("omega_c", &ModeSet::omega_c)
        .def_readonly("omega_1", &ModeSet::omega_1)
        .def_readonly("omega_cp", &ModeSet::omega_cp)
        .def_readonly("omega_m", &ModeSet::omega_m)
        .def_static("from_cyclotron_magnetron", &ModeSet::from_cyclotron_magnetron,
                    py::arg("omega_c"), py::arg("omega_m"));

    m.def("mode_set", &mode_set, py::arg("trap"));
    m.def("axial_frequency", &axial_frequency, py::arg("trap"));
    m.def("true_cyclotron_frequency", &true_cyclotron_frequency, py::arg("trap"));
    m.def("calibrate_r_squared", &calibrate_r_squared, py::arg("target_omega_z"),
          py::arg("u0_volts"), py::arg("ion"));

    py::class_<LaserBeam>(m, "LaserBeam")
        .def(py::init([](double wavelength_m, double linewidth, double detuning,
                         double waist_m, double offset_y_m, double saturation_rate) {
                 LaserBeam b{wavelength_m, linewidth,  detuning,
                             waist_m,      offset_y_m, saturation_rate};
                 validate(b);
                 return b;
             }),
             py::arg("wavelength_m") = 397e-9, py::arg("linewidth") = 0.0,
             py::arg("detuning") = 0.0, py::arg("waist_m") = 0.0,
             py::arg("offset_y_m") = 0.0, py::arg("saturation_rate") = 0.0)
        .def_readwrite("wavelength_m", &LaserBeam::wavelength_m)
        .def_readwrite("linewidth", &LaserBeam::linewidth)
        .def_readwrite("detuning", &LaserBeam::detuning)
        .def_readwrite("waist_m", &LaserBeam::waist_m)
        .def_readwrite("offset_y_m", &LaserBeam::offset_y_m)
        .def_readwrite("saturation_rate", &LaserBeam::saturation_rate);

    m.def("scattering_rate", &scattering_rate, py::arg("beam"), py::arg("y_m"),
          py::arg("xdot_m_s"));

    py::class_<CoolingCoefficients>(m, "CoolingCoefficients")
        .def_readonly("alpha", &CoolingCoefficients::alpha)
        .def_readonly("beta", &CoolingCoefficients::beta)
        .def_readonly("alpha_small", &CoolingCoefficients::alpha_small)
        .def_readonly("beta_small", &CoolingCoefficients::beta_small);

    m.def("make_cooling", &make_cooling, py::arg("alpha"), py::arg("beta"),
          py::arg("modes"), py::arg("validity_threshold") = 1e-2);
    m.def("beam_linearization", &beam_linearization, py::arg("beam"), py::arg("ion"),
          py::arg("modes"), py::arg("validity_threshold") = 1e-2);

    py::class_<UnaxializedRates>(m, "UnaxializedRates")
        .def_readonly("gamma_cyclotron", &UnaxializedRates::gamma_cyclotron)
        .def_readonly("gamma_magnetron", &UnaxializedRates::gamma_magnetron);

    m.def("unaxialized_rates", &unaxialized_rates, py::arg("cool"), py::arg("modes"));

    py::class_<AxializationDrive>(m, "AxializationDrive")
        .def_readonly("epsilon", &AxializationDrive::epsilon)
        .def_readonly("delta", &AxializationDrive::delta)
        .def_readonly("omega_a", &AxializationDrive::omega_a)
        .def_static("from_epsilon", &AxializationDrive::from_epsilon, py::arg("epsilon"),
                    py::arg("delta"), py::arg("modes"))
        .def_static("from_voltage", &AxializationDrive::from_voltage, py::arg("v0_volts"),
                    py::arg("r0_m"), py::arg("ion"), py::arg("delta"), py::arg("modes"));

    m.def("resonant_magnetron_rate", &resonant_magnetron_rate, py::arg("cool"),
          py::arg("epsilon"), py::arg("modes"));

    py::class_<ResonancePole>(m, "ResonancePole")
        .def_readonly("omega", &ResonancePole::omega)
        .def_readonly("gamma", &ResonancePole::gamma);

    m.def(
        "response_poles",
        [](const CoolingCoefficients& cool, const AxializationDrive& drive,
           const ModeSet& modes) {
            const auto poles = response_poles(cool, drive, modes);
            return std::vector<ResonancePole>(poles.begin(), poles.end());
        },
        py::arg("cool"), py::arg("drive"), py::arg("modes"),
        "Exact lab-frame resonances (frequency, half-width) of the driven system");

    m.def(
        "run",
        [](const py::object& config, const std::optional<std::string>& experiment,
           const std::optional<std::uint64_t>& seed,
           const std::optional<std::string>& out_dir, const std::optional<bool>& analytic,
           const std::optional<int>& jobs) {
            ExperimentConfig cfg = parse_config(to_json(config));
            ConfigOverrides ov;
            ov.experiment = experiment;
            ov.seed = seed;
            ov.out_dir = out_dir;
            ov.analytic = analytic;
            ov.jobs = jobs;
            apply_overrides(cfg, ov);
            std::ostringstream report;
            nlohmann::json man;
            {
                py::gil_scoped_release release;
                man = run_experiment(cfg, report);
            }
            return py::make_tuple(from_json(man), report.str());
        },
        py::arg("config"), py::arg("experiment") = std::nullopt,
        py::arg("seed") = std::nullopt, py::arg("out_dir") = std::nullopt,
        py::arg("analytic") = std::nullopt, py::arg("jobs") = std::nullopt,
        "Run one experiment from a config dict; returns (manifest, report_text). "
        "Keyword overrides shadow the corresponding config fields, like the CLI flags.");
}
