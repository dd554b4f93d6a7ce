#include <cstdint>
#include <iostream>
#include <string>

#include "CLI11.hpp"

#include "penning/errors.hpp"
#include "penning/experiments.hpp"
#include "penning/version.hpp"

// penning <experiment> --config file.json [--seed N] [--out dir] [--analytic]
// [--jobs N]. Flags beat the config file's fields; the subcommand beats its
// experiment field. Exit codes: 0 ok, 2 configuration, 3 physics, 4 fitting.

namespace {

struct Flags {
    std::string config_path;
    std::uint64_t seed = 0;
    std::string out_dir;
    bool analytic = false;
    int jobs = -1;
};

void add_common(CLI::App* sub, Flags& flags) {
    sub->add_option("--config", flags.config_path, "experiment configuration (JSON)")
        ->required()
        ->check(CLI::ExistingFile);
    sub->add_option("--seed", flags.seed, "base RNG seed for the photon pipeline");
    sub->add_option("--out", flags.out_dir, "output directory (CSV + manifest.json)");
    sub->add_flag("--analytic", flags.analytic,
                  "closed-form models instead of the stochastic pipeline");
    sub->add_option("--jobs", flags.jobs, "worker threads for sweep points (0 = all cores)")
        ->check(CLI::NonNegativeNumber);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"laser-cooled ion in a Penning trap with an axialization drive"};
    app.set_version_flag("--version", std::string("penning ") + penning::version);
    app.require_subcommand(1);

    Flags flags;
    const char* const names[] = {"modes", "amplitude-sweep", "phase-scan", "avoided-crossing",
                                 "trajectory"};
    const char* const blurbs[] = {
        "mode table, cooling rates, dressed lines and consistency checks",
        "magnetron damping rate versus drive amplitude",
        "correlation phase versus probe frequency across one line",
        "near-magnetron branch pair versus drive frequency, with the crossing fit",
        "integrate one trajectory and dump it as CSV",
    };
    for (int i = 0; i < 5; ++i) add_common(app.add_subcommand(names[i], blurbs[i]), flags);

    CLI11_PARSE(app, argc, argv);
    CLI::App* sub = app.get_subcommands().front();

    try {
        penning::ExperimentConfig cfg = penning::load_config(flags.config_path);
        penning::ConfigOverrides ov;
        ov.experiment = sub->get_name();
        if (sub->count("--seed")) ov.seed = flags.seed;
        if (!flags.out_dir.empty()) ov.out_dir = flags.out_dir;
        if (flags.analytic) ov.analytic = true;
        if (flags.jobs >= 0) ov.jobs = flags.jobs;
        penning::apply_overrides(cfg, ov);
        penning::run_experiment(cfg, std::cout);
        return penning::exit_code::ok;
    } catch (const penning::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return penning::exit_code::config;
    } catch (const penning::PhysicsError& e) {
        std::cerr << "physics error: " << e.what() << "\n";
        return penning::exit_code::physics;
    } catch (const penning::FitError& e) {
        std::cerr << "fit error: " << e.what() << "\n";
        return penning::exit_code::fit;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
