// Experiment runner for the forced variational integrator library.
//
// Subcommands: simulate, order, exactness, correspond (each takes a JSON
// config and an output directory) and selftest. Exit codes: 0 pass/ok,
// 2 verdict failure, 1 config or solver error.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

#include "forcedvi/experiment.hpp"
#include "forcedvi/selftest.hpp"

namespace {

int run_from_config(const std::string& config_path, const std::string& out_dir) {
    std::ifstream in(config_path);
    if (!in) {
        std::cerr << "error: cannot read config file " << config_path << "\n";
        return 1;
    }
    std::stringstream buf;
    buf << in.rdbuf();
    const std::string text = buf.str();

    forcedvi::ExperimentConfig cfg;
    try {
        cfg = forcedvi::parse_config(text);
    } catch (const forcedvi::SchemaError& e) {
        std::cerr << "config rejected:\n";
        for (const auto& v : e.violations) std::cerr << "  " << v << "\n";
        return 1;
    }
    try {
        const forcedvi::json echo = forcedvi::json::parse(text);
        return forcedvi::run_experiment(cfg, out_dir, &echo);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"forced variational integrator experiments"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir = "out";
    uint64_t seed = 0;

    auto add_runner = [&](const char* name, const char* desc) {
        CLI::App* sub = app.add_subcommand(name, desc);
        sub->add_option("--config", config_path, "JSON experiment config")
            ->required()
            ->check(CLI::ExistingFile);
        sub->add_option("--out", out_dir, "output directory for artifacts");
        return sub;
    };
    CLI::App* sim = add_runner("simulate", "run a discrete trajectory, emit trajectory.csv");
    CLI::App* ord = add_runner("order", "one-step convergence-order experiment");
    CLI::App* exa = add_runner("exactness", "exact-discretization reproduction check");
    CLI::App* cor = add_runner("correspond", "TQ vs QxQ stepping correspondence check");

    CLI::App* self = app.add_subcommand("selftest", "run the built-in consistency battery");
    self->add_option("--seed", seed, "seed for random test-state generation");

    CLI11_PARSE(app, argc, argv);

    for (CLI::App* sub : {sim, ord, exa, cor}) {
        if (sub->parsed()) {
            // The experiment kind in the config must match the subcommand.
            std::ifstream in(config_path);
            std::stringstream buf;
            buf << in.rdbuf();
            try {
                const auto cfg = forcedvi::parse_config(buf.str());
                if (cfg.experiment.kind != sub->get_name()) {
                    std::cerr << "error: config experiment.kind is '" << cfg.experiment.kind
                              << "' but subcommand is '" << sub->get_name() << "'\n";
                    return 1;
                }
            } catch (const forcedvi::SchemaError&) {
                // run_from_config reports the violations.
            }
            return run_from_config(config_path, out_dir);
        }
    }
    if (self->parsed()) {
        const int failures = forcedvi::run_selftest(seed, std::cout);
        return failures == 0 ? 0 : 2;
    }
    return 1;
}
