// iscc-feel: command-line front end for allocation solves, training runs,
// sweeps and Monte-Carlo bound checks.

#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "iscc/experiment.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Batch-size and resource allocation for over-the-air federated learning"};
    app.require_subcommand(1);

    std::string config;
    iscc::RunOptions opts;
    std::string out_dir, format;
    std::uint64_t seed = 0;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
        sub->add_option("--out", out_dir, "Output directory (overrides output.dir)");
        sub->add_option("--seed-override", seed, "Run with this single seed");
        sub->add_option("--jobs", opts.jobs, "Worker threads")->check(CLI::PositiveNumber);
        sub->add_option("--format", format, "Table format")->check(CLI::IsMember({"csv", "json"}));
    };
    auto* optimize = app.add_subcommand("optimize", "Solve the batch-size / resource allocation problem");
    auto* simulate = app.add_subcommand("simulate", "Run federated training and write per-round metrics");
    auto* verify = app.add_subcommand("verify-bounds", "Monte-Carlo checks of the gradient-error bounds");
    auto* sweep = app.add_subcommand("sweep", "Run a parameter sweep and write final-round metrics");
    for (auto* sub : {optimize, simulate, verify, sweep}) add_common(sub);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : iscc::exit_code::kValidation;
    }

    if (!out_dir.empty()) opts.out_dir = out_dir;
    if (!format.empty()) opts.format = format;
    for (auto* sub : app.get_subcommands())
        if (sub->count("--seed-override")) opts.seed_override = seed;

    if (*optimize) return iscc::cmd_optimize(config, opts, std::cerr);
    if (*simulate) return iscc::cmd_simulate(config, opts, std::cerr);
    if (*verify) return iscc::cmd_verify_bounds(config, opts, std::cerr);
    return iscc::cmd_sweep(config, opts, std::cerr);
}
