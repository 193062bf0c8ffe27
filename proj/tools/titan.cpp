#include <iostream>

#include <CLI11.hpp>

#include "titan/commands.hpp"

int main(int argc, char** argv) {
    using namespace titan::cli;
    CLI::App app{"Streaming data selection: experiments and variance checks"};
    app.require_subcommand(1);

    CommandOptions opts;
    std::string config;
    std::uint64_t seed = 0;
    std::string out;
    app.add_option("--config", config, "Experiment config file (key = value)")->check(CLI::ExistingFile);
    app.add_option("--seed", seed, "Single seed, replacing the configured list");
    app.add_option("--out", out, "Output directory");
    app.add_flag("--dump-plan", opts.dump_plan, "Write each round's selection plan as JSON lines");
    app.add_option("--set", opts.overrides, "Override a config entry, key=value (repeatable)");

    auto* run = app.add_subcommand("run", "Run the streaming training simulation");
    auto* variance = app.add_subcommand("variance-check", "Closed-form vs Monte-Carlo variance report");
    variance->add_flag("--perturb-alloc", opts.perturb_alloc, "Also score a one-slot corruption of the allocation");
    auto* alloc = app.add_subcommand("alloc-check", "Allocation optimality report");
    auto* gen = app.add_subcommand("gen-data", "Write a synthetic stream and held-out set as CSV");
    for (auto* sub : {run, variance, alloc, gen}) sub->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kConfigError;
    }
    if (!config.empty()) opts.config_path = config;
    if (app.count("--seed")) opts.seed = seed;
    if (!out.empty()) opts.out = out;

    if (*run) return cmd_run(opts, std::cerr);
    if (*variance) return cmd_variance_check(opts, std::cerr);
    if (*alloc) return cmd_alloc_check(opts, std::cerr);
    return cmd_gen_data(opts, std::cerr);
}
