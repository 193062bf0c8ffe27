#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>

#include <json.hpp>

#include "titan/config.hpp"

namespace titan::cli {

enum ExitCode : int { kOk = 0, kFailure = 1, kConfigError = 2 };

struct CommandOptions {
    std::optional<std::string> config_path;
    std::optional<std::uint64_t> seed;     // replaces the configured seed list
    std::optional<std::string> out;        // output directory
    bool dump_plan = false;
    bool perturb_alloc = false;
    std::vector<std::string> overrides;    // extra `key=value` settings
};

// Config file, then overrides, then --seed / --out. Throws ConfigError.
ExperimentConfig resolve_config(const CommandOptions& options);

// Each command reports progress on `log` and returns an exit code; errors
// are caught and mapped to kFailure or kConfigError.
int cmd_run(const CommandOptions& options, std::ostream& log);
int cmd_variance_check(const CommandOptions& options, std::ostream& log);
int cmd_alloc_check(const CommandOptions& options, std::ostream& log);
int cmd_gen_data(const CommandOptions& options, std::ostream& log);

// Building blocks shared with the test suites.
struct RunSummary {
    Strategy strategy = Strategy::rs;
    std::uint64_t seed = 0;
    std::size_t rounds = 0;
    double final_accuracy = 0.0;
    double target_accuracy = 0.0;
    std::optional<std::size_t> rounds_to_target;  // 1-based round count
    std::optional<double> seq_time_to_target;
    std::optional<double> pipe_time_to_target;
};

std::optional<std::size_t> rounds_to_target(const std::vector<RoundRecord>& records, double target);

void write_metrics_csv(std::ostream& out, const std::vector<RoundRecord>& records);

nlohmann::json variance_report(const ExperimentConfig& config, std::uint64_t seed, bool perturb_alloc);
nlohmann::json allocation_report(const ExperimentConfig& config, std::uint64_t seed);

}  // namespace titan::cli
