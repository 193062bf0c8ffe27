#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "titan/pipeline.hpp"
#include "titan/variance_lab.hpp"

namespace titan {

// Flat `key = value` experiment description. `#` starts a comment; unknown
// keys and malformed values raise ConfigError naming the key.
struct ExperimentConfig {
    // Model.
    std::string model = "mlp";  // mlp | linear
    std::size_t hidden = 32;
    double init_scale = 1.0;
    std::size_t feature_block = 1;
    GradientScope importance_scope = GradientScope::last_layer;

    // Selection and training.
    std::vector<Strategy> strategies{Strategy::cis};
    std::size_t batch_size = 10;
    std::size_t velocity = 100;
    std::size_t buffer_capacity = 30;
    BufferPartition buffer_partition = BufferPartition::per_class;
    double stats_decay = 1.0;
    bool clear_after_round = true;
    std::size_t rounds = 500;
    double lr = 0.1;
    bool lr_decay = false;
    Execution execution = Execution::sequential;
    TimingModel timing{0.001, 0.01, 0.01, 1.0, 0.05};
    std::vector<std::uint64_t> seeds{1};

    // Stream.
    std::string source = "synthetic";  // synthetic | csv
    std::string stream_csv;
    std::string test_csv;
    MixtureSpec mixture;
    std::size_t test_size = 2000;
    NoiseSpec noise;

    // Variance-check instance.
    lab::InstanceSpec instance{3, 2, 12, 5, 0.1, 2.0};
    std::size_t instance_batch = 8;
    std::size_t mc_draws = 100000;
    double identity_lr = 0.1;

    // gen-data.
    std::size_t samples = 1000;

    std::string output = "out";

    // Cross-field checks; throws ConfigError.
    void validate() const;

    PipelineConfig pipeline(Strategy strategy, std::uint64_t seed) const;
    ModelParams initial_model(std::size_t dim, std::size_t classes, std::uint64_t seed) const;
    StreamSource stream(std::uint64_t seed) const;
};

ExperimentConfig parse_config(std::istream& in);
ExperimentConfig load_config(const std::string& path);

// Applies one `key = value` assignment.
void apply_setting(ExperimentConfig& config, const std::string& key, const std::string& value);

}  // namespace titan
