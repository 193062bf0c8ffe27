#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "titan/importance.hpp"
#include "titan/stream_filter.hpp"
#include "titan/stream_source.hpp"

namespace titan {

// Simulated seconds. Per-sample costs scale with the number of samples
// filtered or scored in a round.
struct TimingModel {
    double t_filter = 0.0;  // per streamed sample through the coarse filter
    double t_grad = 0.0;    // per candidate gradient / loss evaluation
    double t_plan = 0.0;    // per round, plan construction and draw
    double t_train = 0.0;   // per SGD step on the batch
    double t_sync = 0.0;    // per round, parameter + batch exchange between lanes

    void validate() const;
};

struct LaneTimes {
    double train = 0.0;   // lane A
    double select = 0.0;  // lane B

    double sequential() const noexcept { return select + train; }
    double pipelined(double t_sync) const noexcept { return std::max(train, select) + t_sync; }
};

// `filtered`: samples pushed through the filter; `scored`: samples whose
// gradient or loss was evaluated for selection.
LaneTimes lane_times(const TimingModel& timing, std::size_t filtered, std::size_t scored);

enum class Execution { sequential, pipelined };

struct PipelineConfig {
    Strategy strategy = Strategy::cis;
    std::size_t batch_size = 10;
    std::size_t velocity = 100;
    std::size_t rounds = 500;
    double lr = 0.1;
    bool lr_decay = false;  // x0.95 every 100 rounds
    FilterConfig filter;
    bool clear_after_round = true;  // the buffer holds one round's candidates
    GradientScope importance_scope = GradientScope::last_layer;
    TimingModel timing;
    Execution execution = Execution::sequential;
    std::uint64_t seed = 0;

    void validate() const;
};

double learning_rate(const PipelineConfig& config, std::size_t round);

struct RoundRecord {
    std::size_t round = 0;
    Strategy strategy = Strategy::rs;
    std::vector<std::size_t> batch_hist;   // class counts of the batch trained this round
    std::vector<std::uint64_t> selected;   // sample ids chosen by this round's selection
    double variance_closed_form = 0.0;     // NaN when the plan has no closed form
    double train_loss = 0.0;               // mean loss of the trained batch before the step
    double test_accuracy = 0.0;
    double test_loss = 0.0;
    std::size_t candidates = 0;
    bool fallback = false;  // empty candidate set, RS over the window instead
    LaneTimes lanes;
    double seq_round_time = 0.0;
    double pipe_round_time = 0.0;
    double seq_time = 0.0;   // cumulative
    double pipe_time = 0.0;  // cumulative
};

struct Evaluation {
    double accuracy = 0.0;
    double mean_loss = 0.0;
};

Evaluation evaluate(const ModelParams& params, std::span<const Sample> held_out);

// Spearman rank correlation with average ranks for ties.
double spearman_correlation(std::span<const double> a, std::span<const double> b);

// Rank agreement of per-sample gradient norms under two parameter settings.
double importance_drift(const ModelParams& before, const ModelParams& after,
                        std::span<const Sample> samples,
                        GradientScope scope = GradientScope::last_layer);

struct PlanObservation {
    std::size_t round = 0;
    const SelectionPlan* plan = nullptr;
    const WeightedBatch* batch = nullptr;
    std::span<const Sample> pool;
};

// The streaming round loop: intake -> coarse filter -> selection -> SGD.
class Simulator {
public:
    Simulator(PipelineConfig config, ModelParams init, StreamSource source);

    RoundRecord step();
    std::vector<RoundRecord> run();

    const ModelParams& params() const noexcept { return params_; }
    const PipelineConfig& config() const noexcept { return config_; }
    const StreamSource& source() const noexcept { return source_; }
    std::size_t round() const noexcept { return round_; }

    // Called once per selection with the plan and the drawn batch.
    std::function<void(const PlanObservation&)> on_plan;

private:
    struct Selection {
        std::vector<Sample> pool;
        WeightedBatch batch;
        double variance = 0.0;
        std::size_t filtered = 0;
        std::size_t scored = 0;
        bool fallback = false;
    };

    Selection select(const ModelParams& at, std::vector<Sample> window, std::size_t round);
    Selection bootstrap(const std::vector<Sample>& window);
    RoundRecord train_on(const Selection& staged, double lr, RoundRecord rec);

    PipelineConfig config_;
    ModelParams params_;
    StreamSource source_;
    StreamFilter filter_;
    std::size_t round_ = 0;
    double seq_time_ = 0.0;
    double pipe_time_ = 0.0;
    std::optional<Selection> staged_;
};

}  // namespace titan
