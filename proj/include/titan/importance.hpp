#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "titan/batch.hpp"
#include "titan/model.hpp"

namespace titan {

// cis: classified importance sampling (class allocation + intra-class IS)
// is:  flat importance sampling over the whole pool
// rs:  uniform random, without replacement
// hl/ll: highest / lowest per-sample loss
// ce:  highest output entropy
enum class Strategy { cis, is, rs, hl, ll, ce };

std::string_view to_string(Strategy s) noexcept;
std::optional<Strategy> parse_strategy(std::string_view name) noexcept;

// Gradient moments of one class under the current parameters.
struct ClassGradientSummary {
    std::size_t label = 0;
    std::size_t count = 0;          // |S_y|
    linalg::Vector mean_gradient;   // E[g]
    double mean_norm = 0.0;         // E[|g|]
    double mean_squared_norm = 0.0; // E[|g|^2]
};

ClassGradientSummary summarize_class(std::size_t label,
                                     std::span<const PerSampleGradient> gradients);

// I(x, y) = |g|
double sample_importance(const PerSampleGradient& g);

// I(y) = |S_y| * sqrt(max(0, E[|g|]^2 - |E[g]|^2)); zero for an empty class.
double class_importance(const ClassGradientSummary& summary);

// Slot allocation proportional to importance.
//
// Real targets |B| * I_y / sum(I) are rounded by largest remainder (ties to the
// lower index). When every importance is zero the targets become proportional
// to `class_sizes`. A class with positive importance never ends with zero slots
// while |B| is at least the number of such classes; slots are moved from the
// class furthest above its real target. `cap_at_class_size` limits each class
// to its size, for without-replacement sampling.
std::vector<std::size_t> allocate_batch_sizes(std::span<const double> importances,
                                              std::span<const std::size_t> class_sizes,
                                              std::size_t total,
                                              bool cap_at_class_size = false);

// Unrounded targets |B| * I_y / sum(I) (or size-proportional when all zero).
std::vector<double> allocation_targets(std::span<const double> importances,
                                       std::span<const std::size_t> class_sizes,
                                       std::size_t total);

// P(x) = |g_x| / sum |g|, uniform when every norm is zero.
std::vector<double> intra_class_probabilities(std::span<const PerSampleGradient> gradients);

// Members of the pool grouped by label, labels ascending.
struct ClassMembers {
    std::size_t label = 0;
    std::vector<std::size_t> indices;
};
std::vector<ClassMembers> partition_by_class(std::span<const std::size_t> labels);

enum class SamplingMode {
    per_class,                    // |B_y| draws with replacement per class
    flat,                         // |B| draws with replacement over the pool
    uniform_without_replacement,  // |B| distinct samples, uniformly
    fixed,                        // deterministic ranked selection
};

struct ClassSelection {
    std::size_t label = 0;
    std::vector<std::size_t> members;   // pool indices
    std::vector<double> probabilities;  // P_{t,y}(x), aligned with members
    std::size_t batch_size = 0;         // |B_y| (expected, rounded, for flat plans)
    double expected_batch_size = 0.0;
    double importance = 0.0;            // I(y) for cis, 0 otherwise
};

struct SelectionPlan {
    Strategy strategy = Strategy::rs;
    SamplingMode mode = SamplingMode::uniform_without_replacement;
    std::size_t batch_size = 0;  // |B|
    std::size_t pool_size = 0;   // |S|
    std::vector<ClassSelection> classes;
    std::vector<double> flat_probabilities;  // flat mode, indexed by pool position
    std::vector<std::size_t> fixed;          // fixed mode, pool positions

    Estimator estimator() const noexcept {
        return mode == SamplingMode::per_class ? Estimator::stratified : Estimator::flat;
    }
    std::size_t class_size(std::size_t k) const noexcept { return classes[k].members.size(); }
};

SelectionPlan build_plan_cis(std::span<const std::size_t> labels,
                             std::span<const PerSampleGradient> gradients, std::size_t total);

SelectionPlan build_plan_is(std::span<const std::size_t> labels,
                            std::span<const PerSampleGradient> gradients, std::size_t total);

// Uniform probabilities within classes, slots proportional to class size.
// Sampled with replacement so the closed-form decomposition applies.
SelectionPlan build_plan_uniform_stratified(std::span<const std::size_t> labels,
                                            std::size_t total);

// Flat uniform sampling with replacement (weights all 1).
SelectionPlan build_plan_uniform_flat(std::span<const std::size_t> labels, std::size_t total);

// Per-class plan with caller-supplied slots and probabilities; the allocation
// must cover the classes of `partition_by_class(labels)` in order.
SelectionPlan build_plan_stratified(std::span<const std::size_t> labels,
                                    std::span<const std::size_t> batch_sizes,
                                    std::span<const std::vector<double>> probabilities,
                                    Strategy tag = Strategy::cis);

// rs, hl, ll and ce. `scores` holds per-sample loss (hl, ll) or output entropy
// (ce) and is ignored for rs.
SelectionPlan build_plan_baseline(Strategy kind, std::span<const std::size_t> labels,
                                  std::span<const double> scores, std::size_t total);

// Draws batches from a plan. Construction precomputes the sampling tables so
// repeated draws (Monte-Carlo loops) are cheap.
class BatchSampler {
public:
    explicit BatchSampler(const SelectionPlan& plan);

    WeightedBatch draw(std::mt19937_64& rng) const;
    void draw_into(std::mt19937_64& rng, WeightedBatch& out) const;

    const SelectionPlan& plan() const noexcept { return *plan_; }

private:
    const SelectionPlan* plan_;
    // operator() on a distribution is non-const but stateless here.
    mutable std::vector<std::discrete_distribution<std::size_t>> class_dists_;
    mutable std::discrete_distribution<std::size_t> flat_dist_;
    std::vector<double> weights_;  // per pool index for flat, per (class, member) otherwise
    std::vector<std::size_t> weight_offsets_;
    std::vector<std::size_t> label_of_;
};

WeightedBatch draw_batch(const SelectionPlan& plan, std::uint64_t seed);
WeightedBatch draw_batch(const SelectionPlan& plan, std::mt19937_64& rng);

}  // namespace titan
