#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "titan/importance.hpp"

// Verification engine for the batch-gradient variance of a selection plan.
// "Variance" of a random vector is the trace of its covariance throughout.
namespace titan::lab {

// Labelled per-sample gradients: the candidate pool as the variance formulas
// see it.
struct GradientInstance {
    std::vector<std::size_t> labels;
    std::vector<linalg::Vector> gradients;

    std::size_t size() const noexcept { return labels.size(); }
    std::size_t dim() const noexcept { return gradients.empty() ? 0 : gradients.front().size(); }
    std::vector<PerSampleGradient> per_sample() const;
    linalg::Vector full_mean() const;
};

struct InstanceSpec {
    std::size_t classes = 3;
    std::size_t min_per_class = 2;
    std::size_t max_per_class = 20;
    std::size_t dim = 5;
    // Per-class spread is drawn uniformly from [spread_low, spread_high] relative
    // to a unit-scale class mean; a wide range gives heterogeneous diversity.
    double spread_low = 0.1;
    double spread_high = 2.0;
};

GradientInstance random_instance(const InstanceSpec& spec, std::uint64_t seed);

// Two classes with equal mean gradient norm: class 0 points in many
// directions, class 1 is a tight bundle around one direction.
GradientInstance diverse_vs_concentrated_instance(std::size_t per_class, std::size_t dim,
                                                  std::uint64_t seed);

struct ClassVarianceTerm {
    std::size_t label = 0;
    std::size_t class_size = 0;
    std::size_t batch_size = 0;
    double alpha = 0.0;  // |S_y|^2 / (|S|^2 |B_y|); 0 when unallocated
    double beta = 0.0;   // sum |g|^2 / (|S_y|^2 P(x))
    double gamma = 0.0;  // |E[g]|^2 over the class
    bool allocated = false;
    double contribution() const noexcept { return allocated ? alpha * (beta - gamma) : 0.0; }
};

struct VarianceDecomposition {
    std::vector<ClassVarianceTerm> terms;  // one pseudo-class covering the pool for flat plans
    double total = 0.0;
    // False when a class holding data received no slots (its mean is then
    // missing from the estimate).
    bool covers_all_classes = true;
};

// Exact trace variance of the weighted estimate for with-replacement plans.
// Throws DecompositionError for without-replacement or ranked plans, or when a
// sample with a non-zero gradient has zero probability in an allocated class.
VarianceDecomposition closed_form_variance(const SelectionPlan& plan,
                                           std::span<const linalg::Vector> gradients);

struct McVarianceEstimate {
    std::size_t draws = 0;
    double variance = 0.0;        // unbiased trace variance of g_hat
    double standard_error = 0.0;  // of `variance`
    linalg::Vector mean;          // Monte-Carlo mean of g_hat
};

// Two passes over the same seeded draws: first the mean, then squared
// deviations.
McVarianceEstimate mc_variance(const SelectionPlan& plan, std::span<const linalg::Vector> gradients,
                               std::size_t draws, std::uint64_t seed);

struct IdentityCheck {
    double lhs = 0.0;  // E[|w - w_ref|^2 - |w' - w_ref|^2]
    double rhs = 0.0;  // -lr^2 V + 2 lr (w - w_ref)^T grad - lr^2 |grad|^2
    double residual = 0.0;         // |lhs - rhs| / max(|lhs|, |rhs|, 1e-12)
    double standard_error = 0.0;   // combined Monte-Carlo error, same normalisation
    double variance = 0.0;
};

// Expected one-step distance reduction against the variance identity, with
// all quantities estimated from one shared set of draws. `w` and `w_ref` live
// in gradient space. The plan must be unbiased.
IdentityCheck training_progress_identity(const SelectionPlan& plan,
                                         std::span<const linalg::Vector> gradients,
                                         std::span<const double> w, std::span<const double> w_ref,
                                         double lr, std::size_t draws, std::uint64_t seed);

// Sum over classes of c_y / b_y with c_y = |S_y|^2 (beta*_y - gamma_y) / |S|^2,
// beta* taken at the optimal intra-class distribution.
struct AllocationObjective {
    std::vector<std::size_t> labels;  // ascending
    std::vector<double> coefficients;

    // +inf when a class with positive coefficient receives no slots.
    double operator()(std::span<const std::size_t> allocation) const;
    double continuous(std::span<const double> allocation) const;
    // Real allocation proportional to sqrt(c_y), the relaxation's minimiser.
    std::vector<double> continuous_optimum(std::size_t total) const;
};

AllocationObjective allocation_objective(const GradientInstance& instance);

struct AllocationSearchResult {
    std::vector<std::size_t> allocation;
    double variance = std::numeric_limits<double>::infinity();
    std::size_t compositions = 0;
};

inline constexpr std::size_t kMaxCompositions = 100000;

// Enumerates every composition of `total` into one part per class.
AllocationSearchResult exhaustive_allocation_search(const GradientInstance& instance,
                                                    std::size_t total,
                                                    std::size_t max_compositions = kMaxCompositions);

std::size_t composition_count(std::size_t total, std::size_t parts);

// Largest finite |change| in the objective from moving one slot between two
// classes of `allocation`.
double single_unit_reallocation_delta(const AllocationObjective& objective,
                                      std::span<const std::size_t> allocation);

}  // namespace titan::lab
