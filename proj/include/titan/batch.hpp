#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "titan/linalg.hpp"

namespace titan {

// How the selected samples are recombined into a gradient estimate.
//
//   stratified:  g = sum_y |S_y|/|S| * 1/|B_y| * sum_{x in B_y} w_x g_x
//   flat:        g = 1/|B| * sum_x w_x g_x
enum class Estimator { stratified, flat };

struct BatchEntry {
    std::size_t index = 0;    // position in the candidate pool
    std::size_t label = 0;
    std::size_t stratum = 0;  // position in WeightedBatch::strata (stratified only)
    double weight = 1.0;
};

struct Stratum {
    std::size_t label = 0;
    std::size_t class_size = 0;  // |S_y|
    std::size_t batch_size = 0;  // |B_y|
};

struct WeightedBatch {
    Estimator estimator = Estimator::flat;
    std::size_t pool_size = 0;  // |S|
    std::vector<BatchEntry> entries;
    std::vector<Stratum> strata;

    std::size_t size() const noexcept { return entries.size(); }
    bool empty() const noexcept { return entries.empty(); }

    // Per-class count of selected entries, indexed by label.
    std::vector<std::size_t> histogram(std::size_t num_classes) const;
};

// Coefficient applied to entry `e`'s gradient in the estimate. Zero for a
// stratum with no slots.
double estimate_coefficient(const WeightedBatch& batch, const BatchEntry& e);

// Unbiased weighted gradient estimate. `gradient_of(entry)` returns the
// gradient (span of length `dim`) for a batch entry.
template <class GradientOf>
linalg::Vector weighted_gradient_estimate(const WeightedBatch& batch, std::size_t dim,
                                          GradientOf&& gradient_of) {
    linalg::Vector g(dim, 0.0);
    for (const auto& e : batch.entries) {
        std::span<const double> ge = gradient_of(e);
        if (ge.size() != dim) throw ShapeError("gradient dimension mismatch in batch estimate");
        linalg::axpy(estimate_coefficient(batch, e), ge, g);
    }
    return g;
}

// Convenience overload: gradients indexed by candidate-pool position.
linalg::Vector weighted_gradient_estimate(const WeightedBatch& batch,
                                          std::span<const linalg::Vector> pool_gradients);

}  // namespace titan
