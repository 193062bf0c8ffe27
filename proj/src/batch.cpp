#include "titan/batch.hpp"

namespace titan {

std::vector<std::size_t> WeightedBatch::histogram(std::size_t num_classes) const {
    std::vector<std::size_t> h(num_classes, 0);
    for (const auto& e : entries) {
        if (e.label >= num_classes) throw LabelError("batch label outside histogram range");
        ++h[e.label];
    }
    return h;
}

double estimate_coefficient(const WeightedBatch& batch, const BatchEntry& e) {
    if (batch.estimator == Estimator::flat) {
        return e.weight / static_cast<double>(batch.entries.size());
    }
    const Stratum& s = batch.strata.at(e.stratum);
    if (s.batch_size == 0) return 0.0;
    return e.weight * static_cast<double>(s.class_size) /
           (static_cast<double>(batch.pool_size) * static_cast<double>(s.batch_size));
}

linalg::Vector weighted_gradient_estimate(const WeightedBatch& batch,
                                          std::span<const linalg::Vector> pool_gradients) {
    if (pool_gradients.empty()) return {};
    const std::size_t dim = pool_gradients.front().size();
    return weighted_gradient_estimate(batch, dim, [&](const BatchEntry& e) {
        return std::span<const double>(pool_gradients[e.index]);
    });
}

}  // namespace titan
