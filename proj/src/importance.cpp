#include "titan/importance.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace titan {

namespace {

// Largest-remainder rounding of non-negative real targets summing to `total`.
// Remainders are compared on a 1e-9 grid so that targets which differ only by
// floating-point noise tie, and ties go to the lower index.
std::vector<std::size_t> largest_remainder(std::span<const double> targets, std::size_t total) {
    std::vector<std::size_t> sizes(targets.size(), 0);
    std::vector<std::int64_t> keys(targets.size(), 0);
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < targets.size(); ++i) {
        const double t = std::max(0.0, targets[i]);
        // Snap targets that sit within noise of an integer.
        const double snapped = std::round(t);
        const double base = std::abs(t - snapped) < 1e-9 ? snapped : std::floor(t);
        sizes[i] = static_cast<std::size_t>(base);
        keys[i] = static_cast<std::int64_t>(std::llround((t - base) * 1e9));
        assigned += sizes[i];
    }
    if (assigned > total) {
        // Only reachable through snapping noise; trim from the largest classes.
        while (assigned > total) {
            auto it = std::max_element(sizes.begin(), sizes.end());
            --*it;
            --assigned;
        }
        return sizes;
    }
    std::vector<std::size_t> order(targets.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return keys[a] > keys[b]; });
    for (std::size_t k = 0; assigned < total; k = (k + 1) % order.size()) {
        ++sizes[order[k]];
        ++assigned;
    }
    return sizes;
}

// Gives each positive-target class at least one slot when there are enough
// slots, taking from the class with the largest surplus over its target.
void ensure_positive_classes_covered(std::span<const double> targets,
                                     std::vector<std::size_t>& sizes, std::size_t total) {
    const auto positive = static_cast<std::size_t>(
        std::count_if(targets.begin(), targets.end(), [](double t) { return t > 0.0; }));
    if (positive > total) return;
    for (std::size_t i = 0; i < sizes.size(); ++i) {
        if (!(targets[i] > 0.0) || sizes[i] > 0) continue;
        std::size_t donor = sizes.size();
        double best_surplus = 0.0;
        for (std::size_t j = 0; j < sizes.size(); ++j) {
            if (sizes[j] < 2) continue;
            const double surplus = static_cast<double>(sizes[j]) - targets[j];
            if (donor == sizes.size() || surplus > best_surplus + 1e-12) {
                donor = j;
                best_surplus = surplus;
            }
        }
        if (donor == sizes.size()) return;
        --sizes[donor];
        ++sizes[i];
    }
}

std::vector<double> class_probabilities_from_flat(std::span<const double> flat,
                                                  const std::vector<std::size_t>& members,
                                                  double& class_mass) {
    std::vector<double> p(members.size());
    class_mass = 0.0;
    for (std::size_t i = 0; i < members.size(); ++i) {
        p[i] = flat[members[i]];
        class_mass += p[i];
    }
    if (class_mass > 0.0) {
        for (double& v : p) v /= class_mass;
    } else {
        std::fill(p.begin(), p.end(), 1.0 / static_cast<double>(members.size()));
    }
    return p;
}

void require_pool(std::span<const std::size_t> labels, std::size_t gradient_count) {
    if (labels.empty()) throw SelectionError("empty candidate set");
    if (labels.size() != gradient_count) {
        throw ShapeError("labels and gradients differ in length");
    }
}

}  // namespace

std::string_view to_string(Strategy s) noexcept {
    switch (s) {
        case Strategy::cis: return "cis";
        case Strategy::is: return "is";
        case Strategy::rs: return "rs";
        case Strategy::hl: return "hl";
        case Strategy::ll: return "ll";
        case Strategy::ce: return "ce";
    }
    return "?";
}

std::optional<Strategy> parse_strategy(std::string_view name) noexcept {
    for (Strategy s : {Strategy::cis, Strategy::is, Strategy::rs, Strategy::hl, Strategy::ll,
                       Strategy::ce}) {
        if (to_string(s) == name) return s;
    }
    return std::nullopt;
}

ClassGradientSummary summarize_class(std::size_t label,
                                     std::span<const PerSampleGradient> gradients) {
    ClassGradientSummary s;
    s.label = label;
    s.count = gradients.size();
    if (gradients.empty()) return s;
    s.mean_gradient.assign(gradients.front().values.size(), 0.0);
    for (const auto& g : gradients) {
        linalg::axpy(1.0, g.values, s.mean_gradient);
        s.mean_norm += g.norm;
        s.mean_squared_norm += g.norm * g.norm;
    }
    const double n = static_cast<double>(gradients.size());
    linalg::scale(s.mean_gradient, 1.0 / n);
    s.mean_norm /= n;
    s.mean_squared_norm /= n;
    return s;
}

double sample_importance(const PerSampleGradient& g) { return linalg::norm(g.values); }

double class_importance(const ClassGradientSummary& summary) {
    if (summary.count == 0) return 0.0;
    const double radicand =
        summary.mean_norm * summary.mean_norm - linalg::squared_norm(summary.mean_gradient);
    return static_cast<double>(summary.count) * std::sqrt(std::max(0.0, radicand));
}

std::vector<double> allocation_targets(std::span<const double> importances,
                                       std::span<const std::size_t> class_sizes,
                                       std::size_t total) {
    if (importances.size() != class_sizes.size()) {
        throw ShapeError("importances and class sizes differ in length");
    }
    std::vector<double> targets(importances.size(), 0.0);
    double mass = 0.0;
    for (double v : importances) {
        if (v < 0.0 || !std::isfinite(v)) throw std::invalid_argument("importance must be finite and >= 0");
        mass += v;
    }
    if (mass > 0.0) {
        for (std::size_t i = 0; i < targets.size(); ++i) {
            targets[i] = static_cast<double>(total) * importances[i] / mass;
        }
        return targets;
    }
    const double size_mass =
        static_cast<double>(std::accumulate(class_sizes.begin(), class_sizes.end(), std::size_t{0}));
    if (size_mass == 0.0) throw SelectionError("cannot allocate slots to empty classes");
    for (std::size_t i = 0; i < targets.size(); ++i) {
        targets[i] = static_cast<double>(total) * static_cast<double>(class_sizes[i]) / size_mass;
    }
    return targets;
}

std::vector<std::size_t> allocate_batch_sizes(std::span<const double> importances,
                                              std::span<const std::size_t> class_sizes,
                                              std::size_t total, bool cap_at_class_size) {
    if (total == 0) throw std::invalid_argument("batch size must be positive");
    if (importances.empty()) throw SelectionError("no classes to allocate");

    auto targets = allocation_targets(importances, class_sizes, total);
    auto sizes = largest_remainder(targets, total);
    ensure_positive_classes_covered(targets, sizes, total);
    if (!cap_at_class_size) return sizes;

    const std::size_t capacity =
        std::accumulate(class_sizes.begin(), class_sizes.end(), std::size_t{0});
    if (capacity < total) throw SelectionError("batch larger than the candidate set");

    // Pin over-full classes at their size and re-split the remainder among
    // the rest until nothing overflows.
    std::vector<bool> pinned(sizes.size(), false);
    for (;;) {
        bool overflow = false;
        for (std::size_t i = 0; i < sizes.size(); ++i) {
            if (!pinned[i] && sizes[i] > class_sizes[i]) {
                pinned[i] = true;
                overflow = true;
            }
        }
        if (!overflow) return sizes;
        std::size_t remaining = total;
        std::vector<double> sub_importance;
        std::vector<std::size_t> sub_sizes, free_index;
        for (std::size_t i = 0; i < sizes.size(); ++i) {
            if (pinned[i]) {
                sizes[i] = class_sizes[i];
                remaining -= class_sizes[i];
            } else {
                sub_importance.push_back(importances[i]);
                sub_sizes.push_back(class_sizes[i]);
                free_index.push_back(i);
            }
        }
        if (free_index.empty() || remaining == 0) {
            for (std::size_t i : free_index) sizes[i] = 0;
            return sizes;
        }
        // Classes left with zero importance still absorb overflow by size.
        auto sub_targets = allocation_targets(sub_importance, sub_sizes, remaining);
        auto sub = largest_remainder(sub_targets, remaining);
        ensure_positive_classes_covered(sub_targets, sub, remaining);
        for (std::size_t k = 0; k < free_index.size(); ++k) sizes[free_index[k]] = sub[k];
    }
}

std::vector<double> intra_class_probabilities(std::span<const PerSampleGradient> gradients) {
    if (gradients.empty()) throw SelectionError("intra-class probabilities of an empty class");
    std::vector<double> p(gradients.size());
    double total = 0.0;
    for (std::size_t i = 0; i < gradients.size(); ++i) {
        p[i] = gradients[i].norm;
        total += p[i];
    }
    if (total > 0.0) {
        for (double& v : p) v /= total;
    } else {
        std::fill(p.begin(), p.end(), 1.0 / static_cast<double>(p.size()));
    }
    return p;
}

std::vector<ClassMembers> partition_by_class(std::span<const std::size_t> labels) {
    std::vector<ClassMembers> out;
    if (labels.empty()) return out;
    const std::size_t max_label = *std::max_element(labels.begin(), labels.end());
    std::vector<std::vector<std::size_t>> buckets(max_label + 1);
    for (std::size_t i = 0; i < labels.size(); ++i) buckets[labels[i]].push_back(i);
    for (std::size_t y = 0; y < buckets.size(); ++y) {
        if (!buckets[y].empty()) out.push_back({y, std::move(buckets[y])});
    }
    return out;
}

SelectionPlan build_plan_cis(std::span<const std::size_t> labels,
                             std::span<const PerSampleGradient> gradients, std::size_t total) {
    require_pool(labels, gradients.size());
    SelectionPlan plan;
    plan.strategy = Strategy::cis;
    plan.mode = SamplingMode::per_class;
    plan.batch_size = total;
    plan.pool_size = labels.size();

    std::vector<double> importances;
    std::vector<std::size_t> sizes;
    for (auto& cls : partition_by_class(labels)) {
        std::vector<PerSampleGradient> members;
        members.reserve(cls.indices.size());
        for (std::size_t i : cls.indices) members.push_back(gradients[i]);
        ClassSelection sel;
        sel.label = cls.label;
        sel.importance = class_importance(summarize_class(cls.label, members));
        sel.probabilities = intra_class_probabilities(members);
        sel.members = std::move(cls.indices);
        importances.push_back(sel.importance);
        sizes.push_back(sel.members.size());
        plan.classes.push_back(std::move(sel));
    }
    const auto targets = allocation_targets(importances, sizes, total);
    const auto alloc = allocate_batch_sizes(importances, sizes, total);
    for (std::size_t k = 0; k < plan.classes.size(); ++k) {
        plan.classes[k].batch_size = alloc[k];
        plan.classes[k].expected_batch_size = targets[k];
    }
    return plan;
}

SelectionPlan build_plan_is(std::span<const std::size_t> labels,
                            std::span<const PerSampleGradient> gradients, std::size_t total) {
    require_pool(labels, gradients.size());
    SelectionPlan plan;
    plan.strategy = Strategy::is;
    plan.mode = SamplingMode::flat;
    plan.batch_size = total;
    plan.pool_size = labels.size();
    plan.flat_probabilities = intra_class_probabilities(gradients);

    std::vector<double> expected;
    for (auto& cls : partition_by_class(labels)) {
        ClassSelection sel;
        sel.label = cls.label;
        double mass = 0.0;
        sel.probabilities = class_probabilities_from_flat(plan.flat_probabilities, cls.indices, mass);
        sel.expected_batch_size = static_cast<double>(total) * mass;
        sel.members = std::move(cls.indices);
        expected.push_back(sel.expected_batch_size);
        plan.classes.push_back(std::move(sel));
    }
    const auto rounded = largest_remainder(expected, total);
    for (std::size_t k = 0; k < plan.classes.size(); ++k) plan.classes[k].batch_size = rounded[k];
    return plan;
}

SelectionPlan build_plan_stratified(std::span<const std::size_t> labels,
                                    std::span<const std::size_t> batch_sizes,
                                    std::span<const std::vector<double>> probabilities,
                                    Strategy tag) {
    if (labels.empty()) throw SelectionError("empty candidate set");
    auto parts = partition_by_class(labels);
    if (parts.size() != batch_sizes.size() || parts.size() != probabilities.size()) {
        throw ShapeError("stratified plan needs one size and one distribution per class");
    }
    SelectionPlan plan;
    plan.strategy = tag;
    plan.mode = SamplingMode::per_class;
    plan.pool_size = labels.size();
    for (std::size_t k = 0; k < parts.size(); ++k) {
        if (probabilities[k].size() != parts[k].indices.size()) {
            throw ShapeError("class distribution length does not match class size");
        }
        ClassSelection sel;
        sel.label = parts[k].label;
        sel.members = std::move(parts[k].indices);
        sel.probabilities = probabilities[k];
        sel.batch_size = batch_sizes[k];
        sel.expected_batch_size = static_cast<double>(batch_sizes[k]);
        plan.batch_size += batch_sizes[k];
        plan.classes.push_back(std::move(sel));
    }
    return plan;
}

SelectionPlan build_plan_uniform_stratified(std::span<const std::size_t> labels,
                                            std::size_t total) {
    auto parts = partition_by_class(labels);
    std::vector<double> weights;
    std::vector<std::size_t> sizes;
    std::vector<std::vector<double>> probs;
    for (const auto& p : parts) {
        weights.push_back(static_cast<double>(p.indices.size()));
        sizes.push_back(p.indices.size());
        probs.emplace_back(p.indices.size(), 1.0 / static_cast<double>(p.indices.size()));
    }
    if (parts.empty()) throw SelectionError("empty candidate set");
    const auto alloc = allocate_batch_sizes(weights, sizes, total);
    auto plan = build_plan_stratified(labels, alloc, probs, Strategy::rs);
    const auto targets = allocation_targets(weights, sizes, total);
    for (std::size_t k = 0; k < plan.classes.size(); ++k) plan.classes[k].expected_batch_size = targets[k];
    return plan;
}

SelectionPlan build_plan_uniform_flat(std::span<const std::size_t> labels, std::size_t total) {
    if (labels.empty()) throw SelectionError("empty candidate set");
    std::vector<PerSampleGradient> unit(labels.size());
    for (auto& g : unit) g.norm = 1.0;
    auto plan = build_plan_is(labels, unit, total);
    plan.strategy = Strategy::rs;
    return plan;
}

SelectionPlan build_plan_baseline(Strategy kind, std::span<const std::size_t> labels,
                                  std::span<const double> scores, std::size_t total) {
    if (labels.empty()) throw SelectionError("empty candidate set");
    if (total == 0) throw std::invalid_argument("batch size must be positive");
    if (total > labels.size()) {
        throw SelectionError("batch of " + std::to_string(total) + " exceeds " +
                             std::to_string(labels.size()) + " candidates");
    }
    SelectionPlan plan;
    plan.strategy = kind;
    plan.batch_size = total;
    plan.pool_size = labels.size();
    const double n = static_cast<double>(labels.size());
    for (auto& cls : partition_by_class(labels)) {
        ClassSelection sel;
        sel.label = cls.label;
        sel.probabilities.assign(cls.indices.size(), 1.0 / static_cast<double>(cls.indices.size()));
        sel.expected_batch_size = static_cast<double>(total) * static_cast<double>(cls.indices.size()) / n;
        sel.members = std::move(cls.indices);
        plan.classes.push_back(std::move(sel));
    }

    if (kind == Strategy::rs) {
        plan.mode = SamplingMode::uniform_without_replacement;
        std::vector<double> expected;
        for (const auto& c : plan.classes) expected.push_back(c.expected_batch_size);
        const auto rounded = largest_remainder(expected, total);
        for (std::size_t k = 0; k < plan.classes.size(); ++k) plan.classes[k].batch_size = rounded[k];
        return plan;
    }
    if (kind != Strategy::hl && kind != Strategy::ll && kind != Strategy::ce) {
        throw std::invalid_argument("build_plan_baseline handles rs, hl, ll and ce only");
    }
    if (scores.size() != labels.size()) throw ShapeError("one score per candidate required");

    plan.mode = SamplingMode::fixed;
    std::vector<std::size_t> order(labels.size());
    std::iota(order.begin(), order.end(), 0);
    if (kind == Strategy::ll) {
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    } else {
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    }
    plan.fixed.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(total));
    for (auto& c : plan.classes) {
        c.batch_size = static_cast<std::size_t>(std::count_if(
            plan.fixed.begin(), plan.fixed.end(), [&](std::size_t i) { return labels[i] == c.label; }));
        c.expected_batch_size = static_cast<double>(c.batch_size);
    }
    return plan;
}

BatchSampler::BatchSampler(const SelectionPlan& plan) : plan_(&plan) {
    switch (plan.mode) {
        case SamplingMode::per_class: {
            weight_offsets_.reserve(plan.classes.size());
            for (const auto& c : plan.classes) {
                weight_offsets_.push_back(weights_.size());
                class_dists_.emplace_back(c.probabilities.begin(), c.probabilities.end());
                const double n = static_cast<double>(c.members.size());
                for (double p : c.probabilities) weights_.push_back(p > 0.0 ? 1.0 / (p * n) : 0.0);
            }
            break;
        }
        case SamplingMode::flat: {
            flat_dist_ = std::discrete_distribution<std::size_t>(plan.flat_probabilities.begin(),
                                                                 plan.flat_probabilities.end());
            const double n = static_cast<double>(plan.pool_size);
            weights_.reserve(plan.flat_probabilities.size());
            for (double p : plan.flat_probabilities) weights_.push_back(p > 0.0 ? 1.0 / (p * n) : 0.0);
            break;
        }
        case SamplingMode::uniform_without_replacement:
        case SamplingMode::fixed:
            break;
    }
    label_of_.assign(plan.pool_size, 0);
    for (const auto& c : plan.classes) {
        for (std::size_t i : c.members) label_of_.at(i) = c.label;
    }
}

WeightedBatch BatchSampler::draw(std::mt19937_64& rng) const {
    WeightedBatch b;
    draw_into(rng, b);
    return b;
}

void BatchSampler::draw_into(std::mt19937_64& rng, WeightedBatch& out) const {
    const SelectionPlan& plan = *plan_;
    out.entries.clear();
    out.strata.clear();
    out.pool_size = plan.pool_size;
    out.estimator = plan.estimator();

    switch (plan.mode) {
        case SamplingMode::per_class: {
            for (std::size_t k = 0; k < plan.classes.size(); ++k) {
                const auto& c = plan.classes[k];
                out.strata.push_back({c.label, c.members.size(), c.batch_size});
                auto& dist = class_dists_[k];
                for (std::size_t d = 0; d < c.batch_size; ++d) {
                    const std::size_t j = dist(rng);
                    out.entries.push_back({c.members[j], c.label, k, weights_[weight_offsets_[k] + j]});
                }
            }
            break;
        }
        case SamplingMode::flat: {
            auto& dist = flat_dist_;
            for (std::size_t d = 0; d < plan.batch_size; ++d) {
                const std::size_t i = dist(rng);
                out.entries.push_back({i, label_of_[i], 0, weights_[i]});
            }
            break;
        }
        case SamplingMode::uniform_without_replacement: {
            if (plan.batch_size > plan.pool_size) throw SelectionError("batch exceeds candidate set");
            std::vector<std::size_t> idx(plan.pool_size);
            std::iota(idx.begin(), idx.end(), 0);
            for (std::size_t d = 0; d < plan.batch_size; ++d) {
                std::uniform_int_distribution<std::size_t> pick(d, idx.size() - 1);
                std::swap(idx[d], idx[pick(rng)]);
                out.entries.push_back({idx[d], label_of_[idx[d]], 0, 1.0});
            }
            break;
        }
        case SamplingMode::fixed:
            for (std::size_t i : plan.fixed) out.entries.push_back({i, label_of_[i], 0, 1.0});
            break;
    }
}

WeightedBatch draw_batch(const SelectionPlan& plan, std::mt19937_64& rng) {
    return BatchSampler(plan).draw(rng);
}

WeightedBatch draw_batch(const SelectionPlan& plan, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return draw_batch(plan, rng);
}

}  // namespace titan
