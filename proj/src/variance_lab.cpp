#include "titan/variance_lab.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <utility>

namespace titan::lab {

std::vector<PerSampleGradient> GradientInstance::per_sample() const {
    std::vector<PerSampleGradient> out(gradients.size());
    for (std::size_t i = 0; i < gradients.size(); ++i) {
        out[i].sample_id = i;
        out[i].values = gradients[i];
        out[i].norm = linalg::norm(gradients[i]);
    }
    return out;
}

linalg::Vector GradientInstance::full_mean() const { return linalg::mean(gradients); }

namespace {

linalg::Vector gaussian_vector(std::mt19937_64& rng, std::size_t dim, double sd) {
    std::normal_distribution<double> n(0.0, sd);
    linalg::Vector v(dim);
    for (double& x : v) x = n(rng);
    return v;
}

void shuffle_instance(GradientInstance& inst, std::mt19937_64& rng) {
    std::vector<std::size_t> order(inst.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    GradientInstance out;
    for (std::size_t i : order) {
        out.labels.push_back(inst.labels[i]);
        out.gradients.push_back(std::move(inst.gradients[i]));
    }
    inst = std::move(out);
}

linalg::Vector class_mean(std::span<const linalg::Vector> gradients,
                          const std::vector<std::size_t>& members) {
    linalg::Vector m(gradients[members.front()].size(), 0.0);
    for (std::size_t i : members) linalg::axpy(1.0, gradients[i], m);
    linalg::scale(m, 1.0 / static_cast<double>(members.size()));
    return m;
}

double beta_term(std::span<const linalg::Vector> gradients, const std::vector<std::size_t>& members,
                 std::span<const double> probabilities, double norm_count) {
    double beta = 0.0;
    for (std::size_t j = 0; j < members.size(); ++j) {
        const double sq = linalg::squared_norm(gradients[members[j]]);
        const double p = probabilities[j];
        if (p > 0.0) {
            beta += sq / p;
        } else if (sq > 0.0) {
            throw DecompositionError("sample with non-zero gradient has zero selection probability");
        }
    }
    return beta / (norm_count * norm_count);
}

void require_pool_gradients(const SelectionPlan& plan, std::span<const linalg::Vector> gradients) {
    if (gradients.size() != plan.pool_size) throw ShapeError("one gradient per pool entry required");
    if (gradients.empty()) throw SelectionError("empty candidate set");
    const std::size_t d = gradients.front().size();
    for (const auto& g : gradients) {
        if (g.size() != d) throw ShapeError("gradients differ in dimension");
    }
}

// Runs `visit(g_hat)` for each of `draws` batch estimates from a sampler
// seeded with `seed`.
template <class Visit>
void for_each_estimate(const SelectionPlan& plan, std::span<const linalg::Vector> gradients,
                       std::size_t draws, std::uint64_t seed, Visit&& visit) {
    BatchSampler sampler(plan);
    std::mt19937_64 rng(seed);
    WeightedBatch batch;
    const std::size_t dim = gradients.front().size();
    linalg::Vector g(dim);
    for (std::size_t n = 0; n < draws; ++n) {
        sampler.draw_into(rng, batch);
        std::fill(g.begin(), g.end(), 0.0);
        for (const auto& e : batch.entries) {
            linalg::axpy(estimate_coefficient(batch, e), gradients[e.index], g);
        }
        visit(std::as_const(g));
    }
}

struct Moments {
    double sum = 0.0;
    double sum_sq = 0.0;
    void add(double x) {
        sum += x;
        sum_sq += x * x;
    }
    double mean(std::size_t n) const { return sum / static_cast<double>(n); }
    double standard_error(std::size_t n) const {
        const double m = mean(n);
        const double var = std::max(0.0, (sum_sq - static_cast<double>(n) * m * m) /
                                             static_cast<double>(n - 1));
        return std::sqrt(var / static_cast<double>(n));
    }
};

linalg::Vector mc_mean(const SelectionPlan& plan, std::span<const linalg::Vector> gradients,
                       std::size_t draws, std::uint64_t seed) {
    linalg::Vector mean(gradients.front().size(), 0.0);
    for_each_estimate(plan, gradients, draws, seed,
                      [&](const linalg::Vector& g) { linalg::axpy(1.0, g, mean); });
    linalg::scale(mean, 1.0 / static_cast<double>(draws));
    return mean;
}

void require_unbiased(const SelectionPlan& plan, std::span<const linalg::Vector> gradients) {
    switch (plan.mode) {
        case SamplingMode::per_class:
            for (const auto& c : plan.classes) {
                if (c.batch_size == 0 && !c.members.empty()) {
                    throw std::invalid_argument("plan leaves a class without slots");
                }
                for (std::size_t j = 0; j < c.members.size(); ++j) {
                    if (c.probabilities[j] <= 0.0 && linalg::squared_norm(gradients[c.members[j]]) > 0.0) {
                        throw std::invalid_argument("plan never selects a sample with non-zero gradient");
                    }
                }
            }
            break;
        case SamplingMode::flat:
            for (std::size_t i = 0; i < plan.pool_size; ++i) {
                if (plan.flat_probabilities[i] <= 0.0 && linalg::squared_norm(gradients[i]) > 0.0) {
                    throw std::invalid_argument("plan never selects a sample with non-zero gradient");
                }
            }
            break;
        case SamplingMode::uniform_without_replacement:
            break;
        case SamplingMode::fixed:
            if (plan.fixed.size() != plan.pool_size) {
                throw std::invalid_argument("a ranked selection is unbiased only as a full batch");
            }
            break;
    }
}

}  // namespace

GradientInstance random_instance(const InstanceSpec& spec, std::uint64_t seed) {
    if (spec.classes == 0 || spec.dim == 0 || spec.min_per_class == 0 ||
        spec.min_per_class > spec.max_per_class || spec.spread_low < 0.0 ||
        spec.spread_low > spec.spread_high) {
        throw std::invalid_argument("invalid instance specification");
    }
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> size_dist(spec.min_per_class, spec.max_per_class);
    std::uniform_real_distribution<double> spread_dist(spec.spread_low, spec.spread_high);
    const double unit = 1.0 / std::sqrt(static_cast<double>(spec.dim));
    GradientInstance inst;
    for (std::size_t y = 0; y < spec.classes; ++y) {
        const std::size_t n = size_dist(rng);
        const double spread = spread_dist(rng);
        const auto centre = gaussian_vector(rng, spec.dim, unit);
        for (std::size_t i = 0; i < n; ++i) {
            auto g = gaussian_vector(rng, spec.dim, unit * spread);
            linalg::axpy(1.0, centre, g);
            inst.labels.push_back(y);
            inst.gradients.push_back(std::move(g));
        }
    }
    shuffle_instance(inst, rng);
    return inst;
}

GradientInstance diverse_vs_concentrated_instance(std::size_t per_class, std::size_t dim,
                                                  std::uint64_t seed) {
    if (per_class < 2 || dim < 2) throw std::invalid_argument("need at least two samples and two dimensions");
    std::mt19937_64 rng(seed);
    auto unit_vector = [&](linalg::Vector v) {
        linalg::scale(v, 1.0 / linalg::norm(v));
        return v;
    };
    const auto axis = unit_vector(gaussian_vector(rng, dim, 1.0));
    GradientInstance inst;
    for (std::size_t i = 0; i < per_class; ++i) {
        inst.labels.push_back(0);
        inst.gradients.push_back(unit_vector(gaussian_vector(rng, dim, 1.0)));
        auto tight = gaussian_vector(rng, dim, 0.05);
        linalg::axpy(1.0, axis, tight);
        inst.labels.push_back(1);
        inst.gradients.push_back(unit_vector(std::move(tight)));
    }
    return inst;
}

VarianceDecomposition closed_form_variance(const SelectionPlan& plan,
                                           std::span<const linalg::Vector> gradients) {
    require_pool_gradients(plan, gradients);
    const double pool = static_cast<double>(plan.pool_size);
    VarianceDecomposition out;

    if (plan.mode == SamplingMode::flat) {
        if (plan.batch_size == 0) throw DecompositionError("flat plan with no slots");
        std::vector<std::size_t> all(plan.pool_size);
        std::iota(all.begin(), all.end(), 0);
        ClassVarianceTerm t;
        t.class_size = plan.pool_size;
        t.batch_size = plan.batch_size;
        t.allocated = true;
        t.alpha = 1.0 / static_cast<double>(plan.batch_size);
        t.beta = beta_term(gradients, all, plan.flat_probabilities, pool);
        t.gamma = linalg::squared_norm(class_mean(gradients, all));
        out.total = t.contribution();
        out.terms.push_back(t);
        return out;
    }
    if (plan.mode != SamplingMode::per_class) {
        throw DecompositionError("closed form covers with-replacement plans only");
    }

    for (const auto& c : plan.classes) {
        if (c.members.empty()) continue;
        ClassVarianceTerm t;
        t.label = c.label;
        t.class_size = c.members.size();
        t.batch_size = c.batch_size;
        t.gamma = linalg::squared_norm(class_mean(gradients, c.members));
        const double n = static_cast<double>(c.members.size());
        if (c.batch_size == 0) {
            out.covers_all_classes = false;
        } else {
            t.allocated = true;
            t.alpha = n * n / (pool * pool * static_cast<double>(c.batch_size));
            t.beta = beta_term(gradients, c.members, c.probabilities, n);
            out.total += t.contribution();
        }
        out.terms.push_back(t);
    }
    return out;
}

McVarianceEstimate mc_variance(const SelectionPlan& plan, std::span<const linalg::Vector> gradients,
                               std::size_t draws, std::uint64_t seed) {
    if (draws < 2) throw std::invalid_argument("Monte-Carlo variance needs at least two draws");
    require_pool_gradients(plan, gradients);
    McVarianceEstimate est;
    est.draws = draws;
    est.mean = mc_mean(plan, gradients, draws, seed);
    Moments z;
    for_each_estimate(plan, gradients, draws, seed, [&](const linalg::Vector& g) {
        z.add(linalg::squared_distance(g, est.mean));
    });
    est.variance = z.sum / static_cast<double>(draws - 1);
    est.standard_error = z.standard_error(draws);
    return est;
}

IdentityCheck training_progress_identity(const SelectionPlan& plan,
                                         std::span<const linalg::Vector> gradients,
                                         std::span<const double> w, std::span<const double> w_ref,
                                         double lr, std::size_t draws, std::uint64_t seed) {
    if (draws < 2) throw std::invalid_argument("identity check needs at least two draws");
    if (lr < 0.0) throw std::invalid_argument("learning rate must be non-negative");
    require_pool_gradients(plan, gradients);
    linalg::require_same_size(w, w_ref);
    linalg::require_same_size(w, gradients.front());
    require_unbiased(plan, gradients);

    linalg::Vector delta(w.begin(), w.end());
    linalg::axpy(-1.0, w_ref, delta);
    const linalg::Vector full = linalg::mean(gradients);

    const linalg::Vector mean = mc_mean(plan, gradients, draws, seed);
    Moments z, l;
    for_each_estimate(plan, gradients, draws, seed, [&](const linalg::Vector& g) {
        z.add(linalg::squared_distance(g, mean));
        // |delta|^2 - |delta - lr g|^2
        l.add(2.0 * lr * linalg::dot(delta, g) - lr * lr * linalg::squared_norm(g));
    });

    IdentityCheck out;
    out.variance = z.sum / static_cast<double>(draws - 1);
    out.lhs = l.mean(draws);
    out.rhs = -lr * lr * out.variance + 2.0 * lr * linalg::dot(delta, full) -
              lr * lr * linalg::squared_norm(full);
    const double scale = std::max({std::abs(out.lhs), std::abs(out.rhs), 1e-12});
    out.residual = std::abs(out.lhs - out.rhs) / scale;
    const double se_lhs = l.standard_error(draws);
    const double se_v = lr * lr * z.standard_error(draws);
    out.standard_error = std::sqrt(se_lhs * se_lhs + se_v * se_v) / scale;
    return out;
}

double AllocationObjective::operator()(std::span<const std::size_t> allocation) const {
    if (allocation.size() != coefficients.size()) throw ShapeError("one allocation entry per class required");
    double f = 0.0;
    for (std::size_t k = 0; k < coefficients.size(); ++k) {
        if (coefficients[k] == 0.0) continue;
        if (allocation[k] == 0) return std::numeric_limits<double>::infinity();
        f += coefficients[k] / static_cast<double>(allocation[k]);
    }
    return f;
}

double AllocationObjective::continuous(std::span<const double> allocation) const {
    if (allocation.size() != coefficients.size()) throw ShapeError("one allocation entry per class required");
    double f = 0.0;
    for (std::size_t k = 0; k < coefficients.size(); ++k) {
        if (coefficients[k] == 0.0) continue;
        if (!(allocation[k] > 0.0)) return std::numeric_limits<double>::infinity();
        f += coefficients[k] / allocation[k];
    }
    return f;
}

std::vector<double> AllocationObjective::continuous_optimum(std::size_t total) const {
    std::vector<double> b(coefficients.size());
    double mass = 0.0;
    for (std::size_t k = 0; k < b.size(); ++k) {
        b[k] = std::sqrt(coefficients[k]);
        mass += b[k];
    }
    for (double& v : b) v = mass > 0.0 ? static_cast<double>(total) * v / mass
                                       : static_cast<double>(total) / static_cast<double>(b.size());
    return b;
}

AllocationObjective allocation_objective(const GradientInstance& instance) {
    if (instance.size() == 0) throw SelectionError("empty candidate set");
    const auto parts = partition_by_class(instance.labels);
    const auto grads = instance.per_sample();
    std::vector<std::size_t> ones(parts.size(), 1);
    std::vector<std::vector<double>> probs;
    for (const auto& p : parts) {
        std::vector<PerSampleGradient> members;
        for (std::size_t i : p.indices) members.push_back(grads[i]);
        probs.push_back(intra_class_probabilities(members));
    }
    // With one slot per class, alpha_y (beta*_y - gamma_y) is exactly c_y.
    const auto plan = build_plan_stratified(instance.labels, ones, probs);
    const auto dec = closed_form_variance(plan, instance.gradients);
    AllocationObjective obj;
    for (const auto& t : dec.terms) {
        obj.labels.push_back(t.label);
        const double spread = t.beta - t.gamma;
        obj.coefficients.push_back(spread > 1e-12 * t.beta ? t.alpha * spread : 0.0);
    }
    return obj;
}

std::size_t composition_count(std::size_t total, std::size_t parts) {
    if (parts == 0) return total == 0 ? 1 : 0;
    // C(total + parts - 1, parts - 1), saturating.
    const std::size_t k = parts - 1;
    const std::size_t n = total + k;
    double c = 1.0;
    for (std::size_t i = 1; i <= k; ++i) {
        c = c * static_cast<double>(n - k + i) / static_cast<double>(i);
        if (c > 1e18) return std::numeric_limits<std::size_t>::max();
    }
    return static_cast<std::size_t>(std::llround(c));
}

AllocationSearchResult exhaustive_allocation_search(const GradientInstance& instance,
                                                    std::size_t total,
                                                    std::size_t max_compositions) {
    if (total == 0) throw std::invalid_argument("batch size must be positive");
    const auto obj = allocation_objective(instance);
    const std::size_t k = obj.coefficients.size();
    const std::size_t count = composition_count(total, k);
    if (count > max_compositions) {
        throw GuardError(std::to_string(count) + " compositions exceed the limit of " +
                         std::to_string(max_compositions));
    }
    AllocationSearchResult best;
    std::vector<std::size_t> alloc(k, 0);
    // Lexicographic walk; strict improvement keeps the first minimiser.
    auto visit = [&](auto&& self, std::size_t pos, std::size_t left) -> void {
        if (pos + 1 == k) {
            alloc[pos] = left;
            ++best.compositions;
            const double v = obj(alloc);
            if (best.allocation.empty() || v < best.variance) {
                best.variance = v;
                best.allocation = alloc;
            }
            return;
        }
        for (std::size_t b = 0; b <= left; ++b) {
            alloc[pos] = b;
            self(self, pos + 1, left - b);
        }
    };
    visit(visit, 0, total);
    return best;
}

double single_unit_reallocation_delta(const AllocationObjective& objective,
                                      std::span<const std::size_t> allocation) {
    const double base = objective(allocation);
    if (!std::isfinite(base)) return std::numeric_limits<double>::infinity();
    std::vector<std::size_t> moved(allocation.begin(), allocation.end());
    double delta = 0.0;
    for (std::size_t from = 0; from < moved.size(); ++from) {
        if (moved[from] == 0) continue;
        for (std::size_t to = 0; to < moved.size(); ++to) {
            if (to == from) continue;
            --moved[from];
            ++moved[to];
            const double v = objective(moved);
            if (std::isfinite(v)) delta = std::max(delta, std::abs(v - base));
            ++moved[from];
            --moved[to];
        }
    }
    return delta;
}

}  // namespace titan::lab
