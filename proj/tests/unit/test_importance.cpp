#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <numeric>
#include <random>
#include <set>

#include "oracles.hpp"
#include "titan/importance.hpp"

using namespace titan;

namespace {

std::vector<PerSampleGradient> wrap(const std::vector<linalg::Vector>& g) {
    std::vector<PerSampleGradient> out;
    for (std::size_t i = 0; i < g.size(); ++i) out.push_back({i, g[i], oracle::vec_norm(g[i])});
    return out;
}

std::vector<linalg::Vector> random_gradients(std::mt19937_64& rng, std::size_t n, std::size_t dim) {
    std::normal_distribution<double> z(0.0, 1.0);
    std::vector<linalg::Vector> g(n, linalg::Vector(dim));
    for (auto& v : g)
        for (double& x : v) x = z(rng);
    return g;
}

std::vector<std::size_t> random_labels(std::mt19937_64& rng, std::size_t n, std::size_t classes) {
    std::vector<std::size_t> l(n);
    for (std::size_t i = 0; i < n; ++i) l[i] = i < classes ? i : rng() % classes;
    std::shuffle(l.begin(), l.end(), rng);
    return l;
}

}  // namespace

TEST_CASE("class importance matches the variance-difference form") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        const auto g = random_gradients(rng, 1 + trial % 9, 1 + trial % 4);
        const auto s = summarize_class(0, wrap(g));
        // The square root amplifies cancellation near zero, so compare on the
        // scale of n * E|g|.
        const double scale = static_cast<double>(g.size()) * s.mean_norm;
        CHECK(std::abs(class_importance(s) - oracle::literal_class_importance(g)) <= 1e-6 * scale);
    }
}

TEST_CASE("class importance edge cases") {
    SUBCASE("identical gradients") {
        const std::vector<linalg::Vector> g(4, linalg::Vector{1.0, 2.0});
        CHECK(class_importance(summarize_class(0, wrap(g))) == doctest::Approx(0.0));
    }
    SUBCASE("single sample") {
        CHECK(class_importance(summarize_class(0, wrap({{3.0, 4.0}}))) == 0.0);
    }
    SUBCASE("opposite unit vectors") {
        // E|g| = 1, E g = 0
        CHECK(class_importance(summarize_class(0, wrap({{1.0, 0.0}, {-1.0, 0.0}}))) == doctest::Approx(2.0));
    }
    SUBCASE("empty") {
        CHECK(class_importance(summarize_class(0, {})) == 0.0);
    }
}

TEST_CASE("allocation examples") {
    const std::vector<std::size_t> sizes{10, 10, 10};
    CHECK(allocate_batch_sizes(std::vector<double>{1.0, 1.0, 2.0}, sizes, 8) ==
          std::vector<std::size_t>{2, 2, 4});
    // Targets 10/3 each: remainders tie, lower index wins.
    CHECK(allocate_batch_sizes(std::vector<double>{1.0, 1.0, 1.0}, sizes, 10) ==
          std::vector<std::size_t>{4, 3, 3});
    // All zero: proportional to class size.
    CHECK(allocate_batch_sizes(std::vector<double>{0.0, 0.0}, std::vector<std::size_t>{3, 1}, 4) ==
          std::vector<std::size_t>{3, 1});
    // A tiny positive importance still gets one slot.
    CHECK(allocate_batch_sizes(std::vector<double>{100.0, 1e-6}, std::vector<std::size_t>{5, 5}, 4) ==
          std::vector<std::size_t>{3, 1});
    // Zero importance gets nothing when others are positive.
    CHECK(allocate_batch_sizes(std::vector<double>{1.0, 0.0}, std::vector<std::size_t>{5, 5}, 4) ==
          std::vector<std::size_t>{4, 0});
}

TEST_CASE("allocation properties") {
    std::mt19937_64 rng(17);
    std::exponential_distribution<double> e(1.0);
    for (int trial = 0; trial < 2000; ++trial) {
        const std::size_t k = 1 + rng() % 6;
        std::vector<double> imp(k);
        std::vector<std::size_t> sizes(k);
        for (std::size_t i = 0; i < k; ++i) {
            imp[i] = rng() % 4 == 0 ? 0.0 : e(rng);
            sizes[i] = 1 + rng() % 12;
        }
        const std::size_t pool = std::accumulate(sizes.begin(), sizes.end(), std::size_t{0});
        const std::size_t total = 1 + rng() % pool;
        const bool cap = trial % 2 == 0;
        const auto a = allocate_batch_sizes(imp, sizes, total, cap);
        REQUIRE(a.size() == k);
        CHECK(std::accumulate(a.begin(), a.end(), std::size_t{0}) == total);

        const auto t = allocation_targets(imp, sizes, total);
        const double mass = std::accumulate(imp.begin(), imp.end(), 0.0);
        std::size_t positive = 0;
        for (std::size_t i = 0; i < k; ++i) positive += imp[i] > 0.0;
        for (std::size_t i = 0; i < k; ++i) {
            if (cap) CHECK(a[i] <= sizes[i]);
            if (mass > 0.0 && imp[i] == 0.0 && !cap) CHECK(a[i] == 0);
            if (imp[i] > 0.0 && total >= positive && !cap) CHECK(a[i] >= 1);
            if (!cap && mass > 0.0 && positive <= 1) CHECK(std::abs(static_cast<double>(a[i]) - t[i]) < 1.0);
        }
    }
}

TEST_CASE("intra-class probabilities") {
    const auto p = intra_class_probabilities(wrap({{3.0, 4.0}, {0.0, 0.0}, {0.0, 5.0}}));
    CHECK(p == std::vector<double>{0.5, 0.0, 0.5});
    const auto u = intra_class_probabilities(wrap({{0.0}, {0.0}, {0.0}, {0.0}}));
    CHECK(u == std::vector<double>(4, 0.25));
}

TEST_CASE("plans are unbiased over the classes they reach") {
    std::mt19937_64 rng(23);
    for (int trial = 0; trial < 60; ++trial) {
        const std::size_t n = 6 + rng() % 20, classes = 1 + rng() % 4, dim = 1 + rng() % 4;
        const auto labels = random_labels(rng, n, classes);
        const auto g = random_gradients(rng, n, dim);
        const auto pg = wrap(g);
        linalg::Vector truth(dim, 0.0);
        for (const auto& v : g)
            for (std::size_t d = 0; d < dim; ++d) truth[d] += v[d] / static_cast<double>(n);

        const std::size_t total = classes + rng() % n;
        for (const auto& plan : {build_plan_cis(labels, pg, total), build_plan_is(labels, pg, total),
                                 build_plan_uniform_stratified(labels, total),
                                 build_plan_uniform_flat(labels, total)}) {
            // A class left without slots drops out of the estimate entirely.
            linalg::Vector reachable = truth;
            std::size_t slots = 0;
            for (const auto& c : plan.classes) {
                slots += c.batch_size;
                if (plan.mode != SamplingMode::per_class || c.batch_size > 0) continue;
                for (std::size_t i : c.members)
                    for (std::size_t d = 0; d < dim; ++d) reachable[d] -= g[i][d] / static_cast<double>(n);
            }
            CHECK(oracle::relative_error(oracle::exact_estimator_mean(plan, g), reachable) < 1e-10);
            if (plan.mode == SamplingMode::per_class) CHECK(slots == total);
        }
    }
}

TEST_CASE("drawn batches carry the right weights") {
    const std::vector<std::size_t> labels{0, 1, 0, 1, 1, 2};
    const auto pg = wrap({{1.0}, {2.0}, {3.0}, {-1.0}, {0.5}, {4.0}});
    const auto plan = build_plan_cis(labels, pg, 5);
    BatchSampler sampler(plan);
    std::mt19937_64 rng(1);
    for (int i = 0; i < 100; ++i) {
        const auto b = sampler.draw(rng);
        CHECK(b.estimator == Estimator::stratified);
        CHECK(b.size() == 5);
        for (const auto& e : b.entries) {
            CHECK(labels[e.index] == e.label);
            const auto& c = plan.classes[e.stratum];
            const auto j = static_cast<std::size_t>(std::find(c.members.begin(), c.members.end(), e.index) -
                                                    c.members.begin());
            CHECK(e.weight == doctest::Approx(1.0 / (c.probabilities[j] * static_cast<double>(c.members.size()))));
        }
    }
}

TEST_CASE("same seed, same batch") {
    const std::vector<std::size_t> labels{0, 1, 0, 1, 1, 2, 2, 0};
    const auto pg = wrap({{1.0}, {2.0}, {3.0}, {-1.0}, {0.5}, {4.0}, {1.0}, {2.0}});
    const auto plan = build_plan_cis(labels, pg, 4);
    const auto a = draw_batch(plan, 99), b = draw_batch(plan, 99);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.entries[i].index == b.entries[i].index);
}

TEST_CASE("baselines select what a full sort selects") {
    std::mt19937_64 rng(31);
    std::uniform_int_distribution<int> coarse(0, 5);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 3 + rng() % 30;
        const auto labels = random_labels(rng, n, 3);
        std::vector<double> scores(n);
        for (double& s : scores) s = coarse(rng) * 0.5;  // plenty of ties
        const std::size_t total = 1 + rng() % n;
        for (Strategy kind : {Strategy::hl, Strategy::ll, Strategy::ce}) {
            std::vector<std::pair<double, std::size_t>> keyed;
            const double sign = kind == Strategy::ll ? 1.0 : -1.0;
            for (std::size_t i = 0; i < n; ++i) keyed.push_back({sign * scores[i], i});
            std::sort(keyed.begin(), keyed.end());
            std::set<std::size_t> expect;
            for (std::size_t i = 0; i < total; ++i) expect.insert(keyed[i].second);

            const auto plan = build_plan_baseline(kind, labels, scores, total);
            const auto b = draw_batch(plan, 1);
            std::set<std::size_t> got;
            for (const auto& e : b.entries) got.insert(e.index);
            CHECK(got == expect);
        }
    }
}

TEST_CASE("uniform random selection draws distinct samples") {
    std::vector<std::size_t> labels(40);
    for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = i % 4;
    const auto plan = build_plan_baseline(Strategy::rs, labels, {}, 25);
    std::mt19937_64 rng(8);
    std::vector<int> hits(40, 0);
    for (int r = 0; r < 4000; ++r) {
        const auto b = draw_batch(plan, rng);
        std::set<std::size_t> seen;
        for (const auto& e : b.entries) {
            seen.insert(e.index);
            ++hits[e.index];
            CHECK(e.weight == 1.0);
        }
        CHECK(seen.size() == 25);
    }
    // Each sample is included with probability 25/40.
    for (int h : hits) CHECK(std::abs(h / 4000.0 - 0.625) < 0.04);
}

TEST_CASE("plan errors") {
    const std::vector<std::size_t> labels{0, 1};
    const auto pg = wrap({{1.0}, {2.0}});
    CHECK_THROWS_AS(build_plan_cis({}, {}, 1), SelectionError);
    CHECK_THROWS_AS(build_plan_baseline(Strategy::hl, labels, std::vector<double>{1.0, 2.0}, 3), SelectionError);
    CHECK_THROWS_AS(build_plan_baseline(Strategy::hl, labels, std::vector<double>{1.0}, 1), ShapeError);
    CHECK(parse_strategy("cis") == Strategy::cis);
    CHECK_FALSE(parse_strategy("nope").has_value());
    CHECK(to_string(Strategy::ce) == "ce");
}
