#include "titan/commands.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <map>
#include <random>

namespace titan::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string format_real(double v) {
    if (std::isnan(v)) return "nan";
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

// JSON has no infinity or NaN; those become null.
json real_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

std::string run_tag(Strategy s, std::uint64_t seed) {
    return std::string(to_string(s)) + "_seed" + std::to_string(seed);
}

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
    if (!out) throw std::runtime_error("failed writing " + path.string());
}

template <class Body>
int guarded(std::ostream& log, Body&& body) {
    try {
        return body();
    } catch (const ConfigError& e) {
        log << "config error: " << e.what() << '\n';
        return kConfigError;
    } catch (const GuardError& e) {
        log << "instance too large: " << e.what() << '\n';
        return kConfigError;
    } catch (const std::exception& e) {
        log << "error: " << e.what() << '\n';
        return kFailure;
    }
}

json plan_json(const PlanObservation& obs, Strategy strategy) {
    json classes = json::array();
    for (const auto& c : obs.plan->classes) {
        classes.push_back({{"label", c.label},
                           {"class_size", c.members.size()},
                           {"batch_size", c.batch_size},
                           {"expected_batch_size", c.expected_batch_size},
                           {"importance", c.importance}});
    }
    json selected = json::array();
    json weights = json::array();
    for (const auto& e : obs.batch->entries) {
        selected.push_back(obs.pool[e.index].id);
        weights.push_back(e.weight);
    }
    return {{"round", obs.round},
            {"strategy", to_string(strategy)},
            {"plan_strategy", to_string(obs.plan->strategy)},
            {"pool_size", obs.plan->pool_size},
            {"batch_size", obs.plan->batch_size},
            {"classes", classes},
            {"selected", selected},
            {"weights", weights}};
}

json allocation_json(std::span<const std::size_t> a) { return json(std::vector<std::size_t>(a.begin(), a.end())); }

std::vector<std::size_t> cis_allocation(const SelectionPlan& plan) {
    std::vector<std::size_t> a;
    for (const auto& c : plan.classes) a.push_back(c.batch_size);
    return a;
}

std::vector<std::size_t> class_sizes(const SelectionPlan& plan) {
    std::vector<std::size_t> a;
    for (const auto& c : plan.classes) a.push_back(c.members.size());
    return a;
}

void require_guard(std::size_t batch, std::size_t classes) {
    const std::size_t count = lab::composition_count(batch, classes);
    if (count > lab::kMaxCompositions) {
        throw GuardError(std::to_string(count) + " allocations of " + std::to_string(batch) + " slots over " +
                         std::to_string(classes) + " classes exceed " + std::to_string(lab::kMaxCompositions));
    }
}

}  // namespace

ExperimentConfig resolve_config(const CommandOptions& options) {
    ExperimentConfig c = options.config_path ? load_config(*options.config_path) : ExperimentConfig{};
    for (const auto& kv : options.overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError(kv, "override must look like key=value");
        auto trim = [](std::string s) {
            s.erase(0, s.find_first_not_of(" \t"));
            s.erase(s.find_last_not_of(" \t") + 1);
            return s;
        };
        apply_setting(c, trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
    }
    if (options.seed) c.seeds = {*options.seed};
    if (options.out) c.output = *options.out;
    c.validate();
    return c;
}

std::optional<std::size_t> rounds_to_target(const std::vector<RoundRecord>& records, double target) {
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (records[i].test_accuracy >= target) return i + 1;
    }
    return std::nullopt;
}

void write_metrics_csv(std::ostream& out, const std::vector<RoundRecord>& records) {
    out << "round,strategy,variance_closed_form,train_loss,test_acc,seq_time,pipe_time,batch_hist\n";
    for (const auto& r : records) {
        out << r.round << ',' << to_string(r.strategy) << ',' << format_real(r.variance_closed_form) << ','
            << format_real(r.train_loss) << ',' << format_real(r.test_accuracy) << ','
            << format_real(r.seq_time) << ',' << format_real(r.pipe_time) << ',';
        for (std::size_t k = 0; k < r.batch_hist.size(); ++k) out << (k ? ":" : "") << r.batch_hist[k];
        out << '\n';
    }
}

int cmd_run(const CommandOptions& options, std::ostream& log) {
    return guarded(log, [&] {
        const auto cfg = resolve_config(options);
        const fs::path out_dir(cfg.output);
        fs::create_directories(out_dir);

        // The paired RS run defines the target accuracy; it always runs first.
        std::vector<Strategy> order{Strategy::rs};
        for (Strategy s : cfg.strategies) {
            if (std::find(order.begin(), order.end(), s) == order.end()) order.push_back(s);
        }
        const bool rs_listed = std::find(cfg.strategies.begin(), cfg.strategies.end(), Strategy::rs) !=
                               cfg.strategies.end();

        json runs = json::array();
        std::map<Strategy, std::vector<RunSummary>> by_strategy;
        for (std::uint64_t seed : cfg.seeds) {
            double target = 0.0;
            for (Strategy s : order) {
                auto source = cfg.stream(seed);
                auto init = cfg.initial_model(source.dim(), source.num_classes(), seed);
                Simulator sim(cfg.pipeline(s, seed), std::move(init), std::move(source));
                std::ofstream plans;
                if (options.dump_plan) {
                    plans.open(out_dir / ("plans_" + run_tag(s, seed) + ".jsonl"), std::ios::binary);
                    sim.on_plan = [&](const PlanObservation& obs) { plans << plan_json(obs, s).dump() << '\n'; };
                }
                const auto records = sim.run();

                {
                    std::ofstream csv(out_dir / ("metrics_" + run_tag(s, seed) + ".csv"), std::ios::binary);
                    write_metrics_csv(csv, records);
                    if (!csv) throw std::runtime_error("failed writing metrics");
                }
                {
                    std::ofstream snap(out_dir / ("params_" + run_tag(s, seed) + ".bin"), std::ios::binary);
                    save_params(snap, sim.params());
                }

                RunSummary sum;
                sum.strategy = s;
                sum.seed = seed;
                sum.rounds = records.size();
                sum.final_accuracy = records.back().test_accuracy;
                if (s == Strategy::rs) target = sum.final_accuracy;
                sum.target_accuracy = target;
                sum.rounds_to_target = rounds_to_target(records, target);
                if (sum.rounds_to_target) {
                    sum.seq_time_to_target = records[*sum.rounds_to_target - 1].seq_time;
                    sum.pipe_time_to_target = records[*sum.rounds_to_target - 1].pipe_time;
                }
                by_strategy[s].push_back(sum);

                auto opt = [](const auto& v) { return v ? json(*v) : json(nullptr); };
                runs.push_back({{"strategy", to_string(s)},
                                {"seed", seed},
                                {"implicit", s == Strategy::rs && !rs_listed},
                                {"rounds", sum.rounds},
                                {"final_accuracy", sum.final_accuracy},
                                {"target_accuracy", target},
                                {"rounds_to_target", opt(sum.rounds_to_target)},
                                {"seq_time_to_target", opt(sum.seq_time_to_target)},
                                {"pipe_time_to_target", opt(sum.pipe_time_to_target)},
                                {"seq_time", records.back().seq_time},
                                {"pipe_time", records.back().pipe_time}});
                log << to_string(s) << " seed " << seed << ": final accuracy " << sum.final_accuracy
                    << ", rounds to target "
                    << (sum.rounds_to_target ? std::to_string(*sum.rounds_to_target) : "not reached") << '\n';
            }
        }

        json aggregate = json::object();
        for (const auto& [s, list] : by_strategy) {
            double acc = 0.0, rounds = 0.0;
            std::size_t reached = 0;
            for (const auto& r : list) {
                acc += r.final_accuracy;
                if (r.rounds_to_target) {
                    rounds += static_cast<double>(*r.rounds_to_target);
                    ++reached;
                }
            }
            aggregate[std::string(to_string(s))] = {
                {"mean_final_accuracy", acc / static_cast<double>(list.size())},
                {"runs", list.size()},
                {"reached_target", reached},
                {"mean_rounds_to_target", reached ? json(rounds / static_cast<double>(reached)) : json(nullptr)}};
        }
        const json summary = {{"target", "final accuracy of the paired rs run"},
                              {"runs", runs},
                              {"strategies", aggregate}};
        write_file(out_dir / "summary.json", summary.dump(2) + "\n");
        log << "wrote " << (out_dir / "summary.json").string() << '\n';
        return int{kOk};
    });
}

json variance_report(const ExperimentConfig& config, std::uint64_t seed, bool perturb_alloc) {
    const auto inst = lab::random_instance(config.instance, seed);
    const std::size_t batch = config.instance_batch;
    const auto grads = inst.per_sample();
    const auto cis = build_plan_cis(inst.labels, grads, batch);
    require_guard(batch, cis.classes.size());

    json report;
    report["instance"] = {{"seed", seed},
                          {"classes", cis.classes.size()},
                          {"class_sizes", class_sizes(cis)},
                          {"dim", inst.dim()},
                          {"batch_size", batch},
                          {"draws", config.mc_draws}};
    json notes = json::array();
    bool passed = true;

    // Common random numbers: every strategy reuses the same draw seed.
    const std::uint64_t mc_seed = derive_seed(seed, 100);
    const std::pair<const char*, SelectionPlan> plans[] = {
        {"cis", cis},
        {"is", build_plan_is(inst.labels, grads, batch)},
        {"rs", build_plan_uniform_flat(inst.labels, batch)}};
    json strategies = json::object();
    for (const auto& [name, plan] : plans) {
        const auto closed = lab::closed_form_variance(plan, inst.gradients);
        const auto mc = lab::mc_variance(plan, inst.gradients, config.mc_draws, mc_seed);
        const double z = mc.standard_error > 0.0 ? std::abs(closed.total - mc.variance) / mc.standard_error
                                                 : (closed.total == mc.variance ? 0.0 : INFINITY);
        const bool ok = z <= 3.0;
        passed = passed && ok;
        strategies[name] = {{"closed_form", closed.total},
                            {"monte_carlo", mc.variance},
                            {"standard_error", mc.standard_error},
                            {"z", real_or_null(z)},
                            {"covers_all_classes", closed.covers_all_classes},
                            {"pass", ok}};
    }
    report["strategies"] = strategies;

    {
        std::mt19937_64 rng(derive_seed(seed, 101));
        std::normal_distribution<double> n(0.0, 1.0);
        linalg::Vector w(inst.dim()), w_ref(inst.dim());
        for (double& x : w) x = n(rng);
        for (double& x : w_ref) x = n(rng);
        const auto& plan = lab::closed_form_variance(cis, inst.gradients).covers_all_classes ? cis : plans[1].second;
        const auto check = lab::training_progress_identity(plan, inst.gradients, w, w_ref, config.identity_lr,
                                                           config.mc_draws, mc_seed);
        const bool ok = check.residual <= 5.0 * check.standard_error || check.residual <= 1e-9;
        passed = passed && ok;
        report["identity"] = {{"plan", to_string(plan.strategy)},
                              {"lr", config.identity_lr},
                              {"lhs", check.lhs},
                              {"rhs", check.rhs},
                              {"residual", check.residual},
                              {"standard_error", check.standard_error},
                              {"pass", ok}};
    }

    {
        const auto objective = lab::allocation_objective(inst);
        const auto best = lab::exhaustive_allocation_search(inst, batch);
        const auto alloc = cis_allocation(cis);
        const double v = objective(alloc);
        const double delta = lab::single_unit_reallocation_delta(objective, alloc);
        const bool ok = v <= best.variance + delta + 1e-12 * std::max(1.0, std::abs(best.variance));
        passed = passed && ok;
        report["allocation"] = {{"cis", allocation_json(alloc)},
                                {"cis_variance", real_or_null(v)},
                                {"exhaustive", allocation_json(best.allocation)},
                                {"exhaustive_variance", real_or_null(best.variance)},
                                {"compositions", best.compositions},
                                {"single_unit_delta", real_or_null(delta)},
                                {"pass", ok}};
        if (alloc.size() == 1) notes.push_back("single class: the whole batch goes to that class");

        if (perturb_alloc) {
            if (alloc.size() < 2) {
                report["perturbation"] = {{"perturbation_worse", nullptr},
                                          {"reason", "a single class admits no other allocation"}};
            } else {
                auto moved = alloc;
                const auto from = static_cast<std::size_t>(std::distance(
                    moved.begin(), std::max_element(moved.begin(), moved.end())));
                std::size_t to = from == 0 ? 1 : 0;
                for (std::size_t k = 0; k < moved.size(); ++k) {
                    if (k != from && moved[k] < moved[to]) to = k;
                }
                --moved[from];
                ++moved[to];
                const double pv = objective(moved);
                report["perturbation"] = {{"allocation", allocation_json(moved)},
                                          {"variance", real_or_null(pv)},
                                          {"perturbation_worse", pv > v}};
            }
        }
    }
    report["notes"] = notes;
    report["passed"] = passed;
    return report;
}

json allocation_report(const ExperimentConfig& config, std::uint64_t seed) {
    const auto inst = lab::random_instance(config.instance, seed);
    const std::size_t batch = config.instance_batch;
    const auto cis = build_plan_cis(inst.labels, inst.per_sample(), batch);
    require_guard(batch, cis.classes.size());
    const auto objective = lab::allocation_objective(inst);

    std::vector<double> targets;
    for (const auto& c : cis.classes) targets.push_back(c.expected_batch_size);
    const double f_cis = objective.continuous(targets);
    const double f_opt = objective.continuous(objective.continuous_optimum(batch));

    std::mt19937_64 rng(derive_seed(seed, 102));
    std::exponential_distribution<double> e(1.0);
    double f_random = INFINITY;
    for (int i = 0; i < 10000; ++i) {
        std::vector<double> b(targets.size());
        double mass = 0.0;
        for (double& x : b) mass += (x = e(rng));
        for (double& x : b) x *= static_cast<double>(batch) / mass;
        f_random = std::min(f_random, objective.continuous(b));
    }
    const double tol = 1e-9 * std::max(1.0, std::abs(f_opt));
    const bool continuous_ok = f_cis <= f_random + tol && std::abs(f_cis - f_opt) <= tol;

    const auto best = lab::exhaustive_allocation_search(inst, batch);
    const auto alloc = cis_allocation(cis);
    const double v = objective(alloc);
    const double delta = lab::single_unit_reallocation_delta(objective, alloc);
    const bool integer_ok = v <= best.variance + delta + 1e-12 * std::max(1.0, std::abs(best.variance));

    return {{"instance", {{"seed", seed}, {"class_sizes", class_sizes(cis)}, {"batch_size", batch}}},
            {"continuous", {{"cis_targets", targets},
                            {"cis_variance", real_or_null(f_cis)},
                            {"optimum_variance", real_or_null(f_opt)},
                            {"best_random_variance", real_or_null(f_random)},
                            {"pass", continuous_ok}}},
            {"integer", {{"cis", allocation_json(alloc)},
                         {"cis_variance", real_or_null(v)},
                         {"exhaustive", allocation_json(best.allocation)},
                         {"exhaustive_variance", real_or_null(best.variance)},
                         {"single_unit_delta", real_or_null(delta)},
                         {"pass", integer_ok}}},
            {"passed", continuous_ok && integer_ok}};
}

namespace {

int write_report(const ExperimentConfig& cfg, const std::string& name, const json& reports, bool passed,
                 std::ostream& log) {
    const fs::path out_dir(cfg.output);
    fs::create_directories(out_dir);
    write_file(out_dir / name, reports.dump(2) + "\n");
    log << "wrote " << (out_dir / name).string() << (passed ? ": all checks passed" : ": checks FAILED") << '\n';
    return passed ? int{kOk} : int{kFailure};
}

}  // namespace

int cmd_variance_check(const CommandOptions& options, std::ostream& log) {
    return guarded(log, [&] {
        const auto cfg = resolve_config(options);
        json reports = json::array();
        bool passed = true;
        for (std::uint64_t seed : cfg.seeds) {
            auto r = variance_report(cfg, seed, options.perturb_alloc);
            passed = passed && r["passed"].get<bool>();
            reports.push_back(std::move(r));
        }
        return write_report(cfg, "variance_check.json", reports, passed, log);
    });
}

int cmd_alloc_check(const CommandOptions& options, std::ostream& log) {
    return guarded(log, [&] {
        const auto cfg = resolve_config(options);
        json reports = json::array();
        bool passed = true;
        for (std::uint64_t seed : cfg.seeds) {
            auto r = allocation_report(cfg, seed);
            passed = passed && r["passed"].get<bool>();
            reports.push_back(std::move(r));
        }
        return write_report(cfg, "alloc_check.json", reports, passed, log);
    });
}

int cmd_gen_data(const CommandOptions& options, std::ostream& log) {
    return guarded(log, [&] {
        const auto cfg = resolve_config(options);
        const fs::path out_dir(cfg.output);
        fs::create_directories(out_dir);
        auto source = cfg.stream(cfg.seeds.front());
        const auto samples = source.next_window(cfg.samples);
        {
            std::ofstream out(out_dir / "stream.csv", std::ios::binary);
            if (!out) throw std::runtime_error("cannot write " + (out_dir / "stream.csv").string());
            write_samples_csv(out, samples);
        }
        {
            std::ofstream out(out_dir / "test.csv", std::ios::binary);
            if (!out) throw std::runtime_error("cannot write " + (out_dir / "test.csv").string());
            write_samples_csv(out, source.held_out());
        }
        log << "wrote " << samples.size() << " stream samples (" << source.flipped() << " labels flipped) and "
            << source.held_out().size() << " held-out samples to " << out_dir.string() << '\n';
        return int{kOk};
    });
}

}  // namespace titan::cli
