#include "titan/config.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <functional>
#include <istream>
#include <map>

namespace titan {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& value) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (;;) {
        const auto comma = value.find(',', start);
        out.push_back(trim(value.substr(start, comma == std::string::npos ? std::string::npos : comma - start)));
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return out;
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
    T v{};
    const auto r = std::from_chars(text.data(), text.data() + text.size(), v);
    if (r.ec != std::errc{} || r.ptr != text.data() + text.size()) {
        throw ConfigError(key, "cannot parse '" + text + "' as a number");
    }
    return v;
}

std::size_t as_size(const std::string& key, const std::string& v) { return parse_number<std::size_t>(key, v); }
double as_real(const std::string& key, const std::string& v) { return parse_number<double>(key, v); }

bool as_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError(key, "expected true or false, got '" + v + "'");
}

Strategy as_strategy(const std::string& key, const std::string& v) {
    if (auto s = parse_strategy(v)) return *s;
    throw ConfigError(key, "unknown strategy '" + v + "' (cis, is, rs, hl, ll, ce)");
}

template <class T>
T as_choice(const std::string& key, const std::string& v, const std::map<std::string, T>& options) {
    const auto it = options.find(v);
    if (it != options.end()) return it->second;
    std::string names;
    for (const auto& [name, _] : options) names += (names.empty() ? "" : ", ") + name;
    throw ConfigError(key, "unknown value '" + v + "' (" + names + ")");
}

using Setter = std::function<void(ExperimentConfig&, const std::string&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
    static const std::map<std::string, Setter> table = {
        {"model", [](auto& c, auto& k, auto& v) { c.model = as_choice<std::string>(k, v, {{"mlp", "mlp"}, {"linear", "linear"}}); }},
        {"hidden", [](auto& c, auto& k, auto& v) { c.hidden = as_size(k, v); }},
        {"init_scale", [](auto& c, auto& k, auto& v) { c.init_scale = as_real(k, v); }},
        {"feature_block", [](auto& c, auto& k, auto& v) { c.feature_block = as_size(k, v); }},
        {"importance_scope", [](auto& c, auto& k, auto& v) {
             c.importance_scope = as_choice<GradientScope>(
                 k, v, {{"last_layer", GradientScope::last_layer}, {"full", GradientScope::full}});
         }},
        {"strategy", [](auto& c, auto& k, auto& v) { c.strategies = {as_strategy(k, v)}; }},
        {"strategies", [](auto& c, auto& k, auto& v) {
             c.strategies.clear();
             for (const auto& item : split_list(v)) c.strategies.push_back(as_strategy(k, item));
         }},
        {"batch_size", [](auto& c, auto& k, auto& v) { c.batch_size = as_size(k, v); }},
        {"stream_velocity", [](auto& c, auto& k, auto& v) { c.velocity = as_size(k, v); }},
        {"buffer_capacity", [](auto& c, auto& k, auto& v) { c.buffer_capacity = as_size(k, v); }},
        {"buffer_partition", [](auto& c, auto& k, auto& v) {
             c.buffer_partition = as_choice<BufferPartition>(
                 k, v, {{"global", BufferPartition::global}, {"per_class", BufferPartition::per_class}});
         }},
        {"stats_decay", [](auto& c, auto& k, auto& v) { c.stats_decay = as_real(k, v); }},
        {"clear_after_round", [](auto& c, auto& k, auto& v) { c.clear_after_round = as_bool(k, v); }},
        {"rounds", [](auto& c, auto& k, auto& v) { c.rounds = as_size(k, v); }},
        {"lr", [](auto& c, auto& k, auto& v) { c.lr = as_real(k, v); }},
        {"lr_decay", [](auto& c, auto& k, auto& v) { c.lr_decay = as_bool(k, v); }},
        {"execution", [](auto& c, auto& k, auto& v) {
             c.execution = as_choice<Execution>(
                 k, v, {{"sequential", Execution::sequential}, {"pipelined", Execution::pipelined}});
         }},
        {"t_filter", [](auto& c, auto& k, auto& v) { c.timing.t_filter = as_real(k, v); }},
        {"t_grad", [](auto& c, auto& k, auto& v) { c.timing.t_grad = as_real(k, v); }},
        {"t_plan", [](auto& c, auto& k, auto& v) { c.timing.t_plan = as_real(k, v); }},
        {"t_train", [](auto& c, auto& k, auto& v) { c.timing.t_train = as_real(k, v); }},
        {"t_sync", [](auto& c, auto& k, auto& v) { c.timing.t_sync = as_real(k, v); }},
        {"seed", [](auto& c, auto& k, auto& v) { c.seeds = {parse_number<std::uint64_t>(k, v)}; }},
        {"seeds", [](auto& c, auto& k, auto& v) {
             c.seeds.clear();
             for (const auto& item : split_list(v)) c.seeds.push_back(parse_number<std::uint64_t>(k, item));
         }},
        {"source", [](auto& c, auto& k, auto& v) {
             c.source = as_choice<std::string>(k, v, {{"synthetic", "synthetic"}, {"csv", "csv"}});
         }},
        {"stream_csv", [](auto& c, auto&, auto& v) { c.stream_csv = v; }},
        {"test_csv", [](auto& c, auto&, auto& v) { c.test_csv = v; }},
        {"num_classes", [](auto& c, auto& k, auto& v) { c.mixture.classes = as_size(k, v); }},
        {"dim", [](auto& c, auto& k, auto& v) { c.mixture.dim = as_size(k, v); }},
        {"class_separation", [](auto& c, auto& k, auto& v) { c.mixture.separation = as_real(k, v); }},
        {"class_spread", [](auto& c, auto& k, auto& v) {
             c.mixture.spreads.clear();
             for (const auto& item : split_list(v)) c.mixture.spreads.push_back(as_real(k, item));
         }},
        {"test_size", [](auto& c, auto& k, auto& v) { c.test_size = as_size(k, v); }},
        {"noise", [](auto& c, auto& k, auto& v) {
             c.noise.kind = as_choice<NoiseKind>(
                 k, v, {{"none", NoiseKind::none}, {"feature", NoiseKind::feature_gaussian},
                        {"label", NoiseKind::label_flip}});
         }},
        {"noise_fraction", [](auto& c, auto& k, auto& v) { c.noise.fraction = as_real(k, v); }},
        {"noise_sigma", [](auto& c, auto& k, auto& v) { c.noise.sigma = as_real(k, v); }},
        {"instance_classes", [](auto& c, auto& k, auto& v) { c.instance.classes = as_size(k, v); }},
        {"instance_min_per_class", [](auto& c, auto& k, auto& v) { c.instance.min_per_class = as_size(k, v); }},
        {"instance_max_per_class", [](auto& c, auto& k, auto& v) { c.instance.max_per_class = as_size(k, v); }},
        {"instance_dim", [](auto& c, auto& k, auto& v) { c.instance.dim = as_size(k, v); }},
        {"instance_spread_low", [](auto& c, auto& k, auto& v) { c.instance.spread_low = as_real(k, v); }},
        {"instance_spread_high", [](auto& c, auto& k, auto& v) { c.instance.spread_high = as_real(k, v); }},
        {"instance_batch", [](auto& c, auto& k, auto& v) { c.instance_batch = as_size(k, v); }},
        {"mc_draws", [](auto& c, auto& k, auto& v) { c.mc_draws = as_size(k, v); }},
        {"identity_lr", [](auto& c, auto& k, auto& v) { c.identity_lr = as_real(k, v); }},
        {"samples", [](auto& c, auto& k, auto& v) { c.samples = as_size(k, v); }},
        {"output", [](auto& c, auto&, auto& v) { c.output = v; }},
    };
    return table;
}

void require(bool ok, const std::string& key, const std::string& message) {
    if (!ok) throw ConfigError(key, message);
}

}  // namespace

void apply_setting(ExperimentConfig& config, const std::string& key, const std::string& value) {
    const auto& table = setters();
    const auto it = table.find(key);
    if (it == table.end()) throw ConfigError(key, "unknown configuration key");
    if (value.empty() && key != "stream_csv" && key != "test_csv") throw ConfigError(key, "missing value");
    it->second(config, key, value);
}

ExperimentConfig parse_config(std::istream& in) {
    ExperimentConfig c;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("", "line " + std::to_string(line_no) + ": expected 'key = value'");
        }
        apply_setting(c, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    c.validate();
    return c;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("", "cannot open config file " + path);
    return parse_config(in);
}

void ExperimentConfig::validate() const {
    require(model != "mlp" || hidden >= 1, "hidden", "MLP needs at least one hidden unit");
    require(init_scale >= 0.0, "init_scale", "must be >= 0");
    require(!strategies.empty(), "strategies", "at least one strategy required");
    require(batch_size >= 1, "batch_size", "must be >= 1");
    require(velocity >= batch_size, "stream_velocity", "must be at least batch_size");
    require(stats_decay > 0.0 && stats_decay <= 1.0, "stats_decay", "must lie in (0, 1]");
    require(rounds >= 1, "rounds", "must be >= 1");
    require(lr >= 0.0 && std::isfinite(lr), "lr", "must be finite and >= 0");
    for (const auto& [key, t] : {std::pair{"t_filter", timing.t_filter}, {"t_grad", timing.t_grad},
                                 {"t_plan", timing.t_plan}, {"t_train", timing.t_train},
                                 {"t_sync", timing.t_sync}}) {
        require(t >= 0.0 && std::isfinite(t), key, "must be finite and >= 0");
    }
    require(!seeds.empty(), "seeds", "at least one seed required");
    if (source == "csv") {
        require(!stream_csv.empty(), "stream_csv", "required when source = csv");
        require(std::filesystem::exists(stream_csv), "stream_csv", "file not found: " + stream_csv);
        require(test_csv.empty() || std::filesystem::exists(test_csv), "test_csv", "file not found: " + test_csv);
    } else {
        require(mixture.classes >= 2, "num_classes", "must be >= 2");
        require(mixture.dim >= 1, "dim", "must be >= 1");
        require(mixture.separation >= 0.0, "class_separation", "must be >= 0");
        for (double s : mixture.spreads) require(s >= 0.0, "class_spread", "spreads must be >= 0");
        require(test_size >= 1, "test_size", "must be >= 1");
    }
    require(noise.fraction >= 0.0 && noise.fraction <= 1.0, "noise_fraction", "must lie in [0, 1]");
    require(noise.sigma >= 0.0, "noise_sigma", "must be >= 0");
    require(instance.classes >= 1, "instance_classes", "must be >= 1");
    require(instance.min_per_class >= 1, "instance_min_per_class", "must be >= 1");
    require(instance.max_per_class >= instance.min_per_class, "instance_max_per_class",
            "must be >= instance_min_per_class");
    require(instance.dim >= 1, "instance_dim", "must be >= 1");
    require(instance.spread_low >= 0.0 && instance.spread_high >= instance.spread_low,
            "instance_spread_high", "need 0 <= instance_spread_low <= instance_spread_high");
    require(instance_batch >= 1, "instance_batch", "must be >= 1");
    require(mc_draws >= 2, "mc_draws", "must be >= 2");
    require(identity_lr >= 0.0, "identity_lr", "must be >= 0");
    require(samples >= 1, "samples", "must be >= 1");
    require(!output.empty(), "output", "must not be empty");
}

PipelineConfig ExperimentConfig::pipeline(Strategy strategy, std::uint64_t seed) const {
    PipelineConfig p;
    p.strategy = strategy;
    p.batch_size = batch_size;
    p.velocity = velocity;
    p.rounds = rounds;
    p.lr = lr;
    p.lr_decay = lr_decay;
    p.filter = FilterConfig{buffer_capacity, stats_decay, buffer_partition};
    p.clear_after_round = clear_after_round;
    p.importance_scope = importance_scope;
    p.timing = timing;
    p.execution = execution;
    p.seed = seed;
    return p;
}

ModelParams ExperimentConfig::initial_model(std::size_t dim, std::size_t classes, std::uint64_t seed) const {
    if (model == "linear") return make_linear_model(dim, classes);
    return make_mlp_model(dim, hidden, classes, derive_seed(seed, 9), init_scale, feature_block);
}

StreamSource ExperimentConfig::stream(std::uint64_t seed) const {
    if (source == "synthetic") return StreamSource::synthetic(mixture, noise, seed, test_size);
    auto rows = read_samples_csv(stream_csv);
    std::vector<Sample> held;
    if (!test_csv.empty()) {
        held = read_samples_csv(test_csv);
    } else {
        const std::size_t n_held = std::max<std::size_t>(1, rows.size() / 5);
        if (rows.size() <= n_held) throw ConfigError("stream_csv", "too few rows to hold out a test split");
        held.assign(rows.end() - static_cast<std::ptrdiff_t>(n_held), rows.end());
        rows.resize(rows.size() - n_held);
    }
    return StreamSource::replay(std::move(rows), std::move(held), noise, seed);
}

}  // namespace titan
