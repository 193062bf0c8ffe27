#include "titan/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "titan/variance_lab.hpp"

namespace titan {

namespace {

constexpr std::uint64_t kSelectStream = 0x5e1ec7;
constexpr std::uint64_t kBootstrapStream = 0xb0075;

std::vector<std::size_t> labels_of(std::span<const Sample> pool) {
    std::vector<std::size_t> labels(pool.size());
    for (std::size_t i = 0; i < pool.size(); ++i) labels[i] = pool[i].label;
    return labels;
}

std::vector<double> average_ranks(std::span<const double> v) {
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(v.size());
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
        const double r = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
        i = j + 1;
    }
    return ranks;
}

}  // namespace

void TimingModel::validate() const {
    for (double t : {t_filter, t_grad, t_plan, t_train, t_sync}) {
        if (!(t >= 0.0) || !std::isfinite(t)) throw std::invalid_argument("timing costs must be finite and >= 0");
    }
}

LaneTimes lane_times(const TimingModel& timing, std::size_t filtered, std::size_t scored) {
    LaneTimes l;
    l.train = timing.t_train;
    l.select = static_cast<double>(filtered) * timing.t_filter +
               static_cast<double>(scored) * timing.t_grad + timing.t_plan;
    return l;
}

void PipelineConfig::validate() const {
    if (batch_size == 0) throw std::invalid_argument("batch size must be positive");
    if (velocity < batch_size) throw std::invalid_argument("stream velocity must be at least the batch size");
    if (rounds == 0) throw std::invalid_argument("rounds must be at least 1");
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw std::invalid_argument("learning rate must be finite and >= 0");
    timing.validate();
}

double learning_rate(const PipelineConfig& config, std::size_t round) {
    if (!config.lr_decay) return config.lr;
    return config.lr * std::pow(0.95, static_cast<double>(round / 100));
}

Evaluation evaluate(const ModelParams& params, std::span<const Sample> held_out) {
    if (held_out.empty()) throw std::invalid_argument("evaluation needs a non-empty held-out set");
    Evaluation e;
    std::size_t correct = 0;
    for (const auto& s : held_out) {
        const auto logits = forward(params, s.features);
        const auto best = static_cast<std::size_t>(
            std::distance(logits.begin(), std::max_element(logits.begin(), logits.end())));
        if (best == s.label) ++correct;
        e.mean_loss += cross_entropy_loss(logits, s.label);
    }
    const double n = static_cast<double>(held_out.size());
    e.accuracy = static_cast<double>(correct) / n;
    e.mean_loss /= n;
    return e;
}

double spearman_correlation(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw ShapeError("rank correlation needs equal-length inputs");
    if (a.size() < 3) throw StatsError("rank correlation needs at least 3 samples");
    const auto ra = average_ranks(a);
    const auto rb = average_ranks(b);
    const double mean = 0.5 * static_cast<double>(a.size() + 1);
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        const double da = ra[i] - mean, db = rb[i] - mean;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if (saa == 0.0 || sbb == 0.0) throw StatsError("rank correlation of a constant sequence");
    return sab / std::sqrt(saa * sbb);
}

double importance_drift(const ModelParams& before, const ModelParams& after,
                        std::span<const Sample> samples, GradientScope scope) {
    std::vector<double> a, b;
    a.reserve(samples.size());
    b.reserve(samples.size());
    for (const auto& s : samples) {
        a.push_back(per_sample_gradient(before, s, scope).norm);
        b.push_back(per_sample_gradient(after, s, scope).norm);
    }
    return spearman_correlation(a, b);
}

Simulator::Simulator(PipelineConfig config, ModelParams init, StreamSource source)
    : config_(config),
      params_(std::move(init)),
      source_(std::move(source)),
      filter_(params_.num_classes(), config.filter) {
    config_.validate();
    if (params_.input_dim() != source_.dim()) throw ShapeError("model input does not match stream dimension");
    if (source_.num_classes() > params_.num_classes()) throw LabelError("stream has more classes than the model");
    if (source_.held_out().empty()) throw std::invalid_argument("stream source has no held-out samples");
}

Simulator::Selection Simulator::select(const ModelParams& at, std::vector<Sample> window,
                                       std::size_t round) {
    Selection sel;
    Strategy strategy = config_.strategy;
    if (strategy == Strategy::cis) {
        for (const auto& s : window) filter_.intake(at, s);
        sel.filtered = window.size();
        for (auto& c : filter_.snapshot()) sel.pool.push_back(std::move(c.sample));
        if (config_.clear_after_round) filter_.clear_buffer();
        if (sel.pool.empty()) {
            sel.fallback = true;
            strategy = Strategy::rs;
            sel.pool = std::move(window);
        }
    } else {
        sel.pool = std::move(window);
    }

    const auto labels = labels_of(sel.pool);
    SelectionPlan plan;
    sel.variance = std::numeric_limits<double>::quiet_NaN();
    switch (strategy) {
        case Strategy::cis:
        case Strategy::is: {
            std::vector<PerSampleGradient> grads;
            std::vector<linalg::Vector> values;
            grads.reserve(sel.pool.size());
            for (const auto& s : sel.pool) {
                grads.push_back(per_sample_gradient(at, s, config_.importance_scope));
                values.push_back(grads.back().values);
            }
            sel.scored = sel.pool.size();
            plan = strategy == Strategy::cis ? build_plan_cis(labels, grads, config_.batch_size)
                                             : build_plan_is(labels, grads, config_.batch_size);
            sel.variance = lab::closed_form_variance(plan, values).total;
            break;
        }
        case Strategy::rs:
            plan = build_plan_baseline(Strategy::rs, labels, {}, config_.batch_size);
            break;
        case Strategy::hl:
        case Strategy::ll:
        case Strategy::ce: {
            std::vector<double> scores;
            scores.reserve(sel.pool.size());
            for (const auto& s : sel.pool) {
                const auto logits = forward(at, s.features);
                scores.push_back(strategy == Strategy::ce ? output_entropy(logits)
                                                          : cross_entropy_loss(logits, s.label));
            }
            sel.scored = sel.pool.size();
            plan = build_plan_baseline(strategy, labels, scores, config_.batch_size);
            break;
        }
    }

    std::mt19937_64 rng(derive_seed(config_.seed, round, kSelectStream));
    sel.batch = BatchSampler(plan).draw(rng);
    if (on_plan) on_plan(PlanObservation{round, &plan, &sel.batch, sel.pool});
    return sel;
}

Simulator::Selection Simulator::bootstrap(const std::vector<Sample>& window) {
    Selection sel;
    sel.pool = window;
    const auto plan = build_plan_baseline(Strategy::rs, labels_of(sel.pool), {}, config_.batch_size);
    std::mt19937_64 rng(derive_seed(config_.seed, 0, kBootstrapStream));
    sel.batch = BatchSampler(plan).draw(rng);
    return sel;
}

RoundRecord Simulator::train_on(const Selection& staged, double lr, RoundRecord rec) {
    rec.batch_hist = staged.batch.histogram(params_.num_classes());
    double loss = 0.0;
    for (const auto& e : staged.batch.entries) {
        const auto& s = staged.pool[e.index];
        loss += cross_entropy_loss(forward(params_, s.features), s.label);
    }
    rec.train_loss = staged.batch.empty() ? 0.0 : loss / static_cast<double>(staged.batch.size());
    params_ = sgd_step(params_, staged.pool, staged.batch, lr);
    return rec;
}

RoundRecord Simulator::step() {
    const double lr = learning_rate(config_, round_);
    auto window = source_.next_window(config_.velocity);

    RoundRecord rec;
    rec.round = round_;
    rec.strategy = config_.strategy;

    if (config_.execution == Execution::pipelined && !staged_) staged_ = bootstrap(window);
    // Both modes select with the parameters held at the start of the round.
    Selection sel = select(params_, std::move(window), round_);
    if (config_.execution == Execution::sequential) {
        rec = train_on(sel, lr, std::move(rec));
    } else {
        rec = train_on(*staged_, lr, std::move(rec));
    }

    rec.candidates = sel.pool.size();
    rec.fallback = sel.fallback;
    rec.variance_closed_form = sel.variance;
    rec.selected.reserve(sel.batch.size());
    for (const auto& e : sel.batch.entries) rec.selected.push_back(sel.pool[e.index].id);
    rec.lanes = lane_times(config_.timing, sel.filtered, sel.scored);
    rec.seq_round_time = rec.lanes.sequential();
    rec.pipe_round_time = rec.lanes.pipelined(config_.timing.t_sync);
    seq_time_ += rec.seq_round_time;
    pipe_time_ += rec.pipe_round_time;
    rec.seq_time = seq_time_;
    rec.pipe_time = pipe_time_;

    if (config_.execution == Execution::pipelined) staged_ = std::move(sel);

    const auto eval = evaluate(params_, source_.held_out());
    rec.test_accuracy = eval.accuracy;
    rec.test_loss = eval.mean_loss;
    ++round_;
    return rec;
}

std::vector<RoundRecord> Simulator::run() {
    std::vector<RoundRecord> out;
    out.reserve(config_.rounds);
    while (round_ < config_.rounds) out.push_back(step());
    return out;
}

}  // namespace titan
