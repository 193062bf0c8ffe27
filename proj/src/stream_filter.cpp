#include "titan/stream_filter.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace titan {

void ClassStreamStats::update(std::span<const double> f, double decay) {
    if (f.size() != sum_.size()) throw ShapeError("feature dimension does not match class statistics");
    if (decay != 1.0) {
        count_ *= decay;
        linalg::scale(sum_, decay);
        sq_sum_ *= decay;
    }
    count_ += 1.0;
    ++updates_;
    linalg::axpy(1.0, f, sum_);
    sq_sum_ += linalg::squared_norm(f);
}

linalg::Vector ClassStreamStats::mean_feature() const {
    if (count_ <= 0.0) throw StatsError("mean of an empty class");
    linalg::Vector mu = sum_;
    linalg::scale(mu, 1.0 / count_);
    return mu;
}

double ClassStreamStats::mean_squared_norm() const {
    if (count_ <= 0.0) throw StatsError("mean of an empty class");
    return sq_sum_ / count_;
}

FilterScore score_components(const ClassStreamStats& stats, std::span<const double> f) {
    if (stats.count() <= 0.0) throw StatsError("scoring against a class with no statistics");
    const auto& sum = stats.feature_sum();
    linalg::require_same_size(sum, f);
    const double inv = 1.0 / stats.count();
    double f_sq = 0.0, f_mu = 0.0, dist_sq = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) {
        const double mu = sum[i] * inv;
        const double d = f[i] - mu;
        f_sq += f[i] * f[i];
        f_mu += f[i] * mu;
        dist_sq += d * d;
    }
    FilterScore s;
    s.representativeness = -dist_sq;
    s.diversity = f_sq + stats.squared_norm_sum() * inv - 2.0 * f_mu;
    return s;
}

double score(const ClassStreamStats& stats, std::span<const double> f) {
    return score_components(stats, f).total();
}

bool ranks_above(const ScoredCandidate& a, const ScoredCandidate& b) noexcept {
    if (a.score != b.score) return a.score > b.score;
    return a.arrival > b.arrival;
}

namespace {
// Heap comparator placing the lowest-ranked candidate at the front.
struct WorstOnTop {
    bool operator()(const ScoredCandidate& a, const ScoredCandidate& b) const noexcept {
        return ranks_above(a, b);
    }
};
}  // namespace

CandidateBuffer::CandidateBuffer(std::size_t capacity) : capacity_(capacity) {
    heap_.reserve(capacity + 1);
}

bool CandidateBuffer::admit(ScoredCandidate candidate) {
    if (!std::isfinite(candidate.score)) throw StatsError("candidate score is not finite");
    if (capacity_ == 0) return false;
    if (heap_.size() == capacity_ && !ranks_above(candidate, heap_.front())) return false;
    heap_.push_back(std::move(candidate));
    std::push_heap(heap_.begin(), heap_.end(), WorstOnTop{});
    if (heap_.size() > capacity_) {
        std::pop_heap(heap_.begin(), heap_.end(), WorstOnTop{});
        heap_.pop_back();
    }
    return true;
}

void CandidateBuffer::set_capacity(std::size_t capacity) {
    capacity_ = capacity;
    while (heap_.size() > capacity_) {
        std::pop_heap(heap_.begin(), heap_.end(), WorstOnTop{});
        heap_.pop_back();
    }
}

std::vector<ScoredCandidate> CandidateBuffer::snapshot() const {
    std::vector<ScoredCandidate> out = heap_;
    std::sort(out.begin(), out.end(),
              [](const ScoredCandidate& a, const ScoredCandidate& b) { return a.arrival < b.arrival; });
    return out;
}

std::map<std::size_t, std::vector<ScoredCandidate>> drain_candidates(const CandidateBuffer& buffer) {
    std::map<std::size_t, std::vector<ScoredCandidate>> out;
    for (auto& c : buffer.snapshot()) out[c.sample.label].push_back(std::move(c));
    return out;
}

StreamFilter::StreamFilter(std::size_t num_classes, FilterConfig config)
    : config_(config), class_arrivals_(num_classes, 0) {
    if (!(config_.stats_decay > 0.0 && config_.stats_decay <= 1.0)) {
        throw std::invalid_argument("stats_decay must lie in (0, 1]");
    }
    stats_.reserve(num_classes);
    if (config_.partition == BufferPartition::global) {
        buffers_.emplace_back(config_.capacity);
    } else {
        for (std::size_t y = 0; y < num_classes; ++y) buffers_.emplace_back(0);
    }
}

std::size_t StreamFilter::quota(std::size_t label) const {
    // Largest-remainder split of the capacity by arrival frequency.
    const double total = static_cast<double>(arrivals_);
    const std::size_t k = class_arrivals_.size();
    std::vector<double> rem(k);
    std::vector<std::size_t> q(k);
    std::size_t assigned = 0;
    for (std::size_t y = 0; y < k; ++y) {
        const double t = static_cast<double>(config_.capacity) * static_cast<double>(class_arrivals_[y]) / total;
        q[y] = static_cast<std::size_t>(std::floor(t));
        rem[y] = t - std::floor(t);
        assigned += q[y];
    }
    std::vector<std::size_t> order(k);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return rem[a] > rem[b]; });
    for (std::size_t i = 0; assigned < config_.capacity && i < k; ++i, ++assigned) ++q[order[i]];
    return q[label];
}

void StreamFilter::rebalance() {
    for (std::size_t y = 0; y < buffers_.size(); ++y) buffers_[y].set_capacity(quota(y));
}

ScoredCandidate StreamFilter::intake(const ModelParams& params, const Sample& sample) {
    if (sample.label >= class_arrivals_.size()) throw LabelError("stream label outside class range");
    ScoredCandidate c;
    c.features = extract_features(params, sample.features);
    while (stats_.size() < class_arrivals_.size()) stats_.emplace_back(stats_.size(), c.features.size());
    auto& st = stats_[sample.label];
    st.update(c.features, config_.stats_decay);
    c.score = score(st, c.features);
    c.sample = sample;
    c.arrival = arrivals_++;
    ++class_arrivals_[sample.label];

    if (config_.partition == BufferPartition::global) {
        buffers_.front().admit(c);
    } else {
        rebalance();
        buffers_[sample.label].admit(c);
    }
    return c;
}

std::vector<ScoredCandidate> StreamFilter::snapshot() const {
    std::vector<ScoredCandidate> out;
    for (const auto& b : buffers_) {
        auto s = b.snapshot();
        out.insert(out.end(), std::make_move_iterator(s.begin()), std::make_move_iterator(s.end()));
    }
    std::sort(out.begin(), out.end(),
              [](const ScoredCandidate& a, const ScoredCandidate& b) { return a.arrival < b.arrival; });
    return out;
}

std::size_t StreamFilter::size() const noexcept {
    std::size_t n = 0;
    for (const auto& b : buffers_) n += b.size();
    return n;
}

void StreamFilter::clear_buffer() noexcept {
    for (auto& b : buffers_) b.clear();
}

}  // namespace titan
