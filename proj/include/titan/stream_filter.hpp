#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "titan/model.hpp"

namespace titan {

// Running-sum feature statistics for one class. With decay < 1 both sums and
// the count are discounted before each update.
class ClassStreamStats {
public:
    ClassStreamStats() = default;
    ClassStreamStats(std::size_t label, std::size_t dim) : label_(label), sum_(dim, 0.0) {}

    void update(std::span<const double> f, double decay = 1.0);

    std::size_t label() const noexcept { return label_; }
    double count() const noexcept { return count_; }
    std::uint64_t updates() const noexcept { return updates_; }
    const linalg::Vector& feature_sum() const noexcept { return sum_; }
    double squared_norm_sum() const noexcept { return sq_sum_; }

    linalg::Vector mean_feature() const;
    double mean_squared_norm() const;

private:
    std::size_t label_ = 0;
    double count_ = 0.0;
    std::uint64_t updates_ = 0;
    linalg::Vector sum_;
    double sq_sum_ = 0.0;
};

struct FilterScore {
    double representativeness = 0.0;  // -|f - mu|^2
    double diversity = 0.0;           // |f|^2 + q - 2 <f, mu>
    double total() const noexcept { return representativeness + diversity; }
};

// O(d): a fixed number of passes over f and the class sums.
FilterScore score_components(const ClassStreamStats& stats, std::span<const double> f);
double score(const ClassStreamStats& stats, std::span<const double> f);

struct ScoredCandidate {
    Sample sample;
    double score = 0.0;
    linalg::Vector features;
    std::uint64_t arrival = 0;
};

// Bounded buffer keeping the highest-scored candidates seen. On equal scores
// the older arrival is evicted first.
class CandidateBuffer {
public:
    explicit CandidateBuffer(std::size_t capacity = 30);

    // Returns false when the candidate was rejected outright (buffer full and
    // the candidate ranks below everything retained).
    bool admit(ScoredCandidate candidate);

    std::size_t capacity() const noexcept { return capacity_; }
    std::size_t size() const noexcept { return heap_.size(); }
    bool empty() const noexcept { return heap_.empty(); }
    void clear() noexcept { heap_.clear(); }
    // Shrinking evicts the lowest-ranked entries.
    void set_capacity(std::size_t capacity);

    // Contents ordered by arrival.
    std::vector<ScoredCandidate> snapshot() const;

private:
    std::size_t capacity_;
    std::vector<ScoredCandidate> heap_;  // min-heap: worst candidate at front
};

// True when `a` should outlive `b` in the buffer.
bool ranks_above(const ScoredCandidate& a, const ScoredCandidate& b) noexcept;

// Grouped by label (ascending), arrival order within a class. The buffer is
// left untouched.
std::map<std::size_t, std::vector<ScoredCandidate>> drain_candidates(const CandidateBuffer& buffer);

// Either one global queue or one queue per class with capacity split by the
// observed class frequencies.
enum class BufferPartition { global, per_class };

struct FilterConfig {
    std::size_t capacity = 30;
    double stats_decay = 1.0;
    BufferPartition partition = BufferPartition::per_class;
};

// The coarse stage: features -> running stats -> score -> buffer.
class StreamFilter {
public:
    StreamFilter(std::size_t num_classes, FilterConfig config);

    // Folds the sample into its class statistics, scores it and offers it to
    // the buffer.
    ScoredCandidate intake(const ModelParams& params, const Sample& sample);

    std::vector<ScoredCandidate> snapshot() const;
    std::size_t size() const noexcept;
    void clear_buffer() noexcept;

    const ClassStreamStats& stats(std::size_t label) const { return stats_.at(label); }
    const FilterConfig& config() const noexcept { return config_; }

private:
    void rebalance();
    std::size_t quota(std::size_t label) const;

    FilterConfig config_;
    std::vector<ClassStreamStats> stats_;
    std::vector<CandidateBuffer> buffers_;  // one entry in global mode
    std::uint64_t arrivals_ = 0;
    std::vector<std::uint64_t> class_arrivals_;
};

}  // namespace titan
