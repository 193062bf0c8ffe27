#pragma once

#include <cstdint>
#include <iosfwd>
#include <random>
#include <string>
#include <vector>

#include "titan/model.hpp"

namespace titan {

enum class NoiseKind { none, feature_gaussian, label_flip };

// feature_gaussian adds N(0, sigma^2) to every feature of an affected sample;
// label_flip replaces the label of an affected sample with a different class,
// chosen uniformly. Each sample is affected with probability `fraction`.
struct NoiseSpec {
    NoiseKind kind = NoiseKind::none;
    double fraction = 0.0;
    double sigma = 1.0;
};

// Isotropic Gaussian mixture with uniform class priors. Class means are drawn
// once from the seed and scaled to norm `separation`; class y has per-feature
// standard deviation spreads[y] (the last entry repeats if the list is short).
struct MixtureSpec {
    std::size_t dim = 20;
    std::size_t classes = 4;
    double separation = 3.0;
    std::vector<double> spreads{0.5, 1.0, 1.5, 2.5};

    double spread(std::size_t label) const;
};

// An endless labelled stream plus a clean held-out set. Stream generation,
// noise and the held-out set use independent random streams, so the clean
// part of a noisy stream matches the noise-free stream sample for sample.
class StreamSource {
public:
    static StreamSource synthetic(const MixtureSpec& mixture, NoiseSpec noise, std::uint64_t seed,
                                  std::size_t held_out_size);
    // Rows are replayed in order, cycling at the end.
    static StreamSource replay(std::vector<Sample> rows, std::vector<Sample> held_out,
                               NoiseSpec noise, std::uint64_t seed);

    std::vector<Sample> next_window(std::size_t velocity);
    Sample next();

    const std::vector<Sample>& held_out() const noexcept { return held_out_; }
    std::size_t dim() const noexcept { return dim_; }
    std::size_t num_classes() const noexcept { return classes_; }
    std::uint64_t emitted() const noexcept { return emitted_; }

    // Number of emitted samples whose label was changed by noise.
    std::uint64_t flipped() const noexcept { return flipped_; }

private:
    StreamSource() = default;
    Sample draw_clean();
    void apply_noise(Sample& s);

    std::size_t dim_ = 0;
    std::size_t classes_ = 0;
    NoiseSpec noise_;
    // Synthetic mode.
    bool synthetic_ = false;
    std::vector<linalg::Vector> means_;
    std::vector<double> spreads_;
    std::mt19937_64 sample_rng_;
    std::mt19937_64 noise_rng_;
    // Replay mode.
    std::vector<Sample> rows_;
    std::size_t cursor_ = 0;

    std::vector<Sample> held_out_;
    std::uint64_t emitted_ = 0;
    std::uint64_t flipped_ = 0;
};

// Independent sub-seed for a named random stream.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

// CSV with header `label,f0,...,f{d-1}`. Values use the shortest round-trip
// representation.
void write_samples_csv(std::ostream& out, const std::vector<Sample>& samples);
std::vector<Sample> read_samples_csv(std::istream& in);
std::vector<Sample> read_samples_csv(const std::string& path);

}  // namespace titan
