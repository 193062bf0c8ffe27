#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "titan/batch.hpp"
#include "titan/linalg.hpp"

namespace titan {

// One labelled observation from the stream.
struct Sample {
    linalg::Vector features;
    std::size_t label = 0;
    std::uint64_t id = 0;  // arrival index in the stream

    friend bool operator==(const Sample&, const Sample&) = default;
};

// Fully connected layer: y = W x + b, W stored row-major (outputs x inputs).
struct DenseLayer {
    std::size_t inputs = 0;
    std::size_t outputs = 0;
    linalg::Vector weights;
    linalg::Vector bias;

    DenseLayer() = default;
    DenseLayer(std::size_t in, std::size_t out)
        : inputs(in), outputs(out), weights(in * out, 0.0), bias(out, 0.0) {}

    std::size_t parameter_count() const noexcept { return weights.size() + bias.size(); }
    double& w(std::size_t row, std::size_t col) { return weights[row * inputs + col]; }
    double w(std::size_t row, std::size_t col) const { return weights[row * inputs + col]; }

    friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

// Linear softmax (one layer) or MLP with ReLU hidden layers. The final layer
// maps to class logits; the first `feature_block` layers (with their ReLU)
// form the feature extractor used by the stream filter.
class ModelParams {
public:
    ModelParams() = default;
    explicit ModelParams(std::vector<DenseLayer> layers, std::size_t feature_block = 1);

    const std::vector<DenseLayer>& layers() const noexcept { return layers_; }
    std::vector<DenseLayer>& layers() noexcept { return layers_; }

    std::size_t input_dim() const;
    std::size_t num_classes() const;
    std::size_t last_layer_index() const { return layers_.size() - 1; }

    // Number of layers making up the feature block, clamped so the last
    // layer is never part of it (a linear model extracts raw inputs).
    std::size_t feature_block() const noexcept;
    std::size_t requested_feature_block() const noexcept { return feature_block_; }

    std::size_t parameter_count() const noexcept;
    std::size_t last_layer_parameter_count() const;

    // Flattened as [W_0, b_0, W_1, b_1, ...].
    linalg::Vector flatten() const;
    void assign_flat(std::span<const double> flat);

    friend bool operator==(const ModelParams&, const ModelParams&) = default;

private:
    void validate() const;

    std::vector<DenseLayer> layers_;
    std::size_t feature_block_ = 1;
};

ModelParams make_linear_model(std::size_t dim, std::size_t classes);
ModelParams make_mlp_model(std::size_t dim, std::size_t hidden, std::size_t classes,
                           std::uint64_t seed, double init_scale = 1.0,
                           std::size_t feature_block = 1);

enum class GradientScope { last_layer, full };

struct PerSampleGradient {
    std::uint64_t sample_id = 0;
    linalg::Vector values;
    double norm = 0.0;
};

// Pre-softmax class scores.
linalg::Vector forward(const ModelParams& params, std::span<const double> x);

// Activations after the feature block.
linalg::Vector extract_features(const ModelParams& params, std::span<const double> x);

linalg::Vector softmax(std::span<const double> logits);
double cross_entropy_loss(std::span<const double> logits, std::size_t label);
// Shannon entropy (nats) of the softmax distribution.
double output_entropy(std::span<const double> logits);

// Exact gradient of the softmax cross-entropy loss.
PerSampleGradient per_sample_gradient(const ModelParams& params, const Sample& s,
                                      GradientScope scope = GradientScope::last_layer);

// w <- w - lr * gradient, gradient laid out like ModelParams::flatten().
ModelParams apply_gradient(const ModelParams& params, std::span<const double> gradient,
                           double lr);

// w <- w - lr * g_hat, where g_hat is the weighted full-model gradient
// estimate over the batch entries drawn from `pool`.
ModelParams sgd_step(const ModelParams& params, std::span<const Sample> pool,
                     const WeightedBatch& batch, double lr);

// Snapshot exchange: one JSON header line followed by the flattened
// parameters as little-endian IEEE-754 doubles.
void save_params(std::ostream& out, const ModelParams& params);
ModelParams load_params(std::istream& in);

}  // namespace titan
