#include "titan/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <random>
#include <string>

#include <json.hpp>

namespace titan {

namespace {

struct ForwardTrace {
    std::vector<linalg::Vector> activations;  // activations[0] = x, activations[k+1] = layer k output
    std::vector<linalg::Vector> preactivations;
};

void affine(const DenseLayer& layer, std::span<const double> in, linalg::Vector& out) {
    if (in.size() != layer.inputs) {
        throw ShapeError("layer expects input of dimension " + std::to_string(layer.inputs) +
                         ", got " + std::to_string(in.size()));
    }
    out.assign(layer.bias.begin(), layer.bias.end());
    for (std::size_t r = 0; r < layer.outputs; ++r) {
        const double* row = layer.weights.data() + r * layer.inputs;
        double s = 0.0;
        for (std::size_t c = 0; c < layer.inputs; ++c) s += row[c] * in[c];
        out[r] += s;
    }
}

void relu_inplace(linalg::Vector& v) {
    for (double& x : v) x = x > 0.0 ? x : 0.0;
}

ForwardTrace trace_forward(const ModelParams& params, std::span<const double> x) {
    const auto& layers = params.layers();
    ForwardTrace t;
    t.activations.reserve(layers.size() + 1);
    t.preactivations.reserve(layers.size());
    t.activations.emplace_back(x.begin(), x.end());
    for (std::size_t k = 0; k < layers.size(); ++k) {
        linalg::Vector z;
        affine(layers[k], t.activations.back(), z);
        linalg::Vector a = z;
        if (k + 1 < layers.size()) relu_inplace(a);
        t.preactivations.push_back(std::move(z));
        t.activations.push_back(std::move(a));
    }
    return t;
}

void check_label(const ModelParams& params, std::size_t label) {
    if (label >= params.num_classes()) {
        throw LabelError("label " + std::to_string(label) + " outside [0, " +
                         std::to_string(params.num_classes()) + ")");
    }
}

// Writes dL/dW (row-major) followed by dL/db for one layer.
void write_layer_gradient(std::span<const double> delta, std::span<const double> input,
                          double* out) {
    for (std::size_t r = 0; r < delta.size(); ++r) {
        for (std::size_t c = 0; c < input.size(); ++c) *out++ = delta[r] * input[c];
    }
    for (double d : delta) *out++ = d;
}

}  // namespace

ModelParams::ModelParams(std::vector<DenseLayer> layers, std::size_t feature_block)
    : layers_(std::move(layers)), feature_block_(feature_block) {
    validate();
}

void ModelParams::validate() const {
    if (layers_.empty()) throw ShapeError("model needs at least one layer");
    for (std::size_t k = 0; k < layers_.size(); ++k) {
        const auto& l = layers_[k];
        if (l.weights.size() != l.inputs * l.outputs || l.bias.size() != l.outputs) {
            throw ShapeError("layer " + std::to_string(k) + " storage does not match its shape");
        }
        if (k > 0 && layers_[k - 1].outputs != l.inputs) {
            throw ShapeError("layer " + std::to_string(k) + " input does not match previous output");
        }
    }
}

std::size_t ModelParams::input_dim() const { return layers_.front().inputs; }
std::size_t ModelParams::num_classes() const { return layers_.back().outputs; }

std::size_t ModelParams::feature_block() const noexcept {
    return std::min(feature_block_, layers_.empty() ? 0 : layers_.size() - 1);
}

std::size_t ModelParams::parameter_count() const noexcept {
    std::size_t n = 0;
    for (const auto& l : layers_) n += l.parameter_count();
    return n;
}

std::size_t ModelParams::last_layer_parameter_count() const {
    return layers_.back().parameter_count();
}

linalg::Vector ModelParams::flatten() const {
    linalg::Vector flat;
    flat.reserve(parameter_count());
    for (const auto& l : layers_) {
        flat.insert(flat.end(), l.weights.begin(), l.weights.end());
        flat.insert(flat.end(), l.bias.begin(), l.bias.end());
    }
    return flat;
}

void ModelParams::assign_flat(std::span<const double> flat) {
    if (flat.size() != parameter_count()) throw ShapeError("flat parameter vector has wrong size");
    auto it = flat.begin();
    for (auto& l : layers_) {
        std::copy_n(it, l.weights.size(), l.weights.begin());
        it += static_cast<std::ptrdiff_t>(l.weights.size());
        std::copy_n(it, l.bias.size(), l.bias.begin());
        it += static_cast<std::ptrdiff_t>(l.bias.size());
    }
}

ModelParams make_linear_model(std::size_t dim, std::size_t classes) {
    std::vector<DenseLayer> layers;
    layers.emplace_back(dim, classes);
    return ModelParams(std::move(layers), 0);
}

ModelParams make_mlp_model(std::size_t dim, std::size_t hidden, std::size_t classes,
                           std::uint64_t seed, double init_scale, std::size_t feature_block) {
    std::mt19937_64 rng(seed);
    std::vector<DenseLayer> layers;
    layers.emplace_back(dim, hidden);
    layers.emplace_back(hidden, classes);
    // He initialisation for the ReLU layer, Xavier-like for the classifier.
    std::normal_distribution<double> hidden_init(0.0, init_scale * std::sqrt(2.0 / dim));
    std::normal_distribution<double> out_init(0.0, init_scale * std::sqrt(1.0 / hidden));
    for (double& w : layers[0].weights) w = hidden_init(rng);
    for (double& w : layers[1].weights) w = out_init(rng);
    return ModelParams(std::move(layers), feature_block);
}

linalg::Vector forward(const ModelParams& params, std::span<const double> x) {
    const auto& layers = params.layers();
    linalg::Vector a(x.begin(), x.end());
    linalg::Vector z;
    for (std::size_t k = 0; k < layers.size(); ++k) {
        affine(layers[k], a, z);
        if (k + 1 < layers.size()) relu_inplace(z);
        a.swap(z);
    }
    return a;
}

linalg::Vector extract_features(const ModelParams& params, std::span<const double> x) {
    const auto& layers = params.layers();
    if (x.size() != params.input_dim()) throw ShapeError("feature extraction input dimension mismatch");
    linalg::Vector a(x.begin(), x.end());
    linalg::Vector z;
    for (std::size_t k = 0; k < params.feature_block(); ++k) {
        affine(layers[k], a, z);
        relu_inplace(z);
        a.swap(z);
    }
    return a;
}

linalg::Vector softmax(std::span<const double> logits) {
    linalg::Vector p(logits.begin(), logits.end());
    if (p.empty()) return p;
    const double m = *std::max_element(p.begin(), p.end());
    double s = 0.0;
    for (double& v : p) {
        v = std::exp(v - m);
        s += v;
    }
    for (double& v : p) v /= s;
    return p;
}

double cross_entropy_loss(std::span<const double> logits, std::size_t label) {
    if (label >= logits.size()) throw LabelError("label outside logit range");
    const double m = *std::max_element(logits.begin(), logits.end());
    double s = 0.0;
    for (double v : logits) s += std::exp(v - m);
    return std::max(0.0, std::log(s) + m - logits[label]);
}

double output_entropy(std::span<const double> logits) {
    const auto p = softmax(logits);
    double h = 0.0;
    for (double v : p) {
        if (v > 0.0) h -= v * std::log(v);
    }
    return h;
}

PerSampleGradient per_sample_gradient(const ModelParams& params, const Sample& s,
                                      GradientScope scope) {
    check_label(params, s.label);
    const auto t = trace_forward(params, s.features);
    const auto& layers = params.layers();

    linalg::Vector delta = softmax(t.activations.back());
    delta[s.label] -= 1.0;

    PerSampleGradient g;
    g.sample_id = s.id;
    const std::size_t last = layers.size() - 1;
    if (scope == GradientScope::last_layer) {
        g.values.resize(layers[last].parameter_count());
        write_layer_gradient(delta, t.activations[last], g.values.data());
    } else {
        g.values.resize(params.parameter_count());
        std::vector<std::size_t> offsets(layers.size(), 0);
        for (std::size_t k = 1; k < layers.size(); ++k) {
            offsets[k] = offsets[k - 1] + layers[k - 1].parameter_count();
        }
        for (std::size_t k = layers.size(); k-- > 0;) {
            write_layer_gradient(delta, t.activations[k], g.values.data() + offsets[k]);
            if (k == 0) break;
            // Back through W_k and the ReLU of layer k-1.
            const auto& l = layers[k];
            linalg::Vector prev(l.inputs, 0.0);
            for (std::size_t r = 0; r < l.outputs; ++r) {
                const double* row = l.weights.data() + r * l.inputs;
                for (std::size_t c = 0; c < l.inputs; ++c) prev[c] += row[c] * delta[r];
            }
            const auto& z = t.preactivations[k - 1];
            for (std::size_t c = 0; c < prev.size(); ++c) {
                if (!(z[c] > 0.0)) prev[c] = 0.0;
            }
            delta.swap(prev);
        }
    }
    g.norm = linalg::norm(g.values);
    return g;
}

ModelParams apply_gradient(const ModelParams& params, std::span<const double> gradient,
                           double lr) {
    auto flat = params.flatten();
    linalg::axpy(-lr, gradient, flat);
    ModelParams next = params;
    next.assign_flat(flat);
    return next;
}

ModelParams sgd_step(const ModelParams& params, std::span<const Sample> pool,
                     const WeightedBatch& batch, double lr) {
    if (!(lr >= 0.0)) throw std::invalid_argument("learning rate must be non-negative");
    if (batch.empty()) throw SelectionError("sgd_step on an empty batch");
    std::vector<linalg::Vector> grads;
    grads.reserve(batch.size());
    for (const auto& e : batch.entries) {
        grads.push_back(per_sample_gradient(params, pool[e.index], GradientScope::full).values);
    }
    std::size_t i = 0;
    const auto g_hat = weighted_gradient_estimate(
        batch, params.parameter_count(),
        [&](const BatchEntry&) { return std::span<const double>(grads[i++]); });
    return apply_gradient(params, g_hat, lr);
}

void save_params(std::ostream& out, const ModelParams& params) {
    nlohmann::json header;
    header["format"] = "titan-params";
    header["version"] = 1;
    header["activation"] = "relu";
    header["feature_block"] = params.requested_feature_block();
    auto& shapes = header["layers"] = nlohmann::json::array();
    for (const auto& l : params.layers()) shapes.push_back({{"in", l.inputs}, {"out", l.outputs}});
    header["count"] = params.parameter_count();
    out << header.dump() << '\n';
    for (double v : params.flatten()) {
        auto bits = std::bit_cast<std::uint64_t>(v);
        char bytes[8];
        for (int b = 0; b < 8; ++b) bytes[b] = static_cast<char>((bits >> (8 * b)) & 0xFFu);
        out.write(bytes, 8);
    }
    if (!out) throw std::runtime_error("failed writing parameter snapshot");
}

ModelParams load_params(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("missing parameter header");
    const auto header = nlohmann::json::parse(line);
    if (header.value("format", "") != "titan-params") throw std::runtime_error("not a titan parameter snapshot");
    std::vector<DenseLayer> layers;
    for (const auto& s : header.at("layers")) {
        layers.emplace_back(s.at("in").get<std::size_t>(), s.at("out").get<std::size_t>());
    }
    ModelParams params(std::move(layers), header.value("feature_block", std::size_t{1}));
    const auto count = header.at("count").get<std::size_t>();
    if (count != params.parameter_count()) throw ShapeError("snapshot count disagrees with layer shapes");
    linalg::Vector flat(count);
    for (double& v : flat) {
        unsigned char bytes[8];
        if (!in.read(reinterpret_cast<char*>(bytes), 8)) throw std::runtime_error("truncated parameter snapshot");
        std::uint64_t bits = 0;
        for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(bytes[b]) << (8 * b);
        v = std::bit_cast<double>(bits);
    }
    params.assign_flat(flat);
    return params;
}

}  // namespace titan
