#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "backlab/data.hpp"
#include "backlab/tensor.hpp"

namespace backlab::nn {

enum class Activation { relu, leaky_relu, sigmoid };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

// Dense feed-forward classifier. layer_dims = {input n, hidden..., K}; the
// hidden layers use `activation`, the output layer is linear (logits).
struct Classifier {
    std::vector<std::size_t> layer_dims;
    Activation activation = Activation::relu;
    struct Layer {
        std::vector<double> w;  // row-major, out x in
        std::vector<double> b;
    };
    std::vector<Layer> layers;

    std::size_t input_dim() const { return layer_dims.front(); }
    std::size_t num_classes() const { return layer_dims.back(); }
    std::size_t num_hidden() const { return layer_dims.size() - 2; }
};

void validate(const Classifier& f);

// Fan-in scaled uniform init, U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
Classifier make_classifier(const std::vector<std::size_t>& layer_dims, Activation activation,
                           std::uint64_t seed);

// Scalar differentiable function of the logits, identified by tag:
//   constant               -- fixed value, zero gradient
//   neg_log_posterior      -- -log p(cls | x)
//   hinge_toward_target    -- max(max_{j != cls} h_j - h_cls, -kappa)
//   hinge_away_from_label  -- max(h_cls - max_{j != cls} h_j, -kappa)
struct LossSpec {
    enum class Kind { constant, neg_log_posterior, hinge_toward_target, hinge_away_from_label };
    Kind kind = Kind::constant;
    int cls = 0;
    double kappa = 0.0;

    static LossSpec constant() { return {}; }
    static LossSpec neg_log_posterior(int cls) {
        return {Kind::neg_log_posterior, cls, 0.0};
    }
    static LossSpec hinge_toward_target(int cls, double kappa = 0.0) {
        return {Kind::hinge_toward_target, cls, kappa};
    }
    static LossSpec hinge_away_from_label(int cls, double kappa = 0.0) {
        return {Kind::hinge_away_from_label, cls, kappa};
    }
};

std::vector<double> forward_logits(const Classifier& f, std::span<const double> x);
std::vector<double> posterior(const Classifier& f, std::span<const double> x);
std::vector<double> penultimate_features(const Classifier& f, std::span<const double> x);
int predict(const Classifier& f, std::span<const double> x);

double loss_value(const Classifier& f, std::span<const double> x, const LossSpec& loss);

// Gradient of the scalar loss w.r.t. the input, by backpropagation. The relu
// subgradient at 0 is taken as 0 (leaky_relu uses its negative-side slope).
std::vector<double> input_gradient(const Classifier& f, std::span<const double> x,
                                   const LossSpec& loss);

struct TrainConfig {
    double learning_rate = 0.01;
    std::size_t batch_size = 32;
    std::size_t epochs = 10;
    enum class Optimizer { sgd, adam } optimizer = Optimizer::sgd;
    std::uint64_t seed = 0;
};

struct TrainingFailure : std::runtime_error {
    TrainingFailure(std::size_t epoch_, const std::string& msg)
        : std::runtime_error(msg), epoch(epoch_) {}
    std::size_t epoch;
};

// Minimizes mean cross-entropy over the dataset; reproducible given the seed.
// Throws TrainingFailure (with the epoch index) if the loss becomes
// non-finite.
Classifier train(const data::LabeledDataset& dataset, const std::vector<std::size_t>& layer_dims,
                 const TrainConfig& cfg, Activation activation = Activation::relu);

// JSON round trip is bit-exact for finite 64-bit values.
std::string classifier_to_json(const Classifier& f);
Classifier classifier_from_json(const std::string& text);
void save_classifier(const Classifier& f, const std::string& path);
Classifier load_classifier(const std::string& path);

}  // namespace backlab::nn
