#include "backlab/nn.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "backlab/rng.hpp"

namespace backlab::nn {

namespace {

double act_forward(Activation a, double z) {
    switch (a) {
        case Activation::relu: return z > 0.0 ? z : 0.0;
        case Activation::leaky_relu: return z > 0.0 ? z : 0.01 * z;
        case Activation::sigmoid: return 1.0 / (1.0 + std::exp(-z));
    }
    return 0.0;
}

double act_derivative(Activation a, double z) {
    switch (a) {
        case Activation::relu: return z > 0.0 ? 1.0 : 0.0;
        case Activation::leaky_relu: return z > 0.0 ? 1.0 : 0.01;
        case Activation::sigmoid: {
            const double s = 1.0 / (1.0 + std::exp(-z));
            return s * (1.0 - s);
        }
    }
    return 0.0;
}

std::vector<double> softmax(std::span<const double> logits) {
    double m = -std::numeric_limits<double>::infinity();
    for (double h : logits) m = std::max(m, h);
    std::vector<double> p(logits.size());
    double z = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp(logits[i] - m);
        z += p[i];
    }
    for (double& v : p) v /= z;
    return p;
}

// Full forward pass capturing pre-activations and activations per layer.
// acts[0] is the input; zs[l] and acts[l+1] correspond to layer l.
struct ForwardTrace {
    std::vector<std::vector<double>> zs;
    std::vector<std::vector<double>> acts;
};

ForwardTrace forward_trace(const Classifier& f, std::span<const double> x) {
    if (x.size() != f.input_dim())
        throw std::invalid_argument("forward: input dimension mismatch");
    ForwardTrace tr;
    tr.acts.emplace_back(x.begin(), x.end());
    const std::size_t n_layers = f.layers.size();
    for (std::size_t l = 0; l < n_layers; ++l) {
        const auto& layer = f.layers[l];
        const std::size_t in = f.layer_dims[l];
        const std::size_t out = f.layer_dims[l + 1];
        const auto& a = tr.acts.back();
        std::vector<double> z(out);
        for (std::size_t o = 0; o < out; ++o) {
            double s = layer.b[o];
            const double* wrow = layer.w.data() + o * in;
            for (std::size_t i = 0; i < in; ++i) s += wrow[i] * a[i];
            z[o] = s;
        }
        std::vector<double> act(out);
        if (l + 1 == n_layers) {
            act = z;  // linear readout
        } else {
            for (std::size_t o = 0; o < out; ++o) act[o] = act_forward(f.activation, z[o]);
        }
        tr.zs.push_back(std::move(z));
        tr.acts.push_back(std::move(act));
    }
    return tr;
}

int argmax(std::span<const double> v) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[best]) best = i;
    return static_cast<int>(best);
}

int argmax_excluding(std::span<const double> v, int excluded) {
    int best = -1;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (static_cast<int>(i) == excluded) continue;
        if (best < 0 || v[i] > v[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
    }
    return best;
}

void check_class(const Classifier& f, int cls) {
    if (cls < 0 || static_cast<std::size_t>(cls) >= f.num_classes())
        throw std::invalid_argument("loss: class out of range");
}

// dL/dlogits for the loss specs. Hinges use the subgradient that is zero
// once the hinge saturates at -kappa.
std::vector<double> loss_logit_gradient(const Classifier& f, std::span<const double> logits,
                                        const LossSpec& loss) {
    std::vector<double> g(logits.size(), 0.0);
    switch (loss.kind) {
        case LossSpec::Kind::constant:
            break;
        case LossSpec::Kind::neg_log_posterior: {
            check_class(f, loss.cls);
            g = softmax(logits);
            g[static_cast<std::size_t>(loss.cls)] -= 1.0;
            break;
        }
        case LossSpec::Kind::hinge_toward_target: {
            check_class(f, loss.cls);
            const int rival = argmax_excluding(logits, loss.cls);
            const double margin = logits[static_cast<std::size_t>(rival)] -
                                  logits[static_cast<std::size_t>(loss.cls)];
            if (margin > -loss.kappa) {
                g[static_cast<std::size_t>(rival)] = 1.0;
                g[static_cast<std::size_t>(loss.cls)] = -1.0;
            }
            break;
        }
        case LossSpec::Kind::hinge_away_from_label: {
            check_class(f, loss.cls);
            const int rival = argmax_excluding(logits, loss.cls);
            const double margin = logits[static_cast<std::size_t>(loss.cls)] -
                                  logits[static_cast<std::size_t>(rival)];
            if (margin > -loss.kappa) {
                g[static_cast<std::size_t>(loss.cls)] = 1.0;
                g[static_cast<std::size_t>(rival)] = -1.0;
            }
            break;
        }
    }
    return g;
}

}  // namespace

std::string to_string(Activation a) {
    switch (a) {
        case Activation::relu: return "relu";
        case Activation::leaky_relu: return "leaky_relu";
        case Activation::sigmoid: return "sigmoid";
    }
    return "relu";
}

Activation activation_from_string(const std::string& s) {
    if (s == "relu") return Activation::relu;
    if (s == "leaky_relu") return Activation::leaky_relu;
    if (s == "sigmoid") return Activation::sigmoid;
    throw std::invalid_argument("unknown activation: " + s);
}

void validate(const Classifier& f) {
    if (f.layer_dims.size() < 2) throw std::invalid_argument("classifier: need >= 2 layer dims");
    if (f.num_classes() < 2) throw std::invalid_argument("classifier: output dimension K must be >= 2");
    if (f.layers.size() != f.layer_dims.size() - 1)
        throw std::invalid_argument("classifier: layer count mismatch");
    for (std::size_t l = 0; l < f.layers.size(); ++l) {
        const std::size_t in = f.layer_dims[l], out = f.layer_dims[l + 1];
        if (in == 0 || out == 0) throw std::invalid_argument("classifier: zero layer width");
        if (f.layers[l].w.size() != in * out || f.layers[l].b.size() != out)
            throw std::invalid_argument("classifier: weight shape mismatch");
        if (!all_finite(f.layers[l].w) || !all_finite(f.layers[l].b))
            throw std::invalid_argument("classifier: non-finite parameter");
    }
}

Classifier make_classifier(const std::vector<std::size_t>& layer_dims, Activation activation,
                           std::uint64_t seed) {
    Classifier f;
    f.layer_dims = layer_dims;
    f.activation = activation;
    Rng rng(derive_seed(seed, 0x11));
    for (std::size_t l = 0; l + 1 < layer_dims.size(); ++l) {
        const std::size_t in = layer_dims[l], out = layer_dims[l + 1];
        Classifier::Layer layer;
        layer.w.resize(in * out);
        layer.b.assign(out, 0.0);
        const double bound = 1.0 / std::sqrt(static_cast<double>(in));
        for (double& w : layer.w) w = rng.uniform(-bound, bound);
        f.layers.push_back(std::move(layer));
    }
    validate(f);
    return f;
}

std::vector<double> forward_logits(const Classifier& f, std::span<const double> x) {
    const auto tr = forward_trace(f, x);
    return tr.acts.back();
}

std::vector<double> posterior(const Classifier& f, std::span<const double> x) {
    return softmax(forward_logits(f, x));
}

std::vector<double> penultimate_features(const Classifier& f, std::span<const double> x) {
    if (f.num_hidden() == 0)
        throw std::invalid_argument("penultimate_features: network has no hidden layer");
    const auto tr = forward_trace(f, x);
    return tr.acts[tr.acts.size() - 2];
}

int predict(const Classifier& f, std::span<const double> x) {
    return argmax(forward_logits(f, x));
}

double loss_value(const Classifier& f, std::span<const double> x, const LossSpec& loss) {
    const auto logits = forward_logits(f, x);
    switch (loss.kind) {
        case LossSpec::Kind::constant:
            return 0.0;
        case LossSpec::Kind::neg_log_posterior: {
            check_class(f, loss.cls);
            double m = *std::max_element(logits.begin(), logits.end());
            double z = 0.0;
            for (double h : logits) z += std::exp(h - m);
            return -(logits[static_cast<std::size_t>(loss.cls)] - m - std::log(z));
        }
        case LossSpec::Kind::hinge_toward_target: {
            check_class(f, loss.cls);
            const int rival = argmax_excluding(logits, loss.cls);
            return std::max(logits[static_cast<std::size_t>(rival)] -
                                logits[static_cast<std::size_t>(loss.cls)],
                            -loss.kappa);
        }
        case LossSpec::Kind::hinge_away_from_label: {
            check_class(f, loss.cls);
            const int rival = argmax_excluding(logits, loss.cls);
            return std::max(logits[static_cast<std::size_t>(loss.cls)] -
                                logits[static_cast<std::size_t>(rival)],
                            -loss.kappa);
        }
    }
    return 0.0;
}

std::vector<double> input_gradient(const Classifier& f, std::span<const double> x,
                                   const LossSpec& loss) {
    const auto tr = forward_trace(f, x);
    std::vector<double> delta = loss_logit_gradient(f, tr.acts.back(), loss);
    // Walk the layers backwards; delta holds dL/dz of the current layer.
    for (std::size_t l = f.layers.size(); l-- > 0;) {
        const auto& layer = f.layers[l];
        const std::size_t in = f.layer_dims[l];
        const std::size_t out = f.layer_dims[l + 1];
        std::vector<double> prev(in, 0.0);
        for (std::size_t o = 0; o < out; ++o) {
            const double d = delta[o];
            if (d == 0.0) continue;
            const double* wrow = layer.w.data() + o * in;
            for (std::size_t i = 0; i < in; ++i) prev[i] += wrow[i] * d;
        }
        if (l > 0) {
            const auto& z = tr.zs[l - 1];
            for (std::size_t i = 0; i < in; ++i) prev[i] *= act_derivative(f.activation, z[i]);
        }
        delta = std::move(prev);
    }
    return delta;
}

namespace {

struct AdamState {
    std::vector<std::vector<double>> mw, vw, mb, vb;
    std::size_t t = 0;
};

}  // namespace

Classifier train(const data::LabeledDataset& dataset, const std::vector<std::size_t>& layer_dims,
                 const TrainConfig& cfg, Activation activation) {
    data::validate(dataset);
    if (cfg.learning_rate <= 0.0) throw std::invalid_argument("train: learning_rate must be positive");
    if (cfg.batch_size == 0 || cfg.batch_size > dataset.size())
        throw std::invalid_argument("train: batch_size must be in [1, dataset size]");
    if (layer_dims.front() != dataset.samples.front().size())
        throw std::invalid_argument("train: input dimension does not match dataset");
    const std::size_t k = layer_dims.back();
    for (int l : dataset.labels)
        if (l < 0 || static_cast<std::size_t>(l) >= k)
            throw std::invalid_argument("train: label out of range for output dimension");

    Classifier f = make_classifier(layer_dims, activation, derive_seed(cfg.seed, 0x17));
    if (cfg.epochs == 0) return f;

    Rng shuffle_rng(derive_seed(cfg.seed, 0x18));
    const std::size_t n = dataset.size();
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;

    AdamState adam;
    const bool use_adam = cfg.optimizer == TrainConfig::Optimizer::adam;
    if (use_adam) {
        for (const auto& layer : f.layers) {
            adam.mw.emplace_back(layer.w.size(), 0.0);
            adam.vw.emplace_back(layer.w.size(), 0.0);
            adam.mb.emplace_back(layer.b.size(), 0.0);
            adam.vb.emplace_back(layer.b.size(), 0.0);
        }
    }
    constexpr double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;

    std::vector<std::vector<double>> gw(f.layers.size()), gb(f.layers.size());
    for (std::size_t l = 0; l < f.layers.size(); ++l) {
        gw[l].resize(f.layers[l].w.size());
        gb[l].resize(f.layers[l].b.size());
    }

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        for (std::size_t start = 0; start < n; start += cfg.batch_size) {
            const std::size_t end = std::min(n, start + cfg.batch_size);
            const double inv = 1.0 / static_cast<double>(end - start);
            for (auto& g : gw) std::fill(g.begin(), g.end(), 0.0);
            for (auto& g : gb) std::fill(g.begin(), g.end(), 0.0);
            double batch_loss = 0.0;

            for (std::size_t idx = start; idx < end; ++idx) {
                const auto& x = dataset.samples[order[idx]];
                const int y = dataset.labels[order[idx]];
                const auto tr = forward_trace(f, x.view());
                const auto& logits = tr.acts.back();
                auto p = softmax(logits);
                batch_loss -= std::log(std::max(p[static_cast<std::size_t>(y)], 1e-300));

                std::vector<double> delta = p;
                delta[static_cast<std::size_t>(y)] -= 1.0;
                for (std::size_t l = f.layers.size(); l-- > 0;) {
                    const std::size_t in = f.layer_dims[l];
                    const std::size_t out = f.layer_dims[l + 1];
                    const auto& a_prev = tr.acts[l];
                    for (std::size_t o = 0; o < out; ++o) {
                        const double d = delta[o];
                        gb[l][o] += d;
                        if (d == 0.0) continue;
                        double* grow = gw[l].data() + o * in;
                        for (std::size_t i = 0; i < in; ++i) grow[i] += d * a_prev[i];
                    }
                    if (l > 0) {
                        std::vector<double> prev(in, 0.0);
                        const auto& layer = f.layers[l];
                        for (std::size_t o = 0; o < out; ++o) {
                            const double d = delta[o];
                            if (d == 0.0) continue;
                            const double* wrow = layer.w.data() + o * in;
                            for (std::size_t i = 0; i < in; ++i) prev[i] += wrow[i] * d;
                        }
                        const auto& z = tr.zs[l - 1];
                        for (std::size_t i = 0; i < in; ++i)
                            prev[i] *= act_derivative(f.activation, z[i]);
                        delta = std::move(prev);
                    }
                }
            }

            if (!std::isfinite(batch_loss))
                throw TrainingFailure(epoch, "train: loss diverged at epoch " +
                                                 std::to_string(epoch));

            if (use_adam) {
                adam.t += 1;
                const double c1 = 1.0 - std::pow(beta1, static_cast<double>(adam.t));
                const double c2 = 1.0 - std::pow(beta2, static_cast<double>(adam.t));
                for (std::size_t l = 0; l < f.layers.size(); ++l) {
                    auto& layer = f.layers[l];
                    for (std::size_t i = 0; i < layer.w.size(); ++i) {
                        const double g = gw[l][i] * inv;
                        adam.mw[l][i] = beta1 * adam.mw[l][i] + (1.0 - beta1) * g;
                        adam.vw[l][i] = beta2 * adam.vw[l][i] + (1.0 - beta2) * g * g;
                        layer.w[i] -= cfg.learning_rate * (adam.mw[l][i] / c1) /
                                      (std::sqrt(adam.vw[l][i] / c2) + adam_eps);
                    }
                    for (std::size_t i = 0; i < layer.b.size(); ++i) {
                        const double g = gb[l][i] * inv;
                        adam.mb[l][i] = beta1 * adam.mb[l][i] + (1.0 - beta1) * g;
                        adam.vb[l][i] = beta2 * adam.vb[l][i] + (1.0 - beta2) * g * g;
                        layer.b[i] -= cfg.learning_rate * (adam.mb[l][i] / c1) /
                                      (std::sqrt(adam.vb[l][i] / c2) + adam_eps);
                    }
                }
            } else {
                for (std::size_t l = 0; l < f.layers.size(); ++l) {
                    auto& layer = f.layers[l];
                    for (std::size_t i = 0; i < layer.w.size(); ++i)
                        layer.w[i] -= cfg.learning_rate * gw[l][i] * inv;
                    for (std::size_t i = 0; i < layer.b.size(); ++i)
                        layer.b[i] -= cfg.learning_rate * gb[l][i] * inv;
                }
            }
        }
    }
    for (const auto& layer : f.layers)
        if (!all_finite(layer.w) || !all_finite(layer.b))
            throw TrainingFailure(cfg.epochs - 1, "train: parameters diverged at epoch " +
                                                      std::to_string(cfg.epochs - 1));
    return f;
}

std::string classifier_to_json(const Classifier& f) {
    nlohmann::json j;
    j["layer_dims"] = f.layer_dims;
    j["activation"] = to_string(f.activation);
    j["layers"] = nlohmann::json::array();
    for (const auto& layer : f.layers) {
        nlohmann::json jl;
        jl["W"] = layer.w;
        jl["b"] = layer.b;
        j["layers"].push_back(std::move(jl));
    }
    return j.dump(2);
}

Classifier classifier_from_json(const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    Classifier f;
    f.layer_dims = j.at("layer_dims").get<std::vector<std::size_t>>();
    f.activation = activation_from_string(j.at("activation").get<std::string>());
    for (const auto& jl : j.at("layers")) {
        Classifier::Layer layer;
        layer.w = jl.at("W").get<std::vector<double>>();
        layer.b = jl.at("b").get<std::vector<double>>();
        f.layers.push_back(std::move(layer));
    }
    validate(f);
    return f;
}

void save_classifier(const Classifier& f, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_classifier: cannot write " + path);
    out << classifier_to_json(f) << "\n";
}

Classifier load_classifier(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_classifier: cannot open " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return classifier_from_json(text);
}

}  // namespace backlab::nn
