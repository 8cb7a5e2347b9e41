#include "backlab/reveng.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "backlab/rng.hpp"

namespace backlab::reveng {

namespace {

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

void check_group(const nn::Classifier& f, std::span<const Tensor> xs, const ReConfig& cfg) {
    if (xs.empty()) throw std::invalid_argument("reveng: empty sample group");
    if (cfg.target_class < 0 || static_cast<std::size_t>(cfg.target_class) >= f.num_classes())
        throw std::invalid_argument("reveng: target class out of range");
    if (cfg.step_size <= 0.0 || cfg.max_iters == 0)
        throw std::invalid_argument("reveng: step_size and max_iters must be positive");
    for (const auto& x : xs) {
        if (x.size() != f.input_dim()) throw std::invalid_argument("reveng: dimension mismatch");
        if (nn::predict(f, x.view()) == cfg.target_class)
            throw std::invalid_argument("reveng: sample already classified to the target class");
    }
}

Tensor patched(const Tensor& x, const std::vector<double>& m, const std::vector<double>& u) {
    Tensor out = x;
    for (std::size_t i = 0; i < out.size(); ++i)
        out.values[i] = (1.0 - m[i]) * x.values[i] + m[i] * u[i];
    return out;
}

// Adam state for one flat parameter vector. The short second-moment memory
// (beta2 = 0.99) matters for the mask optimization: once the
// misclassification term saturates, stale large gradients would otherwise
// stall the sparsification that concentrates the mask.
struct Adam {
    static constexpr double kBeta1 = 0.9;
    static constexpr double kBeta2 = 0.99;
    std::vector<double> m, v;
    std::size_t t = 0;
    explicit Adam(std::size_t n) : m(n, 0.0), v(n, 0.0) {}
    void step(std::vector<double>& theta, const std::vector<double>& g, double lr) {
        ++t;
        const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t));
        const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t));
        for (std::size_t i = 0; i < theta.size(); ++i) {
            m[i] = kBeta1 * m[i] + (1.0 - kBeta1) * g[i];
            v[i] = kBeta2 * v[i] + (1.0 - kBeta2) * g[i] * g[i];
            theta[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + 1e-8);
        }
    }
};

}  // namespace

ReSolution re_ap_group(const nn::Classifier& f, std::span<const Tensor> xs, const ReConfig& cfg) {
    check_group(f, xs, cfg);
    const std::size_t n = xs.front().size();
    Rng rng(derive_seed(cfg.seed, 0xAE));

    Tensor v = cfg.warm_start ? *cfg.warm_start : Tensor::zeros(xs.front().shape);
    if (cfg.warm_start && !cfg.warm_start->same_shape(xs.front()))
        throw std::invalid_argument("re_ap: warm start shape mismatch");
    for (std::size_t i = 0; i < n; ++i) v.values[i] += cfg.init_sigma * rng.normal();

    const auto loss = nn::LossSpec::neg_log_posterior(cfg.target_class);
    ReSolution sol;
    sol.pattern.kind = attack::BackdoorPattern::Kind::additive;

    std::vector<double> probe(n);
    for (std::size_t iter = 0;; ++iter) {
        bool feasible = true;
        std::vector<double> grad(n, 0.0);
        for (const auto& x : xs) {
            for (std::size_t i = 0; i < n; ++i) probe[i] = x.values[i] + v.values[i];
            if (nn::predict(f, probe) != cfg.target_class) feasible = false;
        }
        if (feasible) {
            sol.pattern.v = v;
            sol.norm = l2_norm(v.values);
            sol.success = true;
            sol.iters_used = iter;
            return sol;
        }
        if (iter >= cfg.max_iters) break;
        for (const auto& x : xs) {
            for (std::size_t i = 0; i < n; ++i) probe[i] = x.values[i] + v.values[i];
            const auto g = nn::input_gradient(f, probe, loss);
            for (std::size_t i = 0; i < n; ++i) grad[i] += g[i];
        }
        // Normalized step: each iterate moves exactly step_size in l2, so
        // the quality gap of the first feasible iterate is bounded by the
        // step size.
        const double gnorm = l2_norm(grad);
        if (gnorm < 1e-12) break;  // stuck on a flat region
        const double scale = cfg.step_size / gnorm;
        for (std::size_t i = 0; i < n; ++i) v.values[i] -= scale * grad[i];
    }

    sol.pattern.v = v;
    sol.norm = l2_norm(v.values);
    sol.success = false;
    sol.iters_used = cfg.max_iters;
    return sol;
}

ReSolution re_ap(const nn::Classifier& f, const Tensor& x, const ReConfig& cfg) {
    return re_ap_group(f, std::span<const Tensor>(&x, 1), cfg);
}

ReSolution re_pr_group(const nn::Classifier& f, std::span<const Tensor> xs, const ReConfig& cfg) {
    check_group(f, xs, cfg);
    const std::size_t n = xs.front().size();
    Rng rng(derive_seed(cfg.seed, 0xBE));

    // Mask logits start negative enough that the binarized mask is empty at
    // the first feasibility check; the patch starts uniform in [0,1].
    std::vector<double> theta(n), u(n);
    for (std::size_t i = 0; i < n; ++i) theta[i] = -3.0 + 0.5 * rng.normal();
    for (std::size_t i = 0; i < n; ++i) u[i] = rng.uniform();

    Adam adam_theta(n), adam_u(n);
    const auto loss = nn::LossSpec::neg_log_posterior(cfg.target_class);

    ReSolution sol;
    sol.pattern.kind = attack::BackdoorPattern::Kind::patch;

    std::vector<double> m(n), mb(n);
    auto binary_feasible = [&]() {
        for (std::size_t i = 0; i < n; ++i) mb[i] = m[i] > 0.5 ? 1.0 : 0.0;
        for (const auto& x : xs) {
            const Tensor probe = patched(x, mb, u);
            if (nn::predict(f, probe.view()) != cfg.target_class) return false;
        }
        return true;
    };
    auto finish = [&](bool ok, std::size_t iters) {
        sol.pattern.mask = Tensor(xs.front().shape, mb);
        std::vector<double> patch = u;
        for (double& p : patch) p = std::clamp(p, 0.0, 1.0);
        sol.pattern.patch = Tensor(xs.front().shape, std::move(patch));
        sol.norm = l1_norm(mb);
        sol.success = ok;
        sol.iters_used = iters;
        return sol;
    };

    for (std::size_t iter = 0;; ++iter) {
        for (std::size_t i = 0; i < n; ++i) m[i] = sigmoid(theta[i]);
        if (binary_feasible()) return finish(true, iter);
        if (iter >= cfg.max_iters) break;

        std::vector<double> gm(n, 0.0), gu(n, 0.0);
        for (const auto& x : xs) {
            const Tensor probe = patched(x, m, u);
            const auto gin = nn::input_gradient(f, probe.view(), loss);
            for (std::size_t i = 0; i < n; ++i) {
                gm[i] += gin[i] * (u[i] - x.values[i]);
                gu[i] += gin[i] * m[i];
            }
        }
        const double inv = 1.0 / static_cast<double>(xs.size());
        std::vector<double> gtheta(n);
        for (std::size_t i = 0; i < n; ++i) {
            gm[i] = gm[i] * inv + cfg.lambda;  // d(lambda*|m|_1)/dm = lambda for m in (0,1)
            gtheta[i] = gm[i] * m[i] * (1.0 - m[i]);
            gu[i] *= inv;
        }
        adam_theta.step(theta, gtheta, cfg.step_size);
        adam_u.step(u, gu, cfg.step_size);
        for (double& p : u) p = std::clamp(p, 0.0, 1.0);
    }

    for (std::size_t i = 0; i < n; ++i) m[i] = sigmoid(theta[i]);
    for (std::size_t i = 0; i < n; ++i) mb[i] = m[i] > 0.5 ? 1.0 : 0.0;
    return finish(false, cfg.max_iters);
}

ReSolution re_pr(const nn::Classifier& f, const Tensor& x, const ReConfig& cfg) {
    return re_pr_group(f, std::span<const Tensor>(&x, 1), cfg);
}

namespace {

// One Adam-driven minimization of a summed hinge loss over (theta, u);
// shared by the common and sample-wise CS estimations. Each entry of
// `terms` pairs a sample with its hinge loss spec.
struct CsPattern {
    std::vector<double> m, u;
};

CsPattern minimize_cs_loss(const nn::Classifier& f,
                           const std::vector<std::pair<const Tensor*, nn::LossSpec>>& terms,
                           const ReConfig& cfg, std::uint64_t stream) {
    const std::size_t n = f.input_dim();
    Rng rng(derive_seed(cfg.seed, 0xC5, stream));
    std::vector<double> theta(n), u(n);
    for (std::size_t i = 0; i < n; ++i) theta[i] = -2.0 + rng.normal();
    for (std::size_t i = 0; i < n; ++i) u[i] = rng.uniform();

    Adam adam_theta(n), adam_u(n);
    std::vector<double> m(n);
    for (std::size_t iter = 0; iter < cfg.max_iters; ++iter) {
        for (std::size_t i = 0; i < n; ++i) m[i] = sigmoid(theta[i]);
        std::vector<double> gm(n, 0.0), gu(n, 0.0);
        for (const auto& [x, loss] : terms) {
            const Tensor probe = patched(*x, m, u);
            const auto gin = nn::input_gradient(f, probe.view(), loss);
            for (std::size_t i = 0; i < n; ++i) {
                gm[i] += gin[i] * (u[i] - x->values[i]);
                gu[i] += gin[i] * m[i];
            }
        }
        std::vector<double> gtheta(n);
        for (std::size_t i = 0; i < n; ++i) {
            gm[i] += cfg.lambda;
            gtheta[i] = gm[i] * m[i] * (1.0 - m[i]);
        }
        adam_theta.step(theta, gtheta, cfg.step_size);
        adam_u.step(u, gu, cfg.step_size);
        for (double& p : u) p = std::clamp(p, 0.0, 1.0);
    }
    for (std::size_t i = 0; i < n; ++i) m[i] = sigmoid(theta[i]);
    return {std::move(m), std::move(u)};
}

}  // namespace

CsResult cs_statistic(const nn::Classifier& f, int target,
                      const std::vector<std::vector<Tensor>>& detection_sets,
                      const ReConfig& cfg) {
    if (target < 0 || static_cast<std::size_t>(target) >= detection_sets.size())
        throw std::invalid_argument("cs_statistic: target out of range");
    if (f.num_hidden() == 0)
        throw std::invalid_argument("cs_statistic: network has no hidden layer");
    std::size_t outside = 0;
    for (std::size_t c = 0; c < detection_sets.size(); ++c)
        if (static_cast<int>(c) != target) outside += detection_sets[c].size();
    if (outside == 0) throw std::invalid_argument("cs_statistic: no samples outside the target class");

    // Common pattern: push non-target samples off their class, keep target
    // samples at the target, small mask.
    std::vector<std::pair<const Tensor*, nn::LossSpec>> common_terms;
    for (std::size_t c = 0; c < detection_sets.size(); ++c) {
        for (const auto& x : detection_sets[c]) {
            if (static_cast<int>(c) == target)
                common_terms.emplace_back(&x, nn::LossSpec::hinge_toward_target(target, cfg.kappa));
            else
                common_terms.emplace_back(
                    &x, nn::LossSpec::hinge_away_from_label(static_cast<int>(c), cfg.kappa));
        }
    }
    const CsPattern common = minimize_cs_loss(f, common_terms, cfg, 0);

    CsResult result;
    double acc = 0.0;
    std::uint64_t stream = 1;
    for (std::size_t c = 0; c < detection_sets.size(); ++c) {
        if (static_cast<int>(c) == target) continue;
        for (const auto& x : detection_sets[c]) {
            const std::vector<std::pair<const Tensor*, nn::LossSpec>> terms = {
                {&x, nn::LossSpec::hinge_toward_target(target, cfg.kappa)}};
            const CsPattern sw = minimize_cs_loss(f, terms, cfg, stream++);
            const auto z1 = nn::penultimate_features(f, patched(x, common.m, common.u).view());
            const auto z2 = nn::penultimate_features(f, patched(x, sw.m, sw.u).view());
            if (l2_norm(z1) == 0.0 || l2_norm(z2) == 0.0) {
                result.n_excluded += 1;
                continue;
            }
            acc += cosine_similarity(z1, z2);
            result.n_used += 1;
        }
    }
    if (result.n_used == 0)
        throw std::runtime_error("cs_statistic: every sample had a zero feature vector");
    result.cs = acc / static_cast<double>(result.n_used);
    return result;
}

InversionResult model_inversion_synthesize(const nn::Classifier& f, int cls, const ReConfig& cfg,
                                           const std::vector<std::size_t>& shape, bool bounded) {
    if (cls < 0 || static_cast<std::size_t>(cls) >= f.num_classes())
        throw std::invalid_argument("model_inversion: class out of range");
    if (numel(shape) != f.input_dim())
        throw std::invalid_argument("model_inversion: shape does not match input dimension");

    Rng rng(derive_seed(cfg.seed, 0x31));
    InversionResult res;
    res.image = Tensor::zeros(shape);
    for (double& v : res.image.values) v = rng.uniform(0.0, std::max(cfg.init_sigma, 1e-6));

    const auto loss = nn::LossSpec::neg_log_posterior(cls);
    for (std::size_t iter = 0; iter <= cfg.max_iters; ++iter) {
        const auto p = nn::posterior(f, res.image.view());
        if (p[static_cast<std::size_t>(cls)] > 0.9) {
            res.success = true;
            res.iters_used = iter;
            return res;
        }
        if (iter == cfg.max_iters) break;
        const auto g = nn::input_gradient(f, res.image.view(), loss);
        for (std::size_t i = 0; i < res.image.size(); ++i) {
            res.image.values[i] -= cfg.step_size * g[i];
            if (bounded) res.image.values[i] = std::clamp(res.image.values[i], 0.0, 1.0);
        }
    }
    res.success = false;
    res.iters_used = cfg.max_iters;
    return res;
}

}  // namespace backlab::reveng
