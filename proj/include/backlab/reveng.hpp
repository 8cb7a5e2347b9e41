#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "backlab/attack.hpp"
#include "backlab/nn.hpp"
#include "backlab/tensor.hpp"

namespace backlab::reveng {

struct ReConfig {
    double step_size = 0.05;
    std::size_t max_iters = 2000;
    double lambda = 1e-2;     // mask-size multiplier (RE-PR, CS losses)
    double init_sigma = 1e-2; // RE-AP random-init scale
    double kappa = 0.0;       // margin in the CS hinge losses
    int target_class = 0;
    std::uint64_t seed = 0;
    // When set, RE-AP starts from this pattern (plus init_sigma noise)
    // instead of a pure random init.
    std::optional<Tensor> warm_start;
};

struct ReSolution {
    attack::BackdoorPattern pattern;
    double norm = 0.0;  // l2 of v (RE-AP) or l1 of the binary mask (RE-PR)
    bool success = false;
    std::size_t iters_used = 0;
};

// Minimal-norm additive perturbation toward cfg.target_class: gradient
// descent on -log p(t | x + v) from v ~ N(0, init_sigma^2 I), returning the
// first iterate with f(x + v) = t. Non-convergence is reported via
// success=false, never thrown.
ReSolution re_ap(const nn::Classifier& f, const Tensor& x, const ReConfig& cfg);

// Common perturbation for a group: the loss is the mean of the per-sample
// losses and success requires every sample to be misclassified to the
// target. A singleton group behaves identically to re_ap.
ReSolution re_ap_group(const nn::Classifier& f, std::span<const Tensor> xs, const ReConfig& cfg);

// Mask/patch reverse-engineering: continuous mask logits squashed into
// [0,1] by a sigmoid, patch values clamped to [0,1], Adam steps on
// -log p(t | (1-m).*x + m.*u) + lambda*|m|_1. Success requires the
// constraint to hold with the mask binarized at 0.5; norm is |m_bin|_1.
ReSolution re_pr(const nn::Classifier& f, const Tensor& x, const ReConfig& cfg);
ReSolution re_pr_group(const nn::Classifier& f, std::span<const Tensor> xs, const ReConfig& cfg);

struct CsResult {
    double cs = 0.0;
    std::size_t n_used = 0;
    std::size_t n_excluded = 0;  // samples with a zero feature vector
};

// Cosine-similarity statistic for putative target t: a common patch is
// estimated on all detection sets jointly (margin-form loss), a sample-wise
// patch per sample outside class t, and CS is the mean penultimate-feature
// cosine between the two embeddings.
CsResult cs_statistic(const nn::Classifier& f, int target,
                      const std::vector<std::vector<Tensor>>& detection_sets,
                      const ReConfig& cfg);

struct InversionResult {
    Tensor image;
    bool success = false;
    std::size_t iters_used = 0;
};

// Model inversion: from a near-zero image with small positive noise,
// gradient ascent on the class posterior until it exceeds 0.9 (or the
// iteration budget is exhausted).
InversionResult model_inversion_synthesize(const nn::Classifier& f, int cls, const ReConfig& cfg,
                                           const std::vector<std::size_t>& shape,
                                           bool bounded = true);

}  // namespace backlab::reveng
