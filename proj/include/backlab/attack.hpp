#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "backlab/data.hpp"
#include "backlab/nn.hpp"
#include "backlab/tensor.hpp"

namespace backlab::attack {

// Backdoor pattern: either an additive perturbation v, embedded as
// clamp01(x + v) on bounded domains, or a (binary mask m, patch u) pair,
// embedded as (1 - m) .* x + m .* u.
struct BackdoorPattern {
    enum class Kind { additive, patch };
    Kind kind = Kind::additive;
    Tensor v;
    Tensor mask;
    Tensor patch;
};

void validate(const BackdoorPattern& p);

Tensor embed(const Tensor& x, const BackdoorPattern& p, bool bounded = true);

// Pattern library. Additive: chessboard, static, l, x, cross, pixel, square,
// chessboard_patch. Patch replacement: unicolor_patch, noisy_patch.
// Shapes are {H, W} (gray) or {C, H, W} (color). Localized patterns are
// placed at a seeded-random position, fixed for the returned pattern;
// gray-scale localized patterns go to one of the four corners.
BackdoorPattern make_pattern(const std::string& name, const std::vector<std::size_t>& shape,
                             std::uint64_t seed);
const std::vector<std::string>& pattern_names();

// Patch footprint edge length: 3 for images up to 32 px, scaled linearly
// beyond that.
std::size_t patch_edge_for(const std::vector<std::size_t>& shape);

// Dual-attack constraint: additive patterns must differ in shape (support),
// patch patterns of equal support must have mean-color l2 distance >= 0.5.
bool patterns_sufficiently_different(const BackdoorPattern& a, const BackdoorPattern& b);

struct PgdConfig {
    double eps = 8.0 / 255.0;
    int steps = 10;
    double step_size = 1.0 / 255.0;
};

struct AttackSpec {
    int target_class = 0;
    BackdoorPattern pattern;
    std::size_t n_poison = 0;
    bool clean_label = false;
    PgdConfig pgd;
};

struct PoisonReport {
    std::size_t inserted_count = 0;
    // inserted / (target-class training count after poisoning)
    double poisoning_rate = 0.0;
    std::vector<std::size_t> source_indices;
};

// Dirty-label poisoning: n_poison samples drawn (seeded, without
// replacement) from classes != target, embedded with the pattern, labeled to
// the target class and appended. Pre-existing samples are never altered.
std::pair<data::LabeledDataset, PoisonReport> poison_dataset(const data::LabeledDataset& train,
                                                             const AttackSpec& spec,
                                                             std::uint64_t seed);

// Untargeted PGD in the l-inf ball around x (random start, clamped to
// [0,1]); stops early once the classifier misclassifies.
Tensor pgd_perturb(const nn::Classifier& f, const Tensor& x, int label, const PgdConfig& cfg,
                   Rng& rng);

// Clean-label poisoning: target-class samples are PGD-perturbed against the
// surrogate until misclassified (or the step budget runs out), then embedded
// with the pattern and appended, keeping the target label.
std::pair<data::LabeledDataset, PoisonReport> clean_label_poison(
    const data::LabeledDataset& train, const AttackSpec& spec, const nn::Classifier& surrogate,
    std::uint64_t seed);

// ASR: fraction of non-target-class test samples classified to the target
// class once the pattern is embedded. ACC: clean test accuracy.
double eval_asr(const nn::Classifier& f, const data::LabeledDataset& test, const AttackSpec& spec);
double eval_acc(const nn::Classifier& f, const data::LabeledDataset& test);

}  // namespace backlab::attack
