#include "backlab/attack.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

namespace backlab::attack {

namespace {

struct ShapeInfo {
    std::size_t channels, h, w;
    bool gray;
};

ShapeInfo shape_info(const std::vector<std::size_t>& shape) {
    if (shape.size() == 2) return {1, shape[0], shape[1], true};
    if (shape.size() == 3) return {shape[0], shape[1], shape[2], false};
    throw std::invalid_argument("pattern: expected {H,W} or {C,H,W} shape");
}

std::size_t flat_index(const ShapeInfo& s, std::size_t c, std::size_t i, std::size_t j) {
    return s.gray ? i * s.w + j : c * s.h * s.w + i * s.w + j;
}

using Footprint = std::vector<std::pair<std::size_t, std::size_t>>;

Footprint footprint_for(const std::string& name, std::size_t edge) {
    if (name == "l") return {{0, 0}, {1, 0}, {2, 0}, {2, 1}, {2, 2}};
    if (name == "x") return {{0, 0}, {0, 2}, {1, 1}, {2, 0}, {2, 2}};
    if (name == "cross") return {{0, 1}, {1, 0}, {1, 1}, {1, 2}, {2, 1}};
    if (name == "pixel") return {{0, 0}};
    if (name == "square") {
        Footprint fp;
        for (std::size_t i = 0; i < edge; ++i)
            for (std::size_t j = 0; j < edge; ++j) fp.emplace_back(i, j);
        return fp;
    }
    if (name == "chessboard_patch") {
        Footprint fp;
        for (std::size_t i = 0; i < edge; ++i)
            for (std::size_t j = 0; j < edge; ++j)
                if ((i + j) % 2 == 0) fp.emplace_back(i, j);
        return fp;
    }
    throw std::invalid_argument("pattern: no footprint for " + name);
}

std::pair<std::size_t, std::size_t> box_of(const Footprint& fp) {
    std::size_t h = 0, w = 0;
    for (const auto& [i, j] : fp) {
        h = std::max(h, i + 1);
        w = std::max(w, j + 1);
    }
    return {h, w};
}

// Seeded placement of a bh x bw box: gray-scale goes to one of the four
// corners, color is uniform over valid positions.
std::pair<std::size_t, std::size_t> place_box(const ShapeInfo& s, std::size_t bh, std::size_t bw,
                                              Rng& rng) {
    if (bh > s.h || bw > s.w)
        throw std::invalid_argument("pattern: footprint does not fit the image");
    if (s.gray) {
        switch (rng.below(4)) {
            case 0: return {0, 0};
            case 1: return {0, s.w - bw};
            case 2: return {s.h - bh, 0};
            default: return {s.h - bh, s.w - bw};
        }
    }
    const std::size_t r0 = static_cast<std::size_t>(rng.below(s.h - bh + 1));
    const std::size_t c0 = static_cast<std::size_t>(rng.below(s.w - bw + 1));
    return {r0, c0};
}

}  // namespace

void validate(const BackdoorPattern& p) {
    if (p.kind == BackdoorPattern::Kind::additive) {
        backlab::validate(p.v, "pattern.v");
        return;
    }
    backlab::validate(p.mask, "pattern.mask");
    backlab::validate(p.patch, "pattern.patch");
    if (!p.mask.same_shape(p.patch))
        throw std::invalid_argument("pattern: mask/patch shape mismatch");
    for (double m : p.mask.values)
        if (m != 0.0 && m != 1.0)
            throw std::invalid_argument("pattern: mask entries must be exactly 0 or 1");
    for (double u : p.patch.values)
        if (u < 0.0 || u > 1.0) throw std::invalid_argument("pattern: patch values must be in [0,1]");
}

Tensor embed(const Tensor& x, const BackdoorPattern& p, bool bounded) {
    if (p.kind == BackdoorPattern::Kind::additive) {
        if (!x.same_shape(p.v)) throw std::invalid_argument("embed: shape mismatch");
        Tensor out = add(x, p.v);
        return bounded ? clamp01(std::move(out)) : out;
    }
    if (!x.same_shape(p.mask)) throw std::invalid_argument("embed: shape mismatch");
    Tensor out = x;
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double m = p.mask.values[i];
        out.values[i] = (1.0 - m) * x.values[i] + m * p.patch.values[i];
    }
    return out;
}

std::size_t patch_edge_for(const std::vector<std::size_t>& shape) {
    const ShapeInfo s = shape_info(shape);
    const std::size_t maxdim = std::max(s.h, s.w);
    if (maxdim <= 32) return 3;
    return static_cast<std::size_t>(std::lround(3.0 * static_cast<double>(maxdim) / 32.0));
}

const std::vector<std::string>& pattern_names() {
    static const std::vector<std::string> names = {
        "chessboard", "static",          "l",
        "x",          "cross",           "pixel",
        "square",     "chessboard_patch", "unicolor_patch",
        "noisy_patch"};
    return names;
}

BackdoorPattern make_pattern(const std::string& name, const std::vector<std::size_t>& shape,
                             std::uint64_t seed) {
    const ShapeInfo s = shape_info(shape);
    Rng rng(derive_seed(seed, 0xBD));
    BackdoorPattern p;

    if (name == "chessboard" || name == "static") {
        p.kind = BackdoorPattern::Kind::additive;
        p.v = Tensor::zeros(shape);
        const double mag = 3.0 / 255.0;
        for (std::size_t i = 0; i < s.h; ++i) {
            for (std::size_t j = 0; j < s.w; ++j) {
                const bool on = (name == "chessboard") ? ((i + j) % 2 == 0)
                                                       : (i % 2 == 0 && j % 2 == 0);
                if (!on) continue;
                for (std::size_t c = 0; c < s.channels; ++c)
                    p.v.values[flat_index(s, c, i, j)] = mag;
            }
        }
        return p;
    }

    if (name == "l" || name == "x" || name == "cross" || name == "pixel" || name == "square" ||
        name == "chessboard_patch") {
        p.kind = BackdoorPattern::Kind::additive;
        p.v = Tensor::zeros(shape);
        const std::size_t edge = patch_edge_for(shape);
        const Footprint fp = footprint_for(name, edge);
        const auto [bh, bw] = box_of(fp);
        const auto [r0, c0] = place_box(s, bh, bw, rng);

        double mag = 50.0 / 255.0;
        if (name == "pixel" && s.gray) mag = 70.0 / 255.0;
        if (name == "chessboard_patch") mag = 5.0 / 255.0;

        const bool single_channel = !s.gray && (name == "x" || name == "square");
        const std::size_t chan =
            single_channel ? static_cast<std::size_t>(rng.below(s.channels)) : 0;
        for (const auto& [di, dj] : fp) {
            if (single_channel) {
                p.v.values[flat_index(s, chan, r0 + di, c0 + dj)] = mag;
            } else {
                for (std::size_t c = 0; c < s.channels; ++c)
                    p.v.values[flat_index(s, c, r0 + di, c0 + dj)] = mag;
            }
        }
        return p;
    }

    if (name == "unicolor_patch" || name == "noisy_patch") {
        p.kind = BackdoorPattern::Kind::patch;
        p.mask = Tensor::zeros(shape);
        p.patch = Tensor::zeros(shape);
        const std::size_t edge = patch_edge_for(shape);
        const auto [r0, c0] = place_box(s, edge, edge, rng);
        std::vector<double> color(s.channels);
        for (std::size_t c = 0; c < s.channels; ++c) color[c] = rng.uniform();
        for (std::size_t di = 0; di < edge; ++di) {
            for (std::size_t dj = 0; dj < edge; ++dj) {
                for (std::size_t c = 0; c < s.channels; ++c) {
                    const std::size_t idx = flat_index(s, c, r0 + di, c0 + dj);
                    p.mask.values[idx] = 1.0;
                    p.patch.values[idx] = (name == "unicolor_patch") ? color[c] : rng.uniform();
                }
            }
        }
        return p;
    }

    throw std::invalid_argument("pattern: unknown name: " + name);
}

bool patterns_sufficiently_different(const BackdoorPattern& a, const BackdoorPattern& b) {
    if (a.kind != b.kind) return true;
    if (a.kind == BackdoorPattern::Kind::additive) {
        if (!a.v.same_shape(b.v)) return true;
        for (std::size_t i = 0; i < a.v.size(); ++i) {
            const bool on_a = a.v.values[i] != 0.0;
            const bool on_b = b.v.values[i] != 0.0;
            if (on_a != on_b) return true;  // supports differ -> different shapes
        }
        return false;
    }
    if (!a.mask.same_shape(b.mask)) return true;
    bool same_support = true;
    for (std::size_t i = 0; i < a.mask.size(); ++i)
        if (a.mask.values[i] != b.mask.values[i]) same_support = false;
    if (!same_support) return true;
    // Same support: require the mean colors to differ by l2 distance >= 0.5.
    const ShapeInfo s = shape_info(a.mask.shape);
    std::vector<double> mean_a(s.channels, 0.0), mean_b(s.channels, 0.0);
    std::vector<double> count(s.channels, 0.0);
    for (std::size_t c = 0; c < s.channels; ++c) {
        for (std::size_t i = 0; i < s.h; ++i) {
            for (std::size_t j = 0; j < s.w; ++j) {
                const std::size_t idx = flat_index(s, c, i, j);
                if (a.mask.values[idx] == 0.0) continue;
                mean_a[c] += a.patch.values[idx];
                mean_b[c] += b.patch.values[idx];
                count[c] += 1.0;
            }
        }
    }
    double dist2 = 0.0;
    for (std::size_t c = 0; c < s.channels; ++c) {
        if (count[c] == 0.0) continue;
        const double diff = mean_a[c] / count[c] - mean_b[c] / count[c];
        dist2 += diff * diff;
    }
    return std::sqrt(dist2) >= 0.5;
}

std::pair<data::LabeledDataset, PoisonReport> poison_dataset(const data::LabeledDataset& train,
                                                             const AttackSpec& spec,
                                                             std::uint64_t seed) {
    data::validate(train);
    validate(spec.pattern);
    if (spec.target_class < 0 || spec.target_class >= train.num_classes())
        throw std::invalid_argument("poison: target class out of range");

    std::vector<std::size_t> sources;
    for (std::size_t i = 0; i < train.size(); ++i)
        if (train.labels[i] != spec.target_class) sources.push_back(i);
    if (spec.n_poison > sources.size())
        throw std::invalid_argument("poison: not enough source samples");

    Rng rng(derive_seed(seed, 0xA0));
    const auto picks = rng.sample_without_replacement(sources.size(), spec.n_poison);

    data::LabeledDataset out = train;
    PoisonReport report;
    for (std::size_t k : picks) {
        const std::size_t idx = sources[k];
        out.samples.push_back(embed(train.samples[idx], spec.pattern, train.bounded));
        out.labels.push_back(spec.target_class);
        report.source_indices.push_back(idx);
    }
    report.inserted_count = spec.n_poison;
    const std::size_t target_after = out.indices_of_class(spec.target_class).size();
    report.poisoning_rate =
        target_after == 0 ? 0.0
                          : static_cast<double>(spec.n_poison) / static_cast<double>(target_after);
    return {std::move(out), std::move(report)};
}

Tensor pgd_perturb(const nn::Classifier& f, const Tensor& x, int label, const PgdConfig& cfg,
                   Rng& rng) {
    if (cfg.eps < 0.0 || cfg.step_size < 0.0 || cfg.steps < 0)
        throw std::invalid_argument("pgd: negative parameter");
    if (x.size() != f.input_dim()) throw std::invalid_argument("pgd: dimension mismatch");

    Tensor cur = x;
    for (double& v : cur.values) v += rng.uniform(-cfg.eps, cfg.eps);
    auto project = [&](Tensor& t) {
        for (std::size_t i = 0; i < t.size(); ++i) {
            t.values[i] = std::clamp(t.values[i], x.values[i] - cfg.eps, x.values[i] + cfg.eps);
            t.values[i] = std::clamp(t.values[i], 0.0, 1.0);
        }
    };
    project(cur);

    const auto loss = nn::LossSpec::neg_log_posterior(label);
    for (int step = 0; step < cfg.steps; ++step) {
        if (nn::predict(f, cur.view()) != label) break;
        const auto g = nn::input_gradient(f, cur.view(), loss);
        // Ascend the cross-entropy of the original label.
        for (std::size_t i = 0; i < cur.size(); ++i)
            cur.values[i] += cfg.step_size * (g[i] > 0.0 ? 1.0 : (g[i] < 0.0 ? -1.0 : 0.0));
        project(cur);
    }
    return cur;
}

std::pair<data::LabeledDataset, PoisonReport> clean_label_poison(
    const data::LabeledDataset& train, const AttackSpec& spec, const nn::Classifier& surrogate,
    std::uint64_t seed) {
    data::validate(train);
    validate(spec.pattern);
    if (!spec.clean_label) throw std::invalid_argument("clean_label_poison: spec is not clean-label");
    if (surrogate.input_dim() != train.samples.front().size())
        throw std::invalid_argument("clean_label_poison: surrogate dimension mismatch");

    const auto sources = train.indices_of_class(spec.target_class);
    if (spec.n_poison > sources.size())
        throw std::invalid_argument("clean_label_poison: not enough target-class samples");

    Rng pick_rng(derive_seed(seed, 0xC1));
    const auto picks = pick_rng.sample_without_replacement(sources.size(), spec.n_poison);

    data::LabeledDataset out = train;
    PoisonReport report;
    for (std::size_t k = 0; k < picks.size(); ++k) {
        const std::size_t idx = sources[picks[k]];
        Rng pgd_rng(derive_seed(seed, 0xC2, k));
        Tensor perturbed =
            pgd_perturb(surrogate, train.samples[idx], spec.target_class, spec.pgd, pgd_rng);
        out.samples.push_back(embed(perturbed, spec.pattern, train.bounded));
        out.labels.push_back(spec.target_class);
        report.source_indices.push_back(idx);
    }
    report.inserted_count = spec.n_poison;
    const std::size_t target_after = out.indices_of_class(spec.target_class).size();
    report.poisoning_rate =
        target_after == 0 ? 0.0
                          : static_cast<double>(spec.n_poison) / static_cast<double>(target_after);
    return {std::move(out), std::move(report)};
}

double eval_asr(const nn::Classifier& f, const data::LabeledDataset& test,
                const AttackSpec& spec) {
    data::validate(test);
    std::size_t hits = 0, total = 0;
    for (std::size_t i = 0; i < test.size(); ++i) {
        if (test.labels[i] == spec.target_class) continue;
        const Tensor embedded = embed(test.samples[i], spec.pattern, test.bounded);
        if (nn::predict(f, embedded.view()) == spec.target_class) ++hits;
        ++total;
    }
    if (total == 0) throw std::invalid_argument("eval_asr: no non-target test samples");
    return static_cast<double>(hits) / static_cast<double>(total);
}

double eval_acc(const nn::Classifier& f, const data::LabeledDataset& test) {
    data::validate(test);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < test.size(); ++i)
        if (nn::predict(f, test.samples[i].view()) == test.labels[i]) ++hits;
    return static_cast<double>(hits) / static_cast<double>(test.size());
}

}  // namespace backlab::attack
