#include <doctest.h>

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

#include "backlab/attack.hpp"
#include "backlab/data.hpp"
#include "backlab/detector.hpp"
#include "backlab/nn.hpp"
#include "backlab/rng.hpp"

using namespace backlab;

namespace {

const std::string kDataDir = BACKLAB_DATA_DIR;

struct Instance {
    nn::Classifier model;
    data::LabeledDataset test;
};

Instance make_instance(bool attacked, std::uint64_t seed) {
    const auto train_all = data::load_idx(kDataDir + "/digits-train-images-idx3-ubyte",
                                          kDataDir + "/digits-train-labels-idx1-ubyte");
    const auto test_all = data::load_idx(kDataDir + "/digits-test-images-idx3-ubyte",
                                         kDataDir + "/digits-test-labels-idx1-ubyte");
    const auto spec = data::random_super_class_spec(10, seed);
    auto train = data::make_two_class_domain(train_all, spec);
    Instance inst;
    inst.test = data::make_two_class_domain(test_all, spec);
    if (attacked) {
        attack::AttackSpec aspec;
        aspec.target_class = 1;
        aspec.pattern = attack::make_pattern("pixel", {8, 8}, derive_seed(seed, 1));
        aspec.n_poison = 140;
        train = attack::poison_dataset(train, aspec, derive_seed(seed, 2)).first;
    }
    nn::TrainConfig tc;
    tc.learning_rate = 0.05;
    tc.batch_size = 16;
    tc.epochs = 300;
    tc.optimizer = nn::TrainConfig::Optimizer::sgd;
    tc.seed = derive_seed(seed, 3);
    inst.model = nn::train(train, {64, 96, 64, 32, 2}, tc);
    return inst;
}

std::vector<std::vector<Tensor>> pick_sets(const Instance& inst, std::size_t per_class,
                                           std::uint64_t seed) {
    std::vector<std::vector<Tensor>> sets(2);
    for (int c = 0; c < 2; ++c) {
        const auto idx = inst.test.indices_of_class(c);
        Rng rng(derive_seed(seed, c));
        for (std::size_t p : rng.sample_without_replacement(idx.size(), per_class))
            sets[static_cast<std::size_t>(c)].push_back(inst.test.samples[idx[p]]);
    }
    return sets;
}

det::EtConfig base_et_config(int target, std::uint64_t seed) {
    det::EtConfig cfg;
    cfg.re_kind = det::ReKind::ap;
    cfg.re.step_size = 0.005;
    cfg.re.max_iters = 6000;
    cfg.re.init_sigma = 0.1;
    cfg.re.target_class = target;
    cfg.re.seed = seed;
    cfg.tau = 4;
    cfg.bounded = true;
    return cfg;
}

std::vector<Tensor> usable_of_class(const Instance& inst,
                                    const std::vector<std::vector<Tensor>>& sets, int cls) {
    std::vector<Tensor> out;
    for (const auto& x : sets[static_cast<std::size_t>(cls)])
        if (nn::predict(inst.model, x.view()) == cls) out.push_back(x);
    return out;
}

}  // namespace

TEST_CASE("pair counting identity holds on random transfer matrices") {
    Rng rng(1234);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 2 + rng.below(18);
        det::EtEstimate est;
        est.matrix = det::TransferMatrix(n);
        est.p.resize(n);
        double sum = 0.0;
        for (std::size_t a = 0; a < n; ++a) {
            std::size_t cnt = 0;
            for (std::size_t b = 0; b < n; ++b) {
                if (a == b) continue;
                if (rng.uniform() < 0.4) {
                    est.matrix.set(a, b);
                    ++cnt;
                }
            }
            est.p[a] = static_cast<double>(cnt) / static_cast<double>(n - 1);
            sum += est.p[a];
        }
        est.et = sum / static_cast<double>(n);
        const auto counts = est.matrix.pair_counts();
        CHECK(counts.total == n * (n - 1) / 2);
        est.pmt_hat = static_cast<double>(counts.mutual) / static_cast<double>(counts.total);
        est.pnt_hat = static_cast<double>(counts.neither) / static_cast<double>(counts.total);
        CHECK(det::identity_residual(est) <= 1e-12);
    }
}

TEST_CASE("estimate_et on an attacked instance finds the target") {
    const auto inst = make_instance(true, 41);
    const auto sets = pick_sets(inst, 20, 77);
    const auto usable = usable_of_class(inst, sets, 0);
    REQUIRE(usable.size() >= 2);

    auto cfg = base_et_config(1, 505);
    const auto est = det::estimate_et(inst.model, usable, cfg);
    CHECK(est.et > 0.5);
    CHECK(det::identity_residual(est) <= 1e-12);
    for (double p : est.p) {
        CHECK(p >= 0.0);
        CHECK(p <= 1.0);
    }
    // The loop bound: at most (N-1)*tau attempts per sample.
    for (std::size_t a : est.attempts_used) CHECK(a <= (usable.size() - 1) * cfg.tau);
}

TEST_CASE("estimate_et requires at least two usable samples") {
    const auto inst = make_instance(false, 42);
    const auto sets = pick_sets(inst, 20, 78);
    auto cfg = base_et_config(1, 1);
    const std::vector<Tensor> single = {sets[0][0]};
    CHECK_THROWS_AS((void)det::estimate_et(inst.model, single, cfg), std::invalid_argument);
}

TEST_CASE("estimate_et rejects samples predicted to the target") {
    const auto inst = make_instance(false, 43);
    const auto sets = pick_sets(inst, 10, 79);
    auto cfg = base_et_config(0, 2);  // class-0 samples ARE the target here
    const auto usable = usable_of_class(inst, sets, 0);
    REQUIRE(usable.size() >= 2);
    CHECK_THROWS_AS((void)det::estimate_et(inst.model, usable, cfg), std::invalid_argument);
}

TEST_CASE("increasing the patience never decreases ET") {
    const auto inst = make_instance(true, 44);
    const auto sets = pick_sets(inst, 12, 80);
    const auto usable = usable_of_class(inst, sets, 0);
    REQUIRE(usable.size() >= 2);

    auto cfg = base_et_config(1, 3);
    cfg.re.max_iters = 3000;
    cfg.tau = 2;
    const auto low = det::estimate_et(inst.model, usable, cfg);
    cfg.tau = 5;
    const auto high = det::estimate_et(inst.model, usable, cfg);
    CHECK(high.et >= low.et - 1e-12);
    // Growth is monotone: every transfer found at tau=2 persists at tau=5.
    for (std::size_t a = 0; a < usable.size(); ++a)
        for (std::size_t b = 0; b < usable.size(); ++b)
            if (a != b && low.matrix.get(a, b)) CHECK(high.matrix.get(a, b));
}

TEST_CASE("parallel and serial estimation produce identical results") {
    const auto inst = make_instance(true, 45);
    const auto sets = pick_sets(inst, 10, 81);
    const auto usable = usable_of_class(inst, sets, 0);
    auto cfg = base_et_config(1, 4);
    cfg.re.max_iters = 3000;
    cfg.jobs = 1;
    const auto serial = det::estimate_et(inst.model, usable, cfg);
    cfg.jobs = 8;
    const auto parallel = det::estimate_et(inst.model, usable, cfg);
    CHECK(serial.p == parallel.p);
    CHECK(serial.matrix.cells == parallel.matrix.cells);
    CHECK(serial.et == parallel.et);
}

TEST_CASE("detect_two_class equals detect_multi_class with K=2 bit for bit") {
    const auto inst = make_instance(true, 46);
    const auto sets = pick_sets(inst, 10, 82);
    det::DetectOptions opts;
    opts.et = base_et_config(0, 0);
    opts.et.re.max_iters = 3000;
    opts.seed = 909;
    const auto a = det::detect_two_class(inst.model, sets[0], sets[1], opts);
    const auto b = det::detect_multi_class(inst.model, {sets[0], sets[1]}, opts);
    REQUIRE(a.per_class.size() == b.per_class.size());
    for (std::size_t i = 0; i < a.per_class.size(); ++i) {
        CHECK(a.per_class[i].et == b.per_class[i].et);
        CHECK(a.per_class[i].p == b.per_class[i].p);
    }
    CHECK(a.ba_targets == b.ba_targets);
}

TEST_CASE("detection report JSON carries the contract fields") {
    const auto inst = make_instance(true, 47);
    const auto sets = pick_sets(inst, 8, 83);
    det::DetectOptions opts;
    opts.et = base_et_config(0, 0);
    opts.et.re.max_iters = 3000;
    opts.seed = 4242;
    auto report = det::detect_two_class(inst.model, sets[0], sets[1], opts);
    report.config_echo = "{\"tau\": 4}";
    const auto text = det::report_to_json(report);
    const auto j = nlohmann::json::parse(text);
    CHECK(j.contains("attacked"));
    CHECK(j.contains("ba_targets"));
    CHECK(j.at("classes").size() == 2);
    CHECK(j.at("classes").at(0).contains("et"));
    CHECK(j.at("classes").at(0).contains("p"));
    CHECK(j.at("classes").at(0).contains("n_used"));
    CHECK(j.at("seed").get<std::uint64_t>() == 4242);
    CHECK(j.at("config_echo").at("tau").get<int>() == 4);
    // Strict threshold: every listed target has ET > 1/2.
    for (int t : report.ba_targets) {
        const auto& cr = report.per_class[static_cast<std::size_t>(t)];
        CHECK(cr.et > 0.5);
    }
    CHECK(report.attacked == !report.ba_targets.empty());
}

TEST_CASE("baseline stats separate the backdoor target on an attacked model") {
    const auto inst = make_instance(true, 48);
    const auto sets = pick_sets(inst, 8, 84);
    std::vector<std::vector<Tensor>> usable(2);
    usable[0] = usable_of_class(inst, sets, 0);
    usable[1] = usable_of_class(inst, sets, 1);

    reveng::ReConfig re;
    re.step_size = 0.005;
    re.max_iters = 6000;
    re.init_sigma = 0.1;
    re.seed = 31;
    const auto toward_target = det::baseline_stats(inst.model, usable, 1, re);
    const auto toward_other = det::baseline_stats(inst.model, usable, 0, re);
    REQUIRE(toward_target.l2_norm.has_value());
    REQUIRE(toward_other.l2_norm.has_value());
    // The group perturbation toward the true target exploits the backdoor
    // and lands well below the non-target direction.
    CHECK(*toward_target.l2_norm < *toward_other.l2_norm);
}

TEST_CASE("et estimation with mask/patch reverse-engineering finds a patch backdoor") {
    // Plant a single-pixel patch backdoor and run the detector in its
    // patch-replacement configuration.
    const auto train_all = data::load_idx(kDataDir + "/digits-train-images-idx3-ubyte",
                                          kDataDir + "/digits-train-labels-idx1-ubyte");
    const auto test_all = data::load_idx(kDataDir + "/digits-test-images-idx3-ubyte",
                                         kDataDir + "/digits-test-labels-idx1-ubyte");
    const auto spec = data::random_super_class_spec(10, 314);
    auto train = data::make_two_class_domain(train_all, spec);
    const auto test = data::make_two_class_domain(test_all, spec);

    attack::BackdoorPattern bp;
    bp.kind = attack::BackdoorPattern::Kind::patch;
    bp.mask = Tensor::zeros({8, 8});
    bp.patch = Tensor::zeros({8, 8});
    bp.mask.values[7] = 1.0;
    bp.patch.values[7] = 1.0;
    attack::AttackSpec aspec;
    aspec.target_class = 1;
    aspec.pattern = bp;
    aspec.n_poison = 140;
    train = attack::poison_dataset(train, aspec, 315).first;

    nn::TrainConfig tc;
    tc.learning_rate = 0.05;
    tc.batch_size = 16;
    tc.epochs = 300;
    tc.optimizer = nn::TrainConfig::Optimizer::sgd;
    tc.seed = 316;
    const auto model = nn::train(train, {64, 96, 64, 32, 2}, tc);
    REQUIRE(attack::eval_asr(model, test, aspec) > 0.9);

    std::vector<Tensor> usable;
    for (std::size_t i = 0; i < test.size() && usable.size() < 8; ++i) {
        if (test.labels[i] != 0) continue;
        if (nn::predict(model, test.samples[i].view()) == 0) usable.push_back(test.samples[i]);
    }
    REQUIRE(usable.size() == 8);

    det::EtConfig cfg;
    cfg.re_kind = det::ReKind::pr;
    cfg.re.step_size = 0.05;
    cfg.re.max_iters = 2000;
    cfg.re.lambda = 1e-2;
    cfg.re.target_class = 1;
    cfg.re.seed = 317;
    cfg.tau = 2;
    cfg.jobs = 2;
    const auto est = det::estimate_et(model, usable, cfg);
    CHECK(det::identity_residual(est) <= 1e-12);
    CHECK(est.et > 0.5);
}

TEST_CASE("detection on model-inversion images separates attacked from clean") {
    const auto attacked = make_instance(true, 51);
    const auto clean = make_instance(false, 51);

    auto synthesize = [&](const nn::Classifier& model) {
        std::vector<std::vector<Tensor>> sets(2);
        reveng::ReConfig cfg;
        cfg.step_size = 0.05;
        cfg.max_iters = 5000;
        cfg.init_sigma = 0.05;
        for (int cls = 0; cls < 2; ++cls) {
            for (int i = 0; i < 8; ++i) {
                cfg.seed = derive_seed(52, cls, i);
                const auto res = reveng::model_inversion_synthesize(model, cls, cfg, {8, 8}, true);
                if (res.success) sets[static_cast<std::size_t>(cls)].push_back(res.image);
            }
        }
        return sets;
    };

    det::DetectOptions opts;
    opts.et = base_et_config(0, 0);
    opts.et.re.max_iters = 3000;
    opts.et.jobs = 2;
    opts.seed = 53;

    const auto sets_a = synthesize(attacked.model);
    REQUIRE(sets_a[0].size() >= 2);
    REQUIRE(sets_a[1].size() >= 2);
    const auto rep_a = det::detect_multi_class(attacked.model, sets_a, opts);

    const auto sets_c = synthesize(clean.model);
    REQUIRE(sets_c[0].size() >= 2);
    REQUIRE(sets_c[1].size() >= 2);
    const auto rep_c = det::detect_multi_class(clean.model, sets_c, opts);

    const double attacked_target_et = rep_a.per_class[1].et;
    double clean_max = 0.0;
    for (const auto& cr : rep_c.per_class) clean_max = std::max(clean_max, cr.et);
    CHECK(attacked_target_et > 0.5);
    CHECK(attacked_target_et > clean_max);
}

TEST_CASE("mad anomaly detection") {
    // All-equal statistics: degenerate, no anomalies.
    const auto flat = det::mad_anomaly({1.0, 1.0, 1.0, 1.0, 1.0});
    CHECK(flat.degenerate);
    CHECK(flat.anomalous.empty());

    // One extreme low outlier among five: median 10, MAD 1,
    // score(2) = 8/1.4826 = 5.40 > 2 and it lies below the median.
    const auto one = det::mad_anomaly({10.0, 9.0, 2.0, 11.0, 10.5});
    REQUIRE(one.anomalous.size() == 1);
    CHECK(one.anomalous[0] == 2);
    CHECK(one.scores[2] == doctest::Approx(8.0 / 1.4826).epsilon(1e-9));

    // Side matters: the same data with side=above flags nothing.
    const auto above = det::mad_anomaly({10.0, 9.0, 2.0, 11.0, 10.5}, 2.0, det::MadSide::above);
    CHECK(above.anomalous.empty());

    CHECK_THROWS_AS((void)det::mad_anomaly({1.0, 2.0}), std::invalid_argument);
}
