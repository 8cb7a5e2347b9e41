#include "backlab/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <stdexcept>

#include <json.hpp>

#include "backlab/rng.hpp"
#include "backlab/toy.hpp"

namespace backlab::harness {

using nlohmann::json;

namespace {

std::uint64_t require_seed(const json& j, const std::string& where) {
    if (!j.contains("seed"))
        throw ConfigError("config: missing seed in " + where +
                          " (every stochastic stage must declare one)");
    return j.at("seed").get<std::uint64_t>();
}

data::LatentDist parse_latent(const json& j, const std::string& where) {
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "gaussian")
        return data::LatentDist::gaussian(j.at("mean").get<double>(),
                                          j.at("stddev").get<double>());
    if (kind == "uniform")
        return data::LatentDist::uniform(j.at("lo").get<double>(), j.at("hi").get<double>());
    throw ConfigError("config: unknown latent distribution kind in " + where);
}

json latent_to_json(const data::LatentDist& d) {
    json j;
    if (d.kind == data::LatentDist::Kind::gaussian) {
        j["kind"] = "gaussian";
        j["mean"] = d.mean;
        j["stddev"] = d.stddev;
    } else {
        j["kind"] = "uniform";
        j["lo"] = d.lo;
        j["hi"] = d.hi;
    }
    return j;
}

nn::TrainConfig parse_train_opt(const json& j, const std::string& where) {
    nn::TrainConfig opt;
    opt.learning_rate = j.at("learning_rate").get<double>();
    opt.batch_size = j.at("batch_size").get<std::size_t>();
    opt.epochs = j.at("epochs").get<std::size_t>();
    const std::string name = j.at("optimizer").get<std::string>();
    if (name == "sgd")
        opt.optimizer = nn::TrainConfig::Optimizer::sgd;
    else if (name == "adam")
        opt.optimizer = nn::TrainConfig::Optimizer::adam;
    else
        throw ConfigError("config: unknown optimizer in " + where);
    opt.seed = require_seed(j, where);
    return opt;
}

json train_opt_to_json(const nn::TrainConfig& opt) {
    json j;
    j["learning_rate"] = opt.learning_rate;
    j["batch_size"] = opt.batch_size;
    j["epochs"] = opt.epochs;
    j["optimizer"] = opt.optimizer == nn::TrainConfig::Optimizer::sgd ? "sgd" : "adam";
    j["seed"] = opt.seed;
    return j;
}

}  // namespace

ExperimentConfig parse_config(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const std::exception& e) {
        throw ConfigError(std::string("config: invalid JSON: ") + e.what());
    }
    ExperimentConfig cfg;

    const json& jd = j.at("domain");
    const std::string kind = jd.at("kind").get<std::string>();
    if (kind == "idx") {
        cfg.domain.kind = DomainConfig::Kind::idx;
        cfg.domain.train_images = jd.at("train_images").get<std::string>();
        cfg.domain.train_labels = jd.at("train_labels").get<std::string>();
        cfg.domain.test_images = jd.at("test_images").get<std::string>();
        cfg.domain.test_labels = jd.at("test_labels").get<std::string>();
        if (jd.contains("pair")) {
            cfg.domain.mode = DomainConfig::Mode::pair;
            cfg.domain.class_a = jd.at("pair").at(0).get<int>();
            cfg.domain.class_b = jd.at("pair").at(1).get<int>();
        } else if (jd.contains("super_class")) {
            cfg.domain.mode = DomainConfig::Mode::super_class;
            cfg.domain.group0 = jd.at("super_class").at(0).get<std::vector<int>>();
            cfg.domain.group1 = jd.at("super_class").at(1).get<std::vector<int>>();
        } else if (jd.contains("subset")) {
            cfg.domain.mode = DomainConfig::Mode::subset;
            cfg.domain.subset = jd.at("subset").get<std::vector<int>>();
        } else {
            cfg.domain.mode = DomainConfig::Mode::full;
        }
    } else if (kind == "subspace") {
        cfg.domain.kind = DomainConfig::Kind::subspace;
        cfg.domain.n = jd.at("n").get<std::size_t>();
        cfg.domain.d = jd.at("d").get<std::size_t>();
        cfg.domain.g0 = parse_latent(jd.at("g0"), "domain.g0");
        cfg.domain.g1 = parse_latent(jd.at("g1"), "domain.g1");
        cfg.domain.n_per_class = jd.at("n_per_class").get<std::size_t>();
    } else {
        throw ConfigError("config: unknown domain kind: " + kind);
    }
    cfg.domain.seed = require_seed(jd, "domain");

    const json& jt = j.at("training");
    cfg.training.layer_dims = jt.at("hidden").get<std::vector<std::size_t>>();
    cfg.training.activation =
        nn::activation_from_string(jt.value("activation", std::string("relu")));
    cfg.training.opt = parse_train_opt(jt, "training");

    if (j.contains("attacks")) {
        for (const auto& ja : j.at("attacks")) {
            AttackConfig a;
            a.target_class = ja.at("target_class").get<int>();
            a.pattern_name = ja.at("pattern").get<std::string>();
            a.pattern_seed = ja.at("pattern_seed").get<std::uint64_t>();
            a.n_poison = ja.at("n_poison").get<std::size_t>();
            a.clean_label = ja.value("clean_label", false);
            if (ja.contains("pgd")) {
                a.pgd.eps = ja.at("pgd").at("eps").get<double>();
                a.pgd.steps = ja.at("pgd").at("steps").get<int>();
                a.pgd.step_size = ja.at("pgd").at("step_size").get<double>();
            }
            a.seed = require_seed(ja, "attack");
            cfg.attacks.push_back(std::move(a));
        }
    }

    if (j.contains("surrogate")) {
        SurrogateConfig s;
        s.train_fraction = j.at("surrogate").value("train_fraction", 0.5);
        s.opt = parse_train_opt(j.at("surrogate"), "surrogate");
        cfg.surrogate = s;
    }
    for (const auto& a : cfg.attacks)
        if (a.clean_label && !cfg.surrogate)
            throw ConfigError("config: clean-label attack requires a surrogate section");

    const json& jdet = j.at("detection");
    cfg.detection.re_kind = det::re_kind_from_string(jdet.value("re_kind", std::string("ap")));
    cfg.detection.images_per_class = jdet.value("images_per_class", std::size_t{20});
    cfg.detection.tau = jdet.value("tau", std::size_t{4});
    cfg.detection.with_baselines = jdet.value("with_baselines", false);
    if (jdet.contains("re")) {
        const json& jre = jdet.at("re");
        cfg.detection.re.step_size = jre.value("step_size", cfg.detection.re.step_size);
        cfg.detection.re.max_iters = jre.value("max_iters", cfg.detection.re.max_iters);
        cfg.detection.re.lambda = jre.value("lambda", cfg.detection.re.lambda);
        cfg.detection.re.init_sigma = jre.value("init_sigma", cfg.detection.re.init_sigma);
        cfg.detection.re.kappa = jre.value("kappa", cfg.detection.re.kappa);
    }
    cfg.detection.seed = require_seed(jdet, "detection");

    cfg.out_dir = j.value("out", std::string());
    return cfg;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_config(text);
}

std::string config_to_json(const ExperimentConfig& cfg) {
    json j;
    json jd;
    if (cfg.domain.kind == DomainConfig::Kind::idx) {
        jd["kind"] = "idx";
        jd["train_images"] = cfg.domain.train_images;
        jd["train_labels"] = cfg.domain.train_labels;
        jd["test_images"] = cfg.domain.test_images;
        jd["test_labels"] = cfg.domain.test_labels;
        if (cfg.domain.mode == DomainConfig::Mode::pair)
            jd["pair"] = {cfg.domain.class_a, cfg.domain.class_b};
        else if (cfg.domain.mode == DomainConfig::Mode::super_class)
            jd["super_class"] = {cfg.domain.group0, cfg.domain.group1};
        else if (cfg.domain.mode == DomainConfig::Mode::subset)
            jd["subset"] = cfg.domain.subset;
    } else {
        jd["kind"] = "subspace";
        jd["n"] = cfg.domain.n;
        jd["d"] = cfg.domain.d;
        jd["g0"] = latent_to_json(cfg.domain.g0);
        jd["g1"] = latent_to_json(cfg.domain.g1);
        jd["n_per_class"] = cfg.domain.n_per_class;
    }
    jd["seed"] = cfg.domain.seed;
    j["domain"] = std::move(jd);

    json jt = train_opt_to_json(cfg.training.opt);
    jt["hidden"] = cfg.training.layer_dims;
    jt["activation"] = nn::to_string(cfg.training.activation);
    j["training"] = std::move(jt);

    j["attacks"] = json::array();
    for (const auto& a : cfg.attacks) {
        json ja;
        ja["target_class"] = a.target_class;
        ja["pattern"] = a.pattern_name;
        ja["pattern_seed"] = a.pattern_seed;
        ja["n_poison"] = a.n_poison;
        ja["clean_label"] = a.clean_label;
        ja["pgd"] = {{"eps", a.pgd.eps}, {"steps", a.pgd.steps}, {"step_size", a.pgd.step_size}};
        ja["seed"] = a.seed;
        j["attacks"].push_back(std::move(ja));
    }
    if (cfg.surrogate) {
        json js = train_opt_to_json(cfg.surrogate->opt);
        js["train_fraction"] = cfg.surrogate->train_fraction;
        j["surrogate"] = std::move(js);
    }

    json jdet;
    jdet["re_kind"] = det::to_string(cfg.detection.re_kind);
    jdet["images_per_class"] = cfg.detection.images_per_class;
    jdet["tau"] = cfg.detection.tau;
    jdet["with_baselines"] = cfg.detection.with_baselines;
    jdet["re"] = {{"step_size", cfg.detection.re.step_size},
                  {"max_iters", cfg.detection.re.max_iters},
                  {"lambda", cfg.detection.re.lambda},
                  {"init_sigma", cfg.detection.re.init_sigma},
                  {"kappa", cfg.detection.re.kappa}};
    jdet["seed"] = cfg.detection.seed;
    j["detection"] = std::move(jdet);

    if (!cfg.out_dir.empty()) j["out"] = cfg.out_dir;
    return j.dump(2);
}

Domain load_domain(const DomainConfig& cfg) {
    Domain dom;
    if (cfg.kind == DomainConfig::Kind::idx) {
        data::LabeledDataset train = data::load_idx(cfg.train_images, cfg.train_labels);
        data::LabeledDataset test = data::load_idx(cfg.test_images, cfg.test_labels);
        switch (cfg.mode) {
            case DomainConfig::Mode::full:
                dom.train = std::move(train);
                dom.test = std::move(test);
                break;
            case DomainConfig::Mode::pair: {
                data::TwoClassDomainSpec spec;
                spec.mode = data::TwoClassDomainSpec::Mode::pair;
                spec.class_a = cfg.class_a;
                spec.class_b = cfg.class_b;
                spec.seed = cfg.seed;
                dom.train = data::make_two_class_domain(train, spec);
                dom.test = data::make_two_class_domain(test, spec);
                break;
            }
            case DomainConfig::Mode::super_class: {
                data::TwoClassDomainSpec spec;
                spec.mode = data::TwoClassDomainSpec::Mode::super_class;
                spec.group0 = cfg.group0;
                spec.group1 = cfg.group1;
                spec.seed = cfg.seed;
                dom.train = data::make_two_class_domain(train, spec);
                dom.test = data::make_two_class_domain(test, spec);
                break;
            }
            case DomainConfig::Mode::subset:
                dom.train = data::subset_classes(train, cfg.subset);
                dom.test = data::subset_classes(test, cfg.subset);
                break;
        }
    } else {
        const auto spec = data::make_subspace_spec(cfg.n, cfg.d, cfg.seed, cfg.g0, cfg.g1);
        dom.train = data::sample_subspace_domain(spec, cfg.n_per_class,
                                                 derive_seed(cfg.seed, 0x01));
        dom.test = data::sample_subspace_domain(spec, cfg.n_per_class,
                                                derive_seed(cfg.seed, 0x02));
    }
    data::validate(dom.train);
    data::validate(dom.test);
    return dom;
}

namespace {

std::vector<std::size_t> full_layer_dims(const TrainingConfig& training, std::size_t input,
                                         std::size_t k) {
    std::vector<std::size_t> dims;
    dims.push_back(input);
    for (std::size_t h : training.layer_dims) dims.push_back(h);
    dims.push_back(k);
    return dims;
}

}  // namespace

namespace {

struct PoisonStage {
    data::LabeledDataset poisoned;
    std::vector<attack::AttackSpec> specs;
    std::vector<attack::PoisonReport> reports;
};

// Builds every attack's pattern and insertion set against the clean
// training pool, so attacks never sample each other's insertions; poisons
// are appended afterwards. Clean-label attacks hold out a surrogate pool
// first.
PoisonStage apply_attacks(const ExperimentConfig& cfg, const Domain& domain) {
    PoisonStage out;
    const std::size_t input = domain.train.samples.front().size();
    const std::size_t k = static_cast<std::size_t>(domain.train.num_classes());

    std::optional<nn::Classifier> surrogate;
    data::LabeledDataset victim_train = domain.train;
    const bool needs_surrogate =
        std::any_of(cfg.attacks.begin(), cfg.attacks.end(),
                    [](const AttackConfig& a) { return a.clean_label; });
    if (needs_surrogate) {
        if (!cfg.surrogate) throw ConfigError("poison: clean-label attack without surrogate config");
        Rng rng(derive_seed(cfg.surrogate->opt.seed, 0x5f));
        std::vector<std::size_t> order(domain.train.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        rng.shuffle(order);
        const std::size_t cut = static_cast<std::size_t>(
            cfg.surrogate->train_fraction * static_cast<double>(order.size()));
        data::LabeledDataset pool, rest;
        pool.bounded = rest.bounded = domain.train.bounded;
        for (std::size_t i = 0; i < order.size(); ++i) {
            auto& dst = i < cut ? pool : rest;
            dst.samples.push_back(domain.train.samples[order[i]]);
            dst.labels.push_back(domain.train.labels[order[i]]);
        }
        surrogate = nn::train(pool, full_layer_dims(cfg.training, input, k), cfg.surrogate->opt,
                              cfg.training.activation);
        victim_train = std::move(rest);
    }

    for (const auto& a : cfg.attacks) {
        attack::AttackSpec spec;
        spec.target_class = a.target_class;
        spec.pattern = attack::make_pattern(a.pattern_name, victim_train.samples.front().shape,
                                            a.pattern_seed);
        spec.n_poison = a.n_poison;
        spec.clean_label = a.clean_label;
        spec.pgd = a.pgd;
        out.specs.push_back(std::move(spec));
    }
    for (std::size_t i = 0; i < out.specs.size(); ++i) {
        for (std::size_t l = i + 1; l < out.specs.size(); ++l) {
            if (out.specs[i].target_class == out.specs[l].target_class)
                throw ConfigError("attacks: duplicate target class");
            if (!attack::patterns_sufficiently_different(out.specs[i].pattern,
                                                         out.specs[l].pattern))
                throw ConfigError("attacks: patterns are not sufficiently different");
        }
    }

    out.poisoned = victim_train;
    for (std::size_t i = 0; i < out.specs.size(); ++i) {
        auto [with_poison, report] =
            out.specs[i].clean_label
                ? attack::clean_label_poison(victim_train, out.specs[i], *surrogate,
                                             cfg.attacks[i].seed)
                : attack::poison_dataset(victim_train, out.specs[i], cfg.attacks[i].seed);
        for (std::size_t s = victim_train.size(); s < with_poison.size(); ++s) {
            out.poisoned.samples.push_back(std::move(with_poison.samples[s]));
            out.poisoned.labels.push_back(with_poison.labels[s]);
        }
        out.reports.push_back(std::move(report));
    }
    return out;
}

}  // namespace

TrainedInstance train_instance(const ExperimentConfig& cfg) {
    TrainedInstance inst;
    inst.domain = load_domain(cfg.domain);
    const std::size_t input = inst.domain.train.samples.front().size();
    const std::size_t k = static_cast<std::size_t>(inst.domain.train.num_classes());

    PoisonStage ps = apply_attacks(cfg, inst.domain);
    inst.model = nn::train(ps.poisoned, full_layer_dims(cfg.training, input, k), cfg.training.opt,
                           cfg.training.activation);
    for (const auto& spec : ps.specs)
        inst.asr.push_back(attack::eval_asr(inst.model, inst.domain.test, spec));
    inst.acc = attack::eval_acc(inst.model, inst.domain.test);
    inst.poison = std::move(ps.reports);
    return inst;
}

std::vector<std::vector<Tensor>> detection_sets(const Domain& domain,
                                                const DetectionConfig& det_cfg,
                                                std::size_t images_per_class) {
    const int k = domain.test.num_classes();
    std::vector<std::vector<Tensor>> sets(static_cast<std::size_t>(k));
    for (int c = 0; c < k; ++c) {
        const auto idx = domain.test.indices_of_class(c);
        if (idx.size() < images_per_class)
            throw std::invalid_argument("detection_sets: not enough test images for class " +
                                        std::to_string(c));
        Rng rng(derive_seed(det_cfg.seed, 0x5e, static_cast<std::uint64_t>(c)));
        const auto picks = rng.sample_without_replacement(idx.size(), images_per_class);
        for (std::size_t p : picks)
            sets[static_cast<std::size_t>(c)].push_back(domain.test.samples[idx[p]]);
    }
    return sets;
}

det::DetectionReport detect_instance(const nn::Classifier& f, const Domain& domain,
                                     const DetectionConfig& det_cfg, int jobs,
                                     std::size_t images_per_class_override) {
    const std::size_t count =
        images_per_class_override ? images_per_class_override : det_cfg.images_per_class;
    const auto sets = detection_sets(domain, det_cfg, count);
    det::DetectOptions opts;
    opts.et.re_kind = det_cfg.re_kind;
    opts.et.re = det_cfg.re;
    opts.et.tau = det_cfg.tau;
    opts.et.bounded = domain.train.bounded;
    opts.et.jobs = jobs;
    opts.with_baselines = det_cfg.with_baselines;
    opts.seed = det_cfg.seed;
    return det::detect_multi_class(f, sets, opts);
}

std::string report_to_json(const RunReport& report) {
    json j;
    j["asr"] = report.asr;
    j["acc"] = report.acc;
    j["poison"] = json::array();
    for (const auto& p : report.poison) {
        j["poison"].push_back({{"inserted_count", p.inserted_count},
                               {"poisoning_rate", p.poisoning_rate},
                               {"source_indices", p.source_indices}});
    }
    j["detection"] = json::parse(det::report_to_json(report.detection));
    j["seconds"] = report.seconds;
    if (!report.failed_stage.empty()) {
        j["failed_stage"] = report.failed_stage;
        j["error"] = report.error;
    }
    if (!report.artifacts.empty()) {
        json ja = json::object();
        for (const auto& [name, path] : report.artifacts) ja[name] = path;
        j["artifacts"] = std::move(ja);
    }
    if (!report.config_echo.empty()) j["config_echo"] = json::parse(report.config_echo);
    return j.dump(2);
}

void write_text_file(const std::string& path, const std::string& text) {
    const auto parent = std::filesystem::path(path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << text << "\n";
}

RunReport run_pipeline(const ExperimentConfig& cfg, int jobs) {
    RunReport report;
    report.config_echo = config_to_json(cfg);
    const auto t0 = std::chrono::steady_clock::now();
    std::string stage = "load_domain";
    try {
        Domain dom = load_domain(cfg.domain);
        const std::size_t input = dom.train.samples.front().size();
        const std::size_t k = static_cast<std::size_t>(dom.train.num_classes());

        stage = "poison";
        PoisonStage ps = apply_attacks(cfg, dom);
        report.poison = ps.reports;

        stage = "train";
        const nn::Classifier model = nn::train(ps.poisoned, full_layer_dims(cfg.training, input, k),
                                               cfg.training.opt, cfg.training.activation);

        stage = "evaluate";
        for (const auto& spec : ps.specs)
            report.asr.push_back(attack::eval_asr(model, dom.test, spec));
        report.acc = attack::eval_acc(model, dom.test);

        stage = "detect";
        report.detection = detect_instance(model, dom, cfg.detection, jobs);
        report.detection.config_echo = report.config_echo;

        if (!cfg.out_dir.empty()) {
            stage = "persist";
            std::filesystem::create_directories(cfg.out_dir);
            nn::save_classifier(model, cfg.out_dir + "/model.json");
            write_text_file(cfg.out_dir + "/detection.json",
                            det::report_to_json(report.detection));
            report.artifacts.emplace_back("model", cfg.out_dir + "/model.json");
            report.artifacts.emplace_back("detection", cfg.out_dir + "/detection.json");
        }
    } catch (const std::exception& e) {
        report.failed_stage = stage;
        report.error = e.what();
    }
    report.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!cfg.out_dir.empty() && report.failed_stage != "persist") {
        try {
            std::filesystem::create_directories(cfg.out_dir);
            write_text_file(cfg.out_dir + "/report.json", report_to_json(report));
        } catch (const std::exception&) {
            // report writing is best-effort
        }
    }
    return report;
}

namespace {

bool verdict_correct(const ExperimentConfig& cfg, const det::DetectionReport& report) {
    std::set<int> expected;
    for (const auto& a : cfg.attacks) expected.insert(a.target_class);
    if (expected.empty()) return !report.attacked;
    const std::set<int> got(report.ba_targets.begin(), report.ba_targets.end());
    return report.attacked && got == expected;
}

}  // namespace

std::vector<SweepImagesRow> sweep_images(const std::vector<ExperimentConfig>& instances,
                                         const std::vector<std::size_t>& counts, int jobs) {
    if (instances.empty() || counts.empty())
        throw std::invalid_argument("sweep_images: empty instances or counts");
    std::vector<TrainedInstance> trained;
    trained.reserve(instances.size());
    for (const auto& cfg : instances) trained.push_back(train_instance(cfg));

    std::vector<SweepImagesRow> rows;
    for (std::size_t count : counts) {
        SweepImagesRow row;
        row.count = count;
        for (std::size_t i = 0; i < instances.size(); ++i) {
            const auto report = detect_instance(trained[i].model, trained[i].domain,
                                                instances[i].detection, jobs, count);
            if (verdict_correct(instances[i], report)) ++row.correct;
            ++row.total;
        }
        row.accuracy = static_cast<double>(row.correct) / static_cast<double>(row.total);
        rows.push_back(row);
    }
    return rows;
}

PatienceSweepResult sweep_patience(const ExperimentConfig& cfg,
                                   const std::vector<std::size_t>& taus,
                                   const std::string& csv_path, int jobs) {
    if (taus.empty()) throw std::invalid_argument("sweep_patience: empty tau list");
    const std::size_t tau_max = *std::max_element(taus.begin(), taus.end());

    TrainedInstance inst = train_instance(cfg);
    const auto sets = detection_sets(inst.domain, cfg.detection, cfg.detection.images_per_class);
    const std::size_t k = sets.size();

    // Keep only correctly classified samples, as the detector itself does.
    std::vector<std::vector<Tensor>> usable(k);
    for (std::size_t c = 0; c < k; ++c)
        for (const auto& x : sets[c])
            if (nn::predict(inst.model, x.view()) == static_cast<int>(c))
                usable[c].push_back(x);

    PatienceSweepResult result;
    result.taus = taus;
    result.et_by_tau.assign(taus.size(), std::vector<double>(k, 0.0));
    std::string csv = "class,sample,attempt,set_size,p\n";

    for (std::size_t t = 0; t < k; ++t) {
        std::vector<Tensor> pooled;
        for (std::size_t c = 0; c < k; ++c) {
            if (c == t) continue;
            for (const auto& x : usable[c]) pooled.push_back(x);
        }
        det::EtConfig et_cfg;
        et_cfg.re_kind = cfg.detection.re_kind;
        et_cfg.re = cfg.detection.re;
        et_cfg.re.target_class = static_cast<int>(t);
        et_cfg.re.seed = derive_seed(cfg.detection.seed, 0xD1, t);
        et_cfg.tau = tau_max;
        et_cfg.bounded = inst.domain.train.bounded;
        et_cfg.jobs = jobs;
        det::EtTrace trace;
        (void)det::estimate_et(inst.model, pooled, et_cfg, &trace);

        const std::size_t n = pooled.size();
        for (std::size_t s = 0; s < trace.sizes.size(); ++s) {
            const auto& sizes = trace.sizes[s];
            for (std::size_t a = 0; a < sizes.size(); ++a) {
                csv += std::to_string(t) + "," + std::to_string(s) + "," + std::to_string(a + 1) +
                       "," + std::to_string(sizes[a]) + "," +
                       std::to_string(static_cast<double>(sizes[a]) /
                                      static_cast<double>(n - 1)) +
                       "\n";
            }
        }

        // Replay the stopping rule for each requested tau on the recorded
        // growth curves; a smaller tau always stops within the recorded
        // prefix.
        for (std::size_t ti = 0; ti < taus.size(); ++ti) {
            const std::size_t tau = taus[ti];
            double sum_p = 0.0;
            for (const auto& sizes : trace.sizes) {
                const std::size_t bound = (n - 1) * tau;
                std::size_t patience = 0, prev = 0, stopped_size = sizes.empty() ? 0 : sizes.back();
                for (std::size_t a = 0; a < sizes.size(); ++a) {
                    patience = sizes[a] > prev ? 0 : patience + 1;
                    prev = sizes[a];
                    if (patience >= tau || a + 1 >= bound) {
                        stopped_size = sizes[a];
                        break;
                    }
                }
                sum_p += static_cast<double>(stopped_size) / static_cast<double>(n - 1);
            }
            result.et_by_tau[ti][t] = sum_p / static_cast<double>(trace.sizes.size());
        }
    }

    if (!csv_path.empty()) {
        write_text_file(csv_path, csv);
        result.csv_path = csv_path;
    }
    return result;
}

RocResult compute_roc(const std::vector<double>& target_stats,
                      const std::vector<double>& nontarget_stats) {
    if (target_stats.empty() || nontarget_stats.empty())
        throw std::invalid_argument("compute_roc: empty statistic list");
    std::set<double> pooled(target_stats.begin(), target_stats.end());
    pooled.insert(nontarget_stats.begin(), nontarget_stats.end());

    RocResult res;
    if (pooled.size() == 1) {
        res.degenerate = true;
        res.auc = 0.5;
        res.points = {{0.0, 0.0}, {1.0, 1.0}};
        return res;
    }

    std::vector<double> thresholds(pooled.begin(), pooled.end());
    std::sort(thresholds.begin(), thresholds.end(), std::greater<double>());
    res.points.emplace_back(0.0, 0.0);
    for (double th : thresholds) {
        const auto frac_ge = [th](const std::vector<double>& v) {
            std::size_t c = 0;
            for (double x : v)
                if (x >= th) ++c;
            return static_cast<double>(c) / static_cast<double>(v.size());
        };
        res.points.emplace_back(frac_ge(nontarget_stats), frac_ge(target_stats));
    }
    res.points.emplace_back(1.0, 1.0);
    std::sort(res.points.begin(), res.points.end());

    double auc = 0.0;
    for (std::size_t i = 1; i < res.points.size(); ++i) {
        const auto& [x0, y0] = res.points[i - 1];
        const auto& [x1, y1] = res.points[i];
        auc += (x1 - x0) * 0.5 * (y0 + y1);
    }
    res.auc = auc;
    return res;
}

std::vector<CsSweepRow> cs_class_sweep(const data::LabeledDataset& train,
                                       const data::LabeledDataset& test,
                                       const std::vector<int>& class_counts,
                                       const TrainingConfig& training,
                                       const DetectionConfig& detection, std::uint64_t seed) {
    const int available = train.num_classes();
    for (int k : class_counts)
        if (k < 2 || k > available)
            throw std::invalid_argument("cs_class_sweep: class count out of range");

    std::vector<CsSweepRow> rows;
    for (std::size_t ki = 0; ki < class_counts.size(); ++ki) {
        const int k = class_counts[ki];
        std::vector<int> all(available);
        for (int c = 0; c < available; ++c) all[c] = c;
        Rng rng(derive_seed(seed, 0xC5, ki));
        rng.shuffle(all);
        std::vector<int> chosen(all.begin(), all.begin() + k);
        std::sort(chosen.begin(), chosen.end());

        const auto sub_train = data::subset_classes(train, chosen);
        const auto sub_test = data::subset_classes(test, chosen);
        Domain dom{sub_train, sub_test};

        nn::TrainConfig opt = training.opt;
        opt.seed = derive_seed(training.opt.seed, 0xC6, ki);
        const auto model = nn::train(
            sub_train, full_layer_dims(training, sub_train.samples.front().size(),
                                       static_cast<std::size_t>(k)),
            opt, training.activation);

        const auto sets = detection_sets(dom, detection, detection.images_per_class);
        double sum_cs = 0.0;
        int used = 0;
        for (int t = 0; t < k; ++t) {
            reveng::ReConfig re = detection.re;
            re.target_class = t;
            re.seed = derive_seed(detection.seed, 0xC7, ki, static_cast<std::uint64_t>(t));
            sum_cs += reveng::cs_statistic(model, t, sets, re).cs;
            ++used;
        }
        rows.push_back({k, sum_cs / used});
    }
    return rows;
}

std::string toy_verify_json(std::size_t n_pairs, std::uint64_t seed) {
    struct Row {
        std::string name;
        data::LatentDist dist;
    };
    // z such that Phi(-z) = 0.25
    const double z25 = 0.674489750196082;
    const std::vector<Row> rows = {
        {"uniform(1,2)  G0=0.00", data::LatentDist::uniform(1.0, 2.0)},
        {"gaussian(0.674,1)  G0=0.25", data::LatentDist::gaussian(z25, 1.0)},
        {"gaussian(0,1)  G0=0.50", data::LatentDist::gaussian(0.0, 1.0)},
        {"gaussian(-0.674,1)  G0=0.75", data::LatentDist::gaussian(-z25, 1.0)},
        {"uniform(-2,-1)  G0=1.00", data::LatentDist::uniform(-2.0, -1.0)},
    };
    const auto tc = toy::make_toy_classifier(2, 1, derive_seed(seed, 0x7c));

    json out = json::array();
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const double g0 = rows[i].dist.cdf_at_zero();
        const double closed = toy::et_closed_form_d1(g0);
        const auto mc = toy::et_monte_carlo(tc, rows[i].dist, n_pairs,
                                            derive_seed(seed, 0x7d, i));
        const double tol = std::max(0.01, 3.0 * mc.std_err);
        json row;
        row["distribution"] = rows[i].name;
        row["g0"] = g0;
        row["closed_form"] = closed;
        row["mc_estimate"] = mc.et_hat;
        row["std_err"] = mc.std_err;
        row["pass"] = std::abs(closed - mc.et_hat) <= tol;
        out.push_back(std::move(row));
    }
    return out.dump(2);
}

}  // namespace backlab::harness
