// Command-line front end: config-driven pipelines, the sweep experiments,
// and the toy-model verification table.
//
// Exit codes: 0 success, 1 stage failure, 2 config error.

#include <cstdint>
#include <exception>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "backlab/harness.hpp"

namespace {

using backlab::harness::ConfigError;
using backlab::harness::ExperimentConfig;
using nlohmann::json;

constexpr int kExitOk = 0;
constexpr int kExitStageFailure = 1;
constexpr int kExitConfigError = 2;

struct GlobalArgs {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out_dir;
    int jobs = 1;
    std::optional<double> re_step, re_lambda, re_init_sigma;
    std::optional<std::size_t> re_max_iters;
};

ExperimentConfig load_experiment(const GlobalArgs& args) {
    if (args.config_path.empty()) throw ConfigError("--config is required for this subcommand");
    ExperimentConfig cfg = backlab::harness::load_config(args.config_path);
    if (!args.out_dir.empty()) cfg.out_dir = args.out_dir;
    if (args.re_step) cfg.detection.re.step_size = *args.re_step;
    if (args.re_max_iters) cfg.detection.re.max_iters = *args.re_max_iters;
    if (args.re_lambda) cfg.detection.re.lambda = *args.re_lambda;
    if (args.re_init_sigma) cfg.detection.re.init_sigma = *args.re_init_sigma;
    if (args.seed) {
        // A CLI seed reseeds every stochastic stage from one root value.
        cfg.domain.seed = backlab::derive_seed(*args.seed, 1);
        cfg.training.opt.seed = backlab::derive_seed(*args.seed, 2);
        for (std::size_t i = 0; i < cfg.attacks.size(); ++i) {
            cfg.attacks[i].seed = backlab::derive_seed(*args.seed, 3, i);
            cfg.attacks[i].pattern_seed = backlab::derive_seed(*args.seed, 4, i);
        }
        if (cfg.surrogate) cfg.surrogate->opt.seed = backlab::derive_seed(*args.seed, 5);
        cfg.detection.seed = backlab::derive_seed(*args.seed, 6);
    }
    return cfg;
}

void emit(const GlobalArgs& args, const std::string& filename, const std::string& text) {
    if (args.out_dir.empty()) {
        std::cout << text << std::endl;
    } else {
        backlab::harness::write_text_file(args.out_dir + "/" + filename, text);
        std::cout << "wrote " << args.out_dir << "/" << filename << std::endl;
    }
}

int report_exit(const backlab::harness::RunReport& report) {
    if (!report.failed_stage.empty()) {
        std::cerr << "stage failed: " << report.failed_stage << ": " << report.error << std::endl;
        return kExitStageFailure;
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"backdoor-attack laboratory: train, poison, and detect with the"
                 " expected-transferability statistic"};
    app.require_subcommand(1);
    app.fallthrough();  // global flags may follow the subcommand

    GlobalArgs args;
    app.add_option("--config", args.config_path, "experiment config (JSON)");
    std::uint64_t seed_value = 0;
    auto* seed_opt = app.add_option("--seed", seed_value, "root seed overriding config seeds");
    app.add_option("--out", args.out_dir, "output directory");
    app.add_option("--jobs", args.jobs, "worker threads for detection")->check(CLI::PositiveNumber);

    // Reverse-engineering knobs overriding the config's detection.re block.
    double re_step = 0.0, re_lambda = -1.0, re_init_sigma = -1.0;
    std::size_t re_max_iters = 0;
    auto* re_step_opt = app.add_option("--re-step", re_step, "RE gradient step size");
    auto* re_iters_opt = app.add_option("--re-max-iters", re_max_iters, "RE iteration budget");
    auto* re_lambda_opt = app.add_option("--re-lambda", re_lambda, "RE mask-size multiplier");
    auto* re_sigma_opt = app.add_option("--re-init-sigma", re_init_sigma, "RE random-init scale");

    auto* cmd_run = app.add_subcommand("run", "full pipeline: train, attack, detect");
    auto* cmd_train = app.add_subcommand("train", "train the classifier only (no detection)");
    auto* cmd_attack = app.add_subcommand("attack", "poison and train, report ASR/ACC");
    auto* cmd_detect = app.add_subcommand("detect", "run detection on a saved model");
    std::string model_path;
    cmd_detect->add_option("--model", model_path, "path to a saved model JSON");

    auto* cmd_toy = app.add_subcommand("toy-verify", "closed form vs Monte Carlo table");
    std::size_t toy_pairs = 100000;
    std::uint64_t toy_seed = 7;
    cmd_toy->add_option("--pairs", toy_pairs, "Monte Carlo pairs per distribution");
    cmd_toy->add_option("--toy-seed", toy_seed, "seed for the toy table");

    auto* cmd_sweep_images = app.add_subcommand("sweep-images",
                                                "detection accuracy vs images per class");
    std::vector<std::size_t> counts = {2, 5, 10, 15, 20};
    cmd_sweep_images->add_option("--counts", counts, "detection-set sizes to sweep");
    std::vector<std::string> instance_paths;
    cmd_sweep_images->add_option("--instances", instance_paths,
                                 "config files forming the instance ensemble");

    auto* cmd_sweep_patience = app.add_subcommand("sweep-patience",
                                                  "per-sample growth curves across patience values");
    std::vector<std::size_t> taus = {1, 2, 4, 8};
    cmd_sweep_patience->add_option("--taus", taus, "patience values");

    auto* cmd_roc = app.add_subcommand("roc", "ROC points and AUC for two statistic groups");
    std::string roc_stats_path;
    cmd_roc->add_option("--stats", roc_stats_path,
                        "JSON file with {\"target\": [...], \"nontarget\": [...]}");

    auto* cmd_cs = app.add_subcommand("cs-sweep", "mean CS statistic vs class count");
    std::vector<int> class_counts = {2, 4, 6, 8, 10};
    cmd_cs->add_option("--class-counts", class_counts, "class counts to sweep");

    CLI11_PARSE(app, argc, argv);
    if (seed_opt->count() > 0) args.seed = seed_value;
    if (re_step_opt->count() > 0) args.re_step = re_step;
    if (re_iters_opt->count() > 0) args.re_max_iters = re_max_iters;
    if (re_lambda_opt->count() > 0) args.re_lambda = re_lambda;
    if (re_sigma_opt->count() > 0) args.re_init_sigma = re_init_sigma;

    try {
        if (cmd_toy->parsed()) {
            emit(args, "toy_verify.json", backlab::harness::toy_verify_json(toy_pairs, toy_seed));
            return kExitOk;
        }

        if (cmd_run->parsed()) {
            const auto cfg = load_experiment(args);
            const auto report = backlab::harness::run_pipeline(cfg, args.jobs);
            if (cfg.out_dir.empty()) std::cout << backlab::harness::report_to_json(report) << std::endl;
            return report_exit(report);
        }

        if (cmd_train->parsed() || cmd_attack->parsed()) {
            auto cfg = load_experiment(args);
            if (cmd_train->parsed()) cfg.attacks.clear();
            const auto inst = backlab::harness::train_instance(cfg);
            json j;
            j["acc"] = inst.acc;
            j["asr"] = inst.asr;
            j["poison"] = json::array();
            for (const auto& p : inst.poison)
                j["poison"].push_back({{"inserted_count", p.inserted_count},
                                       {"poisoning_rate", p.poisoning_rate},
                                       {"source_indices", p.source_indices}});
            if (!cfg.out_dir.empty())
                backlab::nn::save_classifier(inst.model, cfg.out_dir + "/model.json");
            emit(args, "train_report.json", j.dump(2));
            return kExitOk;
        }

        if (cmd_detect->parsed()) {
            const auto cfg = load_experiment(args);
            if (model_path.empty()) throw ConfigError("detect: --model is required");
            const auto model = backlab::nn::load_classifier(model_path);
            const auto domain = backlab::harness::load_domain(cfg.domain);
            const auto report =
                backlab::harness::detect_instance(model, domain, cfg.detection, args.jobs);
            emit(args, "detection.json", backlab::det::report_to_json(report));
            return kExitOk;
        }

        if (cmd_sweep_images->parsed()) {
            std::vector<ExperimentConfig> instances;
            if (instance_paths.empty()) {
                instances.push_back(load_experiment(args));
            } else {
                for (const auto& path : instance_paths)
                    instances.push_back(backlab::harness::load_config(path));
            }
            const auto rows = backlab::harness::sweep_images(instances, counts, args.jobs);
            json j = json::array();
            for (const auto& r : rows)
                j.push_back({{"count", r.count},
                             {"accuracy", r.accuracy},
                             {"correct", r.correct},
                             {"total", r.total}});
            emit(args, "sweep_images.json", j.dump(2));
            return kExitOk;
        }

        if (cmd_sweep_patience->parsed()) {
            const auto cfg = load_experiment(args);
            const std::string csv =
                (args.out_dir.empty() ? std::string("growth_curves.csv")
                                      : args.out_dir + "/growth_curves.csv");
            const auto result = backlab::harness::sweep_patience(cfg, taus, csv, args.jobs);
            json j;
            j["csv"] = result.csv_path;
            j["taus"] = result.taus;
            j["et_by_tau"] = result.et_by_tau;
            emit(args, "sweep_patience.json", j.dump(2));
            return kExitOk;
        }

        if (cmd_roc->parsed()) {
            if (roc_stats_path.empty()) throw ConfigError("roc: --stats is required");
            std::ifstream in(roc_stats_path);
            if (!in) throw ConfigError("roc: cannot open " + roc_stats_path);
            const json stats = json::parse(in);
            const auto result =
                backlab::harness::compute_roc(stats.at("target").get<std::vector<double>>(),
                                              stats.at("nontarget").get<std::vector<double>>());
            json j;
            j["auc"] = result.auc;
            j["degenerate"] = result.degenerate;
            j["points"] = json::array();
            for (const auto& [fpr, tpr] : result.points) j["points"].push_back({fpr, tpr});
            emit(args, "roc.json", j.dump(2));
            return kExitOk;
        }

        if (cmd_cs->parsed()) {
            const auto cfg = load_experiment(args);
            const auto domain = backlab::harness::load_domain(cfg.domain);
            const auto rows = backlab::harness::cs_class_sweep(
                domain.train, domain.test, class_counts, cfg.training, cfg.detection,
                cfg.detection.seed);
            json j = json::array();
            for (const auto& r : rows)
                j.push_back({{"num_classes", r.num_classes}, {"mean_cs", r.mean_cs}});
            emit(args, "cs_sweep.json", j.dump(2));
            return kExitOk;
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << std::endl;
        return kExitConfigError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return kExitStageFailure;
    }
    return kExitOk;
}
