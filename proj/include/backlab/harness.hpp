#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "backlab/attack.hpp"
#include "backlab/data.hpp"
#include "backlab/detector.hpp"
#include "backlab/nn.hpp"

namespace backlab::harness {

// Every stochastic stage must carry an explicit seed; parsing rejects
// configs with missing seeds rather than defaulting silently.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DomainConfig {
    enum class Kind { idx, subspace };
    Kind kind = Kind::idx;
    // idx
    std::string train_images, train_labels, test_images, test_labels;
    enum class Mode { full, pair, super_class, subset };
    Mode mode = Mode::full;
    int class_a = 0, class_b = 1;
    std::vector<int> group0, group1;
    std::vector<int> subset;
    // subspace
    std::size_t n = 2, d = 1;
    data::LatentDist g0, g1;
    std::size_t n_per_class = 100;
    std::uint64_t seed = 0;
};

struct TrainingConfig {
    std::vector<std::size_t> layer_dims;  // hidden widths only; input/output derived
    nn::Activation activation = nn::Activation::relu;
    nn::TrainConfig opt;
};

struct AttackConfig {
    int target_class = 0;
    std::string pattern_name;
    std::uint64_t pattern_seed = 0;
    std::size_t n_poison = 0;
    bool clean_label = false;
    attack::PgdConfig pgd;
    std::uint64_t seed = 0;
};

struct SurrogateConfig {
    double train_fraction = 0.5;  // share of the training set held out for the surrogate
    nn::TrainConfig opt;
};

struct DetectionConfig {
    det::ReKind re_kind = det::ReKind::ap;
    std::size_t images_per_class = 20;
    std::size_t tau = 4;
    reveng::ReConfig re;
    bool with_baselines = false;
    std::uint64_t seed = 0;
};

struct ExperimentConfig {
    DomainConfig domain;
    TrainingConfig training;
    std::vector<AttackConfig> attacks;
    std::optional<SurrogateConfig> surrogate;
    DetectionConfig detection;
    std::string out_dir;
};

ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::string& path);
std::string config_to_json(const ExperimentConfig& cfg);

struct Domain {
    data::LabeledDataset train;
    data::LabeledDataset test;
};

Domain load_domain(const DomainConfig& cfg);

struct RunReport {
    std::vector<double> asr;  // one per attack
    std::vector<attack::PoisonReport> poison;
    double acc = 0.0;
    det::DetectionReport detection;
    double seconds = 0.0;
    std::string failed_stage;  // empty on success
    std::string error;
    std::string config_echo;
    std::vector<std::pair<std::string, std::string>> artifacts;  // name -> path
};

std::string report_to_json(const RunReport& report);

// Full pipeline: load domain, poison, train, evaluate, detect. On a stage
// failure the report carries the stage name and error instead of throwing.
// When out_dir is set, the model, poison reports and detection report are
// persisted there.
RunReport run_pipeline(const ExperimentConfig& cfg, int jobs = 1);

struct TrainedInstance {
    Domain domain;
    nn::Classifier model;
    std::vector<double> asr;
    double acc = 0.0;
    std::vector<attack::PoisonReport> poison;
};

// Stages exposed for the sweeps and the CLI subcommands.
TrainedInstance train_instance(const ExperimentConfig& cfg);
std::vector<std::vector<Tensor>> detection_sets(const Domain& domain,
                                                const DetectionConfig& det_cfg,
                                                std::size_t images_per_class);
det::DetectionReport detect_instance(const nn::Classifier& f, const Domain& domain,
                                     const DetectionConfig& det_cfg, int jobs,
                                     std::size_t images_per_class_override = 0);

struct SweepImagesRow {
    std::size_t count = 0;
    double accuracy = 0.0;  // fraction of instances with the correct verdict
    std::size_t correct = 0;
    std::size_t total = 0;
};

// Detection accuracy versus detection-set size on a fixed instance
// ensemble. An attacked instance counts as correct when the verdict is
// "attacked" with exactly the configured target set; a clean instance
// counts when not flagged.
std::vector<SweepImagesRow> sweep_images(const std::vector<ExperimentConfig>& instances,
                                         const std::vector<std::size_t>& counts, int jobs);

struct PatienceSweepResult {
    std::vector<std::size_t> taus;
    // et_by_tau[tau index][class index]
    std::vector<std::vector<double>> et_by_tau;
    std::string csv_path;
};

// Runs detection at the largest tau, records per-sample growth curves to
// CSV (columns: class, sample, attempt, set_size, p) and reads off the ET
// value each smaller tau would have produced from the same attempt
// sequence.
PatienceSweepResult sweep_patience(const ExperimentConfig& cfg, const std::vector<std::size_t>& taus,
                                   const std::string& csv_path, int jobs);

struct RocResult {
    std::vector<std::pair<double, double>> points;  // (fpr, tpr)
    double auc = 0.5;
    bool degenerate = false;
};

// Threshold-sweep ROC with trapezoidal AUC; larger statistics are treated
// as more attack-indicative.
RocResult compute_roc(const std::vector<double>& target_stats,
                      const std::vector<double>& nontarget_stats);

struct CsSweepRow {
    int num_classes = 0;
    double mean_cs = 0.0;
};

// Trains one clean classifier per class count and reports the mean CS
// statistic over its classes.
std::vector<CsSweepRow> cs_class_sweep(const data::LabeledDataset& train,
                                       const data::LabeledDataset& test,
                                       const std::vector<int>& class_counts,
                                       const TrainingConfig& training,
                                       const DetectionConfig& detection, std::uint64_t seed);

// Closed form vs Monte Carlo table for the toy model, one row per latent
// distribution.
std::string toy_verify_json(std::size_t n_pairs, std::uint64_t seed);

void write_text_file(const std::string& path, const std::string& text);

}  // namespace backlab::harness
