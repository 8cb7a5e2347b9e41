#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "backlab/nn.hpp"
#include "backlab/reveng.hpp"
#include "backlab/tensor.hpp"

namespace backlab::det {

enum class ReKind { ap, pr };
std::string to_string(ReKind k);
ReKind re_kind_from_string(const std::string& s);

// Directed transferability record: entry (a, b) means a solution estimated
// for sample a misclassified sample b. Entries only ever flip false -> true;
// the diagonal is unused.
struct TransferMatrix {
    std::size_t n = 0;
    std::vector<std::uint8_t> cells;

    explicit TransferMatrix(std::size_t n_ = 0) : n(n_), cells(n_ * n_, 0) {}
    bool get(std::size_t a, std::size_t b) const { return cells[a * n + b] != 0; }
    void set(std::size_t a, std::size_t b) { cells[a * n + b] = 1; }

    struct PairCounts {
        std::size_t mutual = 0;    // both directions transfer
        std::size_t neither = 0;   // neither direction transfers
        std::size_t one_way = 0;
        std::size_t total = 0;     // n*(n-1)/2 unordered pairs
    };
    PairCounts pair_counts() const;
};

struct EtEstimate {
    std::vector<double> p;  // p_n = |T_hat(x_n)| / (N-1)
    double et = 0.0;        // mean of p
    double pmt_hat = 0.0;   // mutual / total unordered pairs
    double pnt_hat = 0.0;   // neither / total unordered pairs
    TransferMatrix matrix;
    std::vector<std::uint8_t> re_failed;       // 1 if no attempt succeeded for that sample
    std::vector<std::size_t> attempts_used;    // reverse-engineering attempts per sample
};

// Exact counting identity mirroring the mutual-transfer decomposition:
// mean(p) = 1/2 + (pmt_hat - pnt_hat)/2. Returns the absolute residual.
double identity_residual(const EtEstimate& est);

struct EtConfig {
    ReKind re_kind = ReKind::ap;
    reveng::ReConfig re;       // re.target_class and re.seed drive the run
    std::size_t tau = 4;       // patience
    bool bounded = true;       // domain bound flag for embedding solutions
    int jobs = 1;              // parallelism over detection samples
};

// Optional per-sample growth record: transferable-set size after each
// attempt.
struct EtTrace {
    std::vector<std::vector<std::size_t>> sizes;
};

// Transferable-set estimation with patience: for each detection sample,
// reverse-engineer repeatedly with fresh seeded inits; each success is
// embedded into all co-samples and newly misclassified ones join the set.
// A sample's loop stops when the set is unchanged for tau consecutive
// attempts (failed attempts count as unchanged) and is hard-bounded by
// (N-1)*tau attempts. Requires every sample to be predicted off-target and
// N >= 2.
EtEstimate estimate_et(const nn::Classifier& f, const std::vector<Tensor>& detection_set,
                       const EtConfig& cfg, EtTrace* trace = nullptr);

struct BaselineStats {
    std::optional<double> l2_norm;
    std::optional<double> l1_norm;
    std::optional<double> cs;
};

// Group-RE statistics used by prior detectors: l2 norm of a common additive
// perturbation toward t, l1 norm of a common reverse-engineered mask, and
// the CS statistic. A statistic is absent when its reverse-engineering run
// fails.
BaselineStats baseline_stats(const nn::Classifier& f,
                             const std::vector<std::vector<Tensor>>& detection_sets, int target,
                             const reveng::ReConfig& cfg);

struct ClassReport {
    int cls = 0;  // putative target class
    double et = 0.0;
    std::vector<double> p;
    std::size_t n_used = 0;
    BaselineStats baselines;
};

struct DetectionReport {
    bool attacked = false;
    std::vector<int> ba_targets;
    std::vector<ClassReport> per_class;
    std::uint64_t seed = 0;
    std::string config_echo;  // JSON text
};

struct DetectOptions {
    EtConfig et;
    bool with_baselines = false;
    std::uint64_t seed = 0;
    // When set, receives the per-target EtEstimate (including the transfer
    // matrix) of every estimation the detection performs.
    std::vector<EtEstimate>* estimates_sink = nullptr;
};

// Algorithm: for each putative target t, estimate ET on the pooled
// detection samples of all other classes (samples the classifier
// misclassifies are dropped first); strict ET > 1/2 flags t as a backdoor
// target.
DetectionReport detect_multi_class(const nn::Classifier& f,
                                   const std::vector<std::vector<Tensor>>& detection_sets,
                                   const DetectOptions& opts);
DetectionReport detect_two_class(const nn::Classifier& f, const std::vector<Tensor>& d0,
                                 const std::vector<Tensor>& d1, const DetectOptions& opts);

std::string report_to_json(const DetectionReport& report);

enum class MadSide { below, above };

struct MadResult {
    std::vector<int> anomalous;
    std::vector<double> scores;
    bool degenerate = false;  // MAD == 0
};

// Median-absolute-deviation anomaly detection: flags classes with
// |x - median| / (1.4826 * MAD) > threshold on the attack-indicative side.
MadResult mad_anomaly(const std::vector<double>& stats, double threshold = 2.0,
                      MadSide side = MadSide::below);

}  // namespace backlab::det
