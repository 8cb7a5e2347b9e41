#include "backlab/detector.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <stdexcept>
#include <thread>

#include <json.hpp>

#include "backlab/attack.hpp"
#include "backlab/rng.hpp"

namespace backlab::det {

std::string to_string(ReKind k) { return k == ReKind::ap ? "ap" : "pr"; }

ReKind re_kind_from_string(const std::string& s) {
    if (s == "ap") return ReKind::ap;
    if (s == "pr") return ReKind::pr;
    throw std::invalid_argument("unknown re_kind: " + s);
}

TransferMatrix::PairCounts TransferMatrix::pair_counts() const {
    PairCounts c;
    for (std::size_t a = 0; a < n; ++a) {
        for (std::size_t b = a + 1; b < n; ++b) {
            const bool ab = get(a, b), ba = get(b, a);
            if (ab && ba)
                ++c.mutual;
            else if (!ab && !ba)
                ++c.neither;
            else
                ++c.one_way;
            ++c.total;
        }
    }
    return c;
}

double identity_residual(const EtEstimate& est) {
    return std::abs(est.et - (0.5 + 0.5 * (est.pmt_hat - est.pnt_hat)));
}

namespace {

// One sample's transferable-set estimation loop. Results depend only on
// (cfg.re.seed, row), so rows can run on any schedule.
struct RowResult {
    std::vector<std::uint8_t> transfers;  // over co-samples, indexed by column
    std::size_t attempts = 0;
    bool re_failed = true;
    std::vector<std::size_t> trace;
};

RowResult estimate_row(const nn::Classifier& f, const std::vector<Tensor>& set, std::size_t row,
                       const EtConfig& cfg) {
    const std::size_t n = set.size();
    RowResult res;
    res.transfers.assign(n, 0);

    std::size_t patience = 0;
    std::size_t in_set = 0;
    const std::size_t bound = (n - 1) * cfg.tau;

    while (patience < cfg.tau && res.attempts < bound) {
        res.attempts += 1;
        reveng::ReConfig re = cfg.re;
        re.seed = derive_seed(cfg.re.seed, 0xE7, row, res.attempts);
        const reveng::ReSolution sol = (cfg.re_kind == ReKind::ap)
                                           ? reveng::re_ap(f, set[row], re)
                                           : reveng::re_pr(f, set[row], re);
        bool changed = false;
        if (sol.success) {
            res.re_failed = false;
            for (std::size_t m = 0; m < n; ++m) {
                if (m == row || res.transfers[m]) continue;
                const Tensor probe = attack::embed(set[m], sol.pattern, cfg.bounded);
                if (nn::predict(f, probe.view()) == cfg.re.target_class) {
                    res.transfers[m] = 1;
                    changed = true;
                    ++in_set;
                }
            }
        }
        patience = changed ? 0 : patience + 1;
        res.trace.push_back(in_set);
    }
    return res;
}

}  // namespace

EtEstimate estimate_et(const nn::Classifier& f, const std::vector<Tensor>& detection_set,
                       const EtConfig& cfg, EtTrace* trace) {
    const std::size_t n = detection_set.size();
    if (n < 2) throw std::invalid_argument("estimate_et: need at least 2 detection samples");
    if (cfg.tau == 0) throw std::invalid_argument("estimate_et: tau must be positive");
    for (const auto& x : detection_set)
        if (nn::predict(f, x.view()) == cfg.re.target_class)
            throw std::invalid_argument(
                "estimate_et: detection sample already predicted to the target class");

    std::vector<RowResult> rows(n);
    const int jobs = std::max(1, cfg.jobs);
    if (jobs == 1) {
        for (std::size_t r = 0; r < n; ++r) rows[r] = estimate_row(f, detection_set, r, cfg);
    } else {
        std::atomic<std::size_t> next{0};
        auto worker = [&]() {
            for (;;) {
                const std::size_t r = next.fetch_add(1);
                if (r >= n) return;
                rows[r] = estimate_row(f, detection_set, r, cfg);
            }
        };
        std::vector<std::thread> pool;
        const int k = std::min<std::size_t>(static_cast<std::size_t>(jobs), n);
        pool.reserve(static_cast<std::size_t>(k));
        for (int t = 0; t < k; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    EtEstimate est;
    est.matrix = TransferMatrix(n);
    est.p.resize(n);
    est.re_failed.resize(n);
    est.attempts_used.resize(n);
    double sum = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
        std::size_t count = 0;
        for (std::size_t m = 0; m < n; ++m) {
            if (rows[r].transfers[m]) {
                est.matrix.set(r, m);
                ++count;
            }
        }
        est.p[r] = static_cast<double>(count) / static_cast<double>(n - 1);
        sum += est.p[r];
        est.re_failed[r] = rows[r].re_failed ? 1 : 0;
        est.attempts_used[r] = rows[r].attempts;
    }
    est.et = sum / static_cast<double>(n);
    const auto counts = est.matrix.pair_counts();
    est.pmt_hat = static_cast<double>(counts.mutual) / static_cast<double>(counts.total);
    est.pnt_hat = static_cast<double>(counts.neither) / static_cast<double>(counts.total);
    if (trace) {
        trace->sizes.clear();
        for (auto& r : rows) trace->sizes.push_back(std::move(r.trace));
    }
    return est;
}

BaselineStats baseline_stats(const nn::Classifier& f,
                             const std::vector<std::vector<Tensor>>& detection_sets, int target,
                             const reveng::ReConfig& cfg) {
    std::vector<Tensor> pooled;
    for (std::size_t c = 0; c < detection_sets.size(); ++c) {
        if (static_cast<int>(c) == target) continue;
        for (const auto& x : detection_sets[c]) pooled.push_back(x);
    }
    if (pooled.empty()) throw std::invalid_argument("baseline_stats: no samples outside target");

    BaselineStats stats;
    reveng::ReConfig re = cfg;
    re.target_class = target;

    re.seed = derive_seed(cfg.seed, 0xB1, static_cast<std::uint64_t>(target));
    const auto ap = reveng::re_ap_group(f, pooled, re);
    if (ap.success) stats.l2_norm = ap.norm;

    re.seed = derive_seed(cfg.seed, 0xB2, static_cast<std::uint64_t>(target));
    const auto pr = reveng::re_pr_group(f, pooled, re);
    if (pr.success) stats.l1_norm = pr.norm;

    re.seed = derive_seed(cfg.seed, 0xB3, static_cast<std::uint64_t>(target));
    try {
        stats.cs = reveng::cs_statistic(f, target, detection_sets, re).cs;
    } catch (const std::exception&) {
        // left absent
    }
    return stats;
}

DetectionReport detect_multi_class(const nn::Classifier& f,
                                   const std::vector<std::vector<Tensor>>& detection_sets,
                                   const DetectOptions& opts) {
    const std::size_t k = detection_sets.size();
    if (k < 2) throw std::invalid_argument("detect: need at least 2 classes");
    if (f.num_classes() != k)
        throw std::invalid_argument("detect: detection sets do not match classifier classes");

    // Drop detection samples the classifier misclassifies.
    std::vector<std::vector<Tensor>> usable(k);
    for (std::size_t c = 0; c < k; ++c)
        for (const auto& x : detection_sets[c])
            if (nn::predict(f, x.view()) == static_cast<int>(c)) usable[c].push_back(x);

    DetectionReport report;
    report.seed = opts.seed;
    for (std::size_t t = 0; t < k; ++t) {
        std::vector<Tensor> pooled;
        for (std::size_t c = 0; c < k; ++c) {
            if (c == t) continue;
            for (const auto& x : usable[c]) pooled.push_back(x);
        }
        EtConfig cfg = opts.et;
        cfg.re.target_class = static_cast<int>(t);
        cfg.re.seed = derive_seed(opts.seed, 0xD1, t);
        const EtEstimate est = estimate_et(f, pooled, cfg);

        ClassReport cr;
        cr.cls = static_cast<int>(t);
        cr.et = est.et;
        cr.p = est.p;
        cr.n_used = pooled.size();
        if (opts.with_baselines) {
            reveng::ReConfig base = opts.et.re;
            base.seed = derive_seed(opts.seed, 0xD2, t);
            cr.baselines = baseline_stats(f, usable, static_cast<int>(t), base);
        }
        report.per_class.push_back(std::move(cr));
        if (est.et > 0.5) {
            report.attacked = true;
            report.ba_targets.push_back(static_cast<int>(t));
        }
        if (opts.estimates_sink) opts.estimates_sink->push_back(est);
    }
    return report;
}

DetectionReport detect_two_class(const nn::Classifier& f, const std::vector<Tensor>& d0,
                                 const std::vector<Tensor>& d1, const DetectOptions& opts) {
    return detect_multi_class(f, {d0, d1}, opts);
}

std::string report_to_json(const DetectionReport& report) {
    nlohmann::json j;
    j["attacked"] = report.attacked;
    j["ba_targets"] = report.ba_targets;
    j["classes"] = nlohmann::json::array();
    for (const auto& cr : report.per_class) {
        nlohmann::json jc;
        jc["class"] = cr.cls;
        jc["et"] = cr.et;
        jc["p"] = cr.p;
        jc["n_used"] = cr.n_used;
        nlohmann::json jb = nlohmann::json::object();
        if (cr.baselines.l2_norm) jb["l2_norm"] = *cr.baselines.l2_norm;
        if (cr.baselines.l1_norm) jb["l1_norm"] = *cr.baselines.l1_norm;
        if (cr.baselines.cs) jb["cs"] = *cr.baselines.cs;
        jc["baselines"] = std::move(jb);
        j["classes"].push_back(std::move(jc));
    }
    j["seed"] = report.seed;
    if (!report.config_echo.empty())
        j["config_echo"] = nlohmann::json::parse(report.config_echo);
    return j.dump(2);
}

MadResult mad_anomaly(const std::vector<double>& stats, double threshold, MadSide side) {
    if (stats.size() < 3) throw std::invalid_argument("mad_anomaly: need at least 3 statistics");
    auto median_of = [](std::vector<double> v) {
        std::sort(v.begin(), v.end());
        const std::size_t n = v.size();
        return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
    };
    const double med = median_of(stats);
    std::vector<double> dev(stats.size());
    for (std::size_t i = 0; i < stats.size(); ++i) dev[i] = std::abs(stats[i] - med);
    const double mad = median_of(dev);

    MadResult res;
    res.scores.resize(stats.size(), 0.0);
    if (mad == 0.0) {
        res.degenerate = true;
        return res;
    }
    for (std::size_t i = 0; i < stats.size(); ++i) {
        res.scores[i] = std::abs(stats[i] - med) / (1.4826 * mad);
        const bool indicative = side == MadSide::below ? stats[i] < med : stats[i] > med;
        if (indicative && res.scores[i] > threshold) res.anomalous.push_back(static_cast<int>(i));
    }
    return res;
}

}  // namespace backlab::det
