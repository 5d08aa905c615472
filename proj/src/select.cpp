#include "tale/select.hpp"

#include <cmath>
#include <stdexcept>

#include <json.hpp>

#include "tale/errors.hpp"
#include "tale/eval.hpp"
#include "tale/io.hpp"

namespace tale {

namespace {

void require_nonempty(const PruneTrajectory& t) {
    if (t.iterations.empty()) throw usage_error("selection over an empty trajectory");
}

}  // namespace

void AehmParams::validate() const {
    if (!(lambda > 0.0) || !std::isfinite(lambda)) {
        throw std::domain_error("lambda must be positive and finite, got " +
                                std::to_string(lambda));
    }
}

int best_model(const PruneTrajectory& t) {
    require_nonempty(t);
    int best = 0;
    for (std::size_t i = 1; i < t.iterations.size(); ++i) {
        if (t.iterations[i].accuracy > t.iterations[static_cast<std::size_t>(best)].accuracy) {
            best = static_cast<int>(i);
        }
    }
    return best;
}

int bsba(const PruneTrajectory& t) {
    require_nonempty(t);
    const double baseline = t.iterations.front().accuracy;
    int deepest = 0;
    for (std::size_t i = 1; i < t.iterations.size(); ++i) {
        if (t.iterations[i].accuracy >= baseline) deepest = static_cast<int>(i);
    }
    return deepest;
}

double aehm(double accuracy_ratio, double speedup, double lambda) {
    if (!(accuracy_ratio > 0.0) || !(speedup > 0.0) || !(lambda > 0.0) ||
        !std::isfinite(lambda)) {
        throw std::domain_error("aehm requires positive finite r_A, S and lambda");
    }
    const double l2 = lambda * lambda;
    return (1.0 + l2) * accuracy_ratio * speedup / (l2 * speedup + accuracy_ratio);
}

int best_compromise_with(const PruneTrajectory& t, const std::vector<double>& speedups,
                         double lambda) {
    require_nonempty(t);
    if (speedups.size() != t.iterations.size()) {
        throw usage_error("need one speedup per trajectory record");
    }
    const double baseline = t.iterations.front().accuracy;
    if (!(baseline > 0.0)) throw std::domain_error("baseline accuracy must be positive");
    int best = 0;
    double best_score = -1.0;
    for (std::size_t i = 0; i < t.iterations.size(); ++i) {
        const double score = aehm(t.iterations[i].accuracy / baseline, speedups[i], lambda);
        if (score > best_score) {  // strict: ties keep the fewest deletions
            best_score = score;
            best = static_cast<int>(i);
        }
    }
    return best;
}

int best_compromise(const PruneTrajectory& t, double lambda) {
    require_nonempty(t);
    std::vector<double> speedups;
    speedups.reserve(t.iterations.size());
    for (const auto& rec : t.iterations) speedups.push_back(rec.speedup_proxy);
    return best_compromise_with(t, speedups, lambda);
}

std::set<int> common_layers(const std::map<std::string, std::set<int>>& deletion_sets,
                            double fraction) {
    if (deletion_sets.empty()) throw usage_error("common_layers needs at least one task");
    if (!(fraction > 0.0) || fraction > 1.0) {
        throw usage_error("fraction must lie in (0, 1]");
    }
    const double n = static_cast<double>(deletion_sets.size());
    const int needed = static_cast<int>(std::ceil(fraction * n - 1e-12));
    std::map<int, int> counts;
    for (const auto& [task, layers] : deletion_sets) {
        (void)task;
        for (int l : layers) counts[l] += 1;
    }
    std::set<int> out;
    for (const auto& [layer, c] : counts) {
        if (c >= needed) out.insert(layer);
    }
    return out;
}

namespace {

OperatingPoint point_at(const PruneTrajectory& t, int index, const std::vector<double>& speedups) {
    const IterationRecord& rec = t.iterations[static_cast<std::size_t>(index)];
    OperatingPoint p;
    p.iteration = index;
    p.perf = rec.accuracy;
    p.dropped = rec.mask.size();
    p.speedup = speedups[static_cast<std::size_t>(index)];
    return p;
}

}  // namespace

SelectionReport build_selection_report(const PruneTrajectory& t, const std::string& dataset,
                                       double lambda) {
    std::vector<double> speedups;
    for (const auto& rec : t.iterations) speedups.push_back(rec.speedup_proxy);
    return build_selection_report(t, dataset, lambda, speedups, false);
}

SelectionReport build_selection_report(const PruneTrajectory& t, const std::string& dataset,
                                       double lambda, const std::vector<double>& speedups,
                                       bool measured) {
    require_nonempty(t);
    SelectionReport r;
    r.dataset = dataset;
    r.lambda = lambda;
    r.measured_speedup = measured;
    r.baseline_perf = t.iterations.front().accuracy;
    r.best = point_at(t, best_model(t), speedups);
    r.bsba = point_at(t, bsba(t), speedups);
    const int bc = best_compromise_with(t, speedups, lambda);
    r.best_compromise = point_at(t, bc, speedups);
    r.best_compromise_score =
        aehm(r.best_compromise.perf / r.baseline_perf, r.best_compromise.speedup, lambda);
    r.best_gain_pct = percentage_gain(r.best.perf, r.baseline_perf);
    r.bsba_gain_pct = percentage_gain(r.bsba.perf, r.baseline_perf);
    return r;
}

namespace {

nlohmann::json point_json(const OperatingPoint& p) {
    return {{"iteration", p.iteration},
            {"perf", p.perf},
            {"dropped", p.dropped},
            {"speedup", p.speedup}};
}

}  // namespace

std::string selection_report_json(const SelectionReport& r) {
    nlohmann::json j;
    j["dataset"] = r.dataset;
    j["baseline_perf"] = r.baseline_perf;
    j["best"] = point_json(r.best);
    j["bsba"] = point_json(r.bsba);
    j["best_compromise"] = point_json(r.best_compromise);
    j["best_compromise"]["aehm_score"] = r.best_compromise_score;
    j["lambda"] = r.lambda;
    j["speedup_source"] = r.measured_speedup ? "measured" : "proxy";
    j["best_gain_pct"] = r.best_gain_pct;
    j["bsba_gain_pct"] = r.bsba_gain_pct;
    return j.dump(2) + "\n";
}

std::string selection_report_csv(const SelectionReport& r) {
    std::string out =
        "dataset,baseline_perf,best_perf,best_drop,best_sp,bsba_perf,bsba_drop,bsba_sp,gain_pct\n";
    out += r.dataset + ",";
    out += format_double(r.baseline_perf) + ",";
    out += format_double(r.best.perf) + "," + std::to_string(r.best.dropped) + "," +
           format_double(r.best.speedup) + ",";
    out += format_double(r.bsba.perf) + "," + std::to_string(r.bsba.dropped) + "," +
           format_double(r.bsba.speedup) + ",";
    out += format_double(r.best_gain_pct) + "\n";
    return out;
}

}  // namespace tale
