#include "tale/search.hpp"

#include <chrono>
#include <cmath>
#include <ctime>

#include "tale/errors.hpp"

namespace tale {

ThresholdMode threshold_mode_from_string(const std::string& s) {
    if (s == "relative_current") return ThresholdMode::relative_current;
    if (s == "relative_baseline") return ThresholdMode::relative_baseline;
    throw input_error("unknown threshold mode '" + s + "'");
}

std::string to_string(ThresholdMode mode) {
    return mode == ThresholdMode::relative_current ? "relative_current" : "relative_baseline";
}

std::string to_string(Termination t) {
    switch (t) {
        case Termination::in_progress: return "in_progress";
        case Termination::no_improving_candidate: return "no_improving_candidate";
        case Termination::max_deletions_reached: return "max_deletions_reached";
    }
    throw input_error("invalid termination value");
}

Termination termination_from_string(const std::string& s) {
    if (s == "in_progress") return Termination::in_progress;
    if (s == "no_improving_candidate") return Termination::no_improving_candidate;
    if (s == "max_deletions_reached") return Termination::max_deletions_reached;
    throw format_error("unknown termination '" + s + "'", 0);
}

namespace {

std::string now_utc_iso8601() {
    const std::time_t t = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::vector<int> surviving_layers(int n_layers, const LayerMask& mask) {
    std::vector<int> out;
    for (int l = 1; l <= n_layers; ++l)
        if (!mask.contains(l)) out.push_back(l);
    return out;
}

}  // namespace

std::map<int, double> evaluate_candidates(int n_layers, const LayerMask& current_mask,
                                          const AccuracyFn& accuracy_of) {
    if (current_mask.size() >= n_layers - 1) {
        throw usage_error("no further deletion possible: mask already holds " +
                          std::to_string(current_mask.size()) + " of " +
                          std::to_string(n_layers) + " layers");
    }
    const std::vector<int> survivors = surviving_layers(n_layers, current_mask);
    std::vector<double> accs(survivors.size());
    const long long n = static_cast<long long>(survivors.size());
    // candidates are independent; each slot is written by exactly one thread
#pragma omp parallel for schedule(dynamic)
    for (long long i = 0; i < n; ++i) {
        const int layer = survivors[static_cast<std::size_t>(i)];
        accs[static_cast<std::size_t>(i)] = accuracy_of(current_mask.with(layer, n_layers));
    }
    std::map<int, double> table;
    for (std::size_t i = 0; i < survivors.size(); ++i) table[survivors[i]] = accs[i];
    return table;
}

namespace {

// argmax over the candidate table; ties break to the lowest layer index,
// which std::map's ascending iteration provides
std::pair<int, double> table_argmax(const std::map<int, double>& table) {
    int best_layer = 0;
    double best_acc = -1.0;
    for (const auto& [layer, acc] : table) {
        if (acc > best_acc) {
            best_acc = acc;
            best_layer = layer;
        }
    }
    return {best_layer, best_acc};
}

// Runs the greedy loop starting from the state recorded in `t` (which must
// already hold at least the baseline record).
PruneTrajectory run_loop(PruneTrajectory t, int n_layers, const AccuracyFn& accuracy_of,
                         const CheckpointFn& checkpoint) {
    const double baseline_acc = t.iterations.front().accuracy;
    double current_acc = t.iterations.back().accuracy;
    LayerMask mask = t.iterations.back().mask;

    while (true) {
        if (mask.size() >= n_layers - 1) {
            t.termination = Termination::max_deletions_reached;
            break;
        }
        const std::map<int, double> table = evaluate_candidates(n_layers, mask, accuracy_of);
        const auto [best_layer, best_acc] = table_argmax(table);
        const double reference =
            t.mode == ThresholdMode::relative_current ? current_acc : baseline_acc;
        if (best_acc < reference - t.epsilon) {
            t.termination = Termination::no_improving_candidate;
            break;
        }
        mask = mask.with(best_layer, n_layers);
        current_acc = best_acc;

        IterationRecord rec;
        rec.iteration = static_cast<int>(t.iterations.size());
        rec.mask = mask;
        rec.selected_layer = best_layer;
        rec.accuracy = best_acc;
        rec.candidates = table;
        rec.speedup_proxy = speedup_proxy(n_layers, mask.size());
        rec.timestamp = now_utc_iso8601();
        t.iterations.push_back(std::move(rec));
        if (checkpoint) checkpoint(t);
    }
    if (checkpoint) checkpoint(t);
    return t;
}

}  // namespace

PruneTrajectory tale_search(int n_layers, const AccuracyFn& accuracy_of, double epsilon,
                            ThresholdMode mode, const std::string& model_hash,
                            const std::string& task_hash, const std::string& tool_version,
                            const CheckpointFn& checkpoint) {
    if (epsilon < 0.0) throw usage_error("epsilon must be >= 0");
    if (n_layers < 2) throw usage_error("search needs at least 2 layers");

    PruneTrajectory t;
    t.model_hash = model_hash;
    t.task_hash = task_hash;
    t.epsilon = epsilon;
    t.mode = mode;
    t.tool_version = tool_version;
    t.termination = Termination::in_progress;

    IterationRecord base;
    base.iteration = 0;
    base.accuracy = accuracy_of(LayerMask{});
    base.speedup_proxy = 1.0;
    base.timestamp = now_utc_iso8601();
    t.iterations.push_back(std::move(base));
    if (checkpoint) checkpoint(t);

    return run_loop(std::move(t), n_layers, accuracy_of, checkpoint);
}

PruneTrajectory resume_search(PruneTrajectory trajectory, int n_layers,
                              const AccuracyFn& accuracy_of, const std::string& model_hash,
                              const std::string& task_hash, const CheckpointFn& checkpoint) {
    if (trajectory.model_hash != model_hash) {
        throw integrity_error("trajectory was recorded for model " + trajectory.model_hash +
                              ", not " + model_hash);
    }
    if (trajectory.task_hash != task_hash) {
        throw integrity_error("trajectory was recorded for task " + trajectory.task_hash +
                              ", not " + task_hash);
    }
    if (trajectory.iterations.empty()) {
        throw integrity_error("trajectory holds no baseline record");
    }
    if (trajectory.termination != Termination::in_progress) return trajectory;
    return run_loop(std::move(trajectory), n_layers, accuracy_of, checkpoint);
}

AccuracyFn model_accuracy_fn(const TransformerModel& model, const std::vector<Example>& split,
                             const TaskSpec& spec) {
    return [&model, &split, &spec](const LayerMask& mask) {
        return accuracy(model, mask, split, spec).accuracy;
    };
}

void check_trajectory(const PruneTrajectory& t, int n_layers) {
    if (t.iterations.empty()) throw integrity_error("trajectory has no records");
    if (!t.iterations.front().mask.empty() || t.iterations.front().iteration != 0) {
        throw integrity_error("iteration 0 must carry an empty mask");
    }
    for (std::size_t i = 0; i < t.iterations.size(); ++i) {
        const IterationRecord& rec = t.iterations[i];
        if (rec.iteration != static_cast<int>(i)) throw integrity_error("iteration indices gap");
        if (rec.mask.size() != static_cast<int>(i)) {
            throw integrity_error("mask size " + std::to_string(rec.mask.size()) +
                                  " differs from iteration index " + std::to_string(i));
        }
        if (i == 0) continue;
        const IterationRecord& prev = t.iterations[i - 1];
        // nesting: mask extends the previous one by exactly the selection
        for (int l : prev.mask.deleted()) {
            if (!rec.mask.contains(l)) throw integrity_error("masks are not nested");
        }
        if (!rec.mask.contains(rec.selected_layer)) {
            throw integrity_error("selected layer missing from mask");
        }
        // candidate table covers exactly the layers surviving before this step
        const std::vector<int> expect = surviving_layers(n_layers, prev.mask);
        if (rec.candidates.size() != expect.size()) {
            throw integrity_error("candidate table size mismatch at iteration " +
                                  std::to_string(i));
        }
        for (int l : expect) {
            if (!rec.candidates.count(l)) {
                throw integrity_error("candidate table missing layer " + std::to_string(l));
            }
        }
        const auto [best_layer, best_acc] = table_argmax(rec.candidates);
        if (best_layer != rec.selected_layer || best_acc != rec.accuracy) {
            throw integrity_error("greedy-step optimality violated at iteration " +
                                  std::to_string(i));
        }
    }
}

}  // namespace tale
