#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "tale/eval.hpp"
#include "tale/model.hpp"
#include "tale/task.hpp"

namespace tale {

// Acceptance reference for a candidate deletion: the current model's
// accuracy, or the iteration-0 baseline accuracy.
enum class ThresholdMode { relative_current, relative_baseline };

enum class Termination { in_progress, no_improving_candidate, max_deletions_reached };

ThresholdMode threshold_mode_from_string(const std::string& s);
std::string to_string(ThresholdMode mode);
std::string to_string(Termination t);
Termination termination_from_string(const std::string& s);

struct IterationRecord {
    int iteration = 0;               // 0 = baseline
    LayerMask mask;                  // cumulative mask after this iteration
    int selected_layer = 0;          // original 1-based index; 0 at iteration 0
    double accuracy = 0.0;           // validation accuracy of the masked model
    std::map<int, double> candidates;  // original layer -> accuracy if deleted next
    double speedup_proxy = 1.0;
    std::string timestamp;           // excluded from canonical content
};

struct PruneTrajectory {
    std::string model_hash;  // lowercase hex sha-256 of the weight-file bytes
    std::string task_hash;
    double epsilon = 0.0;
    ThresholdMode mode = ThresholdMode::relative_current;
    std::string tool_version;
    std::vector<IterationRecord> iterations;
    Termination termination = Termination::in_progress;
};

// Validation accuracy of the model under a given cumulative mask. The
// production oracle wraps a model and split; tests may substitute lookup
// tables.
using AccuracyFn = std::function<double(const LayerMask&)>;

// Called after every appended record so a driver can checkpoint the file.
using CheckpointFn = std::function<void(const PruneTrajectory&)>;

// One accuracy per surviving layer, each under current_mask ∪ {layer}.
// Candidates are evaluated independently (and possibly in parallel); the
// result does not depend on evaluation order.
std::map<int, double> evaluate_candidates(int n_layers, const LayerMask& current_mask,
                                          const AccuracyFn& accuracy_of);

// Greedy iterative layer elimination. Per iteration: evaluate all candidate
// single-layer deletions, pick the argmax (ties break to the lowest original
// layer index), accept iff it clears reference - epsilon, else stop. Never
// deletes more than n_layers - 1 layers.
PruneTrajectory tale_search(int n_layers, const AccuracyFn& accuracy_of, double epsilon,
                            ThresholdMode mode, const std::string& model_hash,
                            const std::string& task_hash, const std::string& tool_version,
                            const CheckpointFn& checkpoint = {});

// Continues an interrupted search from its last record. Hashes must match
// the trajectory header. A terminated trajectory is returned unchanged.
PruneTrajectory resume_search(PruneTrajectory trajectory, int n_layers,
                              const AccuracyFn& accuracy_of, const std::string& model_hash,
                              const std::string& task_hash, const CheckpointFn& checkpoint = {});

// Production oracle: accuracy of `model` on `split` under the given mask.
AccuracyFn model_accuracy_fn(const TransformerModel& model, const std::vector<Example>& split,
                             const TaskSpec& spec);

// Asserts the trajectory's own invariants (nesting, greedy-step optimality,
// candidate-table domains); throws integrity_error on violation.
void check_trajectory(const PruneTrajectory& t, int n_layers);

}  // namespace tale
