#pragma once

#include <string>
#include <vector>

#include "tale/model.hpp"
#include "tale/task.hpp"

namespace tale {

struct EvalResult {
    double accuracy = 0.0;  // n_correct / n_examples, exactly
    int n_examples = 0;
    int n_correct = 0;
    double wall_time_per_example = 0.0;  // seconds
    double speedup_measured = 0.0;       // vs a supplied baseline time; 0 when none supplied
    double speedup_proxy = 0.0;          // L / (L - #D)
};

struct SpeedupResult {
    double measured = 0.0;
    double proxy = 0.0;
};

// Argmax over the K answer-token entries of a full-vocab score vector;
// ties break toward the lowest token id. Returns the class index.
int answer_argmax(const std::vector<double>& vocab_scores, const TaskSpec& spec);

int predict_label(const TransformerModel& model, const LayerMask& mask, const Example& ex,
                  const TaskSpec& spec);

// Deterministic accuracy count over a split; examples may be sharded across
// threads, correctness counts merge by summation. Wall time covers the same
// pass. If baseline_time_per_example > 0 the measured speedup is filled in.
EvalResult accuracy(const TransformerModel& model, const LayerMask& mask,
                    const std::vector<Example>& split, const TaskSpec& spec,
                    double baseline_time_per_example = 0.0);

// Median-of-reps wall time of the full model divided by median wall time of
// the masked model, plus the layer-count proxy. Timing passes run strictly
// serially.
SpeedupResult speedup(const TransformerModel& model, const LayerMask& mask,
                      const std::vector<Example>& split, const TaskSpec& spec, int reps,
                      int warmup);

// (best - baseline) / baseline * 100
double percentage_gain(double best_acc, double baseline_acc);

double speedup_proxy(int n_layers, int n_dropped);

// JSON object with exactly the six EvalResult fields.
std::string eval_result_json(const EvalResult& r);

}  // namespace tale
