#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tale/model.hpp"
#include "tale/task.hpp"

namespace tale {

struct TrainConfig {
    int epochs = 12;
    int batch_size = 16;
    double lr = 3e-3;          // cosine-decayed to lr * lr_min_ratio
    double lr_min_ratio = 0.1;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double adam_eps = 1e-8;
    // decoupled decay on matrix weights; keeps trained weight scales near
    // their (hot) initialization instead of letting the stream inflate
    double weight_decay = 2.0;
    std::uint64_t seed = 0;

    void validate(bool allow_zero_lr = false) const;
};

struct TrainResult {
    TransformerModel model;
    double final_loss = 0.0;          // mean train CE of the last epoch, nats
    std::vector<double> epoch_losses;
    double wall_seconds = 0.0;
};

// Prune/finetune composition matrix. Names are the composition, literally:
// no hidden extra stages.
enum class Regime {
    baseline,
    pruned_only,
    finetune_only,
    prune_then_finetune,
    finetune_then_prune,
    prune_finetune_prune,
};

std::string to_string(Regime r);
const std::vector<Regime>& all_regimes();

struct RegimeReport {
    Regime regime = Regime::baseline;
    double perf = 0.0;  // test-split accuracy of the stage's final model
    int dropped = 0;
    double train_seconds = 0.0;
};

// Reference toy setup: a 6-layer model that reliably clears 0.9 validation
// accuracy on copy_last. The noise fixture and the regime matrix build on it.
ModelConfig reference_model_config(const TaskSpec& task, std::uint64_t seed);
TrainConfig reference_train_config(std::uint64_t seed);

// Fresh model from `config` trained on the task's train split (answer-token
// cross-entropy at the last position). Deterministic given the two seeds.
TrainResult train_toy(const ModelConfig& config, const TaskDataset& task,
                      const TrainConfig& train_config);

// Re-draws every weight of block `layer` from the initialization
// distribution scaled by 0.5; the rest of the model is untouched.
TransformerModel inject_noise_layer(const TransformerModel& model, int layer,
                                    std::uint64_t seed);

// Full-parameter finetuning of the materialized pruned model; the returned
// model has n_layers - |mask| layers. lr = 0 is allowed and is a no-op pass.
TrainResult finetune(const TransformerModel& model, const LayerMask& mask,
                     const TaskDataset& task, const TrainConfig& train_config);

// Executes one regime composition; every pruning stage runs the greedy
// search with the given epsilon and selects the best-accuracy point.
RegimeReport run_regime(Regime regime, const TransformerModel& base_model,
                        const TaskDataset& task, double epsilon,
                        const TrainConfig& train_config);

std::vector<RegimeReport> run_all_regimes(const TransformerModel& base_model,
                                          const TaskDataset& task, double epsilon,
                                          const TrainConfig& train_config);

// regime,perf,dropped,train_seconds
std::string regimes_csv(const std::vector<RegimeReport>& reports);

}  // namespace tale
