#include "tale/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "tale/errors.hpp"
#include "tale/eval.hpp"
#include "tale/io.hpp"
#include "tale/search.hpp"
#include "tale/select.hpp"
#include "tale/tensor.hpp"

namespace tale {

void TrainConfig::validate(bool allow_zero_lr) const {
    if (epochs < 1) throw config_error("epochs must be >= 1");
    if (batch_size < 1) throw config_error("batch size must be >= 1");
    if (lr < 0.0 || (!allow_zero_lr && lr == 0.0)) throw config_error("learning rate must be > 0");
    if (lr_min_ratio < 0.0 || lr_min_ratio > 1.0) throw config_error("lr_min_ratio in [0,1]");
    if (weight_decay < 0.0) throw config_error("weight decay must be >= 0");
}

std::string to_string(Regime r) {
    switch (r) {
        case Regime::baseline: return "Baseline";
        case Regime::pruned_only: return "PrunedOnly";
        case Regime::finetune_only: return "FT";
        case Regime::prune_then_finetune: return "Prune->FT";
        case Regime::finetune_then_prune: return "FT->Prune";
        case Regime::prune_finetune_prune: return "PruneFTPrune";
    }
    throw input_error("invalid regime value");
}

const std::vector<Regime>& all_regimes() {
    static const std::vector<Regime> order = {
        Regime::baseline,           Regime::pruned_only,
        Regime::finetune_only,      Regime::prune_then_finetune,
        Regime::finetune_then_prune, Regime::prune_finetune_prune};
    return order;
}

ModelConfig reference_model_config(const TaskSpec& task, std::uint64_t seed) {
    ModelConfig c;
    c.n_layers = 6;
    c.d_model = 32;
    c.n_heads = 4;
    c.d_ff = 64;
    c.vocab_size = task.vocab_size();
    c.max_seq_len = task.seq_len;
    c.seed = seed;
    return c;
}

TrainConfig reference_train_config(std::uint64_t seed) {
    TrainConfig c;
    c.epochs = 12;
    c.batch_size = 16;
    c.lr = 3e-3;
    c.seed = seed;
    return c;
}

namespace {

using Clock = std::chrono::steady_clock;

// One optimization pass over the task's train split; mutates `model`.
// Batch loss is the mean answer-token cross-entropy at the last position.
void run_training(TransformerModel& model, const TaskDataset& task, const TrainConfig& cfg,
                  TrainResult& result) {
    const auto started = Clock::now();
    const std::vector<Example>& train = task.train;
    const int n = static_cast<int>(train.size());
    const int batches_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
    const long total_steps = static_cast<long>(batches_per_epoch) * cfg.epochs;

    std::vector<Tensor> params = model.parameters();
    std::vector<bool> decayed;  // matrices only; norm gains are left alone
    for (const auto& p : params) decayed.push_back(p.shape.size() == 2);
    AdamState adam;
    Rng shuffle_rng = Rng(cfg.seed).fork(0x51f71eULL);

    std::vector<int> order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;

    LayerMask no_mask;
    long step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (int i = n - 1; i > 0; --i) {
            const int j = shuffle_rng.uniform_int(0, i + 1);
            std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
        }
        double epoch_loss = 0.0;
        for (int b = 0; b < batches_per_epoch; ++b) {
            const int lo = b * cfg.batch_size;
            const int hi = std::min(n, lo + cfg.batch_size);
            Tensor batch_loss;
            for (int idx = lo; idx < hi; ++idx) {
                const Example& ex = train[static_cast<std::size_t>(order[static_cast<std::size_t>(idx)])];
                Tensor logits = forward_train(model, ex.tokens, no_mask);
                Tensor last = take_row(logits, logits.rows() - 1);
                Tensor ce = cross_entropy(last, {task.spec.answer_token(ex.label)});
                batch_loss = (idx == lo) ? ce : add(batch_loss, ce);
            }
            batch_loss = scale(batch_loss, 1.0 / static_cast<double>(hi - lo));
            const double loss_value = batch_loss.scalar();
            if (!std::isfinite(loss_value)) {
                throw train_error("training diverged: loss is not finite at step " +
                                  std::to_string(step));
            }
            epoch_loss += loss_value * static_cast<double>(hi - lo);

            model.zero_grads();
            backward(batch_loss);
            const double progress = static_cast<double>(step) / static_cast<double>(total_steps);
            const double lr_min = cfg.lr * cfg.lr_min_ratio;
            const double lr =
                lr_min + 0.5 * (cfg.lr - lr_min) * (1.0 + std::cos(3.14159265358979323846 * progress));
            adam_step(params, adam, lr, cfg.beta1, cfg.beta2, cfg.adam_eps);
            if (cfg.weight_decay > 0.0) {
                const double factor = 1.0 - lr * cfg.weight_decay;
                for (std::size_t pi = 0; pi < params.size(); ++pi) {
                    if (!decayed[pi]) continue;
                    for (double& v : *params[pi].data) v *= factor;
                }
            }
            ++step;
        }
        result.epoch_losses.push_back(epoch_loss / static_cast<double>(n));
    }
    result.final_loss = result.epoch_losses.back();
    result.wall_seconds = std::chrono::duration<double>(Clock::now() - started).count();
}

}  // namespace

TrainResult train_toy(const ModelConfig& config, const TaskDataset& task,
                      const TrainConfig& train_config) {
    config.validate();
    train_config.validate();
    if (config.vocab_size < task.spec.vocab_size()) {
        throw config_error("model vocab " + std::to_string(config.vocab_size) +
                           " smaller than task vocab " + std::to_string(task.spec.vocab_size()));
    }
    TrainResult result;
    result.model = TransformerModel::init(config);
    run_training(result.model, task, train_config, result);
    return result;
}

TransformerModel inject_noise_layer(const TransformerModel& model, int layer,
                                    std::uint64_t seed) {
    const int L = model.config.n_layers;
    if (layer < 1 || layer > L) {
        throw input_error("noise layer " + std::to_string(layer) + " outside [1," +
                          std::to_string(L) + "]");
    }
    TransformerModel out = model.clone();
    Rng rng(seed);
    const double std_d =
        0.5 * block_init_gain / std::sqrt(static_cast<double>(model.config.d_model));
    const double std_ff =
        0.5 * block_init_gain / std::sqrt(static_cast<double>(model.config.d_ff));
    LayerBlock& b = out.blocks[static_cast<std::size_t>(layer - 1)];
    for (Tensor* w : {&b.wq, &b.wk, &b.wv, &b.wo, &b.w_up}) {
        for (double& v : *w->data) v = rng.gaussian(0.0, std_d);
    }
    for (double& v : *b.w_down.data) v = rng.gaussian(0.0, std_ff);
    // norm gains re-initialize to their constant starting value
    std::fill(b.norm_attn.data->begin(), b.norm_attn.data->end(), 1.0);
    std::fill(b.norm_mlp.data->begin(), b.norm_mlp.data->end(), 1.0);
    return out;
}

TrainResult finetune(const TransformerModel& model, const LayerMask& mask,
                     const TaskDataset& task, const TrainConfig& train_config) {
    train_config.validate(/*allow_zero_lr=*/true);
    TrainResult result;
    result.model = materialize_pruned(model, mask);
    run_training(result.model, task, train_config, result);
    return result;
}

namespace {

// Greedy search over the model's validation split; returns the
// best-accuracy mask (possibly empty).
LayerMask prune_stage(const TransformerModel& model, const TaskDataset& task, double epsilon) {
    const AccuracyFn fn = model_accuracy_fn(model, task.val, task.spec);
    const PruneTrajectory traj =
        tale_search(model.config.n_layers, fn, epsilon, ThresholdMode::relative_current,
                    "in-memory", "in-memory", "regime");
    return traj.iterations[static_cast<std::size_t>(best_model(traj))].mask;
}

double test_accuracy(const TransformerModel& model, const LayerMask& mask,
                     const TaskDataset& task) {
    return accuracy(model, mask, task.test, task.spec).accuracy;
}

}  // namespace

RegimeReport run_regime(Regime regime, const TransformerModel& base_model,
                        const TaskDataset& task, double epsilon,
                        const TrainConfig& train_config) {
    RegimeReport report;
    report.regime = regime;
    LayerMask none;
    switch (regime) {
        case Regime::baseline: {
            report.perf = test_accuracy(base_model, none, task);
            report.dropped = 0;
            report.train_seconds = 0.0;
            break;
        }
        case Regime::pruned_only: {
            const LayerMask mask = prune_stage(base_model, task, epsilon);
            report.perf = test_accuracy(base_model, mask, task);
            report.dropped = mask.size();
            report.train_seconds = 0.0;
            break;
        }
        case Regime::finetune_only: {
            const TrainResult ft = finetune(base_model, none, task, train_config);
            report.perf = test_accuracy(ft.model, none, task);
            report.dropped = 0;
            report.train_seconds = ft.wall_seconds;
            break;
        }
        case Regime::prune_then_finetune: {
            const LayerMask mask = prune_stage(base_model, task, epsilon);
            const TrainResult ft = finetune(base_model, mask, task, train_config);
            report.perf = test_accuracy(ft.model, none, task);
            report.dropped = mask.size();
            report.train_seconds = ft.wall_seconds;
            break;
        }
        case Regime::finetune_then_prune: {
            const TrainResult ft = finetune(base_model, none, task, train_config);
            const LayerMask mask = prune_stage(ft.model, task, epsilon);
            report.perf = test_accuracy(ft.model, mask, task);
            report.dropped = mask.size();
            report.train_seconds = ft.wall_seconds;
            break;
        }
        case Regime::prune_finetune_prune: {
            const LayerMask first = prune_stage(base_model, task, epsilon);
            const TrainResult ft = finetune(base_model, first, task, train_config);
            const LayerMask second = prune_stage(ft.model, task, epsilon);
            report.perf = test_accuracy(ft.model, second, task);
            report.dropped = first.size() + second.size();
            report.train_seconds = ft.wall_seconds;
            break;
        }
    }
    return report;
}

std::vector<RegimeReport> run_all_regimes(const TransformerModel& base_model,
                                          const TaskDataset& task, double epsilon,
                                          const TrainConfig& train_config) {
    std::vector<RegimeReport> reports;
    for (Regime r : all_regimes()) {
        reports.push_back(run_regime(r, base_model, task, epsilon, train_config));
    }
    return reports;
}

std::string regimes_csv(const std::vector<RegimeReport>& reports) {
    std::string out = "# prune stages select the best-accuracy trajectory point\n";
    out += "regime,perf,dropped,train_seconds\n";
    for (const auto& r : reports) {
        out += to_string(r.regime) + "," + format_double(r.perf) + "," +
               std::to_string(r.dropped) + "," + format_double(r.train_seconds) + "\n";
    }
    return out;
}

}  // namespace tale
