#include "tale/eval.hpp"

#include <algorithm>
#include <chrono>
#include <stdexcept>

#include <json.hpp>

#include "tale/errors.hpp"

namespace tale {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return (n % 2 == 1) ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

int answer_argmax(const std::vector<double>& vocab_scores, const TaskSpec& spec) {
    if (static_cast<int>(vocab_scores.size()) < spec.vocab_size()) {
        throw usage_error("score vector shorter than task vocab");
    }
    int best = 0;
    double best_score = vocab_scores[static_cast<std::size_t>(spec.answer_token(0))];
    for (int c = 1; c < spec.n_classes; ++c) {
        const double s = vocab_scores[static_cast<std::size_t>(spec.answer_token(c))];
        if (s > best_score) {  // strict: ties stay at the lower token id
            best_score = s;
            best = c;
        }
    }
    return best;
}

int predict_label(const TransformerModel& model, const LayerMask& mask, const Example& ex,
                  const TaskSpec& spec) {
    Tensor logits = forward(model, ex.tokens, mask);
    const int last = logits.rows() - 1;
    std::vector<double> row(logits.data->begin() + static_cast<long>(last) * logits.cols(),
                            logits.data->begin() + static_cast<long>(last + 1) * logits.cols());
    return answer_argmax(row, spec);
}

EvalResult accuracy(const TransformerModel& model, const LayerMask& mask,
                    const std::vector<Example>& split, const TaskSpec& spec,
                    double baseline_time_per_example) {
    if (split.empty()) throw usage_error("accuracy over an empty split");
    // validate serially: an exception must not escape the parallel region
    for (const Example& ex : split) validate_inputs(model, ex.tokens, mask);
    const auto start = Clock::now();
    long long correct = 0;
    const long long n = static_cast<long long>(split.size());
#pragma omp parallel for schedule(static) reduction(+ : correct)
    for (long long i = 0; i < n; ++i) {
        const Example& ex = split[static_cast<std::size_t>(i)];
        if (predict_label(model, mask, ex, spec) == ex.label) correct += 1;
    }
    const double elapsed = seconds_since(start);

    EvalResult r;
    r.n_examples = static_cast<int>(n);
    r.n_correct = static_cast<int>(correct);
    r.accuracy = static_cast<double>(correct) / static_cast<double>(n);
    r.wall_time_per_example = elapsed / static_cast<double>(n);
    r.speedup_proxy = speedup_proxy(model.config.n_layers, mask.size());
    r.speedup_measured =
        baseline_time_per_example > 0.0 ? baseline_time_per_example / r.wall_time_per_example
                                        : 0.0;
    return r;
}

SpeedupResult speedup(const TransformerModel& model, const LayerMask& mask,
                      const std::vector<Example>& split, const TaskSpec& spec, int reps,
                      int warmup) {
    if (reps < 3) throw usage_error("speedup needs reps >= 3");
    if (warmup < 1) throw usage_error("speedup needs warmup >= 1");
    if (split.empty()) throw usage_error("speedup over an empty split");

    LayerMask full;
    auto timed_pass = [&](const LayerMask& m) {
        const auto start = Clock::now();
        // strictly serial pass; prediction result intentionally unused
        for (const Example& ex : split) (void)predict_label(model, m, ex, spec);
        return seconds_since(start);
    };

    for (int i = 0; i < warmup; ++i) {
        timed_pass(full);
        timed_pass(mask);
    }
    std::vector<double> full_times, masked_times;
    for (int i = 0; i < reps; ++i) {
        full_times.push_back(timed_pass(full));
        masked_times.push_back(timed_pass(mask));
    }

    SpeedupResult s;
    s.measured = median(full_times) / median(masked_times);
    s.proxy = speedup_proxy(model.config.n_layers, mask.size());
    return s;
}

double percentage_gain(double best_acc, double baseline_acc) {
    if (baseline_acc <= 0.0) {
        throw std::domain_error("percentage gain undefined for baseline accuracy " +
                                std::to_string(baseline_acc));
    }
    return (best_acc - baseline_acc) / baseline_acc * 100.0;
}

double speedup_proxy(int n_layers, int n_dropped) {
    return static_cast<double>(n_layers) / static_cast<double>(n_layers - n_dropped);
}

std::string eval_result_json(const EvalResult& r) {
    nlohmann::json j;
    j["accuracy"] = r.accuracy;
    j["n_examples"] = r.n_examples;
    j["n_correct"] = r.n_correct;
    j["wall_time_per_example"] = r.wall_time_per_example;
    j["speedup_measured"] = r.speedup_measured;
    j["speedup_proxy"] = r.speedup_proxy;
    return j.dump(2);
}

}  // namespace tale
