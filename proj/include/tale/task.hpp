#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace tale {

// Seeded synthetic single-answer-token classification tasks. Each example is
// a fixed-length sequence of input-symbol tokens; the model answers by
// ranking the K answer tokens at the last position.
enum class TaskKind { parity, modular_sum, kv_lookup, majority, copy_last };

TaskKind task_kind_from_string(const std::string& name);
std::string to_string(TaskKind kind);

struct TaskSpec {
    TaskKind kind = TaskKind::copy_last;
    int seq_len = 0;
    int n_input_symbols = 0;  // token ids [0 .. n_input_symbols)
    int n_answer_slots = 0;   // token ids [n_input_symbols .. n_input_symbols + n_answer_slots)
    int n_classes = 0;        // K <= n_answer_slots
    int n_keys = 0;           // kv_lookup only: keys are the first n_keys input symbols
    int n_train = 0;
    int n_val = 0;
    int n_test = 0;
    std::uint64_t seed = 0;

    int vocab_size() const { return n_input_symbols + n_answer_slots; }
    int answer_token(int label) const { return n_input_symbols + label; }

    void validate() const;
    static TaskSpec defaults(TaskKind kind, std::uint64_t seed);

    bool operator==(const TaskSpec&) const = default;
};

struct Example {
    std::vector<int> tokens;
    int label = 0;
};

struct TaskDataset {
    TaskSpec spec;
    std::vector<Example> train;
    std::vector<Example> val;
    std::vector<Example> test;
};

// Deterministic for a given spec (seed included). Splits draw from disjoint
// seed streams and are additionally deduplicated against earlier splits, so
// no sequence appears in two splits. Per-split label counts are balanced to
// within one example of uniform.
TaskDataset generate(const TaskSpec& spec);

// Empirical Shannon entropy of the label marginal, in bits.
double entropy_of_labels(const std::vector<Example>& split);

// Canonical key-value block describing a spec; keys in sorted order.
std::string spec_text(const TaskSpec& spec);
TaskSpec spec_from_text(const std::string& text);

// Line-delimited export: spec block, then [train]/[val]/[test] sections of
// `tokens<TAB>label` records with space-separated token ids.
std::string export_dataset(const TaskDataset& ds);
TaskDataset import_dataset(const std::string& text);

}  // namespace tale
