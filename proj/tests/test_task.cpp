#include <doctest.h>

#include <cmath>
#include <map>
#include <set>

#include "tale/errors.hpp"
#include "tale/task.hpp"

using namespace tale;

namespace {

std::set<std::vector<int>> sequences(const std::vector<Example>& split) {
    std::set<std::vector<int>> s;
    for (const auto& ex : split) s.insert(ex.tokens);
    return s;
}

void check_balance(const std::vector<Example>& split, int n_classes) {
    std::map<int, int> counts;
    for (const auto& ex : split) counts[ex.label] += 1;
    const double uniform = 1.0 / n_classes;
    for (const auto& [label, c] : counts) {
        (void)label;
        const double frac = static_cast<double>(c) / static_cast<double>(split.size());
        CHECK(std::abs(frac - uniform) <= 0.05);
    }
}

}  // namespace

TEST_CASE("generation is deterministic") {
    const TaskSpec spec = TaskSpec::defaults(TaskKind::majority, 7);
    const TaskDataset a = generate(spec);
    const TaskDataset b = generate(spec);
    CHECK(export_dataset(a) == export_dataset(b));
    const TaskSpec other = TaskSpec::defaults(TaskKind::majority, 8);
    CHECK(export_dataset(generate(other)) != export_dataset(a));
}

TEST_CASE("splits are disjoint and balanced") {
    for (TaskKind kind : {TaskKind::parity, TaskKind::modular_sum, TaskKind::kv_lookup,
                          TaskKind::majority, TaskKind::copy_last}) {
        const TaskDataset ds = generate(TaskSpec::defaults(kind, 3));
        CHECK(ds.train.size() == 512);
        CHECK(ds.val.size() == 192);
        CHECK(ds.test.size() == 192);

        const auto tr = sequences(ds.train);
        const auto va = sequences(ds.val);
        const auto te = sequences(ds.test);
        for (const auto& s : va) CHECK(!tr.count(s));
        for (const auto& s : te) CHECK(!tr.count(s));
        for (const auto& s : te) CHECK(!va.count(s));

        check_balance(ds.train, ds.spec.n_classes);
        check_balance(ds.val, ds.spec.n_classes);
        check_balance(ds.test, ds.spec.n_classes);

        for (const auto& ex : ds.train) {
            CHECK(ex.label >= 0);
            CHECK(ex.label < ds.spec.n_classes);
            CHECK(static_cast<int>(ex.tokens.size()) == ds.spec.seq_len);
            for (int t : ex.tokens) {
                CHECK(t >= 0);
                CHECK(t < ds.spec.n_input_symbols);
            }
        }
    }
}

TEST_CASE("parity labels odd bit counts") {
    TaskSpec spec = TaskSpec::defaults(TaskKind::parity, 1);
    spec.seq_len = 4;
    spec.n_train = 12;
    spec.n_val = 2;
    spec.n_test = 2;
    const TaskDataset ds = generate(spec);
    for (const auto& ex : ds.train) {
        int ones = 0;
        for (int t : ex.tokens) ones += t;
        CHECK(ex.label == ones % 2);
    }
}

TEST_CASE("majority labels match a brute-force counter") {
    const TaskDataset ds = generate(TaskSpec::defaults(TaskKind::majority, 5));
    for (const auto& ex : ds.train) {
        std::map<int, int> counts;
        for (int t : ex.tokens) counts[t] += 1;
        int best = 0, best_count = -1;
        for (const auto& [sym, c] : counts) {
            if (c > best_count) {  // map iterates ascending: ties go to the lowest
                best = sym;
                best_count = c;
            }
        }
        CHECK(ex.label == best);
    }
}

TEST_CASE("kv_lookup labels resolve the queried key") {
    const TaskDataset ds = generate(TaskSpec::defaults(TaskKind::kv_lookup, 11));
    for (const auto& ex : ds.train) {
        const int query = ex.tokens.back();
        int found = -1;
        for (std::size_t p = 0; p + 1 < ex.tokens.size(); p += 2) {
            if (ex.tokens[p] == query) found = ex.tokens[p + 1] - ds.spec.n_keys;
        }
        CHECK(found == ex.label);
    }
}

TEST_CASE("copy_last labels equal the final symbol") {
    const TaskDataset ds = generate(TaskSpec::defaults(TaskKind::copy_last, 13));
    for (const auto& ex : ds.train) CHECK(ex.label == ex.tokens.back());
}

TEST_CASE("label entropy: uniform and skewed splits") {
    std::vector<Example> two = {{{0}, 0}, {{1}, 1}};
    CHECK(entropy_of_labels(two) == doctest::Approx(1.0).epsilon(1e-12));

    std::vector<Example> four = {{{0}, 0}, {{1}, 1}, {{2}, 2}, {{3}, 3}};
    CHECK(entropy_of_labels(four) == doctest::Approx(2.0).epsilon(1e-12));

    std::vector<Example> skewed = {{{0}, 0}, {{1}, 0}, {{2}, 0}, {{3}, 1}};
    CHECK(entropy_of_labels(skewed) == doctest::Approx(0.8113).epsilon(1e-4));

    CHECK_THROWS_AS(entropy_of_labels({}), usage_error);
}

TEST_CASE("degenerate specs are rejected") {
    TaskSpec spec = TaskSpec::defaults(TaskKind::copy_last, 1);
    spec.n_classes = 6;  // more classes than answer slots
    CHECK_THROWS_AS(spec.validate(), config_error);

    spec = TaskSpec::defaults(TaskKind::kv_lookup, 1);
    spec.seq_len = 11;  // 5 pairs but only 4 distinct keys
    CHECK_THROWS_AS(spec.validate(), config_error);

    spec = TaskSpec::defaults(TaskKind::parity, 1);
    spec.n_classes = 1;
    CHECK_THROWS_AS(spec.validate(), config_error);
}

TEST_CASE("dataset export round-trips") {
    const TaskDataset ds = generate(TaskSpec::defaults(TaskKind::kv_lookup, 21));
    const std::string text = export_dataset(ds);
    const TaskDataset back = import_dataset(text);
    CHECK(back.spec == ds.spec);
    CHECK(back.train.size() == ds.train.size());
    CHECK(export_dataset(back) == text);
    for (std::size_t i = 0; i < ds.train.size(); ++i) {
        CHECK(back.train[i].tokens == ds.train[i].tokens);
        CHECK(back.train[i].label == ds.train[i].label);
    }
}

TEST_CASE("spec text is canonical and parses back") {
    const TaskSpec spec = TaskSpec::defaults(TaskKind::modular_sum, 9);
    const std::string text = spec_text(spec);
    CHECK(spec_from_text(text) == spec);
    // keys are sorted: kind first, then n_* alphabetically
    CHECK(text.find("kind = modular_sum") == 0);
}
