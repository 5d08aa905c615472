#include "tale/task.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include "tale/errors.hpp"
#include "tale/rng.hpp"

namespace tale {

TaskKind task_kind_from_string(const std::string& name) {
    if (name == "parity") return TaskKind::parity;
    if (name == "modular_sum") return TaskKind::modular_sum;
    if (name == "kv_lookup") return TaskKind::kv_lookup;
    if (name == "majority") return TaskKind::majority;
    if (name == "copy_last") return TaskKind::copy_last;
    throw input_error("unknown task kind '" + name + "'");
}

std::string to_string(TaskKind kind) {
    switch (kind) {
        case TaskKind::parity: return "parity";
        case TaskKind::modular_sum: return "modular_sum";
        case TaskKind::kv_lookup: return "kv_lookup";
        case TaskKind::majority: return "majority";
        case TaskKind::copy_last: return "copy_last";
    }
    throw input_error("invalid task kind value");
}

void TaskSpec::validate() const {
    if (n_classes < 2) throw config_error("task needs at least 2 classes");
    if (n_classes > n_answer_slots) {
        throw config_error("n_classes " + std::to_string(n_classes) +
                           " exceeds answer slots " + std::to_string(n_answer_slots));
    }
    if (seq_len < 1) throw config_error("seq_len must be >= 1");
    if (n_input_symbols < 1) throw config_error("need at least one input symbol");
    if (n_train < 1 || n_val < 1 || n_test < 1) throw config_error("all splits must be nonempty");
    switch (kind) {
        case TaskKind::parity:
            if (n_input_symbols < 2) throw config_error("parity needs symbols {0,1}");
            break;
        case TaskKind::modular_sum:
            break;
        case TaskKind::kv_lookup: {
            if (seq_len % 2 == 0 || seq_len < 3)
                throw config_error("kv_lookup needs odd seq_len >= 3");
            const int pairs = (seq_len - 1) / 2;
            if (n_keys < 2 || pairs > n_keys)
                throw config_error("kv_lookup needs n_keys >= max(2, pairs)");
            if (n_input_symbols != n_keys + n_classes)
                throw config_error("kv_lookup input symbols must be keys + value tokens");
            break;
        }
        case TaskKind::majority:
        case TaskKind::copy_last:
            if (n_input_symbols < n_classes)
                throw config_error("task needs one input symbol per class");
            break;
    }
}

TaskSpec TaskSpec::defaults(TaskKind kind, std::uint64_t seed) {
    TaskSpec s;
    s.kind = kind;
    s.seed = seed;
    s.n_train = 512;
    s.n_val = 192;
    s.n_test = 192;
    switch (kind) {
        case TaskKind::parity:
            s.seq_len = 12;
            s.n_input_symbols = 2;
            s.n_classes = 2;
            break;
        case TaskKind::modular_sum:
            s.seq_len = 6;
            s.n_input_symbols = 8;
            s.n_classes = 4;
            break;
        case TaskKind::kv_lookup:
            s.seq_len = 7;  // 3 pairs + query
            s.n_keys = 4;
            s.n_classes = 4;
            s.n_input_symbols = s.n_keys + s.n_classes;
            break;
        case TaskKind::majority:
            s.seq_len = 7;
            s.n_input_symbols = 3;
            s.n_classes = 3;
            break;
        case TaskKind::copy_last:
            s.seq_len = 8;
            s.n_input_symbols = 4;
            s.n_classes = 4;
            break;
    }
    s.n_answer_slots = s.n_classes;
    s.validate();
    return s;
}

namespace {

int label_of(const TaskSpec& spec, const std::vector<int>& tokens) {
    switch (spec.kind) {
        case TaskKind::parity: {
            int ones = 0;
            for (int t : tokens) ones += (t == 1) ? 1 : 0;
            return ones % 2;
        }
        case TaskKind::modular_sum: {
            long sum = 0;
            for (int t : tokens) sum += t;
            return static_cast<int>(sum % spec.n_classes);
        }
        case TaskKind::kv_lookup: {
            const int query = tokens.back();
            const int pairs = (spec.seq_len - 1) / 2;
            for (int p = pairs - 1; p >= 0; --p) {
                if (tokens[static_cast<std::size_t>(2 * p)] == query)
                    return tokens[static_cast<std::size_t>(2 * p + 1)] - spec.n_keys;
            }
            return -1;  // query key absent; generator never emits this
        }
        case TaskKind::majority: {
            std::vector<int> counts(static_cast<std::size_t>(spec.n_classes), 0);
            for (int t : tokens) counts[static_cast<std::size_t>(t)] += 1;
            int best = 0;
            for (int c = 1; c < spec.n_classes; ++c)
                if (counts[static_cast<std::size_t>(c)] > counts[static_cast<std::size_t>(best)])
                    best = c;
            return best;
        }
        case TaskKind::copy_last:
            return tokens.back();
    }
    throw config_error("invalid task kind value");
}

std::vector<int> draw_sequence(const TaskSpec& spec, Rng& rng) {
    std::vector<int> tokens(static_cast<std::size_t>(spec.seq_len));
    if (spec.kind == TaskKind::kv_lookup) {
        const int pairs = (spec.seq_len - 1) / 2;
        // distinct keys in random order, then random values, query repeats one key
        std::vector<int> keys(static_cast<std::size_t>(spec.n_keys));
        for (int i = 0; i < spec.n_keys; ++i) keys[static_cast<std::size_t>(i)] = i;
        for (int i = spec.n_keys - 1; i > 0; --i) {
            const int j = rng.uniform_int(0, i + 1);
            std::swap(keys[static_cast<std::size_t>(i)], keys[static_cast<std::size_t>(j)]);
        }
        for (int p = 0; p < pairs; ++p) {
            tokens[static_cast<std::size_t>(2 * p)] = keys[static_cast<std::size_t>(p)];
            tokens[static_cast<std::size_t>(2 * p + 1)] =
                spec.n_keys + rng.uniform_int(0, spec.n_classes);
        }
        tokens.back() = keys[static_cast<std::size_t>(rng.uniform_int(0, pairs))];
        return tokens;
    }
    const int symbol_range =
        (spec.kind == TaskKind::parity)
            ? 2
            : (spec.kind == TaskKind::modular_sum ? spec.n_input_symbols : spec.n_classes);
    for (auto& t : tokens) t = rng.uniform_int(0, symbol_range);
    return tokens;
}

std::vector<Example> generate_split(const TaskSpec& spec, int n, Rng rng,
                                    std::set<std::vector<int>>& used) {
    // Interleave target labels round-robin so every prefix of the split is
    // close to balanced, then rejection-sample each target.
    std::vector<int> targets;
    targets.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) targets.push_back(i % spec.n_classes);

    std::vector<Example> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int target : targets) {
        constexpr int max_attempts = 100000;
        int attempt = 0;
        for (;; ++attempt) {
            if (attempt >= max_attempts) {
                throw config_error("could not generate a fresh example with label " +
                                   std::to_string(target) + "; task space too small for " +
                                   to_string(spec.kind));
            }
            std::vector<int> tokens = draw_sequence(spec, rng);
            if (label_of(spec, tokens) != target) continue;
            if (used.count(tokens)) continue;
            used.insert(tokens);
            out.push_back({std::move(tokens), target});
            break;
        }
    }
    return out;
}

}  // namespace

TaskDataset generate(const TaskSpec& spec) {
    spec.validate();
    Rng root(spec.seed ^ 0x7a5e5ca1e5eedULL);
    std::set<std::vector<int>> used;
    TaskDataset ds;
    ds.spec = spec;
    ds.train = generate_split(spec, spec.n_train, root.fork(1), used);
    ds.val = generate_split(spec, spec.n_val, root.fork(2), used);
    ds.test = generate_split(spec, spec.n_test, root.fork(3), used);
    return ds;
}

double entropy_of_labels(const std::vector<Example>& split) {
    if (split.empty()) throw usage_error("entropy of an empty split");
    std::map<int, std::size_t> counts;
    for (const auto& ex : split) counts[ex.label] += 1;
    const double n = static_cast<double>(split.size());
    double h = 0.0;
    for (const auto& [label, c] : counts) {
        const double p = static_cast<double>(c) / n;
        h -= p * std::log2(p);
    }
    return h;
}

// ---- text formats --------------------------------------------------------

std::string spec_text(const TaskSpec& spec) {
    // canonical: keys sorted, "key = value", LF endings
    std::map<std::string, std::string> kv;
    kv["kind"] = to_string(spec.kind);
    kv["n_answer_slots"] = std::to_string(spec.n_answer_slots);
    kv["n_classes"] = std::to_string(spec.n_classes);
    kv["n_input_symbols"] = std::to_string(spec.n_input_symbols);
    kv["n_keys"] = std::to_string(spec.n_keys);
    kv["n_test"] = std::to_string(spec.n_test);
    kv["n_train"] = std::to_string(spec.n_train);
    kv["n_val"] = std::to_string(spec.n_val);
    kv["seed"] = std::to_string(spec.seed);
    kv["seq_len"] = std::to_string(spec.seq_len);
    std::string out;
    for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
    return out;
}

TaskSpec spec_from_text(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto eq = line.find(" = ");
        if (eq == std::string::npos) throw format_error("bad spec line '" + line + "'", 0);
        kv[line.substr(0, eq)] = line.substr(eq + 3);
    }
    auto geti = [&](const std::string& key) {
        auto it = kv.find(key);
        if (it == kv.end()) throw format_error("spec missing key '" + key + "'", 0);
        try {
            return std::stoi(it->second);
        } catch (const std::exception&) {
            throw format_error("spec key '" + key + "' is not an integer", 0);
        }
    };
    TaskSpec s;
    s.kind = task_kind_from_string(kv.count("kind") ? kv["kind"]
                                                    : throw format_error("spec missing kind", 0));
    s.n_answer_slots = geti("n_answer_slots");
    s.n_classes = geti("n_classes");
    s.n_input_symbols = geti("n_input_symbols");
    s.n_keys = geti("n_keys");
    s.n_test = geti("n_test");
    s.n_train = geti("n_train");
    s.n_val = geti("n_val");
    s.seq_len = geti("seq_len");
    try {
        s.seed = std::stoull(kv["seed"]);
    } catch (const std::exception&) {
        throw format_error("spec key 'seed' is not an integer", 0);
    }
    s.validate();
    return s;
}

namespace {

void append_split(std::string& out, const char* name, const std::vector<Example>& split) {
    out += std::string("[") + name + "]\n";
    for (const auto& ex : split) {
        for (std::size_t i = 0; i < ex.tokens.size(); ++i) {
            if (i) out += ' ';
            out += std::to_string(ex.tokens[i]);
        }
        out += '\t';
        out += std::to_string(ex.label);
        out += '\n';
    }
}

}  // namespace

std::string export_dataset(const TaskDataset& ds) {
    std::string out = spec_text(ds.spec);
    out += '\n';
    append_split(out, "train", ds.train);
    append_split(out, "val", ds.val);
    append_split(out, "test", ds.test);
    return out;
}

TaskDataset import_dataset(const std::string& text) {
    const auto blank = text.find("\n\n");
    if (blank == std::string::npos) throw format_error("dataset missing spec/record separator", 0);
    TaskDataset ds;
    ds.spec = spec_from_text(text.substr(0, blank + 1));
    std::istringstream in(text.substr(blank + 2));
    std::string line;
    std::vector<Example>* current = nullptr;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (line == "[train]") { current = &ds.train; continue; }
        if (line == "[val]") { current = &ds.val; continue; }
        if (line == "[test]") { current = &ds.test; continue; }
        if (!current) throw format_error("record before any split header", 0);
        const auto tab = line.find('\t');
        if (tab == std::string::npos) throw format_error("record missing tab separator", 0);
        Example ex;
        std::istringstream toks(line.substr(0, tab));
        int t;
        while (toks >> t) ex.tokens.push_back(t);
        ex.label = std::stoi(line.substr(tab + 1));
        current->push_back(std::move(ex));
    }
    return ds;
}

}  // namespace tale
