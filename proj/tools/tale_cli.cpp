// Command-line driver for the layer-elimination toolkit: train toy models,
// run the greedy search, pick operating points, and emit the analysis
// artifacts (lens curves, MI profiles, regime matrices).

#include <cstdlib>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "tale/errors.hpp"
#include "tale/eval.hpp"
#include "tale/io.hpp"
#include "tale/model.hpp"
#include "tale/probe.hpp"
#include "tale/search.hpp"
#include "tale/select.hpp"
#include "tale/task.hpp"
#include "tale/train.hpp"
#include "tale/version.hpp"

namespace {

using namespace tale;

std::uint64_t resolve_seed(const CLI::Option* seed_opt, std::uint64_t seed_flag) {
    if (seed_opt->count() > 0) return seed_flag;
    if (const char* env = std::getenv("TALE_SEED")) {
        try {
            return std::stoull(env);
        } catch (const std::exception&) {
            throw input_error(std::string("TALE_SEED is not an integer: '") + env + "'");
        }
    }
    return 0;
}

// key = value lines with model./train./task. prefixes; unknown keys rejected
std::map<std::string, std::string> parse_config_file(const std::string& path) {
    std::map<std::string, std::string> kv;
    if (path.empty()) return kv;
    std::istringstream in(read_file(path));
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw config_error("config line missing '=': " + line);
        auto trim = [](std::string s) {
            const auto a = s.find_first_not_of(" \t");
            const auto b = s.find_last_not_of(" \t");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return kv;
}

struct RunSetup {
    TaskSpec task_spec;
    ModelConfig model_config;
    TrainConfig train_config;
};

RunSetup build_setup(const std::string& task_kind, std::uint64_t seed,
                     const std::map<std::string, std::string>& cfg) {
    RunSetup s;
    s.task_spec = TaskSpec::defaults(task_kind_from_string(task_kind), seed);
    std::set<std::string> known;
    auto geti = [&](const std::string& key, int current) {
        known.insert(key);
        auto it = cfg.find(key);
        if (it == cfg.end()) return current;
        try {
            return std::stoi(it->second);
        } catch (const std::exception&) {
            throw config_error("config key '" + key + "' is not an integer: " + it->second);
        }
    };
    auto getd = [&](const std::string& key, double current) {
        known.insert(key);
        auto it = cfg.find(key);
        if (it == cfg.end()) return current;
        try {
            return std::stod(it->second);
        } catch (const std::exception&) {
            throw config_error("config key '" + key + "' is not a number: " + it->second);
        }
    };
    s.task_spec.seq_len = geti("task.seq_len", s.task_spec.seq_len);
    s.task_spec.n_train = geti("task.n_train", s.task_spec.n_train);
    s.task_spec.n_val = geti("task.n_val", s.task_spec.n_val);
    s.task_spec.n_test = geti("task.n_test", s.task_spec.n_test);
    s.task_spec.n_classes = geti("task.n_classes", s.task_spec.n_classes);
    s.task_spec.n_answer_slots = s.task_spec.n_classes;
    if (s.task_spec.kind == TaskKind::majority || s.task_spec.kind == TaskKind::copy_last) {
        s.task_spec.n_input_symbols = s.task_spec.n_classes;
    } else if (s.task_spec.kind == TaskKind::kv_lookup) {
        s.task_spec.n_input_symbols = s.task_spec.n_keys + s.task_spec.n_classes;
    }
    s.task_spec.validate();

    s.model_config = reference_model_config(s.task_spec, seed);
    s.model_config.n_layers = geti("model.n_layers", s.model_config.n_layers);
    s.model_config.d_model = geti("model.d_model", s.model_config.d_model);
    s.model_config.n_heads = geti("model.n_heads", s.model_config.n_heads);
    s.model_config.d_ff = geti("model.d_ff", s.model_config.d_ff);
    s.model_config.max_seq_len = geti("model.max_seq_len", s.model_config.max_seq_len);
    s.model_config.validate();

    s.train_config = reference_train_config(seed);
    s.train_config.epochs = geti("train.epochs", s.train_config.epochs);
    s.train_config.batch_size = geti("train.batch_size", s.train_config.batch_size);
    s.train_config.lr = getd("train.lr", s.train_config.lr);
    s.train_config.weight_decay = getd("train.weight_decay", s.train_config.weight_decay);
    s.train_config.validate();

    for (const auto& [key, value] : cfg) {
        (void)value;
        if (!known.count(key)) throw config_error("unknown config key '" + key + "'");
    }
    return s;
}

LayerMask parse_mask(const std::string& text, int n_layers) {
    std::vector<int> layers;
    std::istringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
        if (item.empty()) continue;
        try {
            layers.push_back(std::stoi(item));
        } catch (const std::exception&) {
            throw input_error("mask entry '" + item + "' is not a layer index");
        }
    }
    return LayerMask::of(std::move(layers), n_layers);
}

// ---- subcommands -----------------------------------------------------------

int cmd_train(const std::string& task, const std::string& config_path, const std::string& out,
              std::uint64_t seed) {
    const RunSetup setup = build_setup(task, seed, parse_config_file(config_path));
    const TaskDataset dataset = generate(setup.task_spec);
    TrainResult result = train_toy(setup.model_config, dataset, setup.train_config);
    save_model(result.model, out);
    const EvalResult val = accuracy(result.model, LayerMask{}, dataset.val, dataset.spec);
    std::cout << "trained " << to_string(setup.task_spec.kind) << " model: final loss "
              << format_double(result.final_loss) << ", val accuracy "
              << format_double(val.accuracy) << ", saved to " << out << "\n";
    return 0;
}

int cmd_prune(const std::string& model_path, const std::string& task,
              const std::string& config_path, double epsilon, const std::string& mode_name,
              const std::string& out, const std::string& resume_path, std::uint64_t seed) {
    const TransformerModel model = load_model(model_path);
    const RunSetup setup = build_setup(task, seed, parse_config_file(config_path));
    const TaskDataset dataset = generate(setup.task_spec);
    const std::string model_hash = sha256_hex(read_file(model_path));
    const std::string task_hash = sha256_hex(export_dataset(dataset));
    const AccuracyFn fn = model_accuracy_fn(model, dataset.val, dataset.spec);
    const CheckpointFn checkpoint = [&](const PruneTrajectory& t) { save_trajectory(t, out); };

    PruneTrajectory traj;
    if (!resume_path.empty()) {
        traj = resume_search(load_trajectory(resume_path), model.config.n_layers, fn, model_hash,
                             task_hash, checkpoint);
    } else {
        traj = tale_search(model.config.n_layers, fn, epsilon,
                           threshold_mode_from_string(mode_name), model_hash, task_hash,
                           tool_version, checkpoint);
    }
    save_trajectory(traj, out);
    write_file(out + ".csv", trajectory_csv(traj));
    std::cout << "search finished after " << traj.iterations.size() - 1 << " deletions ("
              << to_string(traj.termination) << "); trajectory in " << out << "\n";
    return 0;
}

int cmd_select(const std::string& traj_path, double lambda, bool use_measured,
               const std::string& model_path, const std::string& task,
               const std::string& config_path, const std::string& dataset_name,
               const std::string& out, const std::string& csv_out, std::uint64_t seed) {
    AehmParams{lambda}.validate();
    const PruneTrajectory traj = load_trajectory(traj_path);
    std::string name = dataset_name;
    if (name.empty()) {
        name = task.empty() ? "task-" + traj.task_hash.substr(0, 8) : task;
    }

    SelectionReport report;
    if (use_measured) {
        if (model_path.empty() || task.empty()) {
            throw input_error("--use-measured-speedup needs --model and --task to re-time masks");
        }
        const TransformerModel model = load_model(model_path);
        const RunSetup setup = build_setup(task, seed, parse_config_file(config_path));
        const TaskDataset dataset = generate(setup.task_spec);
        std::vector<double> speedups;
        for (const auto& rec : traj.iterations) {
            speedups.push_back(
                speedup(model, rec.mask, dataset.val, dataset.spec, 3, 1).measured);
        }
        report = build_selection_report(traj, name, lambda, speedups, true);
    } else {
        report = build_selection_report(traj, name, lambda);
    }

    const std::string json = selection_report_json(report);
    if (out.empty()) {
        std::cout << json;
    } else {
        write_file(out, json);
    }
    if (!csv_out.empty()) write_file(csv_out, selection_report_csv(report));
    return 0;
}

int cmd_lens(const std::string& model_path, const std::string& task,
             const std::string& config_path, const std::string& out, std::uint64_t seed) {
    const TransformerModel model = load_model(model_path);
    const RunSetup setup = build_setup(task, seed, parse_config_file(config_path));
    const TaskDataset dataset = generate(setup.task_spec);

    std::string csv = "k,accuracy\n";
    for (int k = 0; k <= model.config.n_layers; ++k) {
        long long correct = 0;
        const long long n = static_cast<long long>(dataset.test.size());
#pragma omp parallel for schedule(static) reduction(+ : correct)
        for (long long i = 0; i < n; ++i) {
            const Example& ex = dataset.test[static_cast<std::size_t>(i)];
            const std::vector<double> dist = logit_lens(model, ex.tokens, k);
            if (answer_argmax(dist, dataset.spec) == ex.label) correct += 1;
        }
        csv += std::to_string(k) + "," +
               format_double(static_cast<double>(correct) / static_cast<double>(n)) + "\n";
    }
    write_file(out, csv);
    std::cout << "lens curve over " << model.config.n_layers + 1 << " boundaries written to "
              << out << "\n";
    return 0;
}

int cmd_mi(const std::string& model_path, const std::string& task,
           const std::string& config_path, const std::string& mask_text, const std::string& out,
           std::uint64_t seed) {
    const TransformerModel model = load_model(model_path);
    const RunSetup setup = build_setup(task, seed, parse_config_file(config_path));
    const TaskDataset dataset = generate(setup.task_spec);
    const LayerMask mask =
        mask_text.empty() ? LayerMask{} : parse_mask(mask_text, model.config.n_layers);
    const MiProfile profile = mi_profile(model, mask, dataset);
    write_file(out, mi_profile_csv(profile));
    std::cout << "MI profile (" << profile.entries.size() << " boundaries, mask "
              << mask_str(mask) << ") written to " << out << "\n";
    return 0;
}

int cmd_mi_delta(const std::string& model_path, const std::string& task,
                 const std::string& config_path, int layer, const std::string& out,
                 std::uint64_t seed) {
    const TransformerModel model = load_model(model_path);
    const RunSetup setup = build_setup(task, seed, parse_config_file(config_path));
    const TaskDataset dataset = generate(setup.task_spec);
    const MiDelta delta = deletion_mi_delta(model, layer, dataset);
    std::string csv = "layer,boundary,mi_before_bits,mi_after_bits\n";
    csv += std::to_string(delta.layer) + "," + std::to_string(delta.layer + 1) + "," +
           format_double(delta.before_bits) + "," + format_double(delta.after_bits) + "\n";
    if (out.empty()) {
        std::cout << csv;
    } else {
        write_file(out, csv);
    }
    return 0;
}

int cmd_regimes(const std::string& model_path, const std::string& task,
                const std::string& config_path, double epsilon, const std::string& out,
                std::uint64_t seed) {
    const TransformerModel model = load_model(model_path);
    const RunSetup setup = build_setup(task, seed, parse_config_file(config_path));
    const TaskDataset dataset = generate(setup.task_spec);
    const std::vector<RegimeReport> reports =
        run_all_regimes(model, dataset, epsilon, setup.train_config);
    write_file(out, regimes_csv(reports));
    std::cout << "regime matrix (prune stages use best-accuracy selection) written to " << out
              << "\n";
    return 0;
}

int cmd_common(const std::string& trajs, double fraction, const std::string& point,
               const std::string& out) {
    std::map<std::string, std::set<int>> deletion_sets;
    std::istringstream in(trajs);
    std::string path;
    while (std::getline(in, path, ',')) {
        if (path.empty()) continue;
        const PruneTrajectory t = load_trajectory(path);
        int index;
        if (point == "best") {
            index = best_model(t);
        } else if (point == "bsba") {
            index = bsba(t);
        } else if (point == "final") {
            index = static_cast<int>(t.iterations.size()) - 1;
        } else {
            throw input_error("unknown selection point '" + point + "'");
        }
        const auto& layers = t.iterations[static_cast<std::size_t>(index)].mask.deleted();
        deletion_sets[path] = std::set<int>(layers.begin(), layers.end());
    }
    const std::set<int> layers = common_layers(deletion_sets, fraction);

    nlohmann::json j;
    j["fraction"] = fraction;
    j["n_tasks"] = deletion_sets.size();
    j["point"] = point;
    j["layers"] = std::vector<int>(layers.begin(), layers.end());
    const std::string json = j.dump(2) + "\n";
    if (out.empty()) {
        std::cout << json;
    } else {
        write_file(out, json);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"task-aware layer elimination toolkit"};
    app.require_subcommand(1);
    app.set_version_flag("--version", tale::tool_version);

    std::uint64_t seed_flag = 0;
    int threads = 0;
    auto* seed_opt = app.add_option("--seed", seed_flag, "global RNG seed (env TALE_SEED)");
    app.add_option("--threads", threads, "worker thread count (0 = library default)");

    std::string task, config_path, model_path, out, traj_path, mode_name = "relative_current";
    std::string mask_text, resume_path, dataset_name, csv_out, trajs, point = "bsba";
    double epsilon = 0.0, lambda = 1.0, fraction = 0.75;
    int layer = 0;
    bool use_measured = false;

    auto* train_cmd = app.add_subcommand("train", "train a toy model on a synthetic task");
    train_cmd->add_option("--task", task, "task kind")->required();
    train_cmd->add_option("--config", config_path, "key-value config file");
    train_cmd->add_option("--out", out, "output weight file")->required();

    auto* prune_cmd = app.add_subcommand("prune", "greedy layer elimination over a task");
    prune_cmd->add_option("--model", model_path)->required();
    prune_cmd->add_option("--task", task)->required();
    prune_cmd->add_option("--config", config_path);
    prune_cmd->add_option("--epsilon", epsilon, "accuracy tolerance per step");
    prune_cmd->add_option("--mode", mode_name, "relative_current|relative_baseline");
    prune_cmd->add_option("--out", out)->required();
    prune_cmd->add_option("--resume", resume_path, "continue an interrupted trajectory file");

    auto* select_cmd = app.add_subcommand("select", "pick operating points from a trajectory");
    select_cmd->add_option("--traj", traj_path)->required();
    select_cmd->add_option("--lambda", lambda, "accuracy-vs-speedup weight");
    select_cmd->add_flag("--use-measured-speedup", use_measured);
    select_cmd->add_option("--model", model_path, "needed with --use-measured-speedup");
    select_cmd->add_option("--task", task, "needed with --use-measured-speedup");
    select_cmd->add_option("--config", config_path);
    select_cmd->add_option("--dataset", dataset_name, "name for the report's dataset column");
    select_cmd->add_option("--out", out, "report JSON path (stdout when omitted)");
    select_cmd->add_option("--csv", csv_out, "result-table CSV path");

    auto* lens_cmd = app.add_subcommand("lens", "per-boundary decoding accuracy curve");
    lens_cmd->add_option("--model", model_path)->required();
    lens_cmd->add_option("--task", task)->required();
    lens_cmd->add_option("--config", config_path);
    lens_cmd->add_option("--out", out)->required();

    auto* mi_cmd = app.add_subcommand("mi", "probe-estimated MI profile across boundaries");
    mi_cmd->add_option("--model", model_path)->required();
    mi_cmd->add_option("--task", task)->required();
    mi_cmd->add_option("--config", config_path);
    mi_cmd->add_option("--mask", mask_text, "comma-separated layers to delete first");
    mi_cmd->add_option("--out", out)->required();

    auto* delta_cmd = app.add_subcommand("mi-delta", "MI at boundary l+1 before/after deleting l");
    delta_cmd->add_option("--model", model_path)->required();
    delta_cmd->add_option("--task", task)->required();
    delta_cmd->add_option("--config", config_path);
    delta_cmd->add_option("--layer", layer)->required();
    delta_cmd->add_option("--out", out, "CSV path (stdout when omitted)");

    auto* regimes_cmd = app.add_subcommand("regimes", "prune/finetune composition matrix");
    regimes_cmd->add_option("--model", model_path)->required();
    regimes_cmd->add_option("--task", task)->required();
    regimes_cmd->add_option("--config", config_path);
    regimes_cmd->add_option("--epsilon", epsilon);
    regimes_cmd->add_option("--out", out)->required();

    auto* common_cmd = app.add_subcommand("common", "layers shared across task deletion sets");
    common_cmd->add_option("--trajs", trajs, "comma-separated trajectory files")->required();
    common_cmd->add_option("--fraction", fraction, "required task fraction");
    common_cmd->add_option("--point", point, "best|bsba|final (default bsba)");
    common_cmd->add_option("--out", out, "JSON path (stdout when omitted)");

    // let --seed/--threads appear after the subcommand name too
    for (CLI::App* sc : {train_cmd, prune_cmd, select_cmd, lens_cmd, mi_cmd, delta_cmd,
                         regimes_cmd, common_cmd}) {
        sc->fallthrough();
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        const std::uint64_t seed = resolve_seed(seed_opt, seed_flag);
#ifdef _OPENMP
        if (threads > 0) omp_set_num_threads(threads);
#else
        (void)threads;
#endif
        if (train_cmd->parsed()) return cmd_train(task, config_path, out, seed);
        if (prune_cmd->parsed()) {
            return cmd_prune(model_path, task, config_path, epsilon, mode_name, out, resume_path,
                             seed);
        }
        if (select_cmd->parsed()) {
            return cmd_select(traj_path, lambda, use_measured, model_path, task, config_path,
                              dataset_name, out, csv_out, seed);
        }
        if (lens_cmd->parsed()) return cmd_lens(model_path, task, config_path, out, seed);
        if (mi_cmd->parsed()) return cmd_mi(model_path, task, config_path, mask_text, out, seed);
        if (delta_cmd->parsed()) {
            return cmd_mi_delta(model_path, task, config_path, layer, out, seed);
        }
        if (regimes_cmd->parsed()) {
            return cmd_regimes(model_path, task, config_path, epsilon, out, seed);
        }
        if (common_cmd->parsed()) return cmd_common(trajs, fraction, point, out);
        return 2;
    } catch (const tale::format_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const tale::train_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::domain_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::runtime_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
