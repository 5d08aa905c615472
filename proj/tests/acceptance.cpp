// Acceptance suite: one test case per criterion, each printing a single
// [criterion N] PASS/FAIL line. Tolerances and thresholds are pinned here.

#include <doctest.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "tale/eval.hpp"
#include "tale/io.hpp"
#include "tale/kernels.hpp"
#include "tale/model.hpp"
#include "tale/probe.hpp"
#include "tale/rng.hpp"
#include "tale/search.hpp"
#include "tale/select.hpp"
#include "tale/task.hpp"
#include "tale/train.hpp"

using namespace tale;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

bool criterion(int n, const char* desc, bool ok) {
    std::printf("[criterion %2d] %s - %s\n", n, ok ? "PASS" : "FAIL", desc);
    std::fflush(stdout);
    return ok;
}

// shared noise-layer fixture: reference 6-layer copy_last model, noise in
// layer 3, greedy search over the fixture
struct NoiseFixture {
    TaskSpec spec;
    TaskDataset ds;
    TransformerModel clean;
    double clean_val = 0.0;
    TransformerModel noisy;
    double fixture_val = 0.0;
    PruneTrajectory trajectory;
    double build_seconds = 0.0;
};

const NoiseFixture& noise_fixture() {
    static const NoiseFixture fx = [] {
        const auto t0 = Clock::now();
        NoiseFixture f;
        f.spec = TaskSpec::defaults(TaskKind::copy_last, 42);
        f.ds = generate(f.spec);
        const TrainResult tr =
            train_toy(reference_model_config(f.spec, 42), f.ds, reference_train_config(42));
        f.clean = tr.model;
        f.clean_val = accuracy(f.clean, LayerMask{}, f.ds.val, f.spec).accuracy;
        f.noisy = inject_noise_layer(f.clean, 3, 7);
        f.fixture_val = accuracy(f.noisy, LayerMask{}, f.ds.val, f.spec).accuracy;
        f.trajectory = tale_search(6, model_accuracy_fn(f.noisy, f.ds.val, f.spec), 0.0,
                                   ThresholdMode::relative_current, "fixture", "fixture", "acc");
        f.build_seconds = seconds_since(t0);
        return f;
    }();
    return fx;
}

struct RunResult {
    int exit_code;
    std::string output;
};

RunResult run_cli(const std::string& args) {
    const std::string cmd = std::string(TALE_CLI_PATH) + " " + args + " 2>&1";
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    std::string out;
    char buf[512];
    while (fgets(buf, sizeof(buf), pipe)) out += buf;
    return {WEXITSTATUS(pclose(pipe)), out};
}

struct TempDir {
    fs::path path;
    TempDir() {
        std::string tmpl = (fs::temp_directory_path() / "tale_acceptance_XXXXXX").string();
        REQUIRE(mkdtemp(tmpl.data()) != nullptr);
        path = tmpl;
    }
    ~TempDir() { std::error_code ec; fs::remove_all(path, ec); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

}  // namespace

TEST_CASE("criterion 1: masked-forward equivalence on 200 random pairs") {
    const auto t0 = Clock::now();
    Rng rng(2024);
    double worst = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
        ModelConfig cfg;
        cfg.n_layers = 2 + static_cast<int>(rng.below(5));            // 2..6
        cfg.n_heads = rng.uniform() < 0.5 ? 2 : 4;
        cfg.d_model = cfg.n_heads * (4 + 2 * static_cast<int>(rng.below(7)));  // <= 64
        if (cfg.d_model > 64) cfg.d_model = 64;
        cfg.d_ff = cfg.d_model * 2;
        cfg.vocab_size = 7 + static_cast<int>(rng.below(10));
        cfg.max_seq_len = 12;
        cfg.seed = 10000 + static_cast<std::uint64_t>(trial);
        const TransformerModel model = TransformerModel::init(cfg);

        std::vector<int> layers;
        for (int l = 1; l <= cfg.n_layers; ++l)
            if (rng.uniform() < 0.5) layers.push_back(l);
        if (static_cast<int>(layers.size()) >= cfg.n_layers) layers.pop_back();
        const LayerMask mask = LayerMask::of(layers, cfg.n_layers);

        std::vector<int> tokens(1 + rng.below(10));
        for (auto& t : tokens) t = rng.uniform_int(0, cfg.vocab_size);

        const Tensor masked = forward(model, tokens, mask);
        const Tensor direct = forward(materialize_pruned(model, mask), tokens, LayerMask{});
        for (std::size_t i = 0; i < masked.numel(); ++i) {
            worst = std::max(worst, std::abs((*masked.data)[i] - (*direct.data)[i]));
        }
    }
    const double elapsed = seconds_since(t0);
    CHECK(criterion(1, "masked forward == materialized forward (<=1e-9, <1min)",
                    worst <= 1e-9 && elapsed < 60.0));
}

TEST_CASE("criterion 2: logit-lens identity on 50 random models") {
    bool ok = true;
    Rng rng(77);
    for (int trial = 0; trial < 50; ++trial) {
        ModelConfig cfg;
        cfg.n_layers = 2 + static_cast<int>(rng.below(4));
        cfg.n_heads = 2;
        cfg.d_model = 16;
        cfg.d_ff = 24;
        cfg.vocab_size = 9;
        cfg.max_seq_len = 10;
        cfg.seed = 500 + static_cast<std::uint64_t>(trial);
        const TransformerModel model = TransformerModel::init(cfg);
        std::vector<int> tokens(1 + rng.below(8));
        for (auto& t : tokens) t = rng.uniform_int(0, cfg.vocab_size);

        const std::vector<double> lens = logit_lens(model, tokens, cfg.n_layers);
        const Tensor full = forward(model, tokens, LayerMask{});
        std::vector<double> dist(static_cast<std::size_t>(cfg.vocab_size));
        for (int j = 0; j < cfg.vocab_size; ++j)
            dist[static_cast<std::size_t>(j)] = full.at(full.rows() - 1, j);
        kernels::softmax_row(dist.data(), dist.size());
        ok = ok && std::memcmp(lens.data(), dist.data(), dist.size() * sizeof(double)) == 0;
    }
    CHECK(criterion(2, "logit_lens(., L) is bitwise the output distribution", ok));
}

TEST_CASE("criterion 3: greedy oracle on an exhaustive 5-layer lookup table") {
    const auto t0 = Clock::now();

    // accuracy table over all 2^5 - 1 valid masks
    std::map<std::vector<int>, double> table;
    for (int bits = 0; bits < 31 + 1; ++bits) {
        if (bits == 31) continue;  // the all-deleted mask is invalid
        std::vector<int> m;
        for (int l = 1; l <= 5; ++l)
            if (bits & (1 << (l - 1))) m.push_back(l);
        table[m] = 0.3;
    }
    table[{}] = 0.70;
    table[{1}] = 0.60;
    table[{2}] = 0.75;   // argmax tie with {3}: index 2 must win
    table[{3}] = 0.75;
    table[{4}] = 0.72;
    table[{5}] = 0.50;
    table[{1, 2}] = 0.71;
    table[{2, 3}] = 0.77;  // tie with {2,4}: layer 3 must win
    table[{2, 4}] = 0.77;
    table[{2, 5}] = 0.40;
    table[{1, 2, 3}] = 0.76;  // below current 0.77, above baseline 0.70
    table[{2, 3, 4}] = 0.73;
    table[{2, 3, 5}] = 0.60;
    table[{1, 2, 3, 4}] = 0.68;  // both below baseline: stop
    table[{1, 2, 3, 5}] = 0.69;

    const AccuracyFn fn = [&table](const LayerMask& mask) { return table.at(mask.deleted()); };

    // expected paths worked out by hand on the table above
    const PruneTrajectory cur =
        tale_search(5, fn, 0.0, ThresholdMode::relative_current, "m", "d", "acc");
    bool ok = cur.iterations.size() == 3;
    ok = ok && cur.iterations[0].accuracy == 0.70;
    ok = ok && cur.iterations[1].selected_layer == 2 && cur.iterations[1].accuracy == 0.75;
    ok = ok && cur.iterations[2].selected_layer == 3 && cur.iterations[2].accuracy == 0.77;
    ok = ok && cur.iterations[2].mask.deleted() == std::vector<int>{2, 3};
    ok = ok && cur.termination == Termination::no_improving_candidate;

    const PruneTrajectory base =
        tale_search(5, fn, 0.0, ThresholdMode::relative_baseline, "m", "d", "acc");
    ok = ok && base.iterations.size() == 4;
    ok = ok && base.iterations[3].selected_layer == 1 && base.iterations[3].accuracy == 0.76;
    ok = ok && base.iterations[3].mask.deleted() == std::vector<int>{1, 2, 3};
    ok = ok && base.termination == Termination::no_improving_candidate;

    check_trajectory(cur, 5);
    check_trajectory(base, 5);

    const double elapsed = seconds_since(t0);
    CHECK(criterion(3, "greedy path matches the hand simulation in both modes (<1s)",
                    ok && elapsed < 1.0));
}

TEST_CASE("criterion 4: noise-layer fixture end to end") {
    const NoiseFixture& fx = noise_fixture();
    bool ok = fx.clean_val >= 0.9;
    ok = ok && (fx.clean_val - fx.fixture_val) >= 0.05;
    ok = ok && fx.trajectory.iterations.size() >= 2;
    if (ok) {
        const IterationRecord& first = fx.trajectory.iterations[1];
        ok = ok && first.selected_layer == 3;
        ok = ok && first.accuracy > fx.fixture_val;
        ok = ok && first.accuracy >= fx.clean_val - 0.02;
    }
    ok = ok && fx.build_seconds < 600.0;
    CHECK(criterion(4, "noise layer found first and accuracy recovered (<10min)", ok));
}

TEST_CASE("criterion 5: percentage-gain round-trip at printed precision") {
    auto round_to = [](double v, int digits) {
        const double p = std::pow(10.0, digits);
        return std::round(v * p) / p;
    };
    bool ok = round_to(percentage_gain(90.55, 87.00), 2) == 4.08;
    ok = ok && round_to(percentage_gain(37.08, 15.07), 2) == 146.05;
    ok = ok && round_to(percentage_gain(42.98, 21.36), 1) == 101.2;
    CHECK(criterion(5, "printed result-table gains reproduced", ok));
}

TEST_CASE("criterion 6: accuracy-efficiency harmonic mean properties") {
    bool ok = true;
    for (double lambda : {0.1, 1.0, 10.0}) ok = ok && aehm(1.0, 1.0, lambda) == 1.0;

    Rng rng(99);
    for (int i = 0; i < 1000; ++i) {
        const double r = 0.05 + rng.uniform() * 2.0;
        const double s = 0.05 + rng.uniform() * 4.0;
        ok = ok && std::abs(aehm(r, s, 1.0) - 2.0 * r * s / (r + s)) <= 1e-12;
    }
    ok = ok && std::abs(aehm(0.9, 2.0, 100.0) - 0.9) <= 1e-3;
    for (int i = 0; i < 500; ++i) {
        const double r = 0.1 + rng.uniform();
        const double s = 0.1 + rng.uniform() * 2.0;
        const double lambda = 0.1 + rng.uniform() * 8.0;
        ok = ok && aehm(r + 0.01, s, lambda) > aehm(r, s, lambda);
        ok = ok && aehm(r, s + 0.01, lambda) > aehm(r, s, lambda);
    }
    CHECK(criterion(6, "fixed point, harmonic-mean identity, limits, monotonicity", ok));
}

TEST_CASE("criterion 7: probe MI calibration on the noisy one-hot family") {
    bool ok = exact_mi({{0.25, 0.25}, {0.25, 0.25}}) == 0.0;
    ok = ok && exact_mi({{0.5, 0.0}, {0.0, 0.5}}) == 1.0;
    ok = ok && std::abs(exact_mi({{0.4, 0.1}, {0.1, 0.4}}) -
                        exact_mi({{0.4, 0.1}, {0.1, 0.4}})) == 0.0;
    // symmetry on an asymmetric joint
    ok = ok && std::abs(exact_mi({{0.3, 0.2}, {0.1, 0.4}}) -
                        exact_mi({{0.3, 0.1}, {0.2, 0.4}})) <= 1e-12;

    for (double rho : {0.0, 0.1, 0.25, 0.5}) {
        const int n = 5000;
        Rng rng(4242 + static_cast<std::uint64_t>(rho * 1000));
        FeatureMatrix train, held;
        train.n = held.n = n / 2;
        train.d = held.d = 2;
        train.data.assign(static_cast<std::size_t>(n / 2) * 2, 0.0);
        held.data.assign(static_cast<std::size_t>(n / 2) * 2, 0.0);
        std::vector<int> train_labels, held_labels;
        for (int i = 0; i < n; ++i) {
            const int y = i % 2;
            int x = (rng.uniform() < rho) ? 1 - y : y;
            if (i < n / 2) {
                train.data[static_cast<std::size_t>(i) * 2 + x] = 1.0;
                train_labels.push_back(y);
            } else {
                held.data[static_cast<std::size_t>(i - n / 2) * 2 + x] = 1.0;
                held_labels.push_back(y);
            }
        }
        const LinearProbe probe = train_probe(train, train_labels, 2, 1e-4);
        const double estimated = estimate_mi(probe, held, held_labels);
        const double analytic = exact_mi({{(1 - rho) / 2, rho / 2}, {rho / 2, (1 - rho) / 2}});
        ok = ok && std::abs(estimated - analytic) <= 0.05;
    }
    CHECK(criterion(7, "probe estimate within 0.05 bits of the analytic joint", ok));
}

TEST_CASE("criterion 8: deleting the noise layer raises MI at the next boundary") {
    const NoiseFixture& fx = noise_fixture();
    const MiDelta delta = deletion_mi_delta(fx.noisy, 3, fx.ds);
    CHECK(criterion(8, "probe MI at boundary 4: after deletion > before", 
                    delta.after_bits > delta.before_bits));
}

TEST_CASE("criterion 9: selection points and common layers") {
    PruneTrajectory t;
    t.termination = Termination::no_improving_candidate;
    const std::vector<double> accs = {87.0, 88.0, 89.0, 86.5, 87.5, 86.0};
    for (std::size_t i = 0; i < accs.size(); ++i) {
        IterationRecord rec;
        rec.iteration = static_cast<int>(i);
        std::vector<int> layers;
        for (int l = 1; l <= static_cast<int>(i); ++l) layers.push_back(l);
        rec.mask = LayerMask::of(layers, 7);
        rec.selected_layer = static_cast<int>(i);
        rec.accuracy = accs[i];
        rec.speedup_proxy = speedup_proxy(7, static_cast<int>(i));
        t.iterations.push_back(rec);
    }
    bool ok = best_model(t) == 2 && bsba(t) == 4;

    const std::map<std::string, std::set<int>> sets = {{"A", {19, 22, 23, 27}},
                                                       {"B", {19, 22}},
                                                       {"C", {19, 23, 27}},
                                                       {"D", {19, 22, 27}}};
    ok = ok && common_layers(sets, 0.75) == std::set<int>{19, 22, 27};
    CHECK(criterion(9, "best=2, bsba=4, common layers {19,22,27}", ok));
}

TEST_CASE("criterion 10: all six prune/finetune regimes on the fixture") {
    const NoiseFixture& fx = noise_fixture();
    const std::vector<RegimeReport> reports =
        run_all_regimes(fx.noisy, fx.ds, 0.0, reference_train_config(42));
    bool ok = reports.size() == 6;

    std::map<std::string, RegimeReport> by_name;
    for (const auto& r : reports) by_name[to_string(r.regime)] = r;
    ok = ok && by_name.count("Baseline") && by_name.count("PrunedOnly") && by_name.count("FT") &&
         by_name.count("Prune->FT") && by_name.count("FT->Prune") &&
         by_name.count("PruneFTPrune");
    if (ok) {
        ok = ok && by_name["Prune->FT"].train_seconds < by_name["FT"].train_seconds;
        ok = ok && by_name["PruneFTPrune"].perf >= by_name["PrunedOnly"].perf;
        ok = ok && by_name["Baseline"].dropped == 0 && by_name["FT"].dropped == 0;
        ok = ok && by_name["PruneFTPrune"].dropped >= by_name["Prune->FT"].dropped;
    }
    const std::string csv = regimes_csv(reports);
    ok = ok && csv.find("regime,perf,dropped,train_seconds\n") != std::string::npos;
    CHECK(criterion(10, "regime matrix complete; pruned finetuning faster; composition wins",
                    ok));
}

TEST_CASE("criterion 11: determinism and persistence") {
    TempDir dir;
    write_file(dir.file("cfg"),
               "model.n_layers = 3\n"
               "model.d_model = 16\n"
               "model.d_ff = 32\n"
               "train.epochs = 2\n"
               "task.n_train = 96\n"
               "task.n_val = 48\n"
               "task.n_test = 48\n");
    const std::string cfg = " --config " + dir.file("cfg");
    bool ok = true;

    // train: byte-identical weight files
    ok = ok && run_cli("--seed 3 train --task copy_last" + cfg + " --out " + dir.file("a.tale"))
                       .exit_code == 0;
    ok = ok && run_cli("--seed 3 train --task copy_last" + cfg + " --out " + dir.file("b.tale"))
                       .exit_code == 0;
    ok = ok && read_file(dir.file("a.tale")) == read_file(dir.file("b.tale"));

    // weight round-trip is bitwise identity
    save_model(load_model(dir.file("a.tale")), dir.file("rt.tale"));
    ok = ok && read_file(dir.file("rt.tale")) == read_file(dir.file("a.tale"));

    // prune: canonical trajectory content identical across runs
    const std::string prune = "--seed 3 prune --model " + dir.file("a.tale") +
                              " --task copy_last" + cfg + " --epsilon 0.5 --out ";
    ok = ok && run_cli(prune + dir.file("t1.json")).exit_code == 0;
    ok = ok && run_cli(prune + dir.file("t2.json")).exit_code == 0;
    auto canon = [](const std::string& p) { return trajectory_json(load_trajectory(p), false); };
    ok = ok && canon(dir.file("t1.json")) == canon(dir.file("t2.json"));

    // select / lens / mi / mi-delta / common: byte-identical outputs
    const std::vector<std::pair<std::string, std::string>> repeats = {
        {"select --traj " + dir.file("t1.json") + " --lambda 1.0 --dataset x --out ", "sel"},
        {"--seed 3 lens --model " + dir.file("a.tale") + " --task copy_last" + cfg + " --out ",
         "lens"},
        {"--seed 3 mi --model " + dir.file("a.tale") + " --task copy_last" + cfg + " --out ",
         "mi"},
        {"--seed 3 mi-delta --layer 1 --model " + dir.file("a.tale") + " --task copy_last" +
             cfg + " --out ",
         "delta"},
        {"common --fraction 1.0 --trajs " + dir.file("t1.json") + "," + dir.file("t2.json") +
             " --out ",
         "common"},
    };
    for (const auto& [cmd, name] : repeats) {
        ok = ok && run_cli(cmd + dir.file(name + "1")).exit_code == 0;
        ok = ok && run_cli(cmd + dir.file(name + "2")).exit_code == 0;
        ok = ok && read_file(dir.file(name + "1")) == read_file(dir.file(name + "2"));
    }

    // interrupted prune resumes to the identical trajectory
    PruneTrajectory partial = load_trajectory(dir.file("t1.json"));
    ok = ok && partial.iterations.size() >= 2;
    if (ok) {
        partial.iterations.resize(2);
        partial.termination = Termination::in_progress;
        save_trajectory(partial, dir.file("partial.json"));
        ok = ok && run_cli(prune + dir.file("resumed.json") + " --resume " +
                           dir.file("partial.json"))
                           .exit_code == 0;
        ok = ok && canon(dir.file("resumed.json")) == canon(dir.file("t1.json"));
    }
    CHECK(criterion(11, "byte-reproducible commands, bitwise round-trip, resume identity", ok));
}
