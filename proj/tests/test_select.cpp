#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "tale/eval.hpp"
#include "tale/errors.hpp"
#include "tale/rng.hpp"
#include "tale/select.hpp"

using namespace tale;

namespace {

// trajectory with the given accuracies; mask at record i deletes layers 1..i
PruneTrajectory make_trajectory(const std::vector<double>& accs) {
    const int n_layers = static_cast<int>(accs.size()) + 1;
    PruneTrajectory t;
    t.model_hash = "m";
    t.task_hash = "d";
    t.tool_version = "test";
    t.termination = Termination::no_improving_candidate;
    for (std::size_t i = 0; i < accs.size(); ++i) {
        IterationRecord rec;
        rec.iteration = static_cast<int>(i);
        std::vector<int> layers;
        for (int l = 1; l <= static_cast<int>(i); ++l) layers.push_back(l);
        rec.mask = LayerMask::of(layers, n_layers);
        rec.selected_layer = static_cast<int>(i);
        rec.accuracy = accs[i];
        rec.speedup_proxy = speedup_proxy(n_layers, static_cast<int>(i));
        t.iterations.push_back(std::move(rec));
    }
    return t;
}

}  // namespace

TEST_CASE("best_model: argmax with fewest-deletion ties") {
    CHECK(best_model(make_trajectory({87.0, 88.1, 89.3, 86.5})) == 2);
    CHECK(best_model(make_trajectory({42.0})) == 0);
    // equal maxima at #D=2 and #D=5: the shallower one wins
    CHECK(best_model(make_trajectory({80, 81, 90, 82, 83, 90, 79})) == 2);
    CHECK_THROWS_AS(best_model(PruneTrajectory{}), usage_error);
}

TEST_CASE("bsba: deepest prefix point at or above baseline") {
    CHECK(bsba(make_trajectory({87.0, 88.0, 89.0, 86.5, 87.5, 86.0})) == 4);
    CHECK(bsba(make_trajectory({90, 85, 80, 70})) == 0);
    CHECK(bsba(make_trajectory({50, 55, 60, 65})) == 3);
    // re-crossing the baseline later still counts
    CHECK(bsba(make_trajectory({80, 75, 81, 70})) == 2);
}

TEST_CASE("aehm formula, fixed point, harmonic-mean identity") {
    for (double lambda : {0.1, 1.0, 10.0}) {
        CHECK(aehm(1.0, 1.0, lambda) == doctest::Approx(1.0).epsilon(1e-12));
    }
    CHECK(aehm(1.04, 1.3, 1.0) ==
          doctest::Approx(2.0 * 1.04 * 1.3 / (1.3 + 1.04)).epsilon(1e-12));
    CHECK(aehm(1.04, 1.3, 1.0) == doctest::Approx(1.1556).epsilon(1e-4));

    Rng rng(5);
    for (int i = 0; i < 1000; ++i) {
        const double r = 0.1 + rng.uniform() * 2.0;
        const double s = 0.1 + rng.uniform() * 3.0;
        CHECK(std::abs(aehm(r, s, 1.0) - 2.0 * r * s / (r + s)) <= 1e-12);
    }
}

TEST_CASE("aehm large-lambda limit prioritizes the accuracy ratio") {
    CHECK(std::abs(aehm(0.9, 2.0, 100.0) - 0.9) <= 1e-3);
    CHECK(std::abs(aehm(1.2, 0.5, 100.0) - 1.2) <= 1e-3);
    // small lambda approaches S
    CHECK(std::abs(aehm(0.9, 2.0, 0.01) - 2.0) <= 1e-2);
}

TEST_CASE("aehm is strictly increasing in each argument") {
    Rng rng(7);
    for (int i = 0; i < 200; ++i) {
        const double r = 0.2 + rng.uniform();
        const double s = 0.2 + rng.uniform() * 2;
        const double lambda = 0.1 + rng.uniform() * 5;
        CHECK(aehm(r + 0.05, s, lambda) > aehm(r, s, lambda));
        CHECK(aehm(r, s + 0.05, lambda) > aehm(r, s, lambda));
    }
}

TEST_CASE("aehm domain errors") {
    CHECK_THROWS_AS(aehm(0.0, 1.0, 1.0), std::domain_error);
    CHECK_THROWS_AS(aehm(1.0, -1.0, 1.0), std::domain_error);
    CHECK_THROWS_AS(aehm(1.0, 1.0, 0.0), std::domain_error);
    CHECK_THROWS_AS(AehmParams{-2.0}.validate(), std::domain_error);
    CHECK_NOTHROW(AehmParams{0.5}.validate());
}

TEST_CASE("best_compromise limits") {
    // speedup proxies strictly increase along this trajectory
    const PruneTrajectory t = make_trajectory({80, 84, 88, 85, 82, 81});

    // large lambda: coincides with best_model (unique max at 2)
    CHECK(best_compromise(t, 1000.0) == best_model(t));
    // near-zero lambda: the deepest (max-speedup) point
    CHECK(best_compromise(t, 1e-4) == static_cast<int>(t.iterations.size()) - 1);
    // single record
    CHECK(best_compromise(make_trajectory({70}), 1.0) == 0);

    PruneTrajectory zero = make_trajectory({0.0, 10.0});
    CHECK_THROWS_AS(best_compromise(zero, 1.0), std::domain_error);
}

TEST_CASE("argmax invariance under positive scaling of accuracies") {
    const std::vector<double> accs = {70, 74, 78, 72, 75, 71};
    const PruneTrajectory t = make_trajectory(accs);
    std::vector<double> scaled;
    for (double a : accs) scaled.push_back(a * 3.7);
    const PruneTrajectory ts = make_trajectory(scaled);
    CHECK(best_model(t) == best_model(ts));
    CHECK(bsba(t) == bsba(ts));
    for (double lambda : {0.2, 1.0, 5.0}) {
        CHECK(best_compromise(t, lambda) == best_compromise(ts, lambda));
    }
}

TEST_CASE("best accuracy dominates bsba accuracy") {
    Rng rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> accs;
        const int n = 2 + static_cast<int>(rng.below(8));
        for (int i = 0; i < n; ++i) accs.push_back(50.0 + rng.uniform() * 50.0);
        const PruneTrajectory t = make_trajectory(accs);
        CHECK(t.iterations[static_cast<std::size_t>(best_model(t))].accuracy >=
              t.iterations[static_cast<std::size_t>(bsba(t))].accuracy);
    }
}

TEST_CASE("common_layers counting") {
    const std::map<std::string, std::set<int>> sets = {
        {"A", {19, 22, 23, 27}},
        {"B", {19, 22}},
        {"C", {19, 23, 27}},
        {"D", {19, 22, 27}},
    };
    CHECK(common_layers(sets, 0.75) == std::set<int>{19, 22, 27});
    CHECK(common_layers(sets, 1.0) == std::set<int>{19});

    const std::map<std::string, std::set<int>> pair = {{"A", {1, 2}}, {"B", {2, 3}}};
    CHECK(common_layers(pair, 1.0) == std::set<int>{2});  // strict intersection
    CHECK(common_layers(pair, 0.5) == std::set<int>{1, 2, 3});

    CHECK_THROWS_AS(common_layers({}, 0.75), usage_error);
    CHECK_THROWS_AS(common_layers(pair, 0.0), usage_error);
    CHECK_THROWS_AS(common_layers(pair, 1.5), usage_error);
}

TEST_CASE("selection report fields and CSV layout") {
    const PruneTrajectory t = make_trajectory({87.0, 88.0, 89.0, 86.5, 87.5, 86.0});
    const SelectionReport r = build_selection_report(t, "demo", 1.0);
    CHECK(r.baseline_perf == 87.0);
    CHECK(r.best.iteration == 2);
    CHECK(r.best.dropped == 2);
    CHECK(r.bsba.iteration == 4);
    CHECK(r.best_gain_pct == doctest::Approx(percentage_gain(89.0, 87.0)));

    const std::string csv = selection_report_csv(r);
    CHECK(csv.find("dataset,baseline_perf,best_perf,best_drop,best_sp,bsba_perf,bsba_drop,"
                   "bsba_sp,gain_pct\n") == 0);
    CHECK(csv.find("demo,87,89,2,") != std::string::npos);

    const std::string json = selection_report_json(r);
    CHECK(json.find("\"best\"") != std::string::npos);
    CHECK(json.find("\"bsba\"") != std::string::npos);
    CHECK(json.find("\"best_compromise\"") != std::string::npos);
    CHECK(json.find("\"aehm_score\"") != std::string::npos);
    CHECK(json.find("\"speedup_source\": \"proxy\"") != std::string::npos);

    // single-record trajectory reports baseline everywhere
    const SelectionReport solo = build_selection_report(make_trajectory({42.0}), "solo", 1.0);
    CHECK(solo.best.iteration == 0);
    CHECK(solo.bsba.iteration == 0);
    CHECK(solo.best_compromise.iteration == 0);
    CHECK(solo.best_gain_pct == 0.0);
}
