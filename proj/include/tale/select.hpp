#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "tale/search.hpp"

namespace tale {

struct AehmParams {
    double lambda = 1.0;  // > 1 favors accuracy retention, < 1 favors speedup

    void validate() const;  // lambda must be positive and finite
};

struct OperatingPoint {
    int iteration = 0;
    double perf = 0.0;   // accuracy at that point
    int dropped = 0;     // #D
    double speedup = 1.0;
};

struct SelectionReport {
    std::string dataset;
    double baseline_perf = 0.0;
    OperatingPoint best;
    OperatingPoint bsba;
    OperatingPoint best_compromise;
    double best_compromise_score = 0.0;
    double lambda = 1.0;
    bool measured_speedup = false;
    double best_gain_pct = 0.0;
    double bsba_gain_pct = 0.0;
};

// Trajectory point with maximum accuracy; ties break to fewest deletions,
// then the earliest iteration (equivalent here, since mask size equals the
// iteration index).
int best_model(const PruneTrajectory& t);

// Deepest trajectory prefix point whose accuracy still clears the
// iteration-0 baseline.
int bsba(const PruneTrajectory& t);

// Accuracy-efficiency harmonic mean: (1 + λ²)·r_A·S / (λ²·S + r_A).
// Symmetric in (r_A, S) at λ = 1; tends to r_A as λ grows.
double aehm(double accuracy_ratio, double speedup, double lambda);

// argmax of aehm(acc_i / acc_0, S_i, λ) over the trajectory, with S_i taken
// from the records' proxy speedups (or a caller-supplied vector, one entry
// per iteration). Ties break to fewest deletions.
int best_compromise(const PruneTrajectory& t, double lambda);
int best_compromise_with(const PruneTrajectory& t, const std::vector<double>& speedups,
                         double lambda);

// Layers deleted in at least ceil(fraction * n_tasks) of the given tasks.
std::set<int> common_layers(const std::map<std::string, std::set<int>>& deletion_sets,
                            double fraction);

SelectionReport build_selection_report(const PruneTrajectory& t, const std::string& dataset,
                                       double lambda);
SelectionReport build_selection_report(const PruneTrajectory& t, const std::string& dataset,
                                       double lambda, const std::vector<double>& speedups,
                                       bool measured);

std::string selection_report_json(const SelectionReport& r);
// header plus one row mirroring the result-table column layout
std::string selection_report_csv(const SelectionReport& r);

}  // namespace tale
