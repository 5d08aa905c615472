#pragma once

#include <string>
#include <vector>

#include "tale/model.hpp"
#include "tale/task.hpp"

namespace tale {

// Row-major feature matrix for probing; one row per example.
struct FeatureMatrix {
    int n = 0;
    int d = 0;
    std::vector<double> data;

    const double* row(int i) const { return data.data() + static_cast<std::size_t>(i) * d; }
};

// Multinomial logistic probe reading task labels off a hidden state.
// Deterministic: zero init, feature standardization from the training rows,
// full-batch gradient descent with a fixed step and iteration cap.
struct LinearProbe {
    int n_classes = 0;
    std::vector<double> weights;  // [d x K]
    std::vector<double> bias;     // [K]
    std::vector<double> feat_mean;
    std::vector<double> feat_scale;
    double reg = 0.0;
    int iterations = 0;
    double final_loss = 0.0;  // mean CE + reg penalty, in nats
};

// MI estimates across layer boundaries under one mask. layer_index 0 is the
// embedding output. Values are probe-estimated MI: a linear-probe surrogate
// that lower-bounds the information actually present, in bits.
struct MiProfileEntry {
    int boundary = 0;     // depth order
    int layer_index = 0;  // original layer number; 0 = embedding
    double mi_bits = 0.0;
    double probe_val_acc = 0.0;
};

struct MiProfile {
    std::vector<MiProfileEntry> entries;
    double h_y_bits = 0.0;
    LayerMask mask;
};

struct MiDelta {
    int layer = 0;           // the deleted layer
    double before_bits = 0.0;  // MI at boundary layer+1, mask empty
    double after_bits = 0.0;   // MI at boundary layer+1, mask {layer}
};

// Direct double sum of the mutual information of a discrete joint
// distribution (rows x, columns y), base-2 logs, 0·log 0 = 0.
double exact_mi(const std::vector<std::vector<double>>& joint);

LinearProbe train_probe(const FeatureMatrix& features, const std::vector<int>& labels,
                        int n_classes, double reg);

std::vector<double> probe_probabilities(const LinearProbe& probe, const double* features_row,
                                        int d);
double probe_accuracy(const LinearProbe& probe, const FeatureMatrix& features,
                      const std::vector<int>& labels);

// H(Y) - CE(heldout) in bits, clamped to [0, H(Y)] with H(Y) taken from the
// heldout label marginal. Heldout rows must be disjoint from training rows.
double estimate_mi(const LinearProbe& probe, const FeatureMatrix& features,
                   const std::vector<int>& labels);

// Trains a probe per surviving layer boundary on the task's train split
// (probe train/val carved out of it; the search's validation split is never
// touched) and estimates MI on the probe's heldout part.
MiProfile mi_profile(const TransformerModel& model, const LayerMask& mask,
                     const TaskDataset& dataset);

// MI at boundary layer+1 with and without layer deleted, same probe
// protocol on both sides.
MiDelta deletion_mi_delta(const TransformerModel& model, int layer, const TaskDataset& dataset);

// CSV: a comment line carrying H(Y), then boundary,layer_index,mi_bits,probe_val_acc.
std::string mi_profile_csv(const MiProfile& profile);

}  // namespace tale
