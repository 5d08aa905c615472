#include "tale/probe.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include "tale/errors.hpp"
#include "tale/io.hpp"

namespace tale {

namespace {

constexpr int probe_gd_iterations = 2000;
constexpr double probe_gd_step = 0.5;
constexpr double ln2 = 0.6931471805599453094;

double label_entropy_bits(const std::vector<int>& labels) {
    std::map<int, std::size_t> counts;
    for (int y : labels) counts[y] += 1;
    const double n = static_cast<double>(labels.size());
    double h = 0.0;
    for (const auto& [y, c] : counts) {
        (void)y;
        const double p = static_cast<double>(c) / n;
        h -= p * std::log2(p);
    }
    return h;
}

}  // namespace

double exact_mi(const std::vector<std::vector<double>>& joint) {
    if (joint.empty()) throw std::domain_error("empty joint distribution");
    const std::size_t rows = joint.size();
    const std::size_t cols = joint.front().size();
    double total = 0.0;
    for (const auto& row : joint) {
        if (row.size() != cols) throw std::domain_error("ragged joint distribution");
        for (double p : row) {
            if (p < 0.0) throw std::domain_error("negative probability in joint");
            total += p;
        }
    }
    if (std::abs(total - 1.0) > 1e-9) {
        throw std::domain_error("joint sums to " + std::to_string(total) + ", not 1");
    }
    std::vector<double> px(rows, 0.0), py(cols, 0.0);
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) {
            px[i] += joint[i][j];
            py[j] += joint[i][j];
        }
    double mi = 0.0;
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < cols; ++j) {
            const double p = joint[i][j];
            if (p > 0.0) mi += p * std::log2(p / (px[i] * py[j]));
        }
    }
    return mi;
}

LinearProbe train_probe(const FeatureMatrix& features, const std::vector<int>& labels,
                        int n_classes, double reg) {
    const int n = features.n;
    const int d = features.d;
    if (n != static_cast<int>(labels.size())) {
        throw usage_error("feature rows and label count differ");
    }
    if (n < 10 * n_classes) {
        throw usage_error("probe needs at least 10 examples per class, got " + std::to_string(n) +
                          " for " + std::to_string(n_classes) + " classes");
    }
    for (double v : features.data) {
        if (!std::isfinite(v)) throw usage_error("non-finite probe feature");
    }
    std::vector<bool> seen(static_cast<std::size_t>(n_classes), false);
    for (int y : labels) {
        if (y < 0 || y >= n_classes) throw usage_error("probe label out of range");
        seen[static_cast<std::size_t>(y)] = true;
    }
    if (std::count(seen.begin(), seen.end(), true) < 2) {
        throw config_error("degenerate task: fewer than two label classes present");
    }

    LinearProbe p;
    p.n_classes = n_classes;
    p.reg = reg;
    p.iterations = probe_gd_iterations;
    p.weights.assign(static_cast<std::size_t>(d) * n_classes, 0.0);
    p.bias.assign(static_cast<std::size_t>(n_classes), 0.0);
    p.feat_mean.assign(static_cast<std::size_t>(d), 0.0);
    p.feat_scale.assign(static_cast<std::size_t>(d), 1.0);

    // standardize features on the training rows
    for (int i = 0; i < n; ++i) {
        const double* row = features.row(i);
        for (int j = 0; j < d; ++j) p.feat_mean[static_cast<std::size_t>(j)] += row[j];
    }
    for (int j = 0; j < d; ++j) p.feat_mean[static_cast<std::size_t>(j)] /= n;
    std::vector<double> var(static_cast<std::size_t>(d), 0.0);
    for (int i = 0; i < n; ++i) {
        const double* row = features.row(i);
        for (int j = 0; j < d; ++j) {
            const double c = row[j] - p.feat_mean[static_cast<std::size_t>(j)];
            var[static_cast<std::size_t>(j)] += c * c;
        }
    }
    for (int j = 0; j < d; ++j) {
        const double s = std::sqrt(var[static_cast<std::size_t>(j)] / n);
        p.feat_scale[static_cast<std::size_t>(j)] = s > 1e-12 ? s : 1.0;
    }

    std::vector<double> x(static_cast<std::size_t>(n) * d);
    for (int i = 0; i < n; ++i) {
        const double* row = features.row(i);
        for (int j = 0; j < d; ++j) {
            x[static_cast<std::size_t>(i) * d + j] =
                (row[j] - p.feat_mean[static_cast<std::size_t>(j)]) /
                p.feat_scale[static_cast<std::size_t>(j)];
        }
    }

    const std::size_t K = static_cast<std::size_t>(n_classes);
    std::vector<double> logits(K), gw(p.weights.size()), gb(K);
    for (int iter = 0; iter < probe_gd_iterations; ++iter) {
        std::fill(gw.begin(), gw.end(), 0.0);
        std::fill(gb.begin(), gb.end(), 0.0);
        double loss = 0.0;
        for (int i = 0; i < n; ++i) {
            const double* xi = x.data() + static_cast<std::size_t>(i) * d;
            for (std::size_t c = 0; c < K; ++c) {
                double acc = p.bias[c];
                for (int j = 0; j < d; ++j)
                    acc += xi[j] * p.weights[static_cast<std::size_t>(j) * K + c];
                logits[c] = acc;
            }
            double mx = logits[0];
            for (std::size_t c = 1; c < K; ++c) mx = std::max(mx, logits[c]);
            double se = 0.0;
            for (std::size_t c = 0; c < K; ++c) se += std::exp(logits[c] - mx);
            loss += std::log(se) + mx - logits[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])];
            for (std::size_t c = 0; c < K; ++c) {
                const double prob = std::exp(logits[c] - mx) / se;
                const double delta =
                    prob - (c == static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])
                                ? 1.0
                                : 0.0);
                gb[c] += delta;
                for (int j = 0; j < d; ++j)
                    gw[static_cast<std::size_t>(j) * K + c] += xi[j] * delta;
            }
        }
        // proximal step for the ridge term keeps huge reg values stable
        const double invn = 1.0 / n;
        const double shrink = 1.0 / (1.0 + 2.0 * reg * probe_gd_step);
        for (std::size_t idx = 0; idx < p.weights.size(); ++idx) {
            p.weights[idx] = (p.weights[idx] - probe_gd_step * gw[idx] * invn) * shrink;
        }
        for (std::size_t c = 0; c < K; ++c) p.bias[c] -= probe_gd_step * gb[c] * invn;
        if (iter == probe_gd_iterations - 1) {
            double penalty = 0.0;
            for (double w : p.weights) penalty += w * w;
            p.final_loss = loss * invn + reg * penalty;
        }
    }
    return p;
}

std::vector<double> probe_probabilities(const LinearProbe& probe, const double* features_row,
                                        int d) {
    const std::size_t K = static_cast<std::size_t>(probe.n_classes);
    std::vector<double> logits(K);
    for (std::size_t c = 0; c < K; ++c) {
        double acc = probe.bias[c];
        for (int j = 0; j < d; ++j) {
            const double xj = (features_row[j] - probe.feat_mean[static_cast<std::size_t>(j)]) /
                              probe.feat_scale[static_cast<std::size_t>(j)];
            acc += xj * probe.weights[static_cast<std::size_t>(j) * K + c];
        }
        logits[c] = acc;
    }
    double mx = logits[0];
    for (std::size_t c = 1; c < K; ++c) mx = std::max(mx, logits[c]);
    double se = 0.0;
    for (std::size_t c = 0; c < K; ++c) {
        logits[c] = std::exp(logits[c] - mx);
        se += logits[c];
    }
    for (std::size_t c = 0; c < K; ++c) logits[c] /= se;
    return logits;
}

double probe_accuracy(const LinearProbe& probe, const FeatureMatrix& features,
                      const std::vector<int>& labels) {
    int correct = 0;
    for (int i = 0; i < features.n; ++i) {
        const auto probs = probe_probabilities(probe, features.row(i), features.d);
        int best = 0;
        for (int c = 1; c < probe.n_classes; ++c)
            if (probs[static_cast<std::size_t>(c)] > probs[static_cast<std::size_t>(best)])
                best = c;
        if (best == labels[static_cast<std::size_t>(i)]) correct += 1;
    }
    return static_cast<double>(correct) / features.n;
}

double estimate_mi(const LinearProbe& probe, const FeatureMatrix& features,
                   const std::vector<int>& labels) {
    if (features.n == 0) throw usage_error("estimate_mi on empty heldout set");
    const double h_y = label_entropy_bits(labels);
    double ce_bits = 0.0;
    for (int i = 0; i < features.n; ++i) {
        const auto probs = probe_probabilities(probe, features.row(i), features.d);
        const double ptrue =
            std::max(probs[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])], 1e-300);
        ce_bits -= std::log(ptrue) / ln2;
    }
    ce_bits /= features.n;
    const double mi = h_y - ce_bits;
    return std::clamp(mi, 0.0, h_y);
}

// ---- per-layer profiles --------------------------------------------------

namespace {

struct ProbeData {
    // features per boundary: [boundary][example * d]
    std::vector<FeatureMatrix> train_features;
    std::vector<FeatureMatrix> val_features;
    std::vector<int> layer_index;
    std::vector<int> train_labels;
    std::vector<int> val_labels;
};

// Extracts last-position hidden states for every example at every surviving
// boundary. Probe train/val rows are carved from the task's train split.
ProbeData extract_features(const TransformerModel& model, const LayerMask& mask,
                           const TaskDataset& dataset) {
    const std::vector<Example>& source = dataset.train;
    const int n = static_cast<int>(source.size());
    const int n_train = (2 * n) / 3;
    const int n_val = n - n_train;
    if (n_val < 1) throw usage_error("train split too small to carve probe heldout rows");
    if (n_train < 10 * dataset.spec.n_classes) {
        throw usage_error("train split leaves only " + std::to_string(n_train) +
                          " probe-training rows; need 10 per class");
    }
    // validate serially: exceptions must not escape the parallel regions below
    for (const Example& ex : source) validate_inputs(model, ex.tokens, mask);
    const int d = model.config.d_model;

    HiddenStates first = forward_hidden(model, source.front().tokens, mask);
    const int n_boundaries = static_cast<int>(first.layer_index.size());

    ProbeData pd;
    pd.layer_index = first.layer_index;
    pd.train_features.resize(static_cast<std::size_t>(n_boundaries));
    pd.val_features.resize(static_cast<std::size_t>(n_boundaries));
    for (int b = 0; b < n_boundaries; ++b) {
        auto& tf = pd.train_features[static_cast<std::size_t>(b)];
        tf.n = n_train;
        tf.d = d;
        tf.data.assign(static_cast<std::size_t>(n_train) * d, 0.0);
        auto& vf = pd.val_features[static_cast<std::size_t>(b)];
        vf.n = n_val;
        vf.d = d;
        vf.data.assign(static_cast<std::size_t>(n_val) * d, 0.0);
    }
    for (int i = 0; i < n_train; ++i)
        pd.train_labels.push_back(source[static_cast<std::size_t>(i)].label);
    for (int i = n_train; i < n; ++i)
        pd.val_labels.push_back(source[static_cast<std::size_t>(i)].label);

#pragma omp parallel for schedule(static)
    for (long long i = 0; i < static_cast<long long>(n); ++i) {
        const HiddenStates hs =
            forward_hidden(model, source[static_cast<std::size_t>(i)].tokens, mask);
        for (int b = 0; b < n_boundaries; ++b) {
            const auto& vec = hs.last_position[static_cast<std::size_t>(b)];
            double* dst;
            if (i < n_train) {
                dst = pd.train_features[static_cast<std::size_t>(b)].data.data() +
                      static_cast<std::size_t>(i) * d;
            } else {
                dst = pd.val_features[static_cast<std::size_t>(b)].data.data() +
                      static_cast<std::size_t>(i - n_train) * d;
            }
            std::copy(vec.begin(), vec.end(), dst);
        }
    }
    return pd;
}

constexpr double probe_reg = 1e-4;

}  // namespace

MiProfile mi_profile(const TransformerModel& model, const LayerMask& mask,
                     const TaskDataset& dataset) {
    const ProbeData pd = extract_features(model, mask, dataset);
    const int n_boundaries = static_cast<int>(pd.layer_index.size());
    const int K = dataset.spec.n_classes;

    MiProfile profile;
    profile.mask = mask;
    profile.h_y_bits = label_entropy_bits(pd.val_labels);
    profile.entries.resize(static_cast<std::size_t>(n_boundaries));

    // probes at different boundaries are independent
#pragma omp parallel for schedule(dynamic)
    for (long long b = 0; b < static_cast<long long>(n_boundaries); ++b) {
        const auto bi = static_cast<std::size_t>(b);
        const LinearProbe probe =
            train_probe(pd.train_features[bi], pd.train_labels, K, probe_reg);
        MiProfileEntry e;
        e.boundary = static_cast<int>(b);
        e.layer_index = pd.layer_index[bi];
        e.mi_bits = estimate_mi(probe, pd.val_features[bi], pd.val_labels);
        e.probe_val_acc = probe_accuracy(probe, pd.val_features[bi], pd.val_labels);
        profile.entries[bi] = e;
    }
    return profile;
}

MiDelta deletion_mi_delta(const TransformerModel& model, int layer, const TaskDataset& dataset) {
    const int L = model.config.n_layers;
    if (layer < 1 || layer >= L) {
        throw input_error("mi delta needs a layer in [1," + std::to_string(L - 1) +
                          "] so that layer+1 exists; got " + std::to_string(layer));
    }
    const MiProfile before = mi_profile(model, LayerMask{}, dataset);
    const MiProfile after =
        mi_profile(model, LayerMask::of({layer}, model.config.n_layers), dataset);

    auto entry_at = [](const MiProfile& p, int wanted) {
        for (const auto& e : p.entries) {
            if (e.layer_index == wanted) return e.mi_bits;
        }
        throw input_error("boundary for layer " + std::to_string(wanted) + " not in profile");
    };

    MiDelta d;
    d.layer = layer;
    d.before_bits = entry_at(before, layer + 1);
    d.after_bits = entry_at(after, layer + 1);
    return d;
}

std::string mi_profile_csv(const MiProfile& profile) {
    std::string out = "# H(Y)_bits = " + format_double(profile.h_y_bits) + "\n";
    out += "boundary,layer_index,mi_bits,probe_val_acc\n";
    for (const auto& e : profile.entries) {
        out += std::to_string(e.boundary) + "," + std::to_string(e.layer_index) + "," +
               format_double(e.mi_bits) + "," + format_double(e.probe_val_acc) + "\n";
    }
    return out;
}

}  // namespace tale
