#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tale/tensor.hpp"

namespace tale {

struct ModelConfig {
    int n_layers = 0;
    int d_model = 0;
    int n_heads = 0;
    int d_ff = 0;
    int vocab_size = 0;
    int max_seq_len = 0;
    std::uint64_t seed = 0;

    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

// Set of deleted layers, 1-based to match the external numbering {1..L}.
// Always strictly smaller than the layer count: a model keeps at least one
// layer.
class LayerMask {
public:
    LayerMask() = default;

    // validates: indices in [1..n_layers], no duplicates, size < n_layers
    static LayerMask of(std::vector<int> layers, int n_layers);

    bool contains(int layer) const;
    int size() const { return static_cast<int>(deleted_.size()); }
    bool empty() const { return deleted_.empty(); }
    const std::vector<int>& deleted() const { return deleted_; }

    LayerMask with(int layer, int n_layers) const;  // mask ∪ {layer}

    bool operator==(const LayerMask&) const = default;

private:
    std::vector<int> deleted_;  // sorted ascending
};

// Decoder-only pre-norm transformer block: attention and MLP with their two
// norm weights. A "layer" in every external sense is one whole block.
struct LayerBlock {
    Tensor wq, wk, wv, wo;      // [d_model x d_model]
    Tensor w_up;                // [d_model x d_ff]
    Tensor w_down;              // [d_ff x d_model]
    Tensor norm_attn, norm_mlp; // [d_model]
};

struct TransformerModel {
    ModelConfig config;
    Tensor embedding;   // [vocab x d_model]
    std::vector<LayerBlock> blocks;
    Tensor final_norm;  // [d_model]
    Tensor w_out;       // [d_model x vocab], untied

    // seeded init; same config (incl. seed) gives bitwise-equal weights
    static TransformerModel init(const ModelConfig& config);

    // parameter tensors in a fixed order (optimizer + persistence order)
    std::vector<Tensor> parameters();
    std::vector<const Tensor*> parameters() const;

    TransformerModel clone() const;
    void zero_grads();
};

inline constexpr double rope_base = 10000.0;
inline constexpr double norm_eps = 1e-5;

// Initialization gains (sigma = gain / sqrt(fan_in)). Block matrices start
// hot and are held down by weight decay during training; the trained
// residual stream then stays at a scale where a re-randomized block is a
// real perturbation rather than a rounding error.
inline constexpr double embed_init_gain = 1.0;
inline constexpr double block_init_gain = 4.0;

// Hidden states at layer boundaries, last position only. layer_index 0 is
// the embedding output; otherwise the original 1-based layer number.
struct HiddenStates {
    std::vector<int> layer_index;
    std::vector<std::vector<double>> last_position;  // each of length d_model
};

// Throws input_error unless tokens are nonempty in-vocab ids within
// max_seq_len and the mask is valid for this model. forward() runs the same
// checks; callers that fan work out across threads validate up front so no
// exception crosses a parallel region.
void validate_inputs(const TransformerModel& model, const std::vector<int>& tokens,
                     const LayerMask& mask);

// Masked forward: deleted layers are skipped so the residual stream feeds
// the next surviving layer directly. Pure inference path, no tape.
Tensor forward(const TransformerModel& model, const std::vector<int>& tokens,
               const LayerMask& mask);

HiddenStates forward_hidden(const TransformerModel& model, const std::vector<int>& tokens,
                            const LayerMask& mask);

// Decodes the full model's boundary-k hidden state (k = 0 means the
// embedding output) through the final norm and output projection; returns
// the distribution over the vocabulary at the last position.
std::vector<double> logit_lens(const TransformerModel& model, const std::vector<int>& tokens,
                               int k);

// New model holding only the surviving blocks, weights bitwise equal.
TransformerModel materialize_pruned(const TransformerModel& model, const LayerMask& mask);

// Tape-building forward for training; logits [seq x vocab] attached to the
// autodiff graph. Same arithmetic as the inference path.
Tensor forward_train(TransformerModel& model, const std::vector<int>& tokens,
                     const LayerMask& mask);

std::string mask_str(const LayerMask& mask);

}  // namespace tale
