#include "tale/model.hpp"

#include <algorithm>
#include <cmath>

#include "tale/errors.hpp"
#include "tale/kernels.hpp"

namespace tale {

void ModelConfig::validate() const {
    if (n_layers < 1 || d_model < 1 || n_heads < 1 || d_ff < 1 || vocab_size < 1 ||
        max_seq_len < 1) {
        throw config_error("all model dimensions must be >= 1");
    }
    if (d_model % n_heads != 0) {
        throw config_error("d_model " + std::to_string(d_model) + " not divisible by n_heads " +
                           std::to_string(n_heads));
    }
    if ((d_model / n_heads) % 2 != 0) {
        throw config_error("head dim " + std::to_string(d_model / n_heads) +
                           " must be even for rotary pairs");
    }
}

LayerMask LayerMask::of(std::vector<int> layers, int n_layers) {
    std::sort(layers.begin(), layers.end());
    for (std::size_t i = 0; i < layers.size(); ++i) {
        if (layers[i] < 1 || layers[i] > n_layers) {
            throw input_error("mask layer " + std::to_string(layers[i]) + " outside [1," +
                              std::to_string(n_layers) + "]");
        }
        if (i > 0 && layers[i] == layers[i - 1]) {
            throw input_error("duplicate layer " + std::to_string(layers[i]) + " in mask");
        }
    }
    if (static_cast<int>(layers.size()) >= n_layers) {
        throw input_error("mask deletes all " + std::to_string(n_layers) +
                          " layers; at least one must survive");
    }
    LayerMask m;
    m.deleted_ = std::move(layers);
    return m;
}

bool LayerMask::contains(int layer) const {
    return std::binary_search(deleted_.begin(), deleted_.end(), layer);
}

LayerMask LayerMask::with(int layer, int n_layers) const {
    std::vector<int> v = deleted_;
    v.push_back(layer);
    return of(std::move(v), n_layers);
}

std::string mask_str(const LayerMask& mask) {
    std::string s = "{";
    for (std::size_t i = 0; i < mask.deleted().size(); ++i) {
        if (i) s += ",";
        s += std::to_string(mask.deleted()[i]);
    }
    return s + "}";
}

namespace {

Tensor clone_tensor(const Tensor& t) {
    Tensor c = Tensor::from(t.shape, *t.data, t.requires_grad);
    return c;
}

}  // namespace

void validate_inputs(const TransformerModel& model, const std::vector<int>& tokens,
                     const LayerMask& mask) {
    if (tokens.empty()) throw input_error("token sequence is empty");
    if (static_cast<int>(tokens.size()) > model.config.max_seq_len) {
        throw input_error("sequence length " + std::to_string(tokens.size()) +
                          " exceeds max_seq_len " + std::to_string(model.config.max_seq_len));
    }
    for (int t : tokens) {
        if (t < 0 || t >= model.config.vocab_size) {
            throw input_error("token id " + std::to_string(t) + " outside vocab of size " +
                              std::to_string(model.config.vocab_size));
        }
    }
    // re-validate against this model's layer count
    LayerMask::of(mask.deleted(), model.config.n_layers);
}

TransformerModel TransformerModel::init(const ModelConfig& config) {
    config.validate();
    Rng rng(config.seed);
    const double emb_std = embed_init_gain / std::sqrt(static_cast<double>(config.d_model));
    const double blk_std = block_init_gain / std::sqrt(static_cast<double>(config.d_model));
    const double ff_std = block_init_gain / std::sqrt(static_cast<double>(config.d_ff));
    TransformerModel m;
    m.config = config;
    m.embedding = Tensor::randn({config.vocab_size, config.d_model}, rng, emb_std, true);
    m.blocks.resize(static_cast<std::size_t>(config.n_layers));
    for (auto& b : m.blocks) {
        b.wq = Tensor::randn({config.d_model, config.d_model}, rng, blk_std, true);
        b.wk = Tensor::randn({config.d_model, config.d_model}, rng, blk_std, true);
        b.wv = Tensor::randn({config.d_model, config.d_model}, rng, blk_std, true);
        b.wo = Tensor::randn({config.d_model, config.d_model}, rng, blk_std, true);
        b.w_up = Tensor::randn({config.d_model, config.d_ff}, rng, blk_std, true);
        b.w_down = Tensor::randn({config.d_ff, config.d_model}, rng, ff_std, true);
        b.norm_attn = Tensor::from({config.d_model},
                                   std::vector<double>(config.d_model, 1.0), true);
        b.norm_mlp = Tensor::from({config.d_model},
                                  std::vector<double>(config.d_model, 1.0), true);
    }
    m.final_norm = Tensor::from({config.d_model}, std::vector<double>(config.d_model, 1.0), true);
    m.w_out = Tensor::randn({config.d_model, config.vocab_size}, rng, emb_std, true);
    return m;
}

std::vector<Tensor> TransformerModel::parameters() {
    std::vector<Tensor> ps;
    ps.push_back(embedding);
    for (auto& b : blocks) {
        ps.push_back(b.wq);
        ps.push_back(b.wk);
        ps.push_back(b.wv);
        ps.push_back(b.wo);
        ps.push_back(b.w_up);
        ps.push_back(b.w_down);
        ps.push_back(b.norm_attn);
        ps.push_back(b.norm_mlp);
    }
    ps.push_back(final_norm);
    ps.push_back(w_out);
    return ps;
}

std::vector<const Tensor*> TransformerModel::parameters() const {
    std::vector<const Tensor*> ps;
    ps.push_back(&embedding);
    for (const auto& b : blocks) {
        ps.push_back(&b.wq);
        ps.push_back(&b.wk);
        ps.push_back(&b.wv);
        ps.push_back(&b.wo);
        ps.push_back(&b.w_up);
        ps.push_back(&b.w_down);
        ps.push_back(&b.norm_attn);
        ps.push_back(&b.norm_mlp);
    }
    ps.push_back(&final_norm);
    ps.push_back(&w_out);
    return ps;
}

TransformerModel TransformerModel::clone() const {
    TransformerModel c;
    c.config = config;
    c.embedding = clone_tensor(embedding);
    c.blocks.reserve(blocks.size());
    for (const auto& b : blocks) {
        LayerBlock nb;
        nb.wq = clone_tensor(b.wq);
        nb.wk = clone_tensor(b.wk);
        nb.wv = clone_tensor(b.wv);
        nb.wo = clone_tensor(b.wo);
        nb.w_up = clone_tensor(b.w_up);
        nb.w_down = clone_tensor(b.w_down);
        nb.norm_attn = clone_tensor(b.norm_attn);
        nb.norm_mlp = clone_tensor(b.norm_mlp);
        c.blocks.push_back(std::move(nb));
    }
    c.final_norm = clone_tensor(final_norm);
    c.w_out = clone_tensor(w_out);
    return c;
}

void TransformerModel::zero_grads() {
    for (auto& p : parameters()) p.zero_grad();
}

// ---- inference path ------------------------------------------------------

namespace {

// Runs the masked residual stack over [seq x d_model] in place. Calls
// `on_boundary(original_layer_index)` after the embedding (index 0) and
// after each surviving block.
template <typename F>
void run_stack(const TransformerModel& model, const std::vector<int>& tokens,
               const LayerMask& mask, std::vector<double>& x, F&& on_boundary) {
    const auto& cfg = model.config;
    const std::size_t seq = tokens.size();
    const std::size_t d = static_cast<std::size_t>(cfg.d_model);
    const std::size_t ff = static_cast<std::size_t>(cfg.d_ff);
    const std::size_t nh = static_cast<std::size_t>(cfg.n_heads);
    const std::size_t head_dim = d / nh;

    x.assign(seq * d, 0.0);
    for (std::size_t i = 0; i < seq; ++i) {
        const double* row = model.embedding.data->data() + static_cast<std::size_t>(tokens[i]) * d;
        std::copy(row, row + d, x.data() + i * d);
    }
    on_boundary(0, x);

    std::vector<double> h(seq * d), q(seq * d), k(seq * d), v(seq * d), a(seq * d);
    std::vector<double> proj(seq * d), u(seq * ff), down(seq * d);

    for (int layer = 1; layer <= cfg.n_layers; ++layer) {
        if (mask.contains(layer)) continue;
        const LayerBlock& b = model.blocks[static_cast<std::size_t>(layer - 1)];

        for (std::size_t i = 0; i < seq; ++i)
            kernels::rmsnorm_row(h.data() + i * d, x.data() + i * d, b.norm_attn.data->data(), d,
                                 norm_eps);
        kernels::matmul(q.data(), h.data(), b.wq.data->data(), seq, d, d);
        kernels::matmul(k.data(), h.data(), b.wk.data->data(), seq, d, d);
        kernels::matmul(v.data(), h.data(), b.wv.data->data(), seq, d, d);
        for (std::size_t i = 0; i < seq; ++i) {
            kernels::rope_row(q.data() + i * d, i, nh, head_dim, rope_base);
            kernels::rope_row(k.data() + i * d, i, nh, head_dim, rope_base);
        }
        kernels::causal_attention(a.data(), q.data(), k.data(), v.data(), seq, d, nh);
        kernels::matmul(proj.data(), a.data(), b.wo.data->data(), seq, d, d);
        for (std::size_t i = 0; i < seq * d; ++i) x[i] += proj[i];

        for (std::size_t i = 0; i < seq; ++i)
            kernels::rmsnorm_row(h.data() + i * d, x.data() + i * d, b.norm_mlp.data->data(), d,
                                 norm_eps);
        kernels::matmul(u.data(), h.data(), b.w_up.data->data(), seq, d, ff);
        for (std::size_t i = 0; i < seq * ff; ++i) u[i] = kernels::gelu_scalar(u[i]);
        kernels::matmul(down.data(), u.data(), b.w_down.data->data(), seq, ff, d);
        for (std::size_t i = 0; i < seq * d; ++i) x[i] += down[i];

        on_boundary(layer, x);
    }
}

// final norm + output projection for one d_model vector
std::vector<double> decode_vector(const TransformerModel& model, const double* hidden) {
    const std::size_t d = static_cast<std::size_t>(model.config.d_model);
    const std::size_t vocab = static_cast<std::size_t>(model.config.vocab_size);
    std::vector<double> normed(d);
    kernels::rmsnorm_row(normed.data(), hidden, model.final_norm.data->data(), d, norm_eps);
    std::vector<double> logits(vocab);
    kernels::matmul(logits.data(), normed.data(), model.w_out.data->data(), 1, d, vocab);
    return logits;
}

}  // namespace

Tensor forward(const TransformerModel& model, const std::vector<int>& tokens,
               const LayerMask& mask) {
    validate_inputs(model, tokens, mask);
    const std::size_t seq = tokens.size();
    const std::size_t d = static_cast<std::size_t>(model.config.d_model);
    const std::size_t vocab = static_cast<std::size_t>(model.config.vocab_size);

    std::vector<double> x;
    run_stack(model, tokens, mask, x, [](int, const std::vector<double>&) {});

    std::vector<double> normed(seq * d);
    for (std::size_t i = 0; i < seq; ++i)
        kernels::rmsnorm_row(normed.data() + i * d, x.data() + i * d,
                             model.final_norm.data->data(), d, norm_eps);
    Tensor logits = Tensor::zeros({static_cast<int>(seq), model.config.vocab_size});
    kernels::matmul(logits.data->data(), normed.data(), model.w_out.data->data(), seq, d, vocab);
    return logits;
}

HiddenStates forward_hidden(const TransformerModel& model, const std::vector<int>& tokens,
                            const LayerMask& mask) {
    validate_inputs(model, tokens, mask);
    const std::size_t seq = tokens.size();
    const std::size_t d = static_cast<std::size_t>(model.config.d_model);

    HiddenStates hs;
    std::vector<double> x;
    run_stack(model, tokens, mask, x, [&](int layer, const std::vector<double>& state) {
        hs.layer_index.push_back(layer);
        hs.last_position.emplace_back(state.begin() + static_cast<long>((seq - 1) * d),
                                      state.begin() + static_cast<long>(seq * d));
    });
    return hs;
}

std::vector<double> logit_lens(const TransformerModel& model, const std::vector<int>& tokens,
                               int k) {
    if (k < 0 || k > model.config.n_layers) {
        throw input_error("lens boundary " + std::to_string(k) + " outside [0," +
                          std::to_string(model.config.n_layers) + "]");
    }
    LayerMask none;
    HiddenStates hs = forward_hidden(model, tokens, none);
    std::vector<double> logits =
        decode_vector(model, hs.last_position[static_cast<std::size_t>(k)].data());
    kernels::softmax_row(logits.data(), logits.size());
    return logits;
}

TransformerModel materialize_pruned(const TransformerModel& model, const LayerMask& mask) {
    LayerMask::of(mask.deleted(), model.config.n_layers);
    TransformerModel out = model.clone();
    out.blocks.clear();
    for (int layer = 1; layer <= model.config.n_layers; ++layer) {
        if (mask.contains(layer)) continue;
        const LayerBlock& b = model.blocks[static_cast<std::size_t>(layer - 1)];
        LayerBlock nb;
        nb.wq = clone_tensor(b.wq);
        nb.wk = clone_tensor(b.wk);
        nb.wv = clone_tensor(b.wv);
        nb.wo = clone_tensor(b.wo);
        nb.w_up = clone_tensor(b.w_up);
        nb.w_down = clone_tensor(b.w_down);
        nb.norm_attn = clone_tensor(b.norm_attn);
        nb.norm_mlp = clone_tensor(b.norm_mlp);
        out.blocks.push_back(std::move(nb));
    }
    out.config.n_layers = model.config.n_layers - mask.size();
    return out;
}

// ---- training path -------------------------------------------------------

Tensor forward_train(TransformerModel& model, const std::vector<int>& tokens,
                     const LayerMask& mask) {
    validate_inputs(model, tokens, mask);
    Tensor x = embedding_gather(model.embedding, tokens);
    for (int layer = 1; layer <= model.config.n_layers; ++layer) {
        if (mask.contains(layer)) continue;
        LayerBlock& b = model.blocks[static_cast<std::size_t>(layer - 1)];
        Tensor h = rms_norm(x, b.norm_attn, norm_eps);
        Tensor q = matmul(h, b.wq);
        Tensor k = matmul(h, b.wk);
        Tensor v = matmul(h, b.wv);
        Tensor a = rope_causal_attention(q, k, v, model.config.n_heads, rope_base);
        x = add(x, matmul(a, b.wo));
        Tensor h2 = rms_norm(x, b.norm_mlp, norm_eps);
        x = add(x, matmul(gelu(matmul(h2, b.w_up)), b.w_down));
    }
    Tensor normed = rms_norm(x, model.final_norm, norm_eps);
    return matmul(normed, model.w_out);
}

}  // namespace tale
