#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "tale/rng.hpp"

namespace tale {

struct Node;

// Dense row-major tensor. Training and probing always run in 64-bit; the
// float path exists only inside the inference benchmark kernels. data and
// grad are shared so tensors can sit both in a model struct and on a tape.
// Tensors are immutable once produced by an op; adam_step mutates parameter
// buffers between tapes, never during one.
struct Tensor {
    std::vector<int> shape;
    std::shared_ptr<std::vector<double>> data;
    std::shared_ptr<std::vector<double>> grad;  // same length as data when present
    std::shared_ptr<Node> node;
    bool requires_grad = false;

    Tensor() = default;

    static Tensor zeros(const std::vector<int>& shape, bool requires_grad = false);
    static Tensor from(const std::vector<int>& shape, std::vector<double> values,
                       bool requires_grad = false);
    static Tensor randn(const std::vector<int>& shape, Rng& rng, double stddev,
                        bool requires_grad = false);

    std::size_t numel() const;
    int rows() const { return shape.empty() ? 1 : shape[0]; }
    int cols() const { return shape.size() < 2 ? 1 : shape[1]; }

    double scalar() const;  // value of a 1-element tensor
    double& at(int i) { return (*data)[static_cast<std::size_t>(i)]; }
    double at(int i) const { return (*data)[static_cast<std::size_t>(i)]; }
    double& at(int i, int j) { return (*data)[static_cast<std::size_t>(i) * cols() + j]; }
    double at(int i, int j) const { return (*data)[static_cast<std::size_t>(i) * cols() + j]; }

    void zero_grad();
};

// Tape node: the op that produced a tensor. The graph is rebuilt every
// forward pass; backward() walks it once in reverse topological order.
struct Node {
    std::vector<Tensor> parents;
    std::function<void()> backward;
};

std::string shape_str(const std::vector<int>& shape);

// ---- differentiable ops ----------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
// bias broadcast over the trailing axis; the only broadcast supported
Tensor bias_add(const Tensor& x, const Tensor& bias);
Tensor gelu(const Tensor& x);
Tensor softmax(const Tensor& x, int axis);
Tensor rms_norm(const Tensor& x, const Tensor& weight, double eps);
Tensor embedding_gather(const Tensor& table, const std::vector<int>& ids);
// mean cross-entropy over rows of raw logits, in nats; always >= 0
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels);
Tensor sum(const Tensor& x);
Tensor scale(const Tensor& x, double factor);
// one row of a 2-d tensor as a [1 x cols] tensor
Tensor take_row(const Tensor& x, int row);

// Fused rotary + strictly causal multi-head attention. q, k, v are
// [seq × d_model] pre-projection outputs; rotary (fixed base) is applied to
// q and k inside. Gradient recomputes the attention weights.
Tensor rope_causal_attention(const Tensor& q, const Tensor& k, const Tensor& v, int n_heads,
                             double rope_base);

// ---- tape ------------------------------------------------------------------

// Populates grads of every requires_grad tensor reachable from `loss`.
// loss must be scalar.
void backward(const Tensor& loss);

// ---- optimizer ---------------------------------------------------------

struct AdamState {
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    long step_count = 0;
};

void adam_step(std::vector<Tensor>& params, AdamState& state, double lr, double beta1,
               double beta2, double eps);

}  // namespace tale
