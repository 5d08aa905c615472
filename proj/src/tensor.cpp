#include "tale/tensor.hpp"

#include <cmath>
#include <cstddef>
#include <unordered_set>

#include "tale/errors.hpp"
#include "tale/kernels.hpp"

namespace tale {

namespace {

std::size_t product(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    return n;
}

void check_shape(const std::vector<int>& shape) {
    for (int d : shape) {
        if (d <= 0) throw shape_error("non-positive dimension in shape " + shape_str(shape));
    }
}

Tensor make_out(const std::vector<int>& shape, bool requires_grad) {
    return Tensor::zeros(shape, requires_grad);
}

void attach(Tensor& out, std::vector<Tensor> parents, std::function<void()> backward) {
    if (!out.requires_grad) return;
    out.node = std::make_shared<Node>();
    out.node->parents = std::move(parents);
    out.node->backward = std::move(backward);
}

bool any_grad(const Tensor& a) { return a.requires_grad; }
bool any_grad(const Tensor& a, const Tensor& b) { return a.requires_grad || b.requires_grad; }
bool any_grad(const Tensor& a, const Tensor& b, const Tensor& c) {
    return a.requires_grad || b.requires_grad || c.requires_grad;
}

}  // namespace

std::string shape_str(const std::vector<int>& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

Tensor Tensor::zeros(const std::vector<int>& shape, bool requires_grad) {
    check_shape(shape);
    Tensor t;
    t.shape = shape;
    t.data = std::make_shared<std::vector<double>>(product(shape), 0.0);
    t.requires_grad = requires_grad;
    if (requires_grad) t.grad = std::make_shared<std::vector<double>>(product(shape), 0.0);
    return t;
}

Tensor Tensor::from(const std::vector<int>& shape, std::vector<double> values,
                    bool requires_grad) {
    check_shape(shape);
    if (product(shape) != values.size()) {
        throw shape_error("value count " + std::to_string(values.size()) +
                          " does not fill shape " + shape_str(shape));
    }
    Tensor t;
    t.shape = shape;
    t.data = std::make_shared<std::vector<double>>(std::move(values));
    t.requires_grad = requires_grad;
    if (requires_grad) t.grad = std::make_shared<std::vector<double>>(t.data->size(), 0.0);
    return t;
}

Tensor Tensor::randn(const std::vector<int>& shape, Rng& rng, double stddev,
                     bool requires_grad) {
    Tensor t = zeros(shape, requires_grad);
    for (double& v : *t.data) v = rng.gaussian(0.0, stddev);
    return t;
}

std::size_t Tensor::numel() const { return data ? data->size() : 0; }

double Tensor::scalar() const {
    if (numel() != 1) throw usage_error("scalar() on tensor of shape " + shape_str(shape));
    return (*data)[0];
}

void Tensor::zero_grad() {
    if (grad) std::fill(grad->begin(), grad->end(), 0.0);
}

// ---- ops ---------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.shape.size() != 2 || b.shape.size() != 2 || a.shape[1] != b.shape[0]) {
        throw shape_error("matmul shapes do not chain: " + shape_str(a.shape) + " and " +
                          shape_str(b.shape));
    }
    const std::size_t m = static_cast<std::size_t>(a.shape[0]);
    const std::size_t k = static_cast<std::size_t>(a.shape[1]);
    const std::size_t n = static_cast<std::size_t>(b.shape[1]);
    Tensor out = make_out({a.shape[0], b.shape[1]}, any_grad(a, b));
    kernels::matmul(out.data->data(), a.data->data(), b.data->data(), m, k, n);
    attach(out, {a, b}, [a, b, out, m, k, n]() {
        const double* g = out.grad->data();
        if (a.requires_grad) {
            std::vector<double> tmp(m * k);
            kernels::matmul_a_bt(tmp.data(), g, b.data->data(), m, k, n);
            for (std::size_t i = 0; i < tmp.size(); ++i) (*a.grad)[i] += tmp[i];
        }
        if (b.requires_grad) {
            std::vector<double> tmp(k * n);
            kernels::matmul_at_b(tmp.data(), a.data->data(), g, m, k, n);
            for (std::size_t i = 0; i < tmp.size(); ++i) (*b.grad)[i] += tmp[i];
        }
    });
    return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape != b.shape) {
        throw shape_error("add shapes differ: " + shape_str(a.shape) + " and " +
                          shape_str(b.shape));
    }
    Tensor out = make_out(a.shape, any_grad(a, b));
    for (std::size_t i = 0; i < out.numel(); ++i) (*out.data)[i] = (*a.data)[i] + (*b.data)[i];
    attach(out, {a, b}, [a, b, out]() {
        for (std::size_t i = 0; i < out.numel(); ++i) {
            if (a.requires_grad) (*a.grad)[i] += (*out.grad)[i];
            if (b.requires_grad) (*b.grad)[i] += (*out.grad)[i];
        }
    });
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    if (a.shape != b.shape) {
        throw shape_error("mul shapes differ: " + shape_str(a.shape) + " and " +
                          shape_str(b.shape));
    }
    Tensor out = make_out(a.shape, any_grad(a, b));
    for (std::size_t i = 0; i < out.numel(); ++i) (*out.data)[i] = (*a.data)[i] * (*b.data)[i];
    attach(out, {a, b}, [a, b, out]() {
        for (std::size_t i = 0; i < out.numel(); ++i) {
            if (a.requires_grad) (*a.grad)[i] += (*out.grad)[i] * (*b.data)[i];
            if (b.requires_grad) (*b.grad)[i] += (*out.grad)[i] * (*a.data)[i];
        }
    });
    return out;
}

Tensor bias_add(const Tensor& x, const Tensor& bias) {
    if (x.shape.empty() || bias.shape.size() != 1 || x.shape.back() != bias.shape[0]) {
        throw shape_error("bias_add trailing axis mismatch: " + shape_str(x.shape) + " and " +
                          shape_str(bias.shape));
    }
    const std::size_t n = static_cast<std::size_t>(bias.shape[0]);
    const std::size_t rows = x.numel() / n;
    Tensor out = make_out(x.shape, any_grad(x, bias));
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < n; ++j)
            (*out.data)[r * n + j] = (*x.data)[r * n + j] + (*bias.data)[j];
    attach(out, {x, bias}, [x, bias, out, rows, n]() {
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < n; ++j) {
                const double g = (*out.grad)[r * n + j];
                if (x.requires_grad) (*x.grad)[r * n + j] += g;
                if (bias.requires_grad) (*bias.grad)[j] += g;
            }
        }
    });
    return out;
}

Tensor gelu(const Tensor& x) {
    Tensor out = make_out(x.shape, any_grad(x));
    for (std::size_t i = 0; i < out.numel(); ++i)
        (*out.data)[i] = kernels::gelu_scalar((*x.data)[i]);
    attach(out, {x}, [x, out]() {
        for (std::size_t i = 0; i < out.numel(); ++i)
            (*x.grad)[i] += (*out.grad)[i] * kernels::gelu_grad_scalar((*x.data)[i]);
    });
    return out;
}

Tensor softmax(const Tensor& x, int axis) {
    const int rank = static_cast<int>(x.shape.size());
    if (axis < 0 || axis >= rank) {
        throw usage_error("softmax axis " + std::to_string(axis) + " out of range for shape " +
                          shape_str(x.shape));
    }
    // decompose as [pre][n][post] around the axis
    std::size_t pre = 1, post = 1;
    for (int i = 0; i < axis; ++i) pre *= static_cast<std::size_t>(x.shape[i]);
    for (int i = axis + 1; i < rank; ++i) post *= static_cast<std::size_t>(x.shape[i]);
    const std::size_t n = static_cast<std::size_t>(x.shape[axis]);

    Tensor out = make_out(x.shape, any_grad(x));
    auto idx = [n, post](std::size_t p, std::size_t i, std::size_t q) {
        return (p * n + i) * post + q;
    };
    for (std::size_t p = 0; p < pre; ++p) {
        for (std::size_t q = 0; q < post; ++q) {
            double mx = (*x.data)[idx(p, 0, q)];
            for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, (*x.data)[idx(p, i, q)]);
            double sum = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double e = std::exp((*x.data)[idx(p, i, q)] - mx);
                (*out.data)[idx(p, i, q)] = e;
                sum += e;
            }
            const double inv = 1.0 / sum;
            for (std::size_t i = 0; i < n; ++i) (*out.data)[idx(p, i, q)] *= inv;
        }
    }
    attach(out, {x}, [x, out, pre, post, n, idx]() {
        for (std::size_t p = 0; p < pre; ++p) {
            for (std::size_t q = 0; q < post; ++q) {
                double dot = 0.0;
                for (std::size_t i = 0; i < n; ++i)
                    dot += (*out.data)[idx(p, i, q)] * (*out.grad)[idx(p, i, q)];
                for (std::size_t i = 0; i < n; ++i) {
                    const double pi = (*out.data)[idx(p, i, q)];
                    (*x.grad)[idx(p, i, q)] += pi * ((*out.grad)[idx(p, i, q)] - dot);
                }
            }
        }
    });
    return out;
}

Tensor rms_norm(const Tensor& x, const Tensor& weight, double eps) {
    if (x.shape.empty() || weight.shape.size() != 1 || x.shape.back() != weight.shape[0]) {
        throw shape_error("rms_norm trailing axis mismatch: " + shape_str(x.shape) + " and " +
                          shape_str(weight.shape));
    }
    const std::size_t n = static_cast<std::size_t>(weight.shape[0]);
    const std::size_t rows = x.numel() / n;
    Tensor out = make_out(x.shape, any_grad(x, weight));
    for (std::size_t r = 0; r < rows; ++r)
        kernels::rmsnorm_row(out.data->data() + r * n, x.data->data() + r * n,
                             weight.data->data(), n, eps);
    attach(out, {x, weight}, [x, weight, out, rows, n, eps]() {
        for (std::size_t r = 0; r < rows; ++r) {
            const double* xr = x.data->data() + r * n;
            const double* g = out.grad->data() + r * n;
            double ss = 0.0;
            for (std::size_t i = 0; i < n; ++i) ss += xr[i] * xr[i];
            const double inv = 1.0 / std::sqrt(ss / static_cast<double>(n) + eps);
            if (weight.requires_grad) {
                for (std::size_t i = 0; i < n; ++i) (*weight.grad)[i] += g[i] * xr[i] * inv;
            }
            if (x.requires_grad) {
                double acc = 0.0;
                for (std::size_t i = 0; i < n; ++i) acc += g[i] * (*weight.data)[i] * xr[i];
                const double coef = inv * inv * inv * acc / static_cast<double>(n);
                for (std::size_t i = 0; i < n; ++i)
                    (*x.grad)[r * n + i] += g[i] * (*weight.data)[i] * inv - coef * xr[i];
            }
        }
    });
    return out;
}

Tensor embedding_gather(const Tensor& table, const std::vector<int>& ids) {
    if (table.shape.size() != 2) {
        throw shape_error("embedding_gather expects a 2-d table, got " + shape_str(table.shape));
    }
    const int vocab = table.shape[0];
    const std::size_t d = static_cast<std::size_t>(table.shape[1]);
    for (int id : ids) {
        if (id < 0 || id >= vocab) {
            throw input_error("token id " + std::to_string(id) + " outside vocab of size " +
                              std::to_string(vocab));
        }
    }
    Tensor out = make_out({static_cast<int>(ids.size()), table.shape[1]}, any_grad(table));
    for (std::size_t r = 0; r < ids.size(); ++r)
        for (std::size_t j = 0; j < d; ++j)
            (*out.data)[r * d + j] = (*table.data)[static_cast<std::size_t>(ids[r]) * d + j];
    attach(out, {table}, [table, out, ids, d]() {
        for (std::size_t r = 0; r < ids.size(); ++r)
            for (std::size_t j = 0; j < d; ++j)
                (*table.grad)[static_cast<std::size_t>(ids[r]) * d + j] += (*out.grad)[r * d + j];
    });
    return out;
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
    if (logits.shape.size() != 2 || static_cast<std::size_t>(logits.shape[0]) != labels.size()) {
        throw shape_error("cross_entropy expects [n x K] logits with n labels, got " +
                          shape_str(logits.shape) + " and " + std::to_string(labels.size()) +
                          " labels");
    }
    const std::size_t n = labels.size();
    const std::size_t K = static_cast<std::size_t>(logits.shape[1]);
    for (int y : labels) {
        if (y < 0 || y >= logits.shape[1])
            throw input_error("label " + std::to_string(y) + " outside [0," +
                              std::to_string(logits.shape[1]) + ")");
    }
    Tensor out = make_out({1}, any_grad(logits));
    double loss = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
        const double* row = logits.data->data() + r * K;
        double mx = row[0];
        for (std::size_t j = 1; j < K; ++j) mx = std::max(mx, row[j]);
        double se = 0.0;
        for (std::size_t j = 0; j < K; ++j) se += std::exp(row[j] - mx);
        loss += std::log(se) + mx - row[static_cast<std::size_t>(labels[r])];
    }
    (*out.data)[0] = loss / static_cast<double>(n);
    attach(out, {logits}, [logits, out, labels, n, K]() {
        const double g = (*out.grad)[0] / static_cast<double>(n);
        for (std::size_t r = 0; r < n; ++r) {
            const double* row = logits.data->data() + r * K;
            double mx = row[0];
            for (std::size_t j = 1; j < K; ++j) mx = std::max(mx, row[j]);
            double se = 0.0;
            for (std::size_t j = 0; j < K; ++j) se += std::exp(row[j] - mx);
            for (std::size_t j = 0; j < K; ++j) {
                const double p = std::exp(row[j] - mx) / se;
                const double onehot = (static_cast<int>(j) == labels[r]) ? 1.0 : 0.0;
                (*logits.grad)[r * K + j] += g * (p - onehot);
            }
        }
    });
    return out;
}

Tensor sum(const Tensor& x) {
    Tensor out = make_out({1}, any_grad(x));
    double acc = 0.0;
    for (std::size_t i = 0; i < x.numel(); ++i) acc += (*x.data)[i];
    (*out.data)[0] = acc;
    attach(out, {x}, [x, out]() {
        for (std::size_t i = 0; i < x.numel(); ++i) (*x.grad)[i] += (*out.grad)[0];
    });
    return out;
}

Tensor scale(const Tensor& x, double factor) {
    Tensor out = make_out(x.shape, any_grad(x));
    for (std::size_t i = 0; i < x.numel(); ++i) (*out.data)[i] = (*x.data)[i] * factor;
    attach(out, {x}, [x, out, factor]() {
        for (std::size_t i = 0; i < x.numel(); ++i) (*x.grad)[i] += (*out.grad)[i] * factor;
    });
    return out;
}

Tensor take_row(const Tensor& x, int row) {
    if (x.shape.size() != 2 || row < 0 || row >= x.shape[0]) {
        throw shape_error("take_row " + std::to_string(row) + " out of range for " +
                          shape_str(x.shape));
    }
    const std::size_t n = static_cast<std::size_t>(x.shape[1]);
    Tensor out = make_out({1, x.shape[1]}, any_grad(x));
    const std::size_t base = static_cast<std::size_t>(row) * n;
    for (std::size_t j = 0; j < n; ++j) (*out.data)[j] = (*x.data)[base + j];
    attach(out, {x}, [x, out, base, n]() {
        for (std::size_t j = 0; j < n; ++j) (*x.grad)[base + j] += (*out.grad)[j];
    });
    return out;
}

namespace {

void rope_all_rows(std::vector<double>& buf, std::size_t seq, std::size_t d_model,
                   std::size_t n_heads, double base, bool inverse) {
    const std::size_t head_dim = d_model / n_heads;
    const std::size_t half = head_dim / 2;
    for (std::size_t i = 0; i < seq; ++i) {
        for (std::size_t h = 0; h < n_heads; ++h) {
            double* hp = buf.data() + i * d_model + h * head_dim;
            for (std::size_t p = 0; p < half; ++p) {
                const double freq =
                    std::pow(base, -static_cast<double>(2 * p) / static_cast<double>(head_dim));
                const double theta = static_cast<double>(i) * freq * (inverse ? -1.0 : 1.0);
                const double c = std::cos(theta);
                const double s = std::sin(theta);
                const double x0 = hp[2 * p];
                const double x1 = hp[2 * p + 1];
                hp[2 * p] = x0 * c - x1 * s;
                hp[2 * p + 1] = x0 * s + x1 * c;
            }
        }
    }
}

}  // namespace

Tensor rope_causal_attention(const Tensor& q, const Tensor& k, const Tensor& v, int n_heads,
                             double rope_base) {
    if (q.shape != k.shape || q.shape != v.shape || q.shape.size() != 2) {
        throw shape_error("attention expects equal [seq x d_model] inputs, got " +
                          shape_str(q.shape) + ", " + shape_str(k.shape) + ", " +
                          shape_str(v.shape));
    }
    if (n_heads <= 0 || q.shape[1] % n_heads != 0 || (q.shape[1] / n_heads) % 2 != 0) {
        throw shape_error("d_model " + std::to_string(q.shape[1]) +
                          " not divisible into even-sized heads of count " +
                          std::to_string(n_heads));
    }
    const std::size_t seq = static_cast<std::size_t>(q.shape[0]);
    const std::size_t d_model = static_cast<std::size_t>(q.shape[1]);
    const std::size_t nh = static_cast<std::size_t>(n_heads);
    const std::size_t head_dim = d_model / nh;

    std::vector<double> qr(*q.data);
    std::vector<double> kr(*k.data);
    rope_all_rows(qr, seq, d_model, nh, rope_base, false);
    rope_all_rows(kr, seq, d_model, nh, rope_base, false);

    Tensor out = make_out(q.shape, any_grad(q, k, v));
    kernels::causal_attention(out.data->data(), qr.data(), kr.data(), v.data->data(), seq,
                              d_model, nh);

    attach(out, {q, k, v}, [q, k, v, out, seq, d_model, nh, head_dim, rope_base]() {
        // recompute rotary projections and attention weights
        std::vector<double> qr2(*q.data);
        std::vector<double> kr2(*k.data);
        rope_all_rows(qr2, seq, d_model, nh, rope_base, false);
        rope_all_rows(kr2, seq, d_model, nh, rope_base, false);
        const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));

        std::vector<double> dq(seq * d_model, 0.0);
        std::vector<double> dk(seq * d_model, 0.0);
        const double* go = out.grad->data();

        for (std::size_t h = 0; h < nh; ++h) {
            const std::size_t off = h * head_dim;
            for (std::size_t i = 0; i < seq; ++i) {
                std::vector<double> p(i + 1);
                const double* qi = qr2.data() + i * d_model + off;
                for (std::size_t j = 0; j <= i; ++j) {
                    const double* kj = kr2.data() + j * d_model + off;
                    double acc = 0.0;
                    for (std::size_t t = 0; t < head_dim; ++t) acc += qi[t] * kj[t];
                    p[j] = acc * scale;
                }
                kernels::softmax_row(p.data(), i + 1);

                const double* gi = go + i * d_model + off;
                std::vector<double> da(i + 1);
                double dot = 0.0;
                for (std::size_t j = 0; j <= i; ++j) {
                    const double* vj = v.data->data() + j * d_model + off;
                    double acc = 0.0;
                    for (std::size_t t = 0; t < head_dim; ++t) acc += gi[t] * vj[t];
                    da[j] = acc;
                    dot += p[j] * acc;
                    if (v.requires_grad) {
                        for (std::size_t t = 0; t < head_dim; ++t)
                            (*v.grad)[j * d_model + off + t] += p[j] * gi[t];
                    }
                }
                for (std::size_t j = 0; j <= i; ++j) {
                    const double ds = p[j] * (da[j] - dot) * scale;
                    const double* kj = kr2.data() + j * d_model + off;
                    for (std::size_t t = 0; t < head_dim; ++t) {
                        dq[i * d_model + off + t] += ds * kj[t];
                        dk[j * d_model + off + t] += ds * qi[t];
                    }
                }
            }
        }
        // rotate gradients back through the rotary map (its inverse transpose)
        rope_all_rows(dq, seq, d_model, nh, rope_base, true);
        rope_all_rows(dk, seq, d_model, nh, rope_base, true);
        if (q.requires_grad)
            for (std::size_t i = 0; i < dq.size(); ++i) (*q.grad)[i] += dq[i];
        if (k.requires_grad)
            for (std::size_t i = 0; i < dk.size(); ++i) (*k.grad)[i] += dk[i];
    });
    return out;
}

// ---- tape --------------------------------------------------------------

void backward(const Tensor& loss) {
    if (loss.numel() != 1) {
        throw usage_error("backward requires a scalar output, got shape " +
                          shape_str(loss.shape));
    }
    if (!loss.requires_grad) return;

    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    // iterative DFS; graphs can be deep on long tapes
    std::vector<std::pair<Node*, std::size_t>> stack;
    if (loss.node) stack.push_back({loss.node.get(), 0});
    while (!stack.empty()) {
        auto& [node, next_child] = stack.back();
        if (visited.count(node)) {
            stack.pop_back();
            continue;
        }
        bool descended = false;
        while (next_child < node->parents.size()) {
            Node* child = node->parents[next_child].node.get();
            ++next_child;
            if (child && !visited.count(child)) {
                stack.push_back({child, 0});
                descended = true;
                break;
            }
        }
        if (!descended && next_child >= node->parents.size()) {
            visited.insert(node);
            order.push_back(node);
            stack.pop_back();
        }
    }

    (*loss.grad)[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if ((*it)->backward) (*it)->backward();
    }
}

// ---- optimizer ---------------------------------------------------------

void adam_step(std::vector<Tensor>& params, AdamState& state, double lr, double beta1,
               double beta2, double eps) {
    if (state.m.empty()) {
        state.m.resize(params.size());
        state.v.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            state.m[i].assign(params[i].numel(), 0.0);
            state.v[i].assign(params[i].numel(), 0.0);
        }
    }
    if (state.m.size() != params.size()) {
        throw usage_error("adam state tracks " + std::to_string(state.m.size()) +
                          " tensors, got " + std::to_string(params.size()));
    }
    state.step_count += 1;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step_count));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step_count));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& p = params[i];
        if (!p.grad) throw usage_error("adam_step on parameter without grad");
        for (std::size_t j = 0; j < p.numel(); ++j) {
            const double g = (*p.grad)[j];
            state.m[i][j] = beta1 * state.m[i][j] + (1.0 - beta1) * g;
            state.v[i][j] = beta2 * state.v[i][j] + (1.0 - beta2) * g * g;
            const double mhat = state.m[i][j] / bc1;
            const double vhat = state.v[i][j] / bc2;
            (*p.data)[j] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

}  // namespace tale
