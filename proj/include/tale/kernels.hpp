#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

namespace tale::kernels {

// Dense kernels shared by the autodiff ops and the inference path. Each
// kernel has a serial reference implementation (`serial` namespace) and an
// OpenMP variant parallelized over independent output elements. Every output
// element is produced by exactly one thread with a fixed-order inner loop,
// so results are bitwise identical across thread counts. Tests assert that.
//
// T is double on the training/probing path; float instantiations exist for
// the inference benchmark only.

namespace serial {

template <typename T>
void matmul(T* out, const T* a, const T* b, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            T acc = T(0);
            for (std::size_t t = 0; t < k; ++t) acc += a[i * k + t] * b[t * n + j];
            out[i * n + j] = acc;
        }
    }
}

// out[m×n] += g[m×k'] with transposes as needed is expressed by callers via
// the two explicit variants below (grad of matmul).
template <typename T>
void matmul_at_b(T* out, const T* a, const T* b, std::size_t m, std::size_t k, std::size_t n) {
    // out[k×n] = a^T[k×m] · b[m×n], a stored [m×k]
    for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            T acc = T(0);
            for (std::size_t t = 0; t < m; ++t) acc += a[t * k + i] * b[t * n + j];
            out[i * n + j] = acc;
        }
    }
}

template <typename T>
void matmul_a_bt(T* out, const T* a, const T* b, std::size_t m, std::size_t k, std::size_t n) {
    // out[m×k] = a[m×n] · b^T[n×k], b stored [k×n]
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
            T acc = T(0);
            for (std::size_t t = 0; t < n; ++t) acc += a[i * n + t] * b[j * n + t];
            out[i * k + j] = acc;
        }
    }
}

template <typename T>
void softmax_row(T* row, std::size_t n) {
    T mx = row[0];
    for (std::size_t i = 1; i < n; ++i) mx = row[i] > mx ? row[i] : mx;
    T sum = T(0);
    for (std::size_t i = 0; i < n; ++i) {
        row[i] = std::exp(row[i] - mx);
        sum += row[i];
    }
    const T inv = T(1) / sum;
    for (std::size_t i = 0; i < n; ++i) row[i] *= inv;
}

template <typename T>
void rmsnorm_row(T* out, const T* x, const T* weight, std::size_t n, T eps) {
    T ss = T(0);
    for (std::size_t i = 0; i < n; ++i) ss += x[i] * x[i];
    const T inv = T(1) / std::sqrt(ss / static_cast<T>(n) + eps);
    for (std::size_t i = 0; i < n; ++i) out[i] = x[i] * inv * weight[i];
}

template <typename T>
T gelu_scalar(T x) {
    return T(0.5) * x * (T(1) + std::erf(x * T(0.7071067811865475244)));
}

template <typename T>
T gelu_grad_scalar(T x) {
    const T phi = T(0.5) * (T(1) + std::erf(x * T(0.7071067811865475244)));
    const T pdf = std::exp(T(-0.5) * x * x) * T(0.3989422804014326779);
    return phi + x * pdf;
}

// Rotary embedding over adjacent pairs inside each head; base fixed by the
// caller. Positions are absolute token positions, never layer-dependent.
template <typename T>
void rope_row(T* row, std::size_t pos, std::size_t n_heads, std::size_t head_dim, T base) {
    const std::size_t half = head_dim / 2;
    for (std::size_t h = 0; h < n_heads; ++h) {
        T* hp = row + h * head_dim;
        for (std::size_t p = 0; p < half; ++p) {
            const T freq = std::pow(base, -static_cast<T>(2 * p) / static_cast<T>(head_dim));
            const T theta = static_cast<T>(pos) * freq;
            const T c = std::cos(theta);
            const T s = std::sin(theta);
            const T x0 = hp[2 * p];
            const T x1 = hp[2 * p + 1];
            hp[2 * p] = x0 * c - x1 * s;
            hp[2 * p + 1] = x0 * s + x1 * c;
        }
    }
}

// Strictly causal multi-head attention. q, k, v are [seq × d_model] with
// rotary already applied to q and k. out is [seq × d_model].
template <typename T>
void causal_attention(T* out, const T* q, const T* k, const T* v, std::size_t seq,
                      std::size_t d_model, std::size_t n_heads) {
    const std::size_t head_dim = d_model / n_heads;
    const T scale = T(1) / std::sqrt(static_cast<T>(head_dim));
    for (std::size_t h = 0; h < n_heads; ++h) {
        for (std::size_t i = 0; i < seq; ++i) {
            std::vector<T> p(i + 1);
            const T* qi = q + i * d_model + h * head_dim;
            for (std::size_t j = 0; j <= i; ++j) {
                const T* kj = k + j * d_model + h * head_dim;
                T acc = T(0);
                for (std::size_t t = 0; t < head_dim; ++t) acc += qi[t] * kj[t];
                p[j] = acc * scale;
            }
            softmax_row(p.data(), i + 1);
            T* oi = out + i * d_model + h * head_dim;
            for (std::size_t t = 0; t < head_dim; ++t) {
                T acc = T(0);
                for (std::size_t j = 0; j <= i; ++j) acc += p[j] * v[j * d_model + h * head_dim + t];
                oi[t] = acc;
            }
        }
    }
}

}  // namespace serial

// Work below this many multiply-adds stays serial; thread startup costs more
// than it saves on toy shapes.
inline constexpr std::size_t parallel_cutoff = 32768;

template <typename T>
void matmul(T* out, const T* a, const T* b, std::size_t m, std::size_t k, std::size_t n) {
    if (m * k * n < parallel_cutoff) {
        serial::matmul(out, a, b, m, k, n);
        return;
    }
#pragma omp parallel for schedule(static)
    for (long long ii = 0; ii < static_cast<long long>(m); ++ii) {
        const std::size_t i = static_cast<std::size_t>(ii);
        for (std::size_t j = 0; j < n; ++j) {
            T acc = T(0);
            for (std::size_t t = 0; t < k; ++t) acc += a[i * k + t] * b[t * n + j];
            out[i * n + j] = acc;
        }
    }
}

template <typename T>
void matmul_at_b(T* out, const T* a, const T* b, std::size_t m, std::size_t k, std::size_t n) {
    if (m * k * n < parallel_cutoff) {
        serial::matmul_at_b(out, a, b, m, k, n);
        return;
    }
#pragma omp parallel for schedule(static)
    for (long long ii = 0; ii < static_cast<long long>(k); ++ii) {
        const std::size_t i = static_cast<std::size_t>(ii);
        for (std::size_t j = 0; j < n; ++j) {
            T acc = T(0);
            for (std::size_t t = 0; t < m; ++t) acc += a[t * k + i] * b[t * n + j];
            out[i * n + j] = acc;
        }
    }
}

template <typename T>
void matmul_a_bt(T* out, const T* a, const T* b, std::size_t m, std::size_t k, std::size_t n) {
    if (m * k * n < parallel_cutoff) {
        serial::matmul_a_bt(out, a, b, m, k, n);
        return;
    }
#pragma omp parallel for schedule(static)
    for (long long ii = 0; ii < static_cast<long long>(m); ++ii) {
        const std::size_t i = static_cast<std::size_t>(ii);
        for (std::size_t j = 0; j < k; ++j) {
            T acc = T(0);
            for (std::size_t t = 0; t < n; ++t) acc += a[i * n + t] * b[j * n + t];
            out[i * k + j] = acc;
        }
    }
}

template <typename T>
void causal_attention(T* out, const T* q, const T* k, const T* v, std::size_t seq,
                      std::size_t d_model, std::size_t n_heads) {
    const std::size_t head_dim = d_model / n_heads;
    if (n_heads * seq * seq * head_dim < parallel_cutoff) {
        serial::causal_attention(out, q, k, v, seq, d_model, n_heads);
        return;
    }
    const T scale = T(1) / std::sqrt(static_cast<T>(head_dim));
#pragma omp parallel for collapse(2) schedule(static)
    for (long long hh = 0; hh < static_cast<long long>(n_heads); ++hh) {
        for (long long ii = 0; ii < static_cast<long long>(seq); ++ii) {
            const std::size_t h = static_cast<std::size_t>(hh);
            const std::size_t i = static_cast<std::size_t>(ii);
            std::vector<T> p(i + 1);
            const T* qi = q + i * d_model + h * head_dim;
            for (std::size_t j = 0; j <= i; ++j) {
                const T* kj = k + j * d_model + h * head_dim;
                T acc = T(0);
                for (std::size_t t = 0; t < head_dim; ++t) acc += qi[t] * kj[t];
                p[j] = acc * scale;
            }
            serial::softmax_row(p.data(), i + 1);
            T* oi = out + i * d_model + h * head_dim;
            for (std::size_t t = 0; t < head_dim; ++t) {
                T acc = T(0);
                for (std::size_t j = 0; j <= i; ++j) acc += p[j] * v[j * d_model + h * head_dim + t];
                oi[t] = acc;
            }
        }
    }
}

using serial::gelu_grad_scalar;
using serial::gelu_scalar;
using serial::rmsnorm_row;
using serial::rope_row;
using serial::softmax_row;

}  // namespace tale::kernels
