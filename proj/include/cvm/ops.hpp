#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "cvm/rng.hpp"
#include "cvm/tensor.hpp"

namespace cvm {

namespace detail {

// C[M,N] += A[M,K] · B[K,N]
template <typename T>
void gemm_acc(const T* a, const T* b, T* c, int M, int K, int N) {
#pragma omp parallel for schedule(static) if (static_cast<long long>(M) * K * N > 262144)
    for (int i = 0; i < M; ++i) {
        const T* arow = a + static_cast<std::size_t>(i) * K;
        T* crow = c + static_cast<std::size_t>(i) * N;
        for (int k = 0; k < K; ++k) {
            const T av = arow[k];
            const T* brow = b + static_cast<std::size_t>(k) * N;
            for (int j = 0; j < N; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[M,K] += A[M,N] · B[K,N]^T
template <typename T>
void gemm_bt_acc(const T* a, const T* b, T* c, int M, int N, int K) {
#pragma omp parallel for schedule(static) if (static_cast<long long>(M) * K * N > 262144)
    for (int i = 0; i < M; ++i) {
        const T* arow = a + static_cast<std::size_t>(i) * N;
        T* crow = c + static_cast<std::size_t>(i) * K;
        for (int k = 0; k < K; ++k) {
            const T* brow = b + static_cast<std::size_t>(k) * N;
            T acc = T(0);
            for (int j = 0; j < N; ++j) acc += arow[j] * brow[j];
            crow[k] += acc;
        }
    }
}

// C[K,N] += A[M,K]^T · B[M,N]
template <typename T>
void gemm_at_acc(const T* a, const T* b, T* c, int M, int K, int N) {
#pragma omp parallel for schedule(static) if (static_cast<long long>(M) * K * N > 262144)
    for (int k = 0; k < K; ++k) {
        T* crow = c + static_cast<std::size_t>(k) * N;
        for (int m = 0; m < M; ++m) {
            const T av = a[static_cast<std::size_t>(m) * K + k];
            const T* brow = b + static_cast<std::size_t>(m) * N;
            for (int j = 0; j < N; ++j) crow[j] += av * brow[j];
        }
    }
}

template <typename T>
bool recording(Tape<T>* tape, std::initializer_list<const Tensor<T>*> ins) {
    if (!tape) return false;
    for (const Tensor<T>* t : ins)
        if (t->node()->wants_grad()) return true;
    return false;
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (a.shape() != b.shape())
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
}

} // namespace detail

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape = nullptr) {
    detail::require_same_shape(a, b, "add");
    Tensor<T> out(a.shape());
    const std::size_t n = out.data().size();
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
    if (tape && detail::recording(tape, {&a, &b})) {
        auto an = a.node(), bn = b.node(), on = out.node();
        tape->record(
            [an, bn, on, n] {
                if (an->wants_grad()) {
                    an->ensure_grad();
                    for (std::size_t i = 0; i < n; ++i) an->grad[i] += on->grad[i];
                }
                if (bn->wants_grad()) {
                    bn->ensure_grad();
                    for (std::size_t i = 0; i < n; ++i) bn->grad[i] += on->grad[i];
                }
            },
            on);
    }
    return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape = nullptr) {
    detail::require_same_shape(a, b, "mul");
    Tensor<T> out(a.shape());
    const std::size_t n = out.data().size();
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
    if (tape && detail::recording(tape, {&a, &b})) {
        auto an = a.node(), bn = b.node(), on = out.node();
        tape->record(
            [an, bn, on, n] {
                if (an->wants_grad()) {
                    an->ensure_grad();
                    for (std::size_t i = 0; i < n; ++i) an->grad[i] += on->grad[i] * bn->data[i];
                }
                if (bn->wants_grad()) {
                    bn->ensure_grad();
                    for (std::size_t i = 0; i < n; ++i) bn->grad[i] += on->grad[i] * an->data[i];
                }
            },
            on);
    }
    return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T c, Tape<T>* tape = nullptr) {
    Tensor<T> out(x.shape());
    const std::size_t n = out.data().size();
    for (std::size_t i = 0; i < n; ++i) out[i] = x[i] * c;
    if (tape && detail::recording(tape, {&x})) {
        auto xn = x.node(), on = out.node();
        tape->record(
            [xn, on, c, n] {
                xn->ensure_grad();
                for (std::size_t i = 0; i < n; ++i) xn->grad[i] += on->grad[i] * c;
            },
            on);
    }
    return out;
}

// Trailing-axis broadcast: b's shape must equal the trailing extents of x;
// out[r, e] = x[r, e] + b[e] over the leading rows. This is the only
// sanctioned broadcast; everything else is a shape error.
template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& b, Tape<T>* tape = nullptr) {
    if (b.ndim() > x.ndim() ||
        !std::equal(b.shape().begin(), b.shape().end(), x.shape().end() - b.ndim()))
        throw DimensionError("add_bias: " + shape_str(b.shape()) +
                             " does not match trailing axes of " + shape_str(x.shape()));
    const int E = static_cast<int>(b.numel());
    const std::size_t rows = static_cast<std::size_t>(x.numel() / E);
    Tensor<T> out(x.shape());
    for (std::size_t r = 0; r < rows; ++r)
        for (int e = 0; e < E; ++e)
            out[r * E + e] = x[r * E + e] + b[static_cast<std::size_t>(e)];
    if (tape && detail::recording(tape, {&x, &b})) {
        auto xn = x.node(), bn = b.node(), on = out.node();
        tape->record(
            [xn, bn, on, rows, E] {
                if (xn->wants_grad()) {
                    xn->ensure_grad();
                    for (std::size_t i = 0; i < rows * static_cast<std::size_t>(E); ++i)
                        xn->grad[i] += on->grad[i];
                }
                if (bn->wants_grad()) {
                    bn->ensure_grad();
                    for (std::size_t r = 0; r < rows; ++r)
                        for (int e = 0; e < E; ++e)
                            bn->grad[static_cast<std::size_t>(e)] += on->grad[r * E + e];
                }
            },
            on);
    }
    return out;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x, Tape<T>* tape = nullptr) {
    Tensor<T> out(x.shape());
    const std::size_t n = out.data().size();
    for (std::size_t i = 0; i < n; ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
    if (tape && detail::recording(tape, {&x})) {
        auto xn = x.node(), on = out.node();
        tape->record(
            [xn, on, n] {
                xn->ensure_grad();
                for (std::size_t i = 0; i < n; ++i)
                    if (xn->data[i] > T(0)) xn->grad[i] += on->grad[i];
            },
            on);
    }
    return out;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x, Tape<T>* tape = nullptr) {
    Tensor<T> out(x.shape());
    const std::size_t n = out.data().size();
    for (std::size_t i = 0; i < n; ++i) out[i] = T(1) / (T(1) + std::exp(-x[i]));
    if (tape && detail::recording(tape, {&x})) {
        auto xn = x.node(), on = out.node();
        tape->record(
            [xn, on, n] {
                xn->ensure_grad();
                for (std::size_t i = 0; i < n; ++i) {
                    const T s = on->data[i];
                    xn->grad[i] += on->grad[i] * s * (T(1) - s);
                }
            },
            on);
    }
    return out;
}

// GELU, tanh approximation: 0.5x(1 + tanh(sqrt(2/pi)(x + 0.044715 x^3))).
template <typename T>
Tensor<T> gelu(const Tensor<T>& x, Tape<T>* tape = nullptr) {
    constexpr T kAlpha = T(0.7978845608028654); // sqrt(2/pi)
    constexpr T kBeta = T(0.044715);
    Tensor<T> out(x.shape());
    const std::size_t n = out.data().size();
    for (std::size_t i = 0; i < n; ++i) {
        const T v = x[i];
        out[i] = T(0.5) * v * (T(1) + std::tanh(kAlpha * (v + kBeta * v * v * v)));
    }
    if (tape && detail::recording(tape, {&x})) {
        auto xn = x.node(), on = out.node();
        tape->record(
            [xn, on, n] {
                xn->ensure_grad();
                for (std::size_t i = 0; i < n; ++i) {
                    const T v = xn->data[i];
                    const T t = std::tanh(kAlpha * (v + kBeta * v * v * v));
                    const T du = kAlpha * (T(1) + T(3) * kBeta * v * v);
                    const T d = T(0.5) * (T(1) + t) + T(0.5) * v * (T(1) - t * t) * du;
                    xn->grad[i] += on->grad[i] * d;
                }
            },
            on);
    }
    return out;
}

// Fused gate: out = GELU(content) * sigmoid(gate), elementwise. One output
// buffer instead of three keeps the long-sequence path memory-lean.
template <typename T>
Tensor<T> gelu_sigmoid_gate(const Tensor<T>& content, const Tensor<T>& gate,
                            Tape<T>* tape = nullptr) {
    detail::require_same_shape(content, gate, "gelu_sigmoid_gate");
    constexpr T kAlpha = T(0.7978845608028654);
    constexpr T kBeta = T(0.044715);
    Tensor<T> out(content.shape());
    const std::size_t n = out.data().size();
    for (std::size_t i = 0; i < n; ++i) {
        const T c = content[i];
        const T act = T(0.5) * c * (T(1) + std::tanh(kAlpha * (c + kBeta * c * c * c)));
        out[i] = act * (T(1) / (T(1) + std::exp(-gate[i])));
    }
    if (tape && detail::recording(tape, {&content, &gate})) {
        auto cn = content.node(), gn = gate.node(), on = out.node();
        tape->record(
            [cn, gn, on, n] {
                for (std::size_t i = 0; i < n; ++i) {
                    const T c = cn->data[i];
                    const T t = std::tanh(kAlpha * (c + kBeta * c * c * c));
                    const T act = T(0.5) * c * (T(1) + t);
                    const T dact = T(0.5) * (T(1) + t) +
                                   T(0.5) * c * (T(1) - t * t) * kAlpha * (T(1) + T(3) * kBeta * c * c);
                    const T s = T(1) / (T(1) + std::exp(-gn->data[i]));
                    const T go = on->grad[i];
                    if (cn->wants_grad()) {
                        cn->ensure_grad();
                        cn->grad[i] += go * s * dact;
                    }
                    if (gn->wants_grad()) {
                        gn->ensure_grad();
                        gn->grad[i] += go * act * s * (T(1) - s);
                    }
                }
            },
            on);
    }
    return out;
}

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

// a: [.., M, K] with b: [K, N], or fully batched a: [B.., M, K] with
// b: [B.., K, N] (identical leading extents).
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape = nullptr) {
    if (a.ndim() < 2)
        throw DimensionError("matmul: left operand " + shape_str(a.shape()) + " must have rank >= 2");
    const int K = a.shape()[a.ndim() - 1];
    const int M = a.shape()[a.ndim() - 2];

    if (b.ndim() == 2) {
        if (b.dim(0) != K)
            throw DimensionError("matmul: inner extents differ, " + shape_str(a.shape()) + " vs " +
                                 shape_str(b.shape()));
        const int N = b.dim(1);
        Shape out_shape = a.shape();
        out_shape.back() = N;
        Tensor<T> out(out_shape);
        const int rows = static_cast<int>(a.numel() / K);
        detail::gemm_acc(a.data().data(), b.data().data(), out.data().data(), rows, K, N);
        if (tape && detail::recording(tape, {&a, &b})) {
            auto an = a.node(), bn = b.node(), on = out.node();
            tape->record(
                [an, bn, on, rows, K, N] {
                    if (an->wants_grad()) {
                        an->ensure_grad();
                        detail::gemm_bt_acc(on->grad.data(), bn->data.data(), an->grad.data(), rows, N, K);
                    }
                    if (bn->wants_grad()) {
                        bn->ensure_grad();
                        detail::gemm_at_acc(an->data.data(), on->grad.data(), bn->grad.data(), rows, K, N);
                    }
                },
                on);
        }
        return out;
    }

    if (a.ndim() != b.ndim() ||
        !std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin()))
        throw DimensionError("matmul: incompatible operands " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    if (b.shape()[b.ndim() - 2] != K)
        throw DimensionError("matmul: inner extents differ, " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    const int N = b.shape()[b.ndim() - 1];
    Shape out_shape = a.shape();
    out_shape[out_shape.size() - 1] = N;
    Tensor<T> out(out_shape);
    const std::size_t batches = static_cast<std::size_t>(a.numel() / (static_cast<std::int64_t>(M) * K));
    for (std::size_t s = 0; s < batches; ++s)
        detail::gemm_acc(a.data().data() + s * M * K, b.data().data() + s * K * N,
                         out.data().data() + s * M * N, M, K, N);
    if (tape && detail::recording(tape, {&a, &b})) {
        auto an = a.node(), bn = b.node(), on = out.node();
        tape->record(
            [an, bn, on, batches, M, K, N] {
                for (std::size_t s = 0; s < batches; ++s) {
                    if (an->wants_grad()) {
                        an->ensure_grad();
                        detail::gemm_bt_acc(on->grad.data() + s * M * N, bn->data.data() + s * K * N,
                                            an->grad.data() + s * M * K, M, N, K);
                    }
                    if (bn->wants_grad()) {
                        bn->ensure_grad();
                        detail::gemm_at_acc(an->data.data() + s * M * K, on->grad.data() + s * M * N,
                                            bn->grad.data() + s * K * N, M, K, N);
                    }
                }
            },
            on);
    }
    return out;
}

template <typename T>
Tensor<T> transpose_last2(const Tensor<T>& x, Tape<T>* tape = nullptr) {
    if (x.ndim() < 2) throw DimensionError("transpose_last2 requires rank >= 2");
    const int R = x.shape()[x.ndim() - 2];
    const int C = x.shape()[x.ndim() - 1];
    Shape out_shape = x.shape();
    std::swap(out_shape[out_shape.size() - 1], out_shape[out_shape.size() - 2]);
    Tensor<T> out(out_shape);
    const std::size_t batches = static_cast<std::size_t>(x.numel() / (static_cast<std::int64_t>(R) * C));
    for (std::size_t s = 0; s < batches; ++s) {
        const T* src = x.data().data() + s * R * C;
        T* dst = out.data().data() + s * R * C;
        for (int i = 0; i < R; ++i)
            for (int j = 0; j < C; ++j) dst[static_cast<std::size_t>(j) * R + i] = src[static_cast<std::size_t>(i) * C + j];
    }
    if (tape && detail::recording(tape, {&x})) {
        auto xn = x.node(), on = out.node();
        tape->record(
            [xn, on, batches, R, C] {
                xn->ensure_grad();
                for (std::size_t s = 0; s < batches; ++s) {
                    const T* g = on->grad.data() + s * R * C;
                    T* dst = xn->grad.data() + s * R * C;
                    for (int i = 0; i < R; ++i)
                        for (int j = 0; j < C; ++j)
                            dst[static_cast<std::size_t>(i) * C + j] += g[static_cast<std::size_t>(j) * R + i];
                }
            },
            on);
    }
    return out;
}

// Swap axes 1 and 2 of a rank-4 tensor (token/head regrouping in attention).
template <typename T>
Tensor<T> swap_axes12(const Tensor<T>& x, Tape<T>* tape = nullptr) {
    if (x.ndim() != 4) throw DimensionError("swap_axes12 expects rank 4, got " + shape_str(x.shape()));
    const int A = x.dim(0), B = x.dim(1), C = x.dim(2), D = x.dim(3);
    Tensor<T> out(Shape{A, C, B, D});
    for (int a = 0; a < A; ++a)
        for (int b = 0; b < B; ++b)
            for (int c = 0; c < C; ++c)
                std::copy_n(x.data().data() + ((static_cast<std::size_t>(a) * B + b) * C + c) * D, D,
                            out.data().data() + ((static_cast<std::size_t>(a) * C + c) * B + b) * D);
    if (tape && detail::recording(tape, {&x})) {
        auto xn = x.node(), on = out.node();
        tape->record(
            [xn, on, A, B, C, D] {
                xn->ensure_grad();
                for (int a = 0; a < A; ++a)
                    for (int b = 0; b < B; ++b)
                        for (int c = 0; c < C; ++c) {
                            const T* g = on->grad.data() + ((static_cast<std::size_t>(a) * C + c) * B + b) * D;
                            T* dst = xn->grad.data() + ((static_cast<std::size_t>(a) * B + b) * C + c) * D;
                            for (int d = 0; d < D; ++d) dst[d] += g[d];
                        }
            },
            on);
    }
    return out;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape new_shape, Tape<T>* tape = nullptr) {
    if (numel_of(new_shape) != x.numel())
        throw DimensionError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(new_shape) +
                             " changes element count");
    Tensor<T> out(std::move(new_shape), x.data());
    if (tape && detail::recording(tape, {&x})) {
        auto xn = x.node(), on = out.node();
        tape->record(
            [xn, on] {
                xn->ensure_grad();
                for (std::size_t i = 0; i < xn->grad.size(); ++i) xn->grad[i] += on->grad[i];
            },
            on);
    }
    return out;
}

// ---------------------------------------------------------------------------
// reductions / normalization
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> sum_all(const Tensor<T>& x, Tape<T>* tape = nullptr) {
    double acc = 0.0;
    for (const T v : x.data()) acc += static_cast<double>(v);
    Tensor<T> out = Tensor<T>::scalar(static_cast<T>(acc));
    if (tape && detail::recording(tape, {&x})) {
        auto xn = x.node(), on = out.node();
        tape->record(
            [xn, on] {
                xn->ensure_grad();
                const T g = on->grad[0];
                for (std::size_t i = 0; i < xn->grad.size(); ++i) xn->grad[i] += g;
            },
            on);
    }
    return out;
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& x, Tape<T>* tape = nullptr) {
    double acc = 0.0;
    for (const T v : x.data()) acc += static_cast<double>(v);
    const std::size_t n = x.data().size();
    Tensor<T> out = Tensor<T>::scalar(static_cast<T>(acc / static_cast<double>(n)));
    if (tape && detail::recording(tape, {&x})) {
        auto xn = x.node(), on = out.node();
        tape->record(
            [xn, on, n] {
                xn->ensure_grad();
                const T g = on->grad[0] / static_cast<T>(n);
                for (std::size_t i = 0; i < xn->grad.size(); ++i) xn->grad[i] += g;
            },
            on);
    }
    return out;
}

// mean over axis 1 of [N, T, D] -> [N, D]
template <typename T>
Tensor<T> mean_tokens(const Tensor<T>& x, Tape<T>* tape = nullptr) {
    if (x.ndim() != 3) throw DimensionError("mean_tokens expects [N,T,D], got " + shape_str(x.shape()));
    const int N = x.dim(0), Tk = x.dim(1), D = x.dim(2);
    Tensor<T> out(Shape{N, D});
    for (int n = 0; n < N; ++n)
        for (int t = 0; t < Tk; ++t)
            for (int d = 0; d < D; ++d)
                out[static_cast<std::size_t>(n) * D + d] +=
                    x[(static_cast<std::size_t>(n) * Tk + t) * D + d] / static_cast<T>(Tk);
    if (tape && detail::recording(tape, {&x})) {
        auto xn = x.node(), on = out.node();
        tape->record(
            [xn, on, N, Tk, D] {
                xn->ensure_grad();
                for (int n = 0; n < N; ++n)
                    for (int t = 0; t < Tk; ++t)
                        for (int d = 0; d < D; ++d)
                            xn->grad[(static_cast<std::size_t>(n) * Tk + t) * D + d] +=
                                on->grad[static_cast<std::size_t>(n) * D + d] / static_cast<T>(Tk);
            },
            on);
    }
    return out;
}

// Numerically stable softmax over the last axis; rows sum to 1.
template <typename T>
Tensor<T> softmax_lastaxis(const Tensor<T>& x, Tape<T>* tape = nullptr) {
    const int D = x.shape().back();
    const std::size_t rows = static_cast<std::size_t>(x.numel() / D);
    Tensor<T> out(x.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const T* xr = x.data().data() + r * D;
        T* yr = out.data().data() + r * D;
        T m = xr[0];
        for (int j = 1; j < D; ++j) m = std::max(m, xr[j]);
        T s = T(0);
        for (int j = 0; j < D; ++j) {
            yr[j] = std::exp(xr[j] - m);
            s += yr[j];
        }
        const T inv = T(1) / s;
        for (int j = 0; j < D; ++j) yr[j] *= inv;
    }
    if (tape && detail::recording(tape, {&x})) {
        auto xn = x.node(), on = out.node();
        tape->record(
            [xn, on, rows, D] {
                xn->ensure_grad();
                for (std::size_t r = 0; r < rows; ++r) {
                    const T* yr = on->data.data() + r * D;
                    const T* gr = on->grad.data() + r * D;
                    T dot = T(0);
                    for (int j = 0; j < D; ++j) dot += gr[j] * yr[j];
                    for (int j = 0; j < D; ++j) xn->grad[r * D + j] += yr[j] * (gr[j] - dot);
                }
            },
            on);
    }
    return out;
}

// Standardises the last axis (population variance) then applies gamma/beta.
template <typename T>
Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps,
                    Tape<T>* tape = nullptr) {
    const int D = x.shape().back();
    if (gamma.numel() != D || beta.numel() != D)
        throw DimensionError("layernorm: gamma/beta must have " + std::to_string(D) + " elements");
    const std::size_t rows = static_cast<std::size_t>(x.numel() / D);
    Tensor<T> out(x.shape());
    std::vector<T> inv_std(rows), mean(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const T* xr = x.data().data() + r * D;
        T mu = T(0);
        for (int j = 0; j < D; ++j) mu += xr[j];
        mu /= static_cast<T>(D);
        T var = T(0);
        for (int j = 0; j < D; ++j) var += (xr[j] - mu) * (xr[j] - mu);
        var /= static_cast<T>(D);
        const T inv = T(1) / std::sqrt(var + eps);
        mean[r] = mu;
        inv_std[r] = inv;
        T* yr = out.data().data() + r * D;
        for (int j = 0; j < D; ++j) yr[j] = gamma[static_cast<std::size_t>(j)] * (xr[j] - mu) * inv + beta[static_cast<std::size_t>(j)];
    }
    if (tape && detail::recording(tape, {&x, &gamma, &beta})) {
        auto xn = x.node(), gn = gamma.node(), bn = beta.node(), on = out.node();
        tape->record(
            [xn, gn, bn, on, rows, D, mean = std::move(mean), inv_std = std::move(inv_std)] {
                std::vector<T> gy(static_cast<std::size_t>(D));
                for (std::size_t r = 0; r < rows; ++r) {
                    const T* xr = xn->data.data() + r * D;
                    const T* gr = on->grad.data() + r * D;
                    const T mu = mean[r], inv = inv_std[r];
                    if (xn->wants_grad()) {
                        T m1 = T(0), m2 = T(0);
                        for (int j = 0; j < D; ++j) {
                            gy[static_cast<std::size_t>(j)] = gr[j] * gn->data[static_cast<std::size_t>(j)];
                            const T xhat = (xr[j] - mu) * inv;
                            m1 += gy[static_cast<std::size_t>(j)];
                            m2 += gy[static_cast<std::size_t>(j)] * xhat;
                        }
                        m1 /= static_cast<T>(D);
                        m2 /= static_cast<T>(D);
                        xn->ensure_grad();
                        for (int j = 0; j < D; ++j) {
                            const T xhat = (xr[j] - mu) * inv;
                            xn->grad[r * D + j] += inv * (gy[static_cast<std::size_t>(j)] - m1 - xhat * m2);
                        }
                    }
                    if (gn->wants_grad()) {
                        gn->ensure_grad();
                        for (int j = 0; j < D; ++j)
                            gn->grad[static_cast<std::size_t>(j)] += gr[j] * (xr[j] - mu) * inv;
                    }
                    if (bn->wants_grad()) {
                        bn->ensure_grad();
                        for (int j = 0; j < D; ++j) bn->grad[static_cast<std::size_t>(j)] += gr[j];
                    }
                }
            },
            on);
    }
    return out;
}

// ---------------------------------------------------------------------------
// shape combinators
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> concat_lastaxis(const std::vector<Tensor<T>>& xs, Tape<T>* tape = nullptr) {
    if (xs.empty()) throw DimensionError("concat_lastaxis: empty input list");
    Shape lead(xs[0].shape().begin(), xs[0].shape().end() - 1);
    int total = 0;
    for (const auto& x : xs) {
        if (!std::equal(lead.begin(), lead.end(), x.shape().begin()) || x.ndim() != lead.size() + 1)
            throw DimensionError("concat_lastaxis: leading extents differ");
        total += x.shape().back();
    }
    Shape out_shape = lead;
    out_shape.push_back(total);
    Tensor<T> out(out_shape);
    const std::size_t rows = static_cast<std::size_t>(numel_of(lead));
    std::size_t off = 0;
    for (const auto& x : xs) {
        const int e = x.shape().back();
        for (std::size_t r = 0; r < rows; ++r)
            std::copy_n(x.data().data() + r * e, e, out.data().data() + r * total + off);
        off += static_cast<std::size_t>(e);
    }
    bool any = false;
    for (const auto& x : xs) any = any || x.node()->wants_grad();
    if (tape && any) {
        std::vector<typename Tensor<T>::NodePtr> ins;
        for (const auto& x : xs) ins.push_back(x.node());
        auto on = out.node();
        tape->record(
            [ins, on, rows, total] {
                std::size_t off = 0;
                for (auto& in : ins) {
                    const int e = in->shape.back();
                    if (in->wants_grad()) {
                        in->ensure_grad();
                        for (std::size_t r = 0; r < rows; ++r)
                            for (int j = 0; j < e; ++j)
                                in->grad[r * e + j] += on->grad[r * total + off + j];
                    }
                    off += static_cast<std::size_t>(e);
                }
            },
            on);
    }
    return out;
}

template <typename T>
Tensor<T> slice_lastaxis(const Tensor<T>& x, int start, int len, Tape<T>* tape = nullptr) {
    const int E = x.shape().back();
    if (start < 0 || len <= 0 || start + len > E)
        throw DimensionError("slice_lastaxis: range [" + std::to_string(start) + "," +
                             std::to_string(start + len) + ") out of axis extent " + std::to_string(E));
    Shape out_shape = x.shape();
    out_shape.back() = len;
    Tensor<T> out(out_shape);
    const std::size_t rows = static_cast<std::size_t>(x.numel() / E);
    for (std::size_t r = 0; r < rows; ++r)
        std::copy_n(x.data().data() + r * E + start, len, out.data().data() + r * len);
    if (tape && detail::recording(tape, {&x})) {
        auto xn = x.node(), on = out.node();
        tape->record(
            [xn, on, rows, E, start, len] {
                xn->ensure_grad();
                for (std::size_t r = 0; r < rows; ++r)
                    for (int j = 0; j < len; ++j) xn->grad[r * E + start + j] += on->grad[r * len + j];
            },
            on);
    }
    return out;
}

// Inverted dropout; keep probability 1-p, survivors scaled by 1/(1-p).
// p == 0 is an exact no-op and consumes no randomness.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, Rng& rng, Tape<T>* tape = nullptr) {
    if (p < 0.0 || p >= 1.0) throw ConfigError("dropout probability must be in [0,1)");
    if (p == 0.0) return x;
    Tensor<T> out(x.shape());
    const std::size_t n = out.data().size();
    auto mask = std::make_shared<std::vector<T>>(n);
    const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
    for (std::size_t i = 0; i < n; ++i) {
        (*mask)[i] = rng.uniform() >= p ? keep_scale : T(0);
        out[i] = x[i] * (*mask)[i];
    }
    if (tape && detail::recording(tape, {&x})) {
        auto xn = x.node(), on = out.node();
        tape->record(
            [xn, on, mask, n] {
                xn->ensure_grad();
                for (std::size_t i = 0; i < n; ++i) xn->grad[i] += on->grad[i] * (*mask)[i];
            },
            on);
    }
    return out;
}

// ---------------------------------------------------------------------------
// loss
// ---------------------------------------------------------------------------

// Mean cross-entropy over the batch. Labels are 1-based class ids; the
// reduction runs in 64-bit regardless of T.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels,
                        Tape<T>* tape = nullptr) {
    if (logits.ndim() != 2)
        throw DimensionError("cross_entropy expects [N,K] logits, got " + shape_str(logits.shape()));
    const int N = logits.dim(0), K = logits.dim(1);
    if (static_cast<int>(labels.size()) != N)
        throw DataError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                        std::to_string(N) + " samples");
    auto probs = std::make_shared<std::vector<T>>(static_cast<std::size_t>(N) * K);
    double acc = 0.0;
    for (int i = 0; i < N; ++i) {
        const int y = labels[static_cast<std::size_t>(i)];
        if (y < 1 || y > K)
            throw DataError("cross_entropy: label " + std::to_string(y) + " out of [1," +
                            std::to_string(K) + "] at sample " + std::to_string(i));
        const T* row = logits.data().data() + static_cast<std::size_t>(i) * K;
        T m = row[0];
        for (int k = 1; k < K; ++k) m = std::max(m, row[k]);
        double s = 0.0;
        for (int k = 0; k < K; ++k) s += std::exp(static_cast<double>(row[k] - m));
        const double lse = static_cast<double>(m) + std::log(s);
        for (int k = 0; k < K; ++k)
            (*probs)[static_cast<std::size_t>(i) * K + k] =
                static_cast<T>(std::exp(static_cast<double>(row[k]) - lse));
        acc += lse - static_cast<double>(row[y - 1]);
    }
    Tensor<T> out = Tensor<T>::scalar(static_cast<T>(acc / N));
    if (tape && detail::recording(tape, {&logits})) {
        auto ln = logits.node();
        auto on = out.node();
        auto labs = std::make_shared<std::vector<int>>(labels);
        tape->record(
            [ln, on, probs, labs, N, K] {
                ln->ensure_grad();
                const T g = on->grad[0] / static_cast<T>(N);
                for (int i = 0; i < N; ++i) {
                    const int y = (*labs)[static_cast<std::size_t>(i)];
                    for (int k = 0; k < K; ++k) {
                        T d = (*probs)[static_cast<std::size_t>(i) * K + k];
                        if (k == y - 1) d -= T(1);
                        ln->grad[static_cast<std::size_t>(i) * K + k] += g * d;
                    }
                }
            },
            on);
    }
    return out;
}

} // namespace cvm
