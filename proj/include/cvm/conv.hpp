#pragma once

#include <array>
#include <memory>
#include <vector>

#include "cvm/ops.hpp"
#include "cvm/tensor.hpp"

namespace cvm {

enum class Padding { Same, Valid };

namespace detail {

struct Conv3dDims {
    int N, D1, D2, D3, Cin;
    int k1, k2, k3, Cout;
    int O1, O2, O3;
    int p1, p2, p3; // leading pad per axis
};

inline Conv3dDims conv3d_dims(const Shape& xs, const Shape& ws, Padding padding) {
    if (xs.size() != 5 || ws.size() != 5)
        throw DimensionError("conv3d expects x[N,D1,D2,D3,Cin] and w[k1,k2,k3,Cin,Cout], got " +
                             shape_str(xs) + " and " + shape_str(ws));
    Conv3dDims d{};
    d.N = xs[0];
    d.D1 = xs[1];
    d.D2 = xs[2];
    d.D3 = xs[3];
    d.Cin = xs[4];
    d.k1 = ws[0];
    d.k2 = ws[1];
    d.k3 = ws[2];
    d.Cout = ws[4];
    if (ws[3] != d.Cin)
        throw DimensionError("conv3d: kernel input channels " + std::to_string(ws[3]) +
                             " != input channels " + std::to_string(d.Cin));
    if (padding == Padding::Same) {
        d.O1 = d.D1;
        d.O2 = d.D2;
        d.O3 = d.D3;
        d.p1 = (d.k1 - 1) / 2;
        d.p2 = (d.k2 - 1) / 2;
        d.p3 = (d.k3 - 1) / 2;
    } else {
        d.O1 = d.D1 - d.k1 + 1;
        d.O2 = d.D2 - d.k2 + 1;
        d.O3 = d.D3 - d.k3 + 1;
        d.p1 = d.p2 = d.p3 = 0;
        if (d.O1 <= 0 || d.O2 <= 0 || d.O3 <= 0)
            throw DimensionError("conv3d: kernel " + shape_str(ws) + " larger than padded input " +
                                 shape_str(xs));
    }
    return d;
}

// Gather sliding windows into a [N*O1*O2*O3, k1*k2*k3*Cin] matrix; out-of-range
// taps read zero. Column order matches the kernel layout [k1,k2,k3,Cin].
template <typename T>
void im2col3d(const T* x, const Conv3dDims& d, T* cols) {
    const int kvol = d.k1 * d.k2 * d.k3 * d.Cin;
#pragma omp parallel for schedule(static) if (d.N > 1)
    for (int n = 0; n < d.N; ++n) {
        std::size_t row = static_cast<std::size_t>(n) * d.O1 * d.O2 * d.O3;
        for (int o1 = 0; o1 < d.O1; ++o1)
            for (int o2 = 0; o2 < d.O2; ++o2)
                for (int o3 = 0; o3 < d.O3; ++o3, ++row) {
                    T* crow = cols + row * kvol;
                    std::size_t col = 0;
                    for (int i1 = 0; i1 < d.k1; ++i1) {
                        const int s1 = o1 + i1 - d.p1;
                        for (int i2 = 0; i2 < d.k2; ++i2) {
                            const int s2 = o2 + i2 - d.p2;
                            for (int i3 = 0; i3 < d.k3; ++i3, col += d.Cin) {
                                const int s3 = o3 + i3 - d.p3;
                                if (s1 < 0 || s1 >= d.D1 || s2 < 0 || s2 >= d.D2 || s3 < 0 || s3 >= d.D3) {
                                    for (int c = 0; c < d.Cin; ++c) crow[col + c] = T(0);
                                } else {
                                    const T* src = x + (((static_cast<std::size_t>(n) * d.D1 + s1) * d.D2 + s2) * d.D3 + s3) * d.Cin;
                                    for (int c = 0; c < d.Cin; ++c) crow[col + c] = src[c];
                                }
                            }
                        }
                    }
                }
    }
}

// Scatter-add of column gradients back onto the input layout.
template <typename T>
void col2im3d(const T* cols, const Conv3dDims& d, T* dx) {
#pragma omp parallel for schedule(static) if (d.N > 1)
    for (int n = 0; n < d.N; ++n) {
        const int kvol = d.k1 * d.k2 * d.k3 * d.Cin;
        std::size_t row = static_cast<std::size_t>(n) * d.O1 * d.O2 * d.O3;
        for (int o1 = 0; o1 < d.O1; ++o1)
            for (int o2 = 0; o2 < d.O2; ++o2)
                for (int o3 = 0; o3 < d.O3; ++o3, ++row) {
                    const T* crow = cols + row * kvol;
                    std::size_t col = 0;
                    for (int i1 = 0; i1 < d.k1; ++i1) {
                        const int s1 = o1 + i1 - d.p1;
                        for (int i2 = 0; i2 < d.k2; ++i2) {
                            const int s2 = o2 + i2 - d.p2;
                            for (int i3 = 0; i3 < d.k3; ++i3, col += d.Cin) {
                                const int s3 = o3 + i3 - d.p3;
                                if (s1 < 0 || s1 >= d.D1 || s2 < 0 || s2 >= d.D2 || s3 < 0 || s3 >= d.D3)
                                    continue;
                                T* dst = dx + (((static_cast<std::size_t>(n) * d.D1 + s1) * d.D2 + s2) * d.D3 + s3) * d.Cin;
                                for (int c = 0; c < d.Cin; ++c) dst[c] += crow[col + c];
                            }
                        }
                    }
                }
    }
}

} // namespace detail

// 3D cross-correlation over the three leading spatial/spectral axes,
// channels-last. "same" keeps D1..D3 via zero padding.
template <typename T>
Tensor<T> conv3d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, Padding padding,
                 Tape<T>* tape = nullptr) {
    const auto d = detail::conv3d_dims(x.shape(), w.shape(), padding);
    if (b.numel() != d.Cout)
        throw DimensionError("conv3d: bias " + shape_str(b.shape()) + " must have " +
                             std::to_string(d.Cout) + " elements");
    const int kvol = d.k1 * d.k2 * d.k3 * d.Cin;
    const std::size_t rows = static_cast<std::size_t>(d.N) * d.O1 * d.O2 * d.O3;
    auto cols = std::make_shared<std::vector<T>>(rows * static_cast<std::size_t>(kvol));
    detail::im2col3d(x.data().data(), d, cols->data());

    Tensor<T> out(Shape{d.N, d.O1, d.O2, d.O3, d.Cout});
    for (std::size_t r = 0; r < rows; ++r)
        for (int c = 0; c < d.Cout; ++c) out[r * d.Cout + c] = b[static_cast<std::size_t>(c)];
    detail::gemm_acc(cols->data(), w.data().data(), out.data().data(), static_cast<int>(rows), kvol,
                     d.Cout);

    if (tape && detail::recording(tape, {&x, &w, &b})) {
        auto xn = x.node(), wn = w.node(), bn = b.node(), on = out.node();
        tape->record(
            [xn, wn, bn, on, cols, d, kvol, rows] {
                if (bn->wants_grad()) {
                    bn->ensure_grad();
                    for (std::size_t r = 0; r < rows; ++r)
                        for (int c = 0; c < d.Cout; ++c)
                            bn->grad[static_cast<std::size_t>(c)] += on->grad[r * d.Cout + c];
                }
                if (wn->wants_grad()) {
                    wn->ensure_grad();
                    detail::gemm_at_acc(cols->data(), on->grad.data(), wn->grad.data(),
                                        static_cast<int>(rows), kvol, d.Cout);
                }
                if (xn->wants_grad()) {
                    xn->ensure_grad();
                    std::vector<T> dcols(cols->size(), T(0));
                    detail::gemm_bt_acc(on->grad.data(), wn->data.data(), dcols.data(),
                                        static_cast<int>(rows), d.Cout, kvol);
                    detail::col2im3d(dcols.data(), d, xn->grad.data());
                }
            },
            on);
    }
    return out;
}

// Depthwise 1-D convolution along the token axis with zero "same" padding:
// out[n,t,e] = sum_j x[n, t+j-k/2, e] * w[j,e] + b[e].
template <typename T>
Tensor<T> conv1d_tokens(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                        Tape<T>* tape = nullptr) {
    if (x.ndim() != 3 || w.ndim() != 2)
        throw DimensionError("conv1d_tokens expects x[N,T,E] and w[k,E], got " + shape_str(x.shape()) +
                             " and " + shape_str(w.shape()));
    const int N = x.dim(0), Tk = x.dim(1), E = x.dim(2);
    const int k = w.dim(0);
    if (k % 2 == 0) throw ConfigError("conv1d_tokens: kernel width must be odd, got " + std::to_string(k));
    if (w.dim(1) != E || b.numel() != E)
        throw DimensionError("conv1d_tokens: w/b channel extent must equal " + std::to_string(E));
    const int c = k / 2;
    Tensor<T> out(x.shape());
    for (int n = 0; n < N; ++n)
        for (int t = 0; t < Tk; ++t) {
            T* yr = out.data().data() + (static_cast<std::size_t>(n) * Tk + t) * E;
            for (int e = 0; e < E; ++e) yr[e] = b[static_cast<std::size_t>(e)];
            for (int j = 0; j < k; ++j) {
                const int s = t + j - c;
                if (s < 0 || s >= Tk) continue;
                const T* xr = x.data().data() + (static_cast<std::size_t>(n) * Tk + s) * E;
                const T* wr = w.data().data() + static_cast<std::size_t>(j) * E;
                for (int e = 0; e < E; ++e) yr[e] += xr[e] * wr[e];
            }
        }
    if (tape && detail::recording(tape, {&x, &w, &b})) {
        auto xn = x.node(), wn = w.node(), bn = b.node(), on = out.node();
        tape->record(
            [xn, wn, bn, on, N, Tk, E, k, c] {
                for (int n = 0; n < N; ++n)
                    for (int t = 0; t < Tk; ++t) {
                        const T* gr = on->grad.data() + (static_cast<std::size_t>(n) * Tk + t) * E;
                        if (bn->wants_grad()) {
                            bn->ensure_grad();
                            for (int e = 0; e < E; ++e) bn->grad[static_cast<std::size_t>(e)] += gr[e];
                        }
                        for (int j = 0; j < k; ++j) {
                            const int s = t + j - c;
                            if (s < 0 || s >= Tk) continue;
                            const std::size_t xoff = (static_cast<std::size_t>(n) * Tk + s) * E;
                            if (wn->wants_grad()) {
                                wn->ensure_grad();
                                for (int e = 0; e < E; ++e)
                                    wn->grad[static_cast<std::size_t>(j) * E + e] += xn->data[xoff + e] * gr[e];
                            }
                            if (xn->wants_grad()) {
                                xn->ensure_grad();
                                for (int e = 0; e < E; ++e)
                                    xn->grad[xoff + e] += wn->data[static_cast<std::size_t>(j) * E + e] * gr[e];
                            }
                        }
                    }
            },
            on);
    }
    return out;
}

} // namespace cvm
