// Test-only reference implementations: straightforward 64-bit loop versions
// of every contraction the library implements. These stay independent of the
// library's execution paths (no im2col, no tape, no shared kernels).
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace oracle {

// C[M,N] = A[M,K] * B[K,N]
inline std::vector<double> matmul(const std::vector<double>& a, const std::vector<double>& b, int M,
                                  int K, int N) {
    std::vector<double> c(static_cast<std::size_t>(M) * N, 0.0);
    for (int i = 0; i < M; ++i)
        for (int j = 0; j < N; ++j) {
            double s = 0.0;
            for (int k = 0; k < K; ++k)
                s += a[static_cast<std::size_t>(i) * K + k] * b[static_cast<std::size_t>(k) * N + j];
            c[static_cast<std::size_t>(i) * N + j] = s;
        }
    return c;
}

// direct 7-loop 3D cross-correlation, channels-last, zero padding
inline std::vector<double> conv3d(const std::vector<double>& x, int N, int D1, int D2, int D3,
                                  int Cin, const std::vector<double>& w, int k1, int k2, int k3,
                                  int Cout, const std::vector<double>& bias, bool same) {
    const int O1 = same ? D1 : D1 - k1 + 1;
    const int O2 = same ? D2 : D2 - k2 + 1;
    const int O3 = same ? D3 : D3 - k3 + 1;
    const int p1 = same ? (k1 - 1) / 2 : 0;
    const int p2 = same ? (k2 - 1) / 2 : 0;
    const int p3 = same ? (k3 - 1) / 2 : 0;
    std::vector<double> y(static_cast<std::size_t>(N) * O1 * O2 * O3 * Cout, 0.0);
    for (int n = 0; n < N; ++n)
        for (int o1 = 0; o1 < O1; ++o1)
            for (int o2 = 0; o2 < O2; ++o2)
                for (int o3 = 0; o3 < O3; ++o3)
                    for (int co = 0; co < Cout; ++co) {
                        double s = bias[static_cast<std::size_t>(co)];
                        for (int i1 = 0; i1 < k1; ++i1)
                            for (int i2 = 0; i2 < k2; ++i2)
                                for (int i3 = 0; i3 < k3; ++i3) {
                                    const int s1 = o1 + i1 - p1, s2 = o2 + i2 - p2, s3 = o3 + i3 - p3;
                                    if (s1 < 0 || s1 >= D1 || s2 < 0 || s2 >= D2 || s3 < 0 || s3 >= D3)
                                        continue;
                                    for (int ci = 0; ci < Cin; ++ci)
                                        s += x[(((static_cast<std::size_t>(n) * D1 + s1) * D2 + s2) * D3 + s3) * Cin + ci] *
                                             w[(((static_cast<std::size_t>(i1) * k2 + i2) * k3 + i3) * Cin + ci) * Cout + co];
                                }
                        y[(((static_cast<std::size_t>(n) * O1 + o1) * O2 + o2) * O3 + o3) * Cout + co] = s;
                    }
    return y;
}

// depthwise token convolution, zero "same" padding
inline std::vector<double> conv1d_tokens(const std::vector<double>& x, int N, int T, int E,
                                         const std::vector<double>& w, int k,
                                         const std::vector<double>& b) {
    const int c = k / 2;
    std::vector<double> y(static_cast<std::size_t>(N) * T * E, 0.0);
    for (int n = 0; n < N; ++n)
        for (int t = 0; t < T; ++t)
            for (int e = 0; e < E; ++e) {
                double s = b[static_cast<std::size_t>(e)];
                for (int j = 0; j < k; ++j) {
                    const int src = t + j - c;
                    if (src < 0 || src >= T) continue;
                    s += x[(static_cast<std::size_t>(n) * T + src) * E + e] *
                         w[static_cast<std::size_t>(j) * E + e];
                }
                y[(static_cast<std::size_t>(n) * T + t) * E + e] = s;
            }
    return y;
}

inline double gelu(double v) {
    return 0.5 * v * (1.0 + std::tanh(0.7978845608028654 * (v + 0.044715 * v * v * v)));
}

inline double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

inline std::vector<double> softmax_rows(const std::vector<double>& x, int rows, int cols) {
    std::vector<double> y(x.size());
    for (int r = 0; r < rows; ++r) {
        double m = x[static_cast<std::size_t>(r) * cols];
        for (int j = 1; j < cols; ++j) m = std::max(m, x[static_cast<std::size_t>(r) * cols + j]);
        double s = 0.0;
        for (int j = 0; j < cols; ++j) {
            y[static_cast<std::size_t>(r) * cols + j] = std::exp(x[static_cast<std::size_t>(r) * cols + j] - m);
            s += y[static_cast<std::size_t>(r) * cols + j];
        }
        for (int j = 0; j < cols; ++j) y[static_cast<std::size_t>(r) * cols + j] /= s;
    }
    return y;
}

// multi-head scaled dot-product attention over x[N,T,D]; weights [D,D] plus
// biases, h heads
inline std::vector<double> attention(const std::vector<double>& x, int N, int T, int D,
                                     const std::vector<double>& wq, const std::vector<double>& bq,
                                     const std::vector<double>& wk, const std::vector<double>& bk,
                                     const std::vector<double>& wv, const std::vector<double>& bv,
                                     const std::vector<double>& wo, const std::vector<double>& bo,
                                     int heads) {
    const int dh = D / heads;
    auto project = [&](const std::vector<double>& w, const std::vector<double>& b) {
        std::vector<double> out(static_cast<std::size_t>(N) * T * D);
        for (int n = 0; n < N; ++n)
            for (int t = 0; t < T; ++t)
                for (int d = 0; d < D; ++d) {
                    double s = b[static_cast<std::size_t>(d)];
                    for (int i = 0; i < D; ++i)
                        s += x[(static_cast<std::size_t>(n) * T + t) * D + i] *
                             w[static_cast<std::size_t>(i) * D + d];
                    out[(static_cast<std::size_t>(n) * T + t) * D + d] = s;
                }
        return out;
    };
    const auto q = project(wq, bq), k = project(wk, bk), v = project(wv, bv);

    std::vector<double> ctx(static_cast<std::size_t>(N) * T * D, 0.0);
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    for (int n = 0; n < N; ++n)
        for (int h = 0; h < heads; ++h) {
            std::vector<double> scores(static_cast<std::size_t>(T) * T);
            for (int t = 0; t < T; ++t)
                for (int u = 0; u < T; ++u) {
                    double s = 0.0;
                    for (int d = 0; d < dh; ++d)
                        s += q[(static_cast<std::size_t>(n) * T + t) * D + h * dh + d] *
                             k[(static_cast<std::size_t>(n) * T + u) * D + h * dh + d];
                    scores[static_cast<std::size_t>(t) * T + u] = s * scale;
                }
            const auto probs = softmax_rows(scores, T, T);
            for (int t = 0; t < T; ++t)
                for (int d = 0; d < dh; ++d) {
                    double s = 0.0;
                    for (int u = 0; u < T; ++u)
                        s += probs[static_cast<std::size_t>(t) * T + u] *
                             v[(static_cast<std::size_t>(n) * T + u) * D + h * dh + d];
                    ctx[(static_cast<std::size_t>(n) * T + t) * D + h * dh + d] = s;
                }
        }

    std::vector<double> out(static_cast<std::size_t>(N) * T * D);
    for (int n = 0; n < N; ++n)
        for (int t = 0; t < T; ++t)
            for (int d = 0; d < D; ++d) {
                double s = bo[static_cast<std::size_t>(d)];
                for (int i = 0; i < D; ++i)
                    s += ctx[(static_cast<std::size_t>(n) * T + t) * D + i] *
                         wo[static_cast<std::size_t>(i) * D + d];
                out[(static_cast<std::size_t>(n) * T + t) * D + d] = s;
            }
    return out;
}

// step-by-step gated sequence mixing trace: expand, split, depthwise token
// conv, GELU(content) * sigmoid(gate), output projection, residual
inline std::vector<double> mamba_trace(const std::vector<double>& x, int N, int T, int D, int E,
                                       const std::vector<double>& w_in,
                                       const std::vector<double>& conv_w, int k,
                                       const std::vector<double>& conv_b,
                                       const std::vector<double>& w_o) {
    std::vector<double> u(static_cast<std::size_t>(N) * T * E), g(u.size());
    for (int n = 0; n < N; ++n)
        for (int t = 0; t < T; ++t)
            for (int e = 0; e < 2 * E; ++e) {
                double s = 0.0;
                for (int d = 0; d < D; ++d)
                    s += x[(static_cast<std::size_t>(n) * T + t) * D + d] *
                         w_in[static_cast<std::size_t>(d) * 2 * E + e];
                if (e < E) u[(static_cast<std::size_t>(n) * T + t) * E + e] = s;
                else g[(static_cast<std::size_t>(n) * T + t) * E + (e - E)] = s;
            }
    const auto uc = conv1d_tokens(u, N, T, E, conv_w, k, conv_b);
    std::vector<double> um(u.size());
    for (std::size_t i = 0; i < um.size(); ++i) um[i] = gelu(uc[i]) * sigmoid(g[i]);
    std::vector<double> y(static_cast<std::size_t>(N) * T * D);
    for (int n = 0; n < N; ++n)
        for (int t = 0; t < T; ++t)
            for (int d = 0; d < D; ++d) {
                double s = x[(static_cast<std::size_t>(n) * T + t) * D + d];
                for (int e = 0; e < E; ++e)
                    s += um[(static_cast<std::size_t>(n) * T + t) * E + e] *
                         w_o[static_cast<std::size_t>(e) * D + d];
                y[(static_cast<std::size_t>(n) * T + t) * D + d] = s;
            }
    return y;
}

// classical Jacobi eigenvalue iteration with largest-off-diagonal pivoting
// (a deliberately different strategy from the library's cyclic sweeps);
// returns eigenvalues sorted descending
inline std::vector<double> eigvals_sym(std::vector<double> a, int n) {
    for (int iter = 0; iter < 100 * n * n; ++iter) {
        int p = 0, q = 1;
        double big = 0.0;
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j)
                if (std::abs(a[static_cast<std::size_t>(i) * n + j]) > big) {
                    big = std::abs(a[static_cast<std::size_t>(i) * n + j]);
                    p = i;
                    q = j;
                }
        if (big < 1e-13) break;
        const double apq = a[static_cast<std::size_t>(p) * n + q];
        const double theta = (a[static_cast<std::size_t>(q) * n + q] - a[static_cast<std::size_t>(p) * n + p]) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        for (int i = 0; i < n; ++i) {
            const double aip = a[static_cast<std::size_t>(i) * n + p];
            const double aiq = a[static_cast<std::size_t>(i) * n + q];
            a[static_cast<std::size_t>(i) * n + p] = c * aip - s * aiq;
            a[static_cast<std::size_t>(i) * n + q] = s * aip + c * aiq;
        }
        for (int i = 0; i < n; ++i) {
            const double api = a[static_cast<std::size_t>(p) * n + i];
            const double aqi = a[static_cast<std::size_t>(q) * n + i];
            a[static_cast<std::size_t>(p) * n + i] = c * api - s * aqi;
            a[static_cast<std::size_t>(q) * n + i] = s * api + c * aqi;
        }
    }
    std::vector<double> vals(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) vals[static_cast<std::size_t>(i)] = a[static_cast<std::size_t>(i) * n + i];
    std::sort(vals.begin(), vals.end(), std::greater<double>());
    return vals;
}

inline double cross_entropy(const std::vector<double>& logits, const std::vector<int>& labels, int N,
                            int K) {
    double total = 0.0;
    for (int i = 0; i < N; ++i) {
        double m = logits[static_cast<std::size_t>(i) * K];
        for (int k = 1; k < K; ++k) m = std::max(m, logits[static_cast<std::size_t>(i) * K + k]);
        double s = 0.0;
        for (int k = 0; k < K; ++k) s += std::exp(logits[static_cast<std::size_t>(i) * K + k] - m);
        const double lse = m + std::log(s);
        total += lse - logits[static_cast<std::size_t>(i) * K + (labels[static_cast<std::size_t>(i)] - 1)];
    }
    return total / N;
}

} // namespace oracle
