#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cvm/conv.hpp"
#include "cvm/ops.hpp"
#include "cvm/rng.hpp"
#include "cvm/tensor.hpp"

namespace cvm {

// Architecture hyperparameters. Defaults are desk-scale; everything is
// overridable through the JSON config.
struct ModelConfig {
    int patch_size = 9;   // S, spatial patch extent
    int input_bands = 20; // B, spectral bands after PCA
    int ms_filters = 32;  // filters per conv layer in each extractor branch
    int embed_dim = 64;   // D, token width
    int heads = 4;
    int encoder_layers = 2;
    int mlp_ratio = 2;
    double mamba_expand = 2.0; // alpha; E = alpha * D
    int mamba_kernel = 3;      // k, token-mixing kernel width
    int head_hidden = 128;
    int num_classes = 2;
    bool use_msfe = true;
    bool use_vit = true;
    bool use_mamba = true;
    double dropout = 0.1;

    int tokens() const { return patch_size * patch_size; }
    int expanded_dim() const {
        return static_cast<int>(std::lround(mamba_expand * embed_dim));
    }

    void validate() const {
        if (patch_size < 3 || patch_size % 2 == 0)
            throw ConfigError("patch_size must be odd and >= 3, got " + std::to_string(patch_size));
        if (input_bands < 1) throw ConfigError("input_bands must be >= 1");
        if (ms_filters <= 0) throw ConfigError("ms_filters must be positive");
        if (embed_dim < 1 || heads < 1 || embed_dim % heads != 0)
            throw ConfigError("embed_dim (" + std::to_string(embed_dim) +
                              ") must be divisible by heads (" + std::to_string(heads) + ")");
        if (encoder_layers < 1) throw ConfigError("encoder_layers must be >= 1");
        if (mlp_ratio < 1) throw ConfigError("mlp_ratio must be >= 1");
        const double e = mamba_expand * embed_dim;
        if (e <= 0.0 || std::abs(e - std::lround(e)) > 1e-9)
            throw ConfigError("mamba_expand * embed_dim must be a positive integer");
        if (mamba_kernel < 1 || mamba_kernel % 2 == 0)
            throw ConfigError("mamba_kernel must be odd, got " + std::to_string(mamba_kernel));
        if (head_hidden < 1) throw ConfigError("head_hidden must be >= 1");
        if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
        if (!use_msfe && !use_vit && !use_mamba)
            throw ConfigError("at least one of use_msfe/use_vit/use_mamba must be enabled");
        if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must be in [0,1)");
    }
};

// Named parameter tree with a stable iteration order (checkpoint layout and
// optimizer state are keyed by it).
template <typename T>
struct ModelParams {
    std::vector<std::pair<std::string, Tensor<T>>> items;

    bool has(const std::string& name) const {
        for (const auto& kv : items)
            if (kv.first == name) return true;
        return false;
    }
    Tensor<T>& at(const std::string& name) {
        for (auto& kv : items)
            if (kv.first == name) return kv.second;
        throw CheckpointError("missing parameter \"" + name + "\"");
    }
    const Tensor<T>& at(const std::string& name) const {
        for (const auto& kv : items)
            if (kv.first == name) return kv.second;
        throw CheckpointError("missing parameter \"" + name + "\"");
    }
    void add(std::string name, Tensor<T> t) {
        if (has(name)) throw CheckpointError("duplicate parameter \"" + name + "\"");
        items.emplace_back(std::move(name), std::move(t));
    }
    std::int64_t total_elements() const {
        std::int64_t n = 0;
        for (const auto& kv : items) n += kv.second.numel();
        return n;
    }
    void set_requires_grad(bool v) {
        for (auto& kv : items) kv.second.set_requires_grad(v);
    }
    template <typename U>
    ModelParams<U> cast() const {
        ModelParams<U> out;
        for (const auto& kv : items) out.items.emplace_back(kv.first, kv.second.template cast<U>());
        return out;
    }
};

using ModelParamsF = ModelParams<float>;
using ModelParamsD = ModelParams<double>;

// ---------------------------------------------------------------------------
// parameter layout
// ---------------------------------------------------------------------------

inline std::vector<std::pair<std::string, Shape>> param_shapes(const ModelConfig& cfg) {
    cfg.validate();
    const int S = cfg.patch_size, B = cfg.input_bands, F = cfg.ms_filters;
    const int D = cfg.embed_dim, Tn = cfg.tokens(), E = cfg.expanded_dim();
    std::vector<std::pair<std::string, Shape>> out;

    if (cfg.use_msfe) {
        auto branch = [&](const std::string& name, int k1, int k2, int k3) {
            out.emplace_back("msfe." + name + ".conv1.w", Shape{k1, k2, k3, 1, F});
            out.emplace_back("msfe." + name + ".conv1.b", Shape{F});
            out.emplace_back("msfe." + name + ".conv2.w", Shape{k1, k2, k3, F, F});
            out.emplace_back("msfe." + name + ".conv2.b", Shape{F});
        };
        branch("spatial", 3, 3, 1);
        branch("spectral", 1, 1, 3);
        branch("joint", 3, 3, 3);
        out.emplace_back("fuse.w", Shape{3 * F * B, D});
        out.emplace_back("fuse.b", Shape{D});
    } else {
        out.emplace_back("token_proj.w", Shape{B, D});
        out.emplace_back("token_proj.b", Shape{D});
    }

    out.emplace_back("pos_embed", Shape{Tn, D});

    if (cfg.use_vit) {
        for (int l = 0; l < cfg.encoder_layers; ++l) {
            const std::string p = "vit." + std::to_string(l) + ".";
            out.emplace_back(p + "ln1.gamma", Shape{D});
            out.emplace_back(p + "ln1.beta", Shape{D});
            for (const char* nm : {"Wq", "Wk", "Wv", "Wo"}) {
                out.emplace_back(p + nm + ".w", Shape{D, D});
                out.emplace_back(p + nm + ".b", Shape{D});
            }
            out.emplace_back(p + "ln2.gamma", Shape{D});
            out.emplace_back(p + "ln2.beta", Shape{D});
            out.emplace_back(p + "mlp1.w", Shape{D, cfg.mlp_ratio * D});
            out.emplace_back(p + "mlp1.b", Shape{cfg.mlp_ratio * D});
            out.emplace_back(p + "mlp2.w", Shape{cfg.mlp_ratio * D, D});
            out.emplace_back(p + "mlp2.b", Shape{D});
        }
    }

    if (cfg.use_mamba) {
        out.emplace_back("mamba.W_in", Shape{D, 2 * E});
        out.emplace_back("mamba.conv_w", Shape{cfg.mamba_kernel, E});
        out.emplace_back("mamba.conv_b", Shape{E});
        out.emplace_back("mamba.W_o", Shape{E, D});
    }

    out.emplace_back("head.fc1.w", Shape{D, cfg.head_hidden});
    out.emplace_back("head.fc1.b", Shape{cfg.head_hidden});
    out.emplace_back("head.fc2.w", Shape{cfg.head_hidden, cfg.num_classes});
    out.emplace_back("head.fc2.b", Shape{cfg.num_classes});
    return out;
}

inline std::int64_t count_params(const ModelConfig& cfg) {
    std::int64_t n = 0;
    for (const auto& kv : param_shapes(cfg)) n += numel_of(kv.second);
    return n;
}

// Glorot-uniform weights, zero biases/positional table, unit LayerNorm gains.
inline ModelParamsF init_params(const ModelConfig& cfg, std::uint64_t seed) {
    ModelParamsF params;
    Rng rng(seed);
    for (auto& [name, shape] : param_shapes(cfg)) {
        Tensorf t(shape);
        const bool is_weight = name.size() > 2 && name.compare(name.size() - 2, 2, ".w") == 0;
        const bool is_mamba_proj = name == "mamba.W_in" || name == "mamba.W_o";
        const bool is_gamma = name.size() > 6 && name.compare(name.size() - 6, 6, ".gamma") == 0;
        if (is_weight || is_mamba_proj || name == "mamba.conv_w") {
            double fan_in = 0, fan_out = 0;
            if (shape.size() == 5) { // conv3d kernel
                const double rf = static_cast<double>(shape[0]) * shape[1] * shape[2];
                fan_in = rf * shape[3];
                fan_out = rf * shape[4];
            } else if (name == "mamba.conv_w") { // depthwise along tokens
                fan_in = fan_out = shape[0];
            } else {
                fan_in = shape[0];
                fan_out = shape[1];
            }
            const double a = std::sqrt(6.0 / (fan_in + fan_out));
            for (auto& v : t.data()) v = static_cast<float>(rng.uniform(-a, a));
        } else if (is_gamma) {
            std::fill(t.data().begin(), t.data().end(), 1.0f);
        }
        // biases, betas and pos_embed stay zero
        params.add(name, std::move(t));
    }
    return params;
}

// Rebuilds a parameter tree for `cfg` from named tensors (e.g. a loaded
// checkpoint). Validates the complete name set and every shape before
// constructing anything, so a mismatch never yields a partial load.
inline ModelParamsF params_from_tensors(const ModelConfig& cfg,
                                        const std::vector<std::pair<std::string, Tensorf>>& src) {
    const auto shapes = param_shapes(cfg);
    auto find = [&](const std::string& name) -> const Tensorf* {
        for (const auto& kv : src)
            if (kv.first == name) return &kv.second;
        return nullptr;
    };
    for (const auto& [name, shape] : shapes) {
        const Tensorf* t = find(name);
        if (!t) throw CheckpointError("missing parameter \"" + name + "\"");
        if (t->shape() != shape)
            throw CheckpointError("shape mismatch for \"" + name + "\": checkpoint " +
                                  shape_str(t->shape()) + ", model " + shape_str(shape));
    }
    for (const auto& kv : src) {
        bool known = false;
        for (const auto& [name, shape] : shapes) known = known || name == kv.first;
        if (!known)
            throw CheckpointError("unexpected parameter \"" + kv.first + "\" for this configuration");
    }
    ModelParamsF out;
    for (const auto& [name, shape] : shapes) out.add(name, find(name)->clone());
    return out;
}

// ---------------------------------------------------------------------------
// forward graph
// ---------------------------------------------------------------------------

inline constexpr double kLayerNormEps = 1e-5;

// Three parallel two-layer 3D-conv branches (spatial 3x3x1, spectral 1x1x3,
// joint 3x3x3) fused per cell to the embedding width. With use_msfe off the
// raw patch is routed through the per-pixel linear projection instead.
template <typename T>
Tensor<T> msfe_forward(const Tensor<T>& patches, const ModelParams<T>& p, const ModelConfig& cfg,
                       Tape<T>* tape = nullptr) {
    if (patches.ndim() != 4 || patches.dim(1) != cfg.patch_size ||
        patches.dim(2) != cfg.patch_size || patches.dim(3) != cfg.input_bands)
        throw DimensionError("msfe_forward: patches " + shape_str(patches.shape()) +
                             " do not match config [N," + std::to_string(cfg.patch_size) + "," +
                             std::to_string(cfg.patch_size) + "," + std::to_string(cfg.input_bands) + "]");
    const int N = patches.dim(0), S = cfg.patch_size, B = cfg.input_bands;

    if (!cfg.use_msfe) {
        auto z = matmul(patches, p.at("token_proj.w"), tape);
        return add_bias(z, p.at("token_proj.b"), tape);
    }

    auto x5 = reshape(patches, Shape{N, S, S, B, 1}, tape);
    auto branch = [&](const std::string& name) {
        auto h = conv3d(x5, p.at("msfe." + name + ".conv1.w"), p.at("msfe." + name + ".conv1.b"),
                        Padding::Same, tape);
        h = relu(h, tape);
        h = conv3d(h, p.at("msfe." + name + ".conv2.w"), p.at("msfe." + name + ".conv2.b"),
                   Padding::Same, tape);
        return relu(h, tape);
    };
    std::vector<Tensor<T>> outs{branch("spatial"), branch("spectral"), branch("joint")};
    auto cat = concat_lastaxis(outs, tape);                          // [N,S,S,B,3F]
    auto flat = reshape(cat, Shape{N, S, S, B * 3 * cfg.ms_filters}, tape);
    auto fused = add_bias(matmul(flat, p.at("fuse.w"), tape), p.at("fuse.b"), tape);
    return relu(fused, tape);
}

// Row-major flatten of the S x S cells into T tokens plus the learned
// positional table; dropout only when an RNG is supplied (training mode).
template <typename T>
Tensor<T> tokenize(const Tensor<T>& features, const ModelParams<T>& p, const ModelConfig& cfg,
                   Tape<T>* tape = nullptr, Rng* dropout_rng = nullptr) {
    const int N = features.dim(0);
    auto tokens = reshape(features, Shape{N, cfg.tokens(), cfg.embed_dim}, tape);
    tokens = add_bias(tokens, p.at("pos_embed"), tape);
    if (dropout_rng && cfg.dropout > 0.0) tokens = dropout(tokens, cfg.dropout, *dropout_rng, tape);
    return tokens;
}

// Scaled dot-product attention with h heads; exposed separately so tests can
// check it against a direct oracle.
template <typename T>
Tensor<T> multi_head_attention(const Tensor<T>& x, const Tensor<T>& wq, const Tensor<T>& bq,
                               const Tensor<T>& wk, const Tensor<T>& bk, const Tensor<T>& wv,
                               const Tensor<T>& bv, const Tensor<T>& wo, const Tensor<T>& bo,
                               int heads, Tape<T>* tape = nullptr) {
    const int N = x.dim(0), Tn = x.dim(1), D = x.dim(2);
    if (D % heads != 0) throw ConfigError("attention width not divisible by head count");
    const int dh = D / heads;
    auto split = [&](const Tensor<T>& t) {
        return swap_axes12(reshape(t, Shape{N, Tn, heads, dh}, tape), tape); // [N,h,T,dh]
    };
    auto q = split(add_bias(matmul(x, wq, tape), bq, tape));
    auto k = split(add_bias(matmul(x, wk, tape), bk, tape));
    auto v = split(add_bias(matmul(x, wv, tape), bv, tape));
    auto scores = scale(matmul(q, transpose_last2(k, tape), tape),
                        static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh))), tape);
    auto attn = softmax_lastaxis(scores, tape);
    auto ctx = reshape(swap_axes12(matmul(attn, v, tape), tape), Shape{N, Tn, D}, tape);
    return add_bias(matmul(ctx, wo, tape), bo, tape);
}

// Pre-norm encoder: x += MHSA(LN(x)); x += MLP(LN(x)), repeated L times.
template <typename T>
Tensor<T> vit_encoder(const Tensor<T>& x0, const ModelParams<T>& p, const ModelConfig& cfg,
                      Tape<T>* tape = nullptr) {
    Tensor<T> x = x0;
    for (int l = 0; l < cfg.encoder_layers; ++l) {
        const std::string pre = "vit." + std::to_string(l) + ".";
        auto h = layernorm(x, p.at(pre + "ln1.gamma"), p.at(pre + "ln1.beta"),
                           static_cast<T>(kLayerNormEps), tape);
        auto attn = multi_head_attention(h, p.at(pre + "Wq.w"), p.at(pre + "Wq.b"),
                                         p.at(pre + "Wk.w"), p.at(pre + "Wk.b"),
                                         p.at(pre + "Wv.w"), p.at(pre + "Wv.b"),
                                         p.at(pre + "Wo.w"), p.at(pre + "Wo.b"), cfg.heads, tape);
        x = add(x, attn, tape);
        auto h2 = layernorm(x, p.at(pre + "ln2.gamma"), p.at(pre + "ln2.beta"),
                            static_cast<T>(kLayerNormEps), tape);
        auto m = add_bias(matmul(h2, p.at(pre + "mlp1.w"), tape), p.at(pre + "mlp1.b"), tape);
        m = gelu(m, tape);
        m = add_bias(matmul(m, p.at(pre + "mlp2.w"), tape), p.at(pre + "mlp2.b"), tape);
        x = add(x, m, tape);
    }
    return x;
}

// Gated sequence mixing: expand and split into content/gate halves, mix the
// content along tokens with a depthwise convolution, gate with sigmoid,
// project back and add the residual.
template <typename T>
Tensor<T> mamba_mix(const Tensor<T>& x, const ModelParams<T>& p, const ModelConfig& cfg,
                    Tape<T>* tape = nullptr) {
    const int E = cfg.expanded_dim();
    auto ug = matmul(x, p.at("mamba.W_in"), tape); // [N,T,2E], content half first
    auto u = slice_lastaxis(ug, 0, E, tape);
    auto g = slice_lastaxis(ug, E, E, tape);
    auto uc = conv1d_tokens(u, p.at("mamba.conv_w"), p.at("mamba.conv_b"), tape);
    auto um = gelu_sigmoid_gate(uc, g, tape);
    return add(x, matmul(um, p.at("mamba.W_o"), tape), tape);
}

// Mean-pool over tokens, then a two-layer classifier; raw logits out.
template <typename T>
Tensor<T> head_forward(const Tensor<T>& x, const ModelParams<T>& p, const ModelConfig& cfg,
                       Tape<T>* tape = nullptr, Rng* dropout_rng = nullptr) {
    auto pooled = mean_tokens(x, tape);
    auto h = gelu(add_bias(matmul(pooled, p.at("head.fc1.w"), tape), p.at("head.fc1.b"), tape), tape);
    if (dropout_rng && cfg.dropout > 0.0) h = dropout(h, cfg.dropout, *dropout_rng, tape);
    return add_bias(matmul(h, p.at("head.fc2.w"), tape), p.at("head.fc2.b"), tape);
}

// Full forward pass over a patch batch [N,S,S,B] -> logits [N,K]. Training
// mode is selected by passing a dropout RNG; without one the pass is
// deterministic.
template <typename T>
Tensor<T> forward(const Tensor<T>& patches, const ModelParams<T>& p, const ModelConfig& cfg,
                  Tape<T>* tape = nullptr, Rng* dropout_rng = nullptr) {
    auto feat = msfe_forward(patches, p, cfg, tape);
    auto tokens = tokenize(feat, p, cfg, tape, dropout_rng);
    if (cfg.use_vit) tokens = vit_encoder(tokens, p, cfg, tape);
    if (cfg.use_mamba) tokens = mamba_mix(tokens, p, cfg, tape);
    return head_forward(tokens, p, cfg, tape, dropout_rng);
}

// ---------------------------------------------------------------------------
// cost accounting
// ---------------------------------------------------------------------------

struct FlopCount {
    long long flops = 0;
    long long macs = 0;
};

// Per-single-sample eval forward. MACs count multiply-accumulates of matmul
// and convolution contractions; FLOPs = 2*MACs for those contractions plus
// pointwise work (1 per element per pointwise op, 8 per element for
// layernorm, 5 per element for softmax).
inline FlopCount count_flops(const ModelConfig& cfg) {
    cfg.validate();
    const long long S = cfg.patch_size, B = cfg.input_bands, F = cfg.ms_filters;
    const long long D = cfg.embed_dim, Tn = cfg.tokens(), E = cfg.expanded_dim();
    const long long H = cfg.head_hidden, K = cfg.num_classes, R = cfg.mlp_ratio;
    FlopCount fc;
    auto contraction = [&](long long macs) {
        fc.macs += macs;
        fc.flops += 2 * macs;
    };
    auto pointwise = [&](long long ops) { fc.flops += ops; };

    if (cfg.use_msfe) {
        const long long cells = S * S * B;
        for (long long kvol : {9LL, 3LL, 27LL}) {
            contraction(cells * F * kvol);     // conv1, Cin=1
            contraction(cells * F * kvol * F); // conv2, Cin=F
            pointwise(4 * cells * F);          // two bias adds + two ReLUs
        }
        contraction(S * S * 3 * F * B * D); // 1x1 fusion
        pointwise(2 * S * S * D);           // bias + ReLU
    } else {
        contraction(S * S * B * D);
        pointwise(S * S * D);
    }

    pointwise(Tn * D); // positional add

    if (cfg.use_vit) {
        for (int l = 0; l < cfg.encoder_layers; ++l) {
            pointwise(8 * Tn * D); // ln1
            contraction(4 * Tn * D * D);
            pointwise(4 * Tn * D);                       // q,k,v,o biases
            contraction(Tn * Tn * D);                    // scores
            pointwise(cfg.heads * Tn * Tn);              // scale
            pointwise(5 * cfg.heads * Tn * Tn);          // softmax
            contraction(Tn * Tn * D);                    // attn * V
            pointwise(Tn * D);                           // residual
            pointwise(8 * Tn * D);                       // ln2
            contraction(Tn * D * R * D + Tn * R * D * D);
            pointwise(Tn * R * D + Tn * D);              // mlp biases
            pointwise(Tn * R * D);                       // GELU
            pointwise(Tn * D);                           // residual
        }
    }

    if (cfg.use_mamba) {
        contraction(Tn * D * 2 * E);
        contraction(Tn * cfg.mamba_kernel * E);
        pointwise(Tn * E);         // conv bias
        pointwise(3 * Tn * E);     // GELU, sigmoid, gate product
        contraction(Tn * E * D);
        pointwise(Tn * D);         // residual
    }

    pointwise(Tn * D + D); // token mean-pool
    contraction(D * H);
    pointwise(2 * H); // bias + GELU
    contraction(H * K);
    pointwise(K);
    return fc;
}

} // namespace cvm
