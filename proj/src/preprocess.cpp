#include "cvm/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "cvm/rng.hpp"

namespace cvm {

std::pair<std::vector<double>, std::vector<double>> jacobi_eigh(std::vector<double> a, int n,
                                                                double tol, int max_sweeps) {
    std::vector<double> v(static_cast<std::size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i) v[static_cast<std::size_t>(i) * n + i] = 1.0;

    auto off_norm = [&] {
        double s = 0.0;
        for (int p = 0; p < n; ++p)
            for (int q = p + 1; q < n; ++q) {
                const double x = a[static_cast<std::size_t>(p) * n + q];
                s += 2.0 * x * x;
            }
        return std::sqrt(s);
    };

    int sweep = 0;
    while (off_norm() >= tol) {
        if (++sweep > max_sweeps)
            throw NumericError("jacobi_eigh did not converge within " + std::to_string(max_sweeps) +
                               " sweeps");
        for (int p = 0; p < n - 1; ++p) {
            for (int q = p + 1; q < n; ++q) {
                const double apq = a[static_cast<std::size_t>(p) * n + q];
                if (apq == 0.0) continue;
                const double app = a[static_cast<std::size_t>(p) * n + p];
                const double aqq = a[static_cast<std::size_t>(q) * n + q];
                const double theta = (aqq - app) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
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
                for (int i = 0; i < n; ++i) {
                    const double vip = v[static_cast<std::size_t>(i) * n + p];
                    const double viq = v[static_cast<std::size_t>(i) * n + q];
                    v[static_cast<std::size_t>(i) * n + p] = c * vip - s * viq;
                    v[static_cast<std::size_t>(i) * n + q] = s * vip + c * viq;
                }
            }
        }
    }

    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int i, int j) {
        return a[static_cast<std::size_t>(i) * n + i] > a[static_cast<std::size_t>(j) * n + j];
    });

    std::vector<double> eigvals(static_cast<std::size_t>(n));
    std::vector<double> eigvecs(static_cast<std::size_t>(n) * n);
    for (int j = 0; j < n; ++j) {
        const int src = order[static_cast<std::size_t>(j)];
        eigvals[static_cast<std::size_t>(j)] = a[static_cast<std::size_t>(src) * n + src];
        for (int i = 0; i < n; ++i)
            eigvecs[static_cast<std::size_t>(i) * n + j] = v[static_cast<std::size_t>(i) * n + src];
    }
    return {std::move(eigvals), std::move(eigvecs)};
}

PcaModel pca_fit(const HsiCube& cube, int retain, int sample_stride) {
    cube.validate();
    const int C = cube.bands;
    if (retain < 1 || retain > C)
        throw ConfigError("pca_fit: retain must be in [1," + std::to_string(C) + "], got " +
                          std::to_string(retain));
    if (sample_stride < 1) throw ConfigError("pca_fit: sample_stride must be >= 1");

    const std::size_t pixels = static_cast<std::size_t>(cube.height) * cube.width;
    std::vector<double> mean(static_cast<std::size_t>(C), 0.0);
    std::size_t n = 0;
    for (std::size_t p = 0; p < pixels; p += static_cast<std::size_t>(sample_stride), ++n) {
        const float* px = cube.data.data() + p * C;
        for (int c = 0; c < C; ++c) mean[static_cast<std::size_t>(c)] += px[c];
    }
    for (auto& m : mean) m /= static_cast<double>(n);

    // sample covariance, upper triangle then mirrored
    std::vector<double> cov(static_cast<std::size_t>(C) * C, 0.0);
    std::vector<double> dev(static_cast<std::size_t>(C));
    for (std::size_t p = 0; p < pixels; p += static_cast<std::size_t>(sample_stride)) {
        const float* px = cube.data.data() + p * C;
        for (int c = 0; c < C; ++c) dev[static_cast<std::size_t>(c)] = px[c] - mean[static_cast<std::size_t>(c)];
        for (int i = 0; i < C; ++i) {
            const double di = dev[static_cast<std::size_t>(i)];
            for (int j = i; j < C; ++j)
                cov[static_cast<std::size_t>(i) * C + j] += di * dev[static_cast<std::size_t>(j)];
        }
    }
    const double denom = n > 1 ? static_cast<double>(n - 1) : 1.0;
    for (int i = 0; i < C; ++i)
        for (int j = i; j < C; ++j) {
            cov[static_cast<std::size_t>(i) * C + j] /= denom;
            cov[static_cast<std::size_t>(j) * C + i] = cov[static_cast<std::size_t>(i) * C + j];
        }

    auto [eigvals, eigvecs] = jacobi_eigh(cov, C);

    PcaModel model;
    model.input_bands = C;
    model.retained = retain;
    model.mean.assign(mean.begin(), mean.end());
    model.components.resize(static_cast<std::size_t>(C) * retain);
    model.eigenvalues.resize(static_cast<std::size_t>(retain));
    for (int j = 0; j < retain; ++j) {
        // sign convention: the coordinate with the largest magnitude is positive
        int arg = 0;
        double best = -1.0;
        for (int i = 0; i < C; ++i) {
            const double m = std::abs(eigvecs[static_cast<std::size_t>(i) * C + j]);
            if (m > best) {
                best = m;
                arg = i;
            }
        }
        const double flip = eigvecs[static_cast<std::size_t>(arg) * C + j] < 0.0 ? -1.0 : 1.0;
        for (int i = 0; i < C; ++i)
            model.components[static_cast<std::size_t>(i) * retain + j] =
                static_cast<float>(flip * eigvecs[static_cast<std::size_t>(i) * C + j]);
        model.eigenvalues[static_cast<std::size_t>(j)] = static_cast<float>(eigvals[static_cast<std::size_t>(j)]);
    }
    return model;
}

HsiCube pca_apply(const HsiCube& cube, const PcaModel& model) {
    if (cube.bands != model.input_bands)
        throw DimensionError("pca_apply: cube has " + std::to_string(cube.bands) + " bands, model expects " +
                             std::to_string(model.input_bands));
    const int C = model.input_bands, B = model.retained;
    HsiCube out;
    out.height = cube.height;
    out.width = cube.width;
    out.bands = B;
    out.data.resize(static_cast<std::size_t>(cube.height) * cube.width * B);
    const std::size_t pixels = static_cast<std::size_t>(cube.height) * cube.width;
    for (std::size_t p = 0; p < pixels; ++p) {
        const float* px = cube.data.data() + p * C;
        float* py = out.data.data() + p * B;
        for (int j = 0; j < B; ++j) {
            double acc = 0.0;
            for (int c = 0; c < C; ++c)
                acc += static_cast<double>(model.components[static_cast<std::size_t>(c) * B + j]) *
                       (static_cast<double>(px[c]) - model.mean[static_cast<std::size_t>(c)]);
            py[j] = static_cast<float>(acc);
        }
    }
    return out;
}

HsiCube pca_inverse(const HsiCube& reduced, const PcaModel& model) {
    if (reduced.bands != model.retained)
        throw DimensionError("pca_inverse: cube has " + std::to_string(reduced.bands) +
                             " bands, model retains " + std::to_string(model.retained));
    const int C = model.input_bands, B = model.retained;
    HsiCube out;
    out.height = reduced.height;
    out.width = reduced.width;
    out.bands = C;
    out.data.resize(static_cast<std::size_t>(out.height) * out.width * C);
    const std::size_t pixels = static_cast<std::size_t>(out.height) * out.width;
    for (std::size_t p = 0; p < pixels; ++p) {
        const float* py = reduced.data.data() + p * B;
        float* px = out.data.data() + p * C;
        for (int c = 0; c < C; ++c) {
            double acc = model.mean[static_cast<std::size_t>(c)];
            for (int j = 0; j < B; ++j)
                acc += static_cast<double>(model.components[static_cast<std::size_t>(c) * B + j]) * py[j];
            px[c] = static_cast<float>(acc);
        }
    }
    return out;
}

NamedTensorList pca_to_tensors(const PcaModel& model) {
    NamedTensorList out;
    out.emplace_back("pca.mean", Tensorf(Shape{model.input_bands}, std::vector<float>(model.mean)));
    out.emplace_back("pca.components",
                     Tensorf(Shape{model.input_bands, model.retained}, std::vector<float>(model.components)));
    out.emplace_back("pca.eigenvalues",
                     Tensorf(Shape{model.retained}, std::vector<float>(model.eigenvalues)));
    return out;
}

PcaModel pca_from_tensors(const NamedTensorList& tensors) {
    const Tensorf* mean = nullptr;
    const Tensorf* comps = nullptr;
    const Tensorf* eig = nullptr;
    for (const auto& [name, t] : tensors) {
        if (name == "pca.mean") mean = &t;
        else if (name == "pca.components") comps = &t;
        else if (name == "pca.eigenvalues") eig = &t;
    }
    if (!mean || !comps || !eig)
        throw CheckpointError("checkpoint does not hold a PCA model (pca.mean/components/eigenvalues)");
    if (comps->ndim() != 2 || comps->dim(0) != mean->numel() || eig->numel() != comps->dim(1))
        throw CheckpointError("inconsistent PCA tensor shapes in checkpoint");
    PcaModel model;
    model.input_bands = comps->dim(0);
    model.retained = comps->dim(1);
    model.mean = mean->data();
    model.components = comps->data();
    model.eigenvalues = eig->data();
    return model;
}

PatchSet extract_patches(const HsiCube& cube, const LabelMap& labels, int patch_size) {
    if (patch_size < 3 || patch_size % 2 == 0)
        throw ConfigError("patch size must be odd and >= 3, got " + std::to_string(patch_size));
    if (labels.height != cube.height || labels.width != cube.width)
        throw DimensionError("label map " + std::to_string(labels.height) + "x" +
                             std::to_string(labels.width) + " does not match cube " +
                             std::to_string(cube.height) + "x" + std::to_string(cube.width));
    const int S = patch_size, B = cube.bands, pad = S / 2;

    std::vector<std::pair<int, int>> coords;
    std::vector<int> ids;
    for (int y = 0; y < cube.height; ++y)
        for (int x = 0; x < cube.width; ++x) {
            const std::uint16_t v = labels.at(y, x);
            if (v != 0) {
                coords.emplace_back(y, x);
                ids.push_back(static_cast<int>(v));
            }
        }

    PatchSet set;
    set.patch_size = S;
    set.bands = B;
    set.labels = std::move(ids);
    set.coords = std::move(coords);
    const int N = set.count();
    // N == 0 keeps a single zero patch as placeholder; count() is authoritative
    set.patches = Tensorf(Shape{std::max(N, 1), S, S, B});
    for (int i = 0; i < N; ++i) {
        const auto [cy, cx] = set.coords[static_cast<std::size_t>(i)];
        float* dst = set.patches.data().data() + static_cast<std::size_t>(i) * S * S * B;
        for (int dy = 0; dy < S; ++dy) {
            const int sy = cy + dy - pad;
            for (int dx = 0; dx < S; ++dx) {
                const int sx = cx + dx - pad;
                float* cell = dst + (static_cast<std::size_t>(dy) * S + dx) * B;
                if (sy < 0 || sy >= cube.height || sx < 0 || sx >= cube.width) {
                    std::fill_n(cell, B, 0.0f);
                } else {
                    const float* src = cube.data.data() + (static_cast<std::size_t>(sy) * cube.width + sx) * B;
                    std::copy_n(src, B, cell);
                }
            }
        }
    }
    return set;
}

SplitResult split(const PatchSet& set, const SplitSpec& spec, const LabelMap* train_mask) {
    if (spec.val_fraction <= 0.0 || spec.val_fraction >= 1.0)
        throw ConfigError("val_fraction must be in (0,1)");
    if (!train_mask && (spec.train_fraction <= 0.0 || spec.train_fraction > 1.0))
        throw ConfigError("train_fraction must be in (0,1]");

    const int N = set.count();
    SplitResult result;
    result.assignment.assign(static_cast<std::size_t>(N), SplitTag::Test);

    std::map<int, std::vector<int>> by_class;
    for (int i = 0; i < N; ++i) by_class[set.labels[static_cast<std::size_t>(i)]].push_back(i);

    Rng rng(spec.seed);
    for (auto& [cls, idx] : by_class) {
        std::vector<int> pool;
        if (train_mask) {
            for (int i : idx) {
                const auto [y, x] = set.coords[static_cast<std::size_t>(i)];
                if (train_mask->at(y, x) != 0) pool.push_back(i);
            }
            rng.shuffle(pool);
        } else {
            std::vector<int> shuffled = idx;
            rng.shuffle(shuffled);
            auto want = static_cast<std::size_t>(
                std::llround(spec.train_fraction * static_cast<double>(shuffled.size())));
            want = std::clamp<std::size_t>(want, 1, shuffled.size());
            pool.assign(shuffled.begin(), shuffled.begin() + static_cast<std::ptrdiff_t>(want));
        }

        std::size_t n_val = static_cast<std::size_t>(
            std::llround(spec.val_fraction * static_cast<double>(pool.size())));
        if (pool.size() < 2) {
            n_val = 0;
            if (!pool.empty()) result.small_classes.push_back(cls);
        } else if (n_val >= pool.size()) {
            n_val = pool.size() - 1;
        }
        for (std::size_t i = 0; i < pool.size(); ++i)
            result.assignment[static_cast<std::size_t>(pool[i])] =
                i < pool.size() - n_val ? SplitTag::Train : SplitTag::Val;
    }

    for (int i = 0; i < N; ++i) {
        switch (result.assignment[static_cast<std::size_t>(i)]) {
            case SplitTag::Train: result.train_idx.push_back(i); break;
            case SplitTag::Val: result.val_idx.push_back(i); break;
            case SplitTag::Test: result.test_idx.push_back(i); break;
        }
    }
    return result;
}

} // namespace cvm
