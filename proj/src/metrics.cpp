#include "cvm/metrics.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <limits>
#include <thread>

namespace cvm {

ConfusionMatrix confusion(const std::vector<int>& preds, const std::vector<int>& refs,
                          int num_classes) {
    if (preds.size() != refs.size())
        throw DataError("confusion: " + std::to_string(preds.size()) + " predictions for " +
                        std::to_string(refs.size()) + " references");
    ConfusionMatrix cm;
    cm.num_classes = num_classes;
    cm.counts.assign(static_cast<std::size_t>(num_classes) * num_classes, 0);
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const int p = preds[i], r = refs[i];
        if (p < 1 || p > num_classes || r < 1 || r > num_classes)
            throw DataError("confusion: class id out of [1," + std::to_string(num_classes) +
                            "] at index " + std::to_string(i));
        ++cm.counts[static_cast<std::size_t>(r - 1) * num_classes + (p - 1)];
    }
    return cm;
}

double oa(const ConfusionMatrix& cm) {
    const std::int64_t n = cm.total();
    if (n == 0) throw MetricError("overall accuracy undefined on an empty confusion matrix");
    return static_cast<double>(cm.trace()) / static_cast<double>(n);
}

double aa(const ConfusionMatrix& cm, std::vector<int>* excluded) {
    double sum = 0.0;
    int present = 0;
    for (int i = 0; i < cm.num_classes; ++i) {
        std::int64_t row = 0;
        for (int j = 0; j < cm.num_classes; ++j) row += cm.at(i, j);
        if (row == 0) {
            if (excluded) excluded->push_back(i + 1);
            continue;
        }
        sum += static_cast<double>(cm.at(i, i)) / static_cast<double>(row);
        ++present;
    }
    if (present == 0) throw MetricError("average accuracy undefined: every class row is empty");
    return sum / present;
}

double kappa(const ConfusionMatrix& cm) {
    const std::int64_t n = cm.total();
    if (n == 0) throw MetricError("kappa undefined on an empty confusion matrix");
    const double dn = static_cast<double>(n);
    const double po = static_cast<double>(cm.trace()) / dn;
    double pe = 0.0;
    for (int i = 0; i < cm.num_classes; ++i) {
        std::int64_t row = 0, col = 0;
        for (int j = 0; j < cm.num_classes; ++j) {
            row += cm.at(i, j);
            col += cm.at(j, i);
        }
        pe += (static_cast<double>(row) / dn) * (static_cast<double>(col) / dn);
    }
    if (pe == 1.0) {
        if (po == 1.0) return 1.0;
        throw MetricError("kappa undefined: chance agreement is 1 with imperfect observed agreement");
    }
    return (po - pe) / (1.0 - pe);
}

EvalReport evaluate_predictions(const std::vector<int>& preds, const std::vector<int>& refs,
                                int num_classes) {
    ConfusionMatrix cm = confusion(preds, refs, num_classes);
    EvalReport rep;
    rep.samples = cm.total();
    rep.oa = oa(cm);
    rep.aa = aa(cm, &rep.excluded_classes);
    rep.kappa = kappa(cm);
    rep.per_class.assign(static_cast<std::size_t>(num_classes),
                         std::numeric_limits<double>::quiet_NaN());
    for (int i = 0; i < num_classes; ++i) {
        std::int64_t row = 0;
        for (int j = 0; j < num_classes; ++j) row += cm.at(i, j);
        if (row > 0)
            rep.per_class[static_cast<std::size_t>(i)] =
                static_cast<double>(cm.at(i, i)) / static_cast<double>(row);
    }
    return rep;
}

ScenePrediction predict_scene(const HsiCube& cube, const LabelMap* refs, const ModelConfig& cfg,
                              const ModelParamsF& params, int batch, bool labeled_only) {
    cfg.validate();
    if (batch < 1) throw ConfigError("predict_scene: batch must be >= 1");
    if (cube.bands != cfg.input_bands)
        throw DimensionError("predict_scene: cube has " + std::to_string(cube.bands) +
                             " bands, model expects " + std::to_string(cfg.input_bands));
    if (labeled_only && !refs)
        throw ContractError("predict_scene: labeled-only mode requires reference labels");
    if (refs && (refs->height != cube.height || refs->width != cube.width))
        throw DimensionError("predict_scene: reference labels do not match cube dimensions");

    const int S = cfg.patch_size, B = cube.bands, pad = S / 2;
    ScenePrediction out;
    out.predictions.height = cube.height;
    out.predictions.width = cube.width;
    out.predictions.num_classes = cfg.num_classes;
    out.predictions.labels.assign(static_cast<std::size_t>(cube.height) * cube.width, 0);

    std::vector<std::pair<int, int>> targets;
    for (int y = 0; y < cube.height; ++y)
        for (int x = 0; x < cube.width; ++x)
            if (!labeled_only || refs->at(y, x) != 0) targets.emplace_back(y, x);

    using clock = std::chrono::steady_clock;
    const std::size_t stride = static_cast<std::size_t>(S) * S * B;
    for (std::size_t from = 0; from < targets.size(); from += static_cast<std::size_t>(batch)) {
        const std::size_t count = std::min(static_cast<std::size_t>(batch), targets.size() - from);
        Tensorf patches(Shape{static_cast<int>(count), S, S, B});

        const auto t0 = clock::now();
        for (std::size_t i = 0; i < count; ++i) {
            const auto [cy, cx] = targets[from + i];
            float* dst = patches.data().data() + i * stride;
            for (int dy = 0; dy < S; ++dy) {
                const int sy = cy + dy - pad;
                for (int dx = 0; dx < S; ++dx) {
                    const int sx = cx + dx - pad;
                    float* cell = dst + (static_cast<std::size_t>(dy) * S + dx) * B;
                    if (sy < 0 || sy >= cube.height || sx < 0 || sx >= cube.width)
                        std::fill_n(cell, B, 0.0f);
                    else
                        std::copy_n(cube.data.data() + (static_cast<std::size_t>(sy) * cube.width + sx) * B,
                                    B, cell);
                }
            }
        }
        const auto t1 = clock::now();
        auto preds = argmax_classes(forward(patches, params, cfg));
        const auto t2 = clock::now();

        out.extract_seconds += std::chrono::duration<double>(t1 - t0).count();
        out.forward_seconds += std::chrono::duration<double>(t2 - t1).count();
        for (std::size_t i = 0; i < count; ++i) {
            const auto [cy, cx] = targets[from + i];
            out.predictions.labels[static_cast<std::size_t>(cy) * cube.width + cx] =
                static_cast<std::uint16_t>(preds[i]);
        }
    }

    if (refs) {
        std::vector<int> p, r;
        for (int y = 0; y < cube.height; ++y)
            for (int x = 0; x < cube.width; ++x) {
                const std::uint16_t ref = refs->at(y, x);
                if (ref == 0) continue;
                p.push_back(static_cast<int>(out.predictions.at(y, x)));
                r.push_back(static_cast<int>(ref));
            }
        out.report = evaluate_predictions(p, r, cfg.num_classes);
        out.has_report = true;
    }
    return out;
}

std::vector<AblationRow> ablation_suite(const ModelConfig& base, const PatchSet& data,
                                        const SplitResult& split, const TrainSchedule& schedule,
                                        int workers) {
    if (workers < 1) throw ConfigError("ablation_suite: workers must be >= 1");
    struct Variant {
        const char* name;
        bool msfe, vit, mamba;
    };
    const Variant variants[4] = {
        {"full", true, true, true},
        {"w/o MS_FE", false, true, true},
        {"w/o ViT", true, false, true},
        {"w/o Mamba", true, true, false},
    };

    std::vector<AblationRow> rows(4);
    auto run_one = [&](int i) {
        ModelConfig cfg = base;
        cfg.use_msfe = variants[i].msfe;
        cfg.use_vit = variants[i].vit;
        cfg.use_mamba = variants[i].mamba;
        TrainResult tr = train(cfg, data, split, schedule);

        std::vector<int> preds, refs;
        for (std::size_t from = 0; from < split.test_idx.size();
             from += static_cast<std::size_t>(schedule.batch_size)) {
            const std::size_t count =
                std::min(static_cast<std::size_t>(schedule.batch_size), split.test_idx.size() - from);
            Tensorf batch = gather_patches(data, split.test_idx, from, count);
            auto bp = argmax_classes(forward(batch, tr.best_params, cfg));
            preds.insert(preds.end(), bp.begin(), bp.end());
            for (std::size_t j = 0; j < count; ++j)
                refs.push_back(data.labels[static_cast<std::size_t>(split.test_idx[from + j])]);
        }
        rows[static_cast<std::size_t>(i)] =
            AblationRow{variants[i].name, variants[i].msfe, variants[i].vit, variants[i].mamba,
                        count_params(cfg), evaluate_predictions(preds, refs, base.num_classes)};
    };

    if (workers == 1) {
        for (int i = 0; i < 4; ++i) run_one(i);
    } else {
        std::vector<std::thread> pool;
        std::atomic<int> next{0};
        const int n = std::min(workers, 4);
        for (int w = 0; w < n; ++w)
            pool.emplace_back([&] {
                for (int i = next.fetch_add(1); i < 4; i = next.fetch_add(1)) run_one(i);
            });
        for (auto& t : pool) t.join();
    }
    return rows;
}

} // namespace cvm
