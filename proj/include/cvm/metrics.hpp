#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cvm/hsi_io.hpp"
#include "cvm/model.hpp"
#include "cvm/preprocess.hpp"
#include "cvm/training.hpp"

namespace cvm {

// rows = reference class, columns = predicted class (both 0-indexed here,
// built from 1-based ids).
struct ConfusionMatrix {
    int num_classes = 0;
    std::vector<std::int64_t> counts; // K x K row-major

    std::int64_t at(int ref, int pred) const {
        return counts[static_cast<std::size_t>(ref) * num_classes + pred];
    }
    std::int64_t total() const {
        std::int64_t n = 0;
        for (auto v : counts) n += v;
        return n;
    }
    std::int64_t trace() const {
        std::int64_t n = 0;
        for (int i = 0; i < num_classes; ++i) n += at(i, i);
        return n;
    }
};

ConfusionMatrix confusion(const std::vector<int>& preds, const std::vector<int>& refs, int num_classes);

double oa(const ConfusionMatrix& cm);
// Classes with no reference samples are excluded from the mean; their ids
// (1-based) are appended to *excluded when given.
double aa(const ConfusionMatrix& cm, std::vector<int>* excluded = nullptr);
double kappa(const ConfusionMatrix& cm);

struct EvalReport {
    double oa = 0.0;
    double aa = 0.0;
    double kappa = 0.0;
    std::vector<double> per_class;   // NaN for classes absent from the reference
    std::vector<int> excluded_classes;
    std::int64_t samples = 0;
};

EvalReport evaluate_predictions(const std::vector<int>& preds, const std::vector<int>& refs,
                                int num_classes);

struct ScenePrediction {
    LabelMap predictions;
    bool has_report = false;
    EvalReport report;
    double extract_seconds = 0.0;
    double forward_seconds = 0.0;
};

// Classifies every pixel (or only labeled pixels) of the cube with the given
// parameters. Argmax ties break toward the lowest class id. A report is
// produced when reference labels are supplied.
ScenePrediction predict_scene(const HsiCube& cube, const LabelMap* refs, const ModelConfig& cfg,
                              const ModelParamsF& params, int batch, bool labeled_only);

struct AblationRow {
    std::string name;
    bool use_msfe = true, use_vit = true, use_mamba = true;
    std::int64_t param_count = 0;
    EvalReport report;
};

// Trains and evaluates the four paper variants (full, w/o MS_FE, w/o ViT,
// w/o Mamba) under identical seeds and data.
std::vector<AblationRow> ablation_suite(const ModelConfig& base, const PatchSet& data,
                                        const SplitResult& split, const TrainSchedule& schedule,
                                        int workers = 1);

} // namespace cvm
