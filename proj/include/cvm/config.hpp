#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cvm/model.hpp"
#include "cvm/training.hpp"

namespace cvm {

struct DataConfig {
    std::string cube;
    std::string labels;
    std::string train_mask; // optional; empty means stratified random split
    int patch_size = 9;     // S
    int pca_bands = 20;     // B
    int pca_stride = 1;
    double train_fraction = 0.3; // per-class train pool when no mask is given
};

struct EvalSection {
    std::string palette; // optional palette JSON; empty uses the built-in one
    bool full_scene = false;
    int batch = 64;
};

struct RunSection {
    std::vector<std::uint64_t> seeds{0};
    std::string output_dir = "runs";
    int workers = 1;
};

// Resolved pipeline configuration. model.num_classes == 0 means "derive from
// the label file"; model patch/band extents always mirror the data section.
struct PipelineConfig {
    DataConfig data;
    ModelConfig model;
    TrainSchedule train;
    double val_fraction = 0.3;
    EvalSection eval;
    RunSection run;

    // Propagates the data-section geometry into the model config.
    void sync_model_geometry() {
        model.patch_size = data.patch_size;
        model.input_bands = data.pca_bands;
    }
};

// Loads a JSON config, applies CVM_<SECTION>_<KEY> environment overrides and
// fills defaults for every omitted key. Unknown keys are an error.
PipelineConfig load_pipeline_config(const std::string& path);

// Parses an in-memory JSON document (same rules, no file access).
PipelineConfig parse_pipeline_config(const std::string& json_text);

// Fully resolved echo of the configuration, suitable for byte-stable output.
std::string pipeline_config_json(const PipelineConfig& cfg);

} // namespace cvm
