#pragma once

#include <cstdint>
#include <limits>
#include <vector>

#include "cvm/hsi_io.hpp"
#include "cvm/model.hpp"
#include "cvm/preprocess.hpp"

namespace cvm {

// Bias-corrected Adam; moments are stored per parameter tensor in the order
// of the parameter tree.
struct AdamState {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    long long step_count = 0;
    std::vector<std::vector<float>> m, v;

    static AdamState init(const ModelParamsF& params, double lr);
};

// One update from the gradients currently on the parameter tensors. Aborts
// (and leaves everything untouched) if any gradient is non-finite.
void adam_step(ModelParamsF& params, AdamState& state);

// Keras-style reduce-on-plateau: the wait counter grows on every epoch whose
// accuracy does not strictly improve the best; hitting `patience` halves the
// rate (clamped at min_lr) and resets the counter.
struct PlateauScheduler {
    double lr;
    double factor;
    int patience;
    double min_lr;
    double best = -std::numeric_limits<double>::infinity();
    int wait = 0;

    PlateauScheduler(double initial_lr, double factor, int patience, double min_lr)
        : lr(initial_lr), factor(factor), patience(patience), min_lr(min_lr) {}

    double update(double val_accuracy) {
        if (val_accuracy > best) {
            best = val_accuracy;
            wait = 0;
        } else if (++wait >= patience) {
            lr = std::max(lr * factor, min_lr);
            wait = 0;
        }
        return lr;
    }
};

struct TrainSchedule {
    int max_epochs = 100;
    int batch_size = 32;
    double initial_lr = 1e-3;
    int plateau_patience = 10;
    double lr_factor = 0.5;
    double min_lr = 1e-5;
    std::uint64_t seed = 0;
};

// Replays a per-epoch validation accuracy history and returns the learning
// rate in effect after the last epoch.
double scheduler_update(const std::vector<double>& history, const TrainSchedule& schedule);

struct EpochLog {
    int epoch = 0;        // 0-based
    double train_loss = 0.0;
    double val_oa = 0.0;
    double lr = 0.0;      // rate in effect during this epoch
};

struct TrainResult {
    ModelParamsF best_params;
    CheckpointMeta best_meta; // epoch and validation OA of the kept snapshot
    ModelParamsF final_params; // last-epoch state, for convergence probes
    std::vector<EpochLog> log;
};

// Full optimisation loop: seeded shuffles, batched cross-entropy + Adam,
// per-epoch validation OA, plateau scheduling, best-validation snapshot.
TrainResult train(const ModelConfig& cfg, const PatchSet& data, const SplitResult& split,
                  const TrainSchedule& schedule);

struct RunMetrics {
    double oa = 0.0, aa = 0.0, kappa = 0.0;
};

struct RunStats {
    std::vector<RunMetrics> runs;
    RunMetrics mean;
    RunMetrics stddev; // sample (n-1) convention; zero when undefined
    bool std_defined = false;
};

// Mean and sample (n-1) standard deviation over per-run metrics; R == 1 is
// reported as zero deviation with std_defined == false.
RunStats aggregate_runs(std::vector<RunMetrics> runs);

// R independent trainings (one per seed) evaluated on the test partition.
RunStats multi_run(const ModelConfig& cfg, const PatchSet& data, const SplitResult& split,
                   const TrainSchedule& base_schedule, const std::vector<std::uint64_t>& seeds);

// Helpers shared with evaluation code.
Tensorf gather_patches(const PatchSet& data, const std::vector<int>& order, std::size_t from,
                       std::size_t count);
std::vector<int> argmax_classes(const Tensorf& logits);

} // namespace cvm
