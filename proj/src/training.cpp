#include "cvm/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cvm/metrics.hpp"
#include "cvm/ops.hpp"
#include "cvm/rng.hpp"

namespace cvm {

AdamState AdamState::init(const ModelParamsF& params, double lr) {
    AdamState s;
    s.lr = lr;
    for (const auto& kv : params.items) {
        s.m.emplace_back(kv.second.data().size(), 0.0f);
        s.v.emplace_back(kv.second.data().size(), 0.0f);
    }
    return s;
}

void adam_step(ModelParamsF& params, AdamState& state) {
    if (state.m.size() != params.items.size())
        throw ContractError("adam state does not match parameter tree");
    for (const auto& [name, t] : params.items) {
        if (!t.has_grad())
            throw ContractError("adam_step: gradient missing for \"" + name + "\"");
        for (float g : t.node()->grad)
            if (!std::isfinite(g))
                throw NumericError("non-finite gradient in \"" + name + "\"");
    }
    state.step_count += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step_count));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step_count));
    for (std::size_t i = 0; i < params.items.size(); ++i) {
        auto& t = params.items[i].second;
        const auto& g = t.node()->grad;
        auto& m = state.m[i];
        auto& v = state.v[i];
        for (std::size_t j = 0; j < g.size(); ++j) {
            const double gj = g[j];
            const double mj = state.beta1 * m[j] + (1.0 - state.beta1) * gj;
            const double vj = state.beta2 * v[j] + (1.0 - state.beta2) * gj * gj;
            m[j] = static_cast<float>(mj);
            v[j] = static_cast<float>(vj);
            const double mhat = mj / bc1;
            const double vhat = vj / bc2;
            t[j] = static_cast<float>(t[j] - state.lr * mhat / (std::sqrt(vhat) + state.eps));
        }
    }
}

double scheduler_update(const std::vector<double>& history, const TrainSchedule& schedule) {
    if (history.empty()) throw ContractError("scheduler_update: empty history");
    PlateauScheduler sched(schedule.initial_lr, schedule.lr_factor, schedule.plateau_patience,
                           schedule.min_lr);
    double lr = schedule.initial_lr;
    for (double acc : history) lr = sched.update(acc);
    return lr;
}

Tensorf gather_patches(const PatchSet& data, const std::vector<int>& order, std::size_t from,
                       std::size_t count) {
    const int S = data.patch_size, B = data.bands;
    const std::size_t stride = static_cast<std::size_t>(S) * S * B;
    Tensorf batch(Shape{static_cast<int>(count), S, S, B});
    for (std::size_t i = 0; i < count; ++i)
        std::copy_n(data.patches.data().data() + static_cast<std::size_t>(order[from + i]) * stride,
                    stride, batch.data().data() + i * stride);
    return batch;
}

std::vector<int> argmax_classes(const Tensorf& logits) {
    const int N = logits.dim(0), K = logits.dim(1);
    std::vector<int> out(static_cast<std::size_t>(N));
    for (int i = 0; i < N; ++i) {
        const float* row = logits.data().data() + static_cast<std::size_t>(i) * K;
        int best = 0;
        for (int k = 1; k < K; ++k)
            if (row[k] > row[best]) best = k; // ties keep the lowest id
        out[static_cast<std::size_t>(i)] = best + 1;
    }
    return out;
}

namespace {

double subset_oa(const ModelConfig& cfg, const ModelParamsF& params, const PatchSet& data,
                 const std::vector<int>& idx, int batch_size) {
    std::int64_t hit = 0;
    for (std::size_t from = 0; from < idx.size(); from += static_cast<std::size_t>(batch_size)) {
        const std::size_t count = std::min(static_cast<std::size_t>(batch_size), idx.size() - from);
        Tensorf batch = gather_patches(data, idx, from, count);
        Tensorf logits = forward(batch, params, cfg);
        auto preds = argmax_classes(logits);
        for (std::size_t i = 0; i < count; ++i)
            if (preds[i] == data.labels[static_cast<std::size_t>(idx[from + i])]) ++hit;
    }
    return static_cast<double>(hit) / static_cast<double>(idx.size());
}

} // namespace

TrainResult train(const ModelConfig& cfg, const PatchSet& data, const SplitResult& split,
                  const TrainSchedule& schedule) {
    cfg.validate();
    if (split.train_idx.empty() || split.val_idx.empty())
        throw ContractError("train requires non-empty train and val partitions");
    if (schedule.max_epochs < 1 || schedule.batch_size < 1)
        throw ConfigError("max_epochs and batch_size must be >= 1");

    ModelParamsF params = init_params(cfg, schedule.seed);
    params.set_requires_grad(true);
    AdamState adam = AdamState::init(params, schedule.initial_lr);
    PlateauScheduler sched(schedule.initial_lr, schedule.lr_factor, schedule.plateau_patience,
                           schedule.min_lr);
    Rng dropout_rng(schedule.seed ^ 0x9e3779b97f4a7c15ull);

    TrainResult result;
    double best_oa = -1.0;

    for (int epoch = 0; epoch < schedule.max_epochs; ++epoch) {
        std::vector<int> order = split.train_idx;
        Rng shuffle_rng(schedule.seed + static_cast<std::uint64_t>(epoch));
        shuffle_rng.shuffle(order);

        double loss_sum = 0.0;
        for (std::size_t from = 0; from < order.size();
             from += static_cast<std::size_t>(schedule.batch_size)) {
            const std::size_t count =
                std::min(static_cast<std::size_t>(schedule.batch_size), order.size() - from);
            Tensorf batch = gather_patches(data, order, from, count);
            std::vector<int> labels(count);
            for (std::size_t i = 0; i < count; ++i)
                labels[i] = data.labels[static_cast<std::size_t>(order[from + i])];

            Tapef tape;
            Tensorf logits = forward(batch, params, cfg, &tape, &dropout_rng);
            Tensorf loss = cross_entropy(logits, labels, &tape);
            if (!std::isfinite(loss.item()))
                throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + " batch " +
                                   std::to_string(from / schedule.batch_size));
            tape.backward(loss);
            adam.lr = sched.lr;
            adam_step(params, adam);
            tape.clear();
            for (auto& kv : params.items) kv.second.zero_grad();
            loss_sum += static_cast<double>(loss.item()) * static_cast<double>(count);
        }

        const double val_oa = subset_oa(cfg, params, data, split.val_idx, schedule.batch_size);
        if (val_oa > best_oa) {
            best_oa = val_oa;
            result.best_params.items.clear();
            for (const auto& kv : params.items)
                result.best_params.items.emplace_back(kv.first, kv.second.clone());
            result.best_meta.epoch = static_cast<std::uint32_t>(epoch);
            result.best_meta.val_accuracy = val_oa;
        }
        result.log.push_back(EpochLog{epoch, loss_sum / static_cast<double>(order.size()), val_oa,
                                      sched.lr});
        sched.update(val_oa);
    }
    for (const auto& kv : params.items)
        result.final_params.items.emplace_back(kv.first, kv.second.clone());
    return result;
}

RunStats aggregate_runs(std::vector<RunMetrics> runs) {
    if (runs.empty()) throw ContractError("aggregate_runs requires at least one run");
    RunStats stats;
    stats.runs = std::move(runs);
    const std::size_t r = stats.runs.size();
    for (const auto& m : stats.runs) {
        stats.mean.oa += m.oa / static_cast<double>(r);
        stats.mean.aa += m.aa / static_cast<double>(r);
        stats.mean.kappa += m.kappa / static_cast<double>(r);
    }
    if (r >= 2) {
        stats.std_defined = true;
        double soa = 0, saa = 0, ska = 0;
        for (const auto& m : stats.runs) {
            soa += (m.oa - stats.mean.oa) * (m.oa - stats.mean.oa);
            saa += (m.aa - stats.mean.aa) * (m.aa - stats.mean.aa);
            ska += (m.kappa - stats.mean.kappa) * (m.kappa - stats.mean.kappa);
        }
        stats.stddev.oa = std::sqrt(soa / static_cast<double>(r - 1));
        stats.stddev.aa = std::sqrt(saa / static_cast<double>(r - 1));
        stats.stddev.kappa = std::sqrt(ska / static_cast<double>(r - 1));
    }
    return stats;
}

RunStats multi_run(const ModelConfig& cfg, const PatchSet& data, const SplitResult& split,
                   const TrainSchedule& base_schedule, const std::vector<std::uint64_t>& seeds) {
    if (seeds.empty()) throw ContractError("multi_run requires at least one seed");
    if (split.test_idx.empty()) throw ContractError("multi_run requires a non-empty test partition");

    std::vector<RunMetrics> runs;
    for (std::uint64_t seed : seeds) {
        TrainSchedule sched = base_schedule;
        sched.seed = seed;
        TrainResult tr = train(cfg, data, split, sched);

        std::vector<int> preds, refs;
        for (std::size_t from = 0; from < split.test_idx.size();
             from += static_cast<std::size_t>(sched.batch_size)) {
            const std::size_t count =
                std::min(static_cast<std::size_t>(sched.batch_size), split.test_idx.size() - from);
            Tensorf batch = gather_patches(data, split.test_idx, from, count);
            auto batch_preds = argmax_classes(forward(batch, tr.best_params, cfg));
            preds.insert(preds.end(), batch_preds.begin(), batch_preds.end());
            for (std::size_t i = 0; i < count; ++i)
                refs.push_back(data.labels[static_cast<std::size_t>(split.test_idx[from + i])]);
        }
        EvalReport rep = evaluate_predictions(preds, refs, cfg.num_classes);
        runs.push_back(RunMetrics{rep.oa, rep.aa, rep.kappa});
    }
    return aggregate_runs(std::move(runs));
}

} // namespace cvm
