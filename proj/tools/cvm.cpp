// cvm: command-line pipeline around the ConvViTMamba library.
// Every subcommand reads one JSON config, writes its artifacts under the run
// directory, and exits non-zero with a single-line "error: kind: message"
// diagnostic on failure. Timestamps and wall times live only in meta.json so
// re-runs with identical inputs reproduce every other artifact byte-for-byte.

#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "cvm/config.hpp"
#include "cvm/conv.hpp"
#include "cvm/gradcheck.hpp"
#include "cvm/hsi_io.hpp"
#include "cvm/metrics.hpp"
#include "cvm/model.hpp"
#include "cvm/ops.hpp"
#include "cvm/preprocess.hpp"
#include "cvm/synthetic.hpp"
#include "cvm/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommonFlags {
    std::string config_path;
    std::string out_dir;
    std::uint64_t seed = 0;
    bool seed_set = false;
    int workers = 0;
};

void add_common(CLI::App* cmd, CommonFlags& flags, bool config_required = true) {
    auto* copt = cmd->add_option("--config", flags.config_path, "pipeline config JSON");
    if (config_required) copt->required();
    cmd->add_option("--out", flags.out_dir, "output directory (overrides run.output_dir)");
    cmd->add_option("--seed", flags.seed, "seed (overrides train.seed)")->each([&](const std::string&) {
        flags.seed_set = true;
    });
    cmd->add_option("--workers", flags.workers, "worker pool size (overrides run.workers)");
}

cvm::PipelineConfig load_config(const CommonFlags& flags) {
    cvm::PipelineConfig cfg = cvm::load_pipeline_config(flags.config_path);
    if (!flags.out_dir.empty()) cfg.run.output_dir = flags.out_dir;
    if (flags.seed_set) cfg.train.seed = flags.seed;
    if (flags.workers > 0) cfg.run.workers = flags.workers;
    return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
    cvm::write_file(path.string(), text.data(), text.size());
}

fs::path prepare_run_dir(const cvm::PipelineConfig& cfg) {
    fs::path dir(cfg.run.output_dir);
    fs::create_directories(dir);
    write_text(dir / "resolved_config.json", cvm::pipeline_config_json(cfg));
    return dir;
}

void write_meta(const fs::path& dir, json extra) {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
    extra["finished_at"] = buf;
    write_text(dir / "meta.json", extra.dump(2) + "\n");
}

struct Dataset {
    cvm::HsiCube reduced;
    cvm::LabelMap labels;
    cvm::PcaModel pca;
    cvm::PatchSet patches;
    cvm::SplitResult split;
};

// cube -> PCA -> patches -> deterministic split, shared by most subcommands.
Dataset prepare_dataset(cvm::PipelineConfig& cfg) {
    Dataset ds;
    cvm::HsiCube raw = cvm::read_cube(cfg.data.cube);
    ds.labels = cvm::read_labels(cfg.data.labels);
    if (cfg.model.num_classes == 0) cfg.model.num_classes = ds.labels.num_classes;
    ds.pca = cvm::pca_fit(raw, cfg.data.pca_bands, cfg.data.pca_stride);
    ds.reduced = cvm::pca_apply(raw, ds.pca);
    ds.patches = cvm::extract_patches(ds.reduced, ds.labels, cfg.data.patch_size);

    cvm::SplitSpec spec;
    spec.seed = cfg.train.seed;
    spec.val_fraction = cfg.val_fraction;
    spec.train_fraction = cfg.data.train_fraction;
    if (!cfg.data.train_mask.empty()) {
        cvm::LabelMap mask = cvm::read_labels(cfg.data.train_mask);
        ds.split = cvm::split(ds.patches, spec, &mask);
    } else {
        ds.split = cvm::split(ds.patches, spec, nullptr);
    }
    return ds;
}

json report_json(const cvm::EvalReport& rep) {
    json per = json::array();
    for (double v : rep.per_class) {
        if (std::isnan(v)) per.push_back(nullptr);
        else per.push_back(v);
    }
    return json{{"oa", rep.oa},
                {"aa", rep.aa},
                {"kappa", rep.kappa},
                {"per_class", per},
                {"excluded_classes", rep.excluded_classes},
                {"samples", rep.samples}};
}

json split_counts(const cvm::SplitResult& split) {
    return json{{"train", split.train_idx.size()},
                {"val", split.val_idx.size()},
                {"test", split.test_idx.size()},
                {"small_classes", split.small_classes}};
}

std::vector<int> predict_indices(const cvm::ModelConfig& cfg, const cvm::ModelParamsF& params,
                                 const cvm::PatchSet& data, const std::vector<int>& idx, int batch) {
    std::vector<int> preds;
    preds.reserve(idx.size());
    for (std::size_t from = 0; from < idx.size(); from += static_cast<std::size_t>(batch)) {
        const std::size_t count = std::min(static_cast<std::size_t>(batch), idx.size() - from);
        cvm::Tensorf b = cvm::gather_patches(data, idx, from, count);
        auto bp = cvm::argmax_classes(cvm::forward(b, params, cfg));
        preds.insert(preds.end(), bp.begin(), bp.end());
    }
    return preds;
}

int cmd_make_synthetic(const cvm::SyntheticSpec& spec, const std::string& out_dir) {
    fs::path dir(out_dir);
    fs::create_directories(dir);
    cvm::SyntheticScene scene = cvm::make_synthetic(spec);
    cvm::write_cube(scene.cube, (dir / "cube.hsi").string());
    cvm::write_labels(scene.labels, (dir / "labels.lbl").string());

    json palette;
    for (const auto& [label, rgb] : cvm::default_palette(spec.classes))
        palette[std::to_string(label)] = {rgb[0], rgb[1], rgb[2]};
    write_text(dir / "palette.json", palette.dump(2) + "\n");

    json cfg{{"data",
              {{"cube", (dir / "cube.hsi").string()},
               {"labels", (dir / "labels.lbl").string()},
               {"patch_size", 7},
               {"pca_bands", std::min(8, spec.bands)},
               {"train_fraction", 0.5}}},
             {"model", {{"num_classes", spec.classes}}},
             {"train", {{"max_epochs", 60}, {"seed", spec.seed}}},
             {"eval", {{"palette", (dir / "palette.json").string()}}},
             {"run", {{"output_dir", (dir / "run").string()}}}};
    write_text(dir / "config.json", cfg.dump(2) + "\n");

    std::cout << "synthetic scene: " << spec.height << "x" << spec.width << "x" << spec.bands
              << ", K=" << spec.classes << ", labeled=" << scene.labels.labeled_count() << ", wrote "
              << (dir / "config.json").string() << "\n";
    return 0;
}

int cmd_pca_fit(const CommonFlags& flags) {
    cvm::PipelineConfig cfg = load_config(flags);
    fs::path dir = prepare_run_dir(cfg);
    cvm::HsiCube raw = cvm::read_cube(cfg.data.cube);
    cvm::PcaModel pca = cvm::pca_fit(raw, cfg.data.pca_bands, cfg.data.pca_stride);
    cvm::save_checkpoint(cvm::pca_to_tensors(pca), cvm::CheckpointMeta{}, (dir / "pca.ckpt").string());
    double total = 0.0, kept = 0.0;
    auto full = cvm::pca_fit(raw, raw.bands, cfg.data.pca_stride);
    for (float v : full.eigenvalues) total += v;
    for (float v : pca.eigenvalues) kept += v;
    std::cout << "pca: " << raw.bands << " -> " << cfg.data.pca_bands << " bands, explained variance "
              << (total > 0 ? kept / total : 1.0) << "\n";
    write_meta(dir, {});
    return 0;
}

int cmd_preprocess(const CommonFlags& flags) {
    cvm::PipelineConfig cfg = load_config(flags);
    fs::path dir = prepare_run_dir(cfg);
    Dataset ds = prepare_dataset(cfg);
    cvm::save_checkpoint(cvm::pca_to_tensors(ds.pca), cvm::CheckpointMeta{}, (dir / "pca.ckpt").string());
    cvm::write_cube(ds.reduced, (dir / "cube_pca.hsi").string());

    json tags = json::array();
    for (auto t : ds.split.assignment)
        tags.push_back(t == cvm::SplitTag::Train ? "train" : (t == cvm::SplitTag::Val ? "val" : "test"));
    json splits{{"counts", split_counts(ds.split)}, {"assignment", tags}};
    write_text(dir / "splits.json", splits.dump() + "\n");
    std::cout << "preprocess: " << ds.patches.count() << " patches ("
              << ds.split.train_idx.size() << " train / " << ds.split.val_idx.size() << " val / "
              << ds.split.test_idx.size() << " test)\n";
    write_meta(dir, {});
    return 0;
}

int cmd_train(const CommonFlags& flags) {
    cvm::PipelineConfig cfg = load_config(flags);
    fs::path dir = prepare_run_dir(cfg);
    const auto t0 = std::chrono::steady_clock::now();
    Dataset ds = prepare_dataset(cfg);
    cvm::TrainResult tr = cvm::train(cfg.model, ds.patches, ds.split, cfg.train);

    cvm::save_checkpoint(tr.best_params.items, tr.best_meta, (dir / "best.ckpt").string());
    cvm::save_checkpoint(cvm::pca_to_tensors(ds.pca), cvm::CheckpointMeta{}, (dir / "pca.ckpt").string());
    std::string log_text;
    for (const auto& e : tr.log) {
        json line{{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_oa", e.val_oa}, {"lr", e.lr}};
        log_text += line.dump() + "\n";
    }
    write_text(dir / "train_log.jsonl", log_text);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << "train: best val OA " << tr.best_meta.val_accuracy << " at epoch "
              << tr.best_meta.epoch << " (" << tr.log.size() << " epochs)\n";
    write_meta(dir, {{"train_seconds", secs}});
    return 0;
}

int cmd_evaluate(const CommonFlags& flags, const std::string& checkpoint,
                 const std::string& partition) {
    cvm::PipelineConfig cfg = load_config(flags);
    fs::path dir = prepare_run_dir(cfg);
    Dataset ds = prepare_dataset(cfg);
    const std::string ckpt = checkpoint.empty() ? (dir / "best.ckpt").string() : checkpoint;
    auto [tensors, meta] = cvm::load_checkpoint(ckpt);
    cvm::ModelParamsF params = cvm::params_from_tensors(cfg.model, tensors);

    const std::vector<int>* idx = &ds.split.test_idx;
    if (partition == "train") idx = &ds.split.train_idx;
    else if (partition == "val") idx = &ds.split.val_idx;
    else if (partition != "test") throw cvm::ConfigError("unknown partition \"" + partition + "\"");
    if (idx->empty()) throw cvm::ContractError("partition \"" + partition + "\" is empty");

    auto preds = predict_indices(cfg.model, params, ds.patches, *idx, cfg.eval.batch);
    std::vector<int> refs;
    for (int i : *idx) refs.push_back(ds.patches.labels[static_cast<std::size_t>(i)]);
    cvm::EvalReport rep = cvm::evaluate_predictions(preds, refs, cfg.model.num_classes);

    json out = report_json(rep);
    out["partition"] = partition;
    out["checkpoint_val_oa"] = meta.val_accuracy;
    write_text(dir / ("eval_" + partition + ".json"), out.dump(2) + "\n");
    std::cout << "evaluate[" << partition << "]: OA " << rep.oa << "  AA " << rep.aa << "  kappa "
              << rep.kappa << "\n";
    write_meta(dir, {});
    return 0;
}

int cmd_predict_map(const CommonFlags& flags, const std::string& checkpoint) {
    cvm::PipelineConfig cfg = load_config(flags);
    fs::path dir = prepare_run_dir(cfg);
    cvm::HsiCube raw = cvm::read_cube(cfg.data.cube);
    cvm::LabelMap labels = cvm::read_labels(cfg.data.labels);
    if (cfg.model.num_classes == 0) cfg.model.num_classes = labels.num_classes;

    const std::string ckpt = checkpoint.empty() ? (dir / "best.ckpt").string() : checkpoint;
    auto [tensors, meta] = cvm::load_checkpoint(ckpt);
    cvm::ModelParamsF params = cvm::params_from_tensors(cfg.model, tensors);
    auto [pca_tensors, pca_meta] = cvm::load_checkpoint((dir / "pca.ckpt").string());
    cvm::PcaModel pca = cvm::pca_from_tensors(pca_tensors);
    cvm::HsiCube reduced = cvm::pca_apply(raw, pca);

    cvm::ScenePrediction sp = cvm::predict_scene(reduced, &labels, cfg.model, params, cfg.eval.batch,
                                                 !cfg.eval.full_scene);
    cvm::Palette palette = cfg.eval.palette.empty() ? cvm::default_palette(cfg.model.num_classes)
                                                    : cvm::load_palette(cfg.eval.palette);
    auto ppm = cvm::render_map(sp.predictions, palette);
    cvm::write_file((dir / "map.ppm").string(), ppm.data(), ppm.size());
    cvm::write_labels(sp.predictions, (dir / "predictions.lbl").string());
    if (sp.has_report) write_text(dir / "map_report.json", report_json(sp.report).dump(2) + "\n");

    std::cout << "predict-map: " << (cfg.eval.full_scene ? "full scene" : "labeled pixels");
    if (sp.has_report) std::cout << ", OA " << sp.report.oa;
    std::cout << "\n";
    write_meta(dir, {{"extract_seconds", sp.extract_seconds},
                     {"forward_seconds", sp.forward_seconds},
                     {"inference_seconds", sp.extract_seconds + sp.forward_seconds}});
    return 0;
}

// Double-precision finite-difference check of the full model loss on a small
// random batch; exit code 0 iff the max relative error stays under 1e-3.
int cmd_gradcheck(const CommonFlags& flags, int samples, double step) {
    cvm::PipelineConfig cfg = load_config(flags);
    cvm::ModelConfig mc = cfg.model;
    if (mc.num_classes == 0) mc.num_classes = 3;
    mc.dropout = 0.0; // the checked function must be deterministic
    mc.validate();

    cvm::Rng rng(cfg.train.seed + 17);
    cvm::ModelParamsD params = cvm::init_params(mc, cfg.train.seed).cast<double>();
    const int n = 2;
    cvm::Tensord batch(cvm::Shape{n, mc.patch_size, mc.patch_size, mc.input_bands});
    for (auto& v : batch.data()) v = rng.normal();
    std::vector<int> labels(n);
    for (auto& l : labels) l = 1 + static_cast<int>(rng.uniform_index(mc.num_classes));

    std::vector<cvm::Tensord> leaves{batch};
    for (auto& kv : params.items) leaves.push_back(kv.second);
    auto loss_fn = [&](cvm::Taped* tape) {
        return cvm::cross_entropy(cvm::forward(batch, params, mc, tape), labels, tape);
    };
    const double err = cvm::gradcheck_leaves(loss_fn, leaves, samples, step, rng);
    std::cout << "gradcheck: max relative error " << err << " over " << samples << " coordinates\n";
    return err < 1e-3 ? 0 : 1;
}

int cmd_params(const CommonFlags& flags) {
    cvm::PipelineConfig cfg = load_config(flags);
    cvm::ModelConfig mc = cfg.model;
    if (mc.num_classes == 0) {
        if (!cfg.data.labels.empty() && fs::exists(cfg.data.labels))
            mc.num_classes = cvm::read_labels(cfg.data.labels).num_classes;
        else
            mc.num_classes = 2;
    }
    mc.validate();
    const auto flops = cvm::count_flops(mc);
    json out{{"parameters", cvm::count_params(mc)},
             {"flops", flops.flops},
             {"macs", flops.macs},
             {"patch_size", mc.patch_size},
             {"pca_bands", mc.input_bands},
             {"num_classes", mc.num_classes}};
    std::cout << out.dump() << "\n";
    return 0;
}

int cmd_ablate(const CommonFlags& flags) {
    cvm::PipelineConfig cfg = load_config(flags);
    fs::path dir = prepare_run_dir(cfg);
    Dataset ds = prepare_dataset(cfg);
    auto rows = cvm::ablation_suite(cfg.model, ds.patches, ds.split, cfg.train, cfg.run.workers);
    json table = json::array();
    for (const auto& row : rows) {
        json r{{"name", row.name},
               {"use_msfe", row.use_msfe},
               {"use_vit", row.use_vit},
               {"use_mamba", row.use_mamba},
               {"parameters", row.param_count},
               {"report", report_json(row.report)}};
        table.push_back(r);
        std::cout << row.name << ": params " << row.param_count << ", OA " << row.report.oa
                  << ", AA " << row.report.aa << ", kappa " << row.report.kappa << "\n";
    }
    write_text(dir / "ablation.json", table.dump(2) + "\n");
    write_meta(dir, {});
    return 0;
}

int cmd_multi_run(const CommonFlags& flags) {
    cvm::PipelineConfig cfg = load_config(flags);
    fs::path dir = prepare_run_dir(cfg);
    Dataset ds = prepare_dataset(cfg);
    cvm::RunStats stats = cvm::multi_run(cfg.model, ds.patches, ds.split, cfg.train, cfg.run.seeds);
    json runs = json::array();
    for (const auto& r : stats.runs) runs.push_back({{"oa", r.oa}, {"aa", r.aa}, {"kappa", r.kappa}});
    json out{{"runs", runs},
             {"mean", {{"oa", stats.mean.oa}, {"aa", stats.mean.aa}, {"kappa", stats.mean.kappa}}},
             {"std", {{"oa", stats.stddev.oa}, {"aa", stats.stddev.aa}, {"kappa", stats.stddev.kappa}}},
             {"std_defined", stats.std_defined}};
    write_text(dir / "multi_run.json", out.dump(2) + "\n");
    std::cout << "multi-run: OA " << stats.mean.oa << " +/- " << stats.stddev.oa << " over "
              << stats.runs.size() << " runs\n";
    write_meta(dir, {});
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"ConvViTMamba hyperspectral classification pipeline"};
    app.require_subcommand(1);

    CommonFlags flags;

    cvm::SyntheticSpec synth;
    std::string synth_out = "synthetic";
    auto* mk = app.add_subcommand("make-synthetic", "generate a seeded synthetic scene");
    mk->add_option("--height", synth.height);
    mk->add_option("--width", synth.width);
    mk->add_option("--bands", synth.bands);
    mk->add_option("--classes", synth.classes);
    mk->add_option("--labeled", synth.labeled);
    mk->add_option("--block", synth.block);
    mk->add_option("--noise", synth.noise);
    mk->add_option("--seed", synth.seed);
    mk->add_option("--out", synth_out);

    auto* pca = app.add_subcommand("pca-fit", "fit the PCA spectral reduction");
    add_common(pca, flags);
    auto* prep = app.add_subcommand("preprocess", "PCA + patches + deterministic split");
    add_common(prep, flags);
    auto* train = app.add_subcommand("train", "train and keep the best-validation checkpoint");
    add_common(train, flags);

    std::string checkpoint, partition = "test";
    auto* eval = app.add_subcommand("evaluate", "evaluate a checkpoint on a partition");
    add_common(eval, flags);
    eval->add_option("--checkpoint", checkpoint, "checkpoint path (default <out>/best.ckpt)");
    eval->add_option("--partition", partition, "train|val|test");

    auto* pmap = app.add_subcommand("predict-map", "classify the scene and render a map");
    add_common(pmap, flags);
    pmap->add_option("--checkpoint", checkpoint, "checkpoint path (default <out>/best.ckpt)");

    int gc_samples = 25;
    double gc_step = 1e-3;
    auto* gc = app.add_subcommand("gradcheck", "finite-difference check of the full model");
    add_common(gc, flags);
    gc->add_option("--samples", gc_samples);
    gc->add_option("--step", gc_step);

    auto* par = app.add_subcommand("params", "print parameter/FLOPs/MACs counts");
    add_common(par, flags);
    auto* abl = app.add_subcommand("ablate", "train and evaluate the four component variants");
    add_common(abl, flags);
    auto* mrun = app.add_subcommand("multi-run", "repeat training over run.seeds");
    add_common(mrun, flags);

    CLI11_PARSE(app, argc, argv);

    try {
        if (mk->parsed()) return cmd_make_synthetic(synth, synth_out);
        if (pca->parsed()) return cmd_pca_fit(flags);
        if (prep->parsed()) return cmd_preprocess(flags);
        if (train->parsed()) return cmd_train(flags);
        if (eval->parsed()) return cmd_evaluate(flags, checkpoint, partition);
        if (pmap->parsed()) return cmd_predict_map(flags, checkpoint);
        if (gc->parsed()) return cmd_gradcheck(flags, gc_samples, gc_step);
        if (par->parsed()) return cmd_params(flags);
        if (abl->parsed()) return cmd_ablate(flags);
        if (mrun->parsed()) return cmd_multi_run(flags);
    } catch (const cvm::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: internal: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
