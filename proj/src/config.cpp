#include "cvm/config.hpp"

#include <cctype>
#include <cstdlib>

#include <json.hpp>

#include "cvm/hsi_io.hpp"

namespace cvm {

namespace {

using nlohmann::json;

json defaults_json() {
    PipelineConfig d;
    return json{
        {"data",
         {{"cube", d.data.cube},
          {"labels", d.data.labels},
          {"train_mask", d.data.train_mask},
          {"patch_size", d.data.patch_size},
          {"pca_bands", d.data.pca_bands},
          {"pca_stride", d.data.pca_stride},
          {"train_fraction", d.data.train_fraction}}},
        {"model",
         {{"ms_filters", d.model.ms_filters},
          {"embed_dim", d.model.embed_dim},
          {"heads", d.model.heads},
          {"encoder_layers", d.model.encoder_layers},
          {"mlp_ratio", d.model.mlp_ratio},
          {"mamba_expand", d.model.mamba_expand},
          {"mamba_kernel", d.model.mamba_kernel},
          {"head_hidden", d.model.head_hidden},
          {"num_classes", 0},
          {"use_msfe", d.model.use_msfe},
          {"use_vit", d.model.use_vit},
          {"use_mamba", d.model.use_mamba},
          {"dropout", d.model.dropout}}},
        {"train",
         {{"max_epochs", d.train.max_epochs},
          {"batch_size", d.train.batch_size},
          {"initial_lr", d.train.initial_lr},
          {"plateau_patience", d.train.plateau_patience},
          {"lr_factor", d.train.lr_factor},
          {"min_lr", d.train.min_lr},
          {"seed", d.train.seed},
          {"val_fraction", d.val_fraction}}},
        {"eval",
         {{"palette", d.eval.palette}, {"full_scene", d.eval.full_scene}, {"batch", d.eval.batch}}},
        {"run",
         {{"seeds", d.run.seeds}, {"output_dir", d.run.output_dir}, {"workers", d.run.workers}}},
    };
}

void merge_checked(json& base, const json& user) {
    if (!user.is_object()) throw ConfigError("config root must be a JSON object");
    for (auto it = user.begin(); it != user.end(); ++it) {
        if (!base.contains(it.key())) throw ConfigError("unknown config section \"" + it.key() + "\"");
        if (!it.value().is_object())
            throw ConfigError("config section \"" + it.key() + "\" must be an object");
        json& section = base[it.key()];
        for (auto kv = it.value().begin(); kv != it.value().end(); ++kv) {
            if (!section.contains(kv.key()))
                throw ConfigError("unknown config key \"" + it.key() + "." + kv.key() + "\"");
            section[kv.key()] = kv.value();
        }
    }
}

void apply_env_overrides(json& cfg) {
    for (auto sec = cfg.begin(); sec != cfg.end(); ++sec) {
        for (auto kv = sec.value().begin(); kv != sec.value().end(); ++kv) {
            std::string var = "CVM_" + sec.key() + "_" + kv.key();
            for (auto& ch : var) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
            const char* value = std::getenv(var.c_str());
            if (!value) continue;
            json parsed;
            try {
                parsed = json::parse(value);
            } catch (const json::exception&) {
                parsed = std::string(value); // non-JSON text is taken as a string
            }
            kv.value() = parsed;
        }
    }
}

template <typename T>
T get(const json& section, const char* key) {
    try {
        return section.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config key \"") + key + "\": " + e.what());
    }
}

PipelineConfig from_json(const json& j) {
    PipelineConfig cfg;
    const json& data = j.at("data");
    cfg.data.cube = get<std::string>(data, "cube");
    cfg.data.labels = get<std::string>(data, "labels");
    cfg.data.train_mask = get<std::string>(data, "train_mask");
    cfg.data.patch_size = get<int>(data, "patch_size");
    cfg.data.pca_bands = get<int>(data, "pca_bands");
    cfg.data.pca_stride = get<int>(data, "pca_stride");
    cfg.data.train_fraction = get<double>(data, "train_fraction");

    const json& model = j.at("model");
    cfg.model.ms_filters = get<int>(model, "ms_filters");
    cfg.model.embed_dim = get<int>(model, "embed_dim");
    cfg.model.heads = get<int>(model, "heads");
    cfg.model.encoder_layers = get<int>(model, "encoder_layers");
    cfg.model.mlp_ratio = get<int>(model, "mlp_ratio");
    cfg.model.mamba_expand = get<double>(model, "mamba_expand");
    cfg.model.mamba_kernel = get<int>(model, "mamba_kernel");
    cfg.model.head_hidden = get<int>(model, "head_hidden");
    cfg.model.num_classes = get<int>(model, "num_classes");
    cfg.model.use_msfe = get<bool>(model, "use_msfe");
    cfg.model.use_vit = get<bool>(model, "use_vit");
    cfg.model.use_mamba = get<bool>(model, "use_mamba");
    cfg.model.dropout = get<double>(model, "dropout");

    const json& train = j.at("train");
    cfg.train.max_epochs = get<int>(train, "max_epochs");
    cfg.train.batch_size = get<int>(train, "batch_size");
    cfg.train.initial_lr = get<double>(train, "initial_lr");
    cfg.train.plateau_patience = get<int>(train, "plateau_patience");
    cfg.train.lr_factor = get<double>(train, "lr_factor");
    cfg.train.min_lr = get<double>(train, "min_lr");
    cfg.train.seed = get<std::uint64_t>(train, "seed");
    cfg.val_fraction = get<double>(train, "val_fraction");

    const json& eval = j.at("eval");
    cfg.eval.palette = get<std::string>(eval, "palette");
    cfg.eval.full_scene = get<bool>(eval, "full_scene");
    cfg.eval.batch = get<int>(eval, "batch");

    const json& run = j.at("run");
    cfg.run.seeds = get<std::vector<std::uint64_t>>(run, "seeds");
    cfg.run.output_dir = get<std::string>(run, "output_dir");
    cfg.run.workers = get<int>(run, "workers");

    cfg.sync_model_geometry();
    return cfg;
}

PipelineConfig load_from_document(const json& user) {
    json merged = defaults_json();
    merge_checked(merged, user);
    apply_env_overrides(merged);
    return from_json(merged);
}

} // namespace

PipelineConfig parse_pipeline_config(const std::string& json_text) {
    json user;
    try {
        user = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    return load_from_document(user);
}

PipelineConfig load_pipeline_config(const std::string& path) {
    auto bytes = read_file(path);
    json user;
    try {
        user = json::parse(bytes.begin(), bytes.end());
    } catch (const json::exception& e) {
        throw ConfigError("config \"" + path + "\" is not valid JSON: " + e.what());
    }
    return load_from_document(user);
}

std::string pipeline_config_json(const PipelineConfig& cfg) {
    json j{
        {"data",
         {{"cube", cfg.data.cube},
          {"labels", cfg.data.labels},
          {"train_mask", cfg.data.train_mask},
          {"patch_size", cfg.data.patch_size},
          {"pca_bands", cfg.data.pca_bands},
          {"pca_stride", cfg.data.pca_stride},
          {"train_fraction", cfg.data.train_fraction}}},
        {"model",
         {{"ms_filters", cfg.model.ms_filters},
          {"embed_dim", cfg.model.embed_dim},
          {"heads", cfg.model.heads},
          {"encoder_layers", cfg.model.encoder_layers},
          {"mlp_ratio", cfg.model.mlp_ratio},
          {"mamba_expand", cfg.model.mamba_expand},
          {"mamba_kernel", cfg.model.mamba_kernel},
          {"head_hidden", cfg.model.head_hidden},
          {"num_classes", cfg.model.num_classes},
          {"use_msfe", cfg.model.use_msfe},
          {"use_vit", cfg.model.use_vit},
          {"use_mamba", cfg.model.use_mamba},
          {"dropout", cfg.model.dropout}}},
        {"train",
         {{"max_epochs", cfg.train.max_epochs},
          {"batch_size", cfg.train.batch_size},
          {"initial_lr", cfg.train.initial_lr},
          {"plateau_patience", cfg.train.plateau_patience},
          {"lr_factor", cfg.train.lr_factor},
          {"min_lr", cfg.train.min_lr},
          {"seed", cfg.train.seed},
          {"val_fraction", cfg.val_fraction}}},
        {"eval",
         {{"palette", cfg.eval.palette},
          {"full_scene", cfg.eval.full_scene},
          {"batch", cfg.eval.batch}}},
        {"run",
         {{"seeds", cfg.run.seeds},
          {"output_dir", cfg.run.output_dir},
          {"workers", cfg.run.workers}}},
    };
    return j.dump(2) + "\n";
}

} // namespace cvm
