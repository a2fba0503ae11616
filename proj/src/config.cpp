// SPDX-License-Identifier: Apache-2.0

#include "fedpeft/config.hpp"

#include <cstdio>
#include <fstream>

#include "fedpeft/rng.hpp"

namespace fedpeft {

using nlohmann::json;

namespace {

Family family_from(const std::string& s) {
    if (s == "mlp") return Family::mlp;
    if (s == "vit") return Family::vit;
    throw ConfigError("config: unknown model family '" + s + "'");
}

const char* family_name(Family f) { return f == Family::vit ? "vit" : "mlp"; }

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: bad value for '") + key + "': " + e.what());
    }
}

}  // namespace

SgdConfig default_sgd(ModeKind mode, bool dp_enabled) {
    SgdConfig cfg;
    cfg.weight_decay = 0.0001;
    cfg.batch_size = 64;
    if (dp_enabled) {
        switch (mode) {
            case ModeKind::full: cfg.learning_rate = 1e-4; break;
            case ModeKind::head: cfg.learning_rate = 5e-4; break;
            case ModeKind::bias: cfg.learning_rate = 1e-3; break;
            case ModeKind::adapter: cfg.learning_rate = 5e-4; break;
            case ModeKind::prompt: cfg.learning_rate = 3e-4; break;
        }
        return cfg;
    }
    switch (mode) {
        case ModeKind::full: cfg.learning_rate = 0.001; break;
        case ModeKind::head: cfg.learning_rate = 0.005; break;
        case ModeKind::bias: cfg.learning_rate = 0.01; break;
        case ModeKind::adapter: cfg.learning_rate = 0.005; break;
        case ModeKind::prompt: cfg.learning_rate = 0.01; break;
    }
    return cfg;
}

void ExperimentConfig::validate() const {
    if (precision != "f32" && precision != "f64")
        throw ConfigError("config: precision must be 'f32' or 'f64'");
    if (threads < 1) throw ConfigError("config: threads must be >= 1");
    if (clients < 1 || participants < 1 || participants > clients)
        throw ConfigError("config: need 1 <= participants <= clients");
    if (rounds < 1 || local_epochs < 1)
        throw ConfigError("config: rounds and local_epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("config: batch_size must be >= 1");
    if (data.alpha <= 0) throw ConfigError("config: data.alpha must be positive");
    if (data.sample_cap < 0) throw ConfigError("config: data.sample_cap must be >= 0");
    try {
        model.validate();
        mode.validate();
        dp.validate();
        if (data.source == DataConfig::Source::synthetic) data.synthetic.validate();
    } catch (const InputError& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    if (data.source == DataConfig::Source::idx && (data.idx_images.empty() || data.idx_labels.empty()))
        throw ConfigError("config: idx source needs data.idx_images and data.idx_labels");
    if (data.source == DataConfig::Source::csv && data.csv_path.empty())
        throw ConfigError("config: csv source needs data.csv_path");
    if (data.source == DataConfig::Source::synthetic &&
        data.synthetic.class_count != model.num_classes)
        throw ConfigError("config: synthetic class_count must equal model num_classes");
}

ExperimentConfig parse_config(const json& j) {
    ExperimentConfig cfg;
    cfg.seed = get_or<std::uint64_t>(j, "seed", cfg.seed);
    cfg.precision = get_or<std::string>(j, "precision", cfg.precision);
    cfg.threads = get_or<int>(j, "threads", cfg.threads);
    cfg.output = get_or<std::string>(j, "output", cfg.output);

    if (j.contains("model")) {
        const auto& m = j.at("model");
        cfg.model.family = family_from(get_or<std::string>(m, "family", "vit"));
        cfg.model.image_size = get_or<int>(m, "image_size", cfg.model.image_size);
        cfg.model.patch_size = get_or<int>(m, "patch_size", cfg.model.patch_size);
        cfg.model.embed_dim = get_or<int>(m, "embed_dim", cfg.model.embed_dim);
        cfg.model.mlp_hidden_dim = get_or<int>(m, "mlp_hidden_dim", cfg.model.mlp_hidden_dim);
        cfg.model.depth = get_or<int>(m, "depth", cfg.model.depth);
        cfg.model.num_heads = get_or<int>(m, "num_heads", cfg.model.num_heads);
        cfg.model.num_classes = get_or<int>(m, "num_classes", cfg.model.num_classes);
    }
    if (j.contains("mode")) {
        const auto& m = j.at("mode");
        cfg.mode.kind = mode_from_name(get_or<std::string>(m, "kind", "full"));
        cfg.mode.adapter_bottleneck = get_or<int>(m, "adapter_bottleneck", cfg.mode.adapter_bottleneck);
        cfg.mode.prompt_length = get_or<int>(m, "prompt_length", cfg.mode.prompt_length);
        cfg.mode.prompt_zero_init = get_or<bool>(m, "prompt_zero_init", cfg.mode.prompt_zero_init);
    }
    if (j.contains("federation")) {
        const auto& f = j.at("federation");
        cfg.clients = get_or<int>(f, "clients", cfg.clients);
        cfg.participants = get_or<int>(f, "participants", cfg.participants);
        cfg.rounds = get_or<int>(f, "rounds", cfg.rounds);
        cfg.local_epochs = get_or<int>(f, "local_epochs", cfg.local_epochs);
    }
    if (j.contains("sgd")) {
        const auto& s = j.at("sgd");
        if (s.contains("lr")) cfg.lr = s.at("lr").get<double>();
        cfg.weight_decay = get_or<double>(s, "weight_decay", cfg.weight_decay);
        cfg.batch_size = get_or<int>(s, "batch_size", cfg.batch_size);
    }
    if (j.contains("dp")) {
        const auto& d = j.at("dp");
        cfg.dp.enabled = get_or<bool>(d, "enabled", cfg.dp.enabled);
        cfg.dp.epsilon = get_or<double>(d, "epsilon", cfg.dp.epsilon);
        cfg.dp.delta = get_or<double>(d, "delta", cfg.dp.delta);
        cfg.dp.clip_norm = get_or<double>(d, "clip_norm", cfg.dp.clip_norm);
        const std::string g = get_or<std::string>(d, "granularity", "batch");
        if (g == "batch")
            cfg.dp.granularity = DpGranularity::batch;
        else if (g == "sample")
            cfg.dp.granularity = DpGranularity::sample;
        else
            throw ConfigError("config: dp.granularity must be 'batch' or 'sample'");
    }
    if (j.contains("data")) {
        const auto& d = j.at("data");
        const std::string src = get_or<std::string>(d, "source", "synthetic");
        if (src == "synthetic")
            cfg.data.source = DataConfig::Source::synthetic;
        else if (src == "idx")
            cfg.data.source = DataConfig::Source::idx;
        else if (src == "csv")
            cfg.data.source = DataConfig::Source::csv;
        else
            throw ConfigError("config: unknown data source '" + src + "'");
        cfg.data.alpha = get_or<double>(d, "alpha", cfg.data.alpha);
        cfg.data.sample_cap = get_or<long long>(d, "sample_cap", cfg.data.sample_cap);
        cfg.data.hflip_prob = get_or<double>(d, "hflip_prob", cfg.data.hflip_prob);
        cfg.data.eval_samples_per_class =
            get_or<int>(d, "eval_samples_per_class", cfg.data.eval_samples_per_class);
        cfg.data.idx_images = get_or<std::string>(d, "idx_images", "");
        cfg.data.idx_labels = get_or<std::string>(d, "idx_labels", "");
        cfg.data.csv_path = get_or<std::string>(d, "csv_path", "");
        cfg.data.eval_csv_path = get_or<std::string>(d, "eval_csv_path", "");
        cfg.data.eval_fraction = get_or<double>(d, "eval_fraction", cfg.data.eval_fraction);
        if (d.contains("synthetic")) {
            const auto& s = d.at("synthetic");
            auto& sp = cfg.data.synthetic;
            sp.family = family_from(get_or<std::string>(s, "family", "vit"));
            sp.class_count = get_or<int>(s, "class_count", sp.class_count);
            sp.samples_per_class = get_or<int>(s, "samples_per_class", sp.samples_per_class);
            sp.feature_dim = get_or<int>(s, "feature_dim", sp.feature_dim);
            sp.image_size = get_or<int>(s, "image_size", sp.image_size);
            sp.shift = get_or<double>(s, "shift", sp.shift);
            sp.noise = get_or<double>(s, "noise", sp.noise);
            sp.separation = get_or<double>(s, "separation", sp.separation);
            sp.task_seed = get_or<std::uint64_t>(s, "task_seed", sp.task_seed);
        }
    }
    if (j.contains("pretrain")) {
        const auto& p = j.at("pretrain");
        cfg.pretrain.epochs = get_or<int>(p, "epochs", cfg.pretrain.epochs);
        cfg.pretrain.shift = get_or<double>(p, "shift", cfg.pretrain.shift);
        cfg.pretrain.sgd.learning_rate = get_or<double>(p, "lr", cfg.pretrain.sgd.learning_rate);
        cfg.pretrain.sgd.weight_decay =
            get_or<double>(p, "weight_decay", cfg.pretrain.sgd.weight_decay);
        cfg.pretrain.sgd.batch_size = get_or<int>(p, "batch_size", cfg.pretrain.sgd.batch_size);
    }
    cfg.validate();
    return cfg;
}

ExperimentConfig load_config_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("config: cannot open '" + path + "'");
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        throw ConfigError("config: " + path + ": " + e.what());
    }
    return parse_config(j);
}

nlohmann::json canonical_json(const ExperimentConfig& cfg) {
    const SgdConfig sgd = resolved_sgd(cfg);
    json j;
    j["version"] = 1;
    j["seed"] = cfg.seed;
    j["precision"] = cfg.precision;
    j["model"] = {{"family", family_name(cfg.model.family)},
                  {"image_size", cfg.model.image_size},
                  {"patch_size", cfg.model.patch_size},
                  {"embed_dim", cfg.model.embed_dim},
                  {"mlp_hidden_dim", cfg.model.mlp_hidden_dim},
                  {"depth", cfg.model.depth},
                  {"num_heads", cfg.model.num_heads},
                  {"num_classes", cfg.model.num_classes}};
    j["mode"] = {{"kind", mode_name(cfg.mode.kind)},
                 {"adapter_bottleneck", cfg.mode.adapter_bottleneck},
                 {"prompt_length", cfg.mode.prompt_length},
                 {"prompt_zero_init", cfg.mode.prompt_zero_init}};
    j["federation"] = {{"clients", cfg.clients},
                       {"participants", cfg.participants},
                       {"rounds", cfg.rounds},
                       {"local_epochs", cfg.local_epochs}};
    j["sgd"] = {{"lr", sgd.learning_rate},
                {"weight_decay", sgd.weight_decay},
                {"batch_size", sgd.batch_size}};
    j["dp"] = {{"enabled", cfg.dp.enabled},
               {"epsilon", cfg.dp.epsilon},
               {"delta", cfg.dp.delta},
               {"clip_norm", cfg.dp.clip_norm},
               {"granularity", cfg.dp.granularity == DpGranularity::batch ? "batch" : "sample"}};
    const char* src = cfg.data.source == DataConfig::Source::synthetic ? "synthetic"
                      : cfg.data.source == DataConfig::Source::idx     ? "idx"
                                                                       : "csv";
    j["data"] = {{"source", src},
                 {"alpha", cfg.data.alpha},
                 {"sample_cap", cfg.data.sample_cap},
                 {"hflip_prob", cfg.data.hflip_prob},
                 {"eval_samples_per_class", cfg.data.eval_samples_per_class},
                 {"idx_images", cfg.data.idx_images},
                 {"idx_labels", cfg.data.idx_labels},
                 {"csv_path", cfg.data.csv_path},
                 {"eval_csv_path", cfg.data.eval_csv_path},
                 {"eval_fraction", cfg.data.eval_fraction},
                 {"synthetic",
                  {{"family", family_name(cfg.data.synthetic.family)},
                   {"class_count", cfg.data.synthetic.class_count},
                   {"samples_per_class", cfg.data.synthetic.samples_per_class},
                   {"feature_dim", cfg.data.synthetic.feature_dim},
                   {"image_size", cfg.data.synthetic.image_size},
                   {"shift", cfg.data.synthetic.shift},
                   {"noise", cfg.data.synthetic.noise},
                   {"separation", cfg.data.synthetic.separation},
                   {"task_seed", cfg.data.synthetic.task_seed}}}};
    j["pretrain"] = {{"epochs", cfg.pretrain.epochs},
                     {"shift", cfg.pretrain.shift},
                     {"lr", cfg.pretrain.sgd.learning_rate},
                     {"weight_decay", cfg.pretrain.sgd.weight_decay},
                     {"batch_size", cfg.pretrain.sgd.batch_size}};
    return j;
}

std::string config_hash(const ExperimentConfig& cfg) {
    const std::string dump = canonical_json(cfg).dump();
    const std::uint64_t h = fnv1a64(dump.data(), dump.size());
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

SgdConfig resolved_sgd(const ExperimentConfig& cfg) {
    SgdConfig sgd = default_sgd(cfg.mode.kind, cfg.dp.enabled);
    if (cfg.lr) sgd.learning_rate = *cfg.lr;
    sgd.weight_decay = cfg.weight_decay;
    sgd.batch_size = cfg.batch_size;
    return sgd;
}

FederationConfig make_federation_config(const ExperimentConfig& cfg) {
    FederationConfig f;
    f.num_clients = cfg.clients;
    f.participants = cfg.participants;
    f.rounds = cfg.rounds;
    f.local_epochs = cfg.local_epochs;
    f.seed = cfg.seed;
    f.sgd = resolved_sgd(cfg);
    f.dp = cfg.dp;
    f.hflip_prob = cfg.data.hflip_prob;
    f.threads = cfg.threads;
    return f;
}

}  // namespace fedpeft
