// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include <json.hpp>

#include "fedpeft/data.hpp"
#include "fedpeft/federation.hpp"
#include "fedpeft/model.hpp"
#include "fedpeft/privacy.hpp"
#include "fedpeft/sgd.hpp"

namespace fedpeft {

struct DataConfig {
    enum class Source { synthetic, idx, csv };
    Source source = Source::synthetic;
    double alpha = 0.5;
    long long sample_cap = 0;  // 0 = no cap
    double hflip_prob = 0.0;
    SyntheticTaskSpec synthetic;
    int eval_samples_per_class = 16;
    std::string idx_images, idx_labels;
    std::string csv_path, eval_csv_path;
    double eval_fraction = 0.2;  // file sources without a dedicated eval file
};

struct PretrainConfig {
    int epochs = 5;
    double shift = 0.0;  // source-task shift; 0 = the task the backbone should master
    SgdConfig sgd{0.01, 0.0001, 32};
};

struct ExperimentConfig {
    std::uint64_t seed = 42;
    std::string precision = "f32";  // f32 | f64
    int threads = 1;
    std::string output = "out";

    ModelSpec model;
    TuningMode mode;
    int clients = 16;
    int participants = 4;
    int rounds = 20;
    int local_epochs = 2;

    std::optional<double> lr;  // unset -> per-mode default
    double weight_decay = 0.0001;
    int batch_size = 64;

    DpConfig dp;
    DataConfig data;
    PretrainConfig pretrain;

    void validate() const;
};

/// Per-mode SGD defaults; the DP column switches in when the Gaussian
/// mechanism is enabled.
SgdConfig default_sgd(ModeKind mode, bool dp_enabled);

ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config_file(const std::string& path);

/// Fully-resolved config as sorted-key JSON; equal hashes imply equal configs.
nlohmann::json canonical_json(const ExperimentConfig& cfg);
std::string config_hash(const ExperimentConfig& cfg);

/// The SGD config a run will actually use (override or per-mode default).
SgdConfig resolved_sgd(const ExperimentConfig& cfg);

FederationConfig make_federation_config(const ExperimentConfig& cfg);

}  // namespace fedpeft
