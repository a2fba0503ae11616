// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <ostream>
#include <string>

#include "fedpeft/config.hpp"
#include "fedpeft/data.hpp"

namespace fedpeft {

enum ExitCode {
    kOk = 0,
    kGenericError = 1,
    kConfigError = 2,
    kDataError = 3,
    kDivergence = 4,
    kTableMismatch = 5,
};

/// Runs fn, mapping project exceptions onto the CLI exit codes.
int guarded(const std::function<void()>& fn, std::ostream& err);

struct DataBundle {
    Dataset train;
    Dataset eval;
};

/// Target-task train/eval pair for a federated run (synthetic generation or
/// file ingestion, sample cap and eval split applied).
DataBundle build_federate_data(const ExperimentConfig& cfg);

/// Source-task dataset for centralized pretraining.
Dataset build_pretrain_data(const ExperimentConfig& cfg);

Dataset subset(const Dataset& data, const std::vector<std::size_t>& indices);

/// Centralized pretraining; writes <output>/pretrained.ckpt.
int cmd_pretrain(const ExperimentConfig& cfg, std::ostream& out);

/// Federated fine-tuning from a checkpoint; writes metrics.jsonl, ledger.csv
/// and final.ckpt under <output>.
int cmd_federate(const ExperimentConfig& cfg, const std::string& checkpoint_path,
                 std::ostream& out);

/// Deterministic full-pass evaluation of a checkpoint on the eval split.
int cmd_eval(const ExperimentConfig& cfg, const std::string& checkpoint_path, std::ostream& out);

/// Analytical reference-table reproduction; nonzero on any cell mismatch.
int cmd_report_table1(std::ostream& out);

/// Partition summary for the configured data and alpha.
int cmd_partition_stats(const ExperimentConfig& cfg, std::ostream& out);

}  // namespace fedpeft
