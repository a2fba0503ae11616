// SPDX-License-Identifier: Apache-2.0
//
// JSON-lines metrics stream: one meta record (config hash, code version),
// then one record per completed round, flushed as written so partial logs
// survive an aborted run. No timestamps anywhere: reruns of the same config
// must produce byte-identical logs.

#pragma once

#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedpeft/round_record.hpp"

namespace fedpeft {

inline constexpr const char* kCodeVersion = "fedpeft-0.1.0";

nlohmann::json round_to_json(const RoundRecord& rec);
RoundRecord round_from_json(const nlohmann::json& j);

class MetricsWriter {
public:
    MetricsWriter(const std::string& path, const std::string& config_hash);
    void append(const RoundRecord& rec);

private:
    std::ofstream out_;
};

struct MetricsLog {
    std::string config_hash;
    std::string code_version;
    std::vector<RoundRecord> rounds;
};

/// Reads a metrics stream back; reports are built from logs, never by
/// recomputing training.
MetricsLog read_metrics(const std::string& path);

}  // namespace fedpeft
