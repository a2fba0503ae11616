// SPDX-License-Identifier: Apache-2.0

#include "fedpeft/metrics.hpp"

#include "fedpeft/errors.hpp"

namespace fedpeft {

using nlohmann::json;

json round_to_json(const RoundRecord& rec) {
    json j;
    j["type"] = "round";
    j["round"] = rec.round;
    j["sampled"] = rec.sampled;
    j["sizes"] = rec.sizes;
    j["param_count"] = rec.param_count;
    j["upload_bytes"] = rec.upload_bytes;
    j["download_bytes"] = rec.download_bytes;
    j["accuracy"] = rec.accuracy;
    j["eval_loss"] = rec.eval_loss;
    j["train_loss"] = rec.train_loss;
    return j;
}

RoundRecord round_from_json(const json& j) {
    RoundRecord rec;
    rec.round = j.at("round").get<int>();
    rec.sampled = j.at("sampled").get<std::vector<int>>();
    rec.sizes = j.at("sizes").get<std::vector<long long>>();
    rec.param_count = j.at("param_count").get<long long>();
    rec.upload_bytes = j.at("upload_bytes").get<long long>();
    rec.download_bytes = j.at("download_bytes").get<long long>();
    rec.accuracy = j.at("accuracy").get<double>();
    rec.eval_loss = j.at("eval_loss").get<double>();
    rec.train_loss = j.at("train_loss").get<double>();
    return rec;
}

MetricsWriter::MetricsWriter(const std::string& path, const std::string& config_hash) {
    out_.open(path, std::ios::trunc);
    if (!out_) throw ParseError(path + ": cannot open metrics log for writing");
    json meta;
    meta["type"] = "meta";
    meta["config_hash"] = config_hash;
    meta["code_version"] = kCodeVersion;
    out_ << meta.dump() << '\n';
    out_.flush();
}

void MetricsWriter::append(const RoundRecord& rec) {
    out_ << round_to_json(rec).dump() << '\n';
    out_.flush();
}

MetricsLog read_metrics(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError(path + ": cannot open metrics log");
    MetricsLog log;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw ParseError(path + ": bad json at line " + std::to_string(line_no) + ": " + e.what());
        }
        const std::string type = j.value("type", "");
        if (type == "meta") {
            log.config_hash = j.value("config_hash", "");
            log.code_version = j.value("code_version", "");
        } else if (type == "round") {
            log.rounds.push_back(round_from_json(j));
        } else {
            throw ParseError(path + ": unknown record type '" + type + "' at line " +
                             std::to_string(line_no));
        }
    }
    return log;
}

}  // namespace fedpeft
