// SPDX-License-Identifier: Apache-2.0

#include "fedpeft/comm.hpp"

#include <cmath>
#include <cstdio>

#include "fedpeft/errors.hpp"

namespace fedpeft {

namespace {
constexpr long long kMiB = 1024LL * 1024;
constexpr long long kGiB = 1024LL * 1024 * 1024;

std::string two_decimals(double v, const char* unit) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.2f%s", v, unit);
    return buf;
}
}  // namespace

long long round_cost(long long param_count, int clients) {
    if (param_count < 0 || clients < 0) throw InputError("round_cost: negative input");
    return 4LL * param_count * clients;
}

std::string format_cost(long long bytes) {
    if (bytes >= kGiB) return two_decimals(static_cast<double>(bytes) / kGiB, "GB");
    return two_decimals(static_cast<double>(bytes) / kMiB, "MB");
}

long long rounded_million_count(long long count) {
    // nearest 0.01M, i.e. nearest 10,000 parameters
    return llround(static_cast<double>(count) / 10000.0) * 10000;
}

std::string format_param_count(long long count) {
    return two_decimals(static_cast<double>(rounded_million_count(count)) / 1e6, "M");
}

std::string paper_round_cost(long long param_count, int clients) {
    return format_cost(round_cost(rounded_million_count(param_count), clients));
}

std::string paper_cumulative_cost(int rounds, long long per_round_bytes) {
    const bool gb = per_round_bytes >= kGiB;
    const double unit = gb ? static_cast<double>(kGiB) : static_cast<double>(kMiB);
    // multiply the printed per-round figure, as the published totals do
    const double per_round_printed = std::round(per_round_bytes / unit * 100.0) / 100.0;
    return two_decimals(per_round_printed * rounds, gb ? "GB" : "MB");
}

std::optional<long long> cost_to_target(const std::vector<RoundRecord>& history,
                                        double target_accuracy) {
    long long cumulative = 0;
    for (const auto& r : history) {
        cumulative += r.upload_bytes;
        if (r.accuracy >= target_accuracy) return cumulative;
    }
    return std::nullopt;
}

void CommLedger::add_round(int round, const std::string& mode, long long param_count, int clients,
                           double server_accuracy) {
    const long long cost = round_cost(param_count, clients);
    total_upload_ += cost;
    total_download_ += cost;
    rows_.push_back(Row{round, mode, param_count, clients, cost, cost, total_upload_,
                        server_accuracy});
}

void CommLedger::write_csv_header(std::ostream& os) {
    os << "round,mode,param_count,clients,upload_bytes,download_bytes,cumulative_bytes,"
          "server_accuracy\n";
}

void CommLedger::write_csv_row(std::ostream& os, const Row& row) {
    char acc[32];
    std::snprintf(acc, sizeof(acc), "%.6f", row.server_accuracy);
    os << row.round << ',' << row.mode << ',' << row.param_count << ',' << row.clients << ','
       << row.upload_bytes << ',' << row.download_bytes << ',' << row.cumulative_bytes << ','
       << acc << '\n';
}

void CommLedger::write_csv(std::ostream& os) const {
    write_csv_header(os);
    for (const auto& r : rows_) write_csv_row(os, r);
}

}  // namespace fedpeft
