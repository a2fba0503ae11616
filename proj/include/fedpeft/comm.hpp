// SPDX-License-Identifier: Apache-2.0
//
// Byte-exact communication accounting. All totals are integer arithmetic;
// the "paper convention" helpers reproduce the published table formatting
// (counts rounded to 0.01M, binary-scaled values printed with MB/GB labels).

#pragma once

#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "fedpeft/round_record.hpp"

namespace fedpeft {

/// Single-direction bytes for one round: 4 bytes per parameter per client.
long long round_cost(long long param_count, int clients);

/// Binary-scaled rendering with two decimals: "5.19MB", "2.56GB".
std::string format_cost(long long bytes);

/// Count rounded to 0.01M: 169060 -> "0.17M".
std::string format_param_count(long long count);

/// The rounded-million count itself: 169060 -> 170000.
long long rounded_million_count(long long count);

/// Cost rendering used by the published tables: round_cost applied to the
/// rounded-million count.
std::string paper_round_cost(long long param_count, int clients);

/// Cumulative cost in the published convention: rounds x the per-round MB
/// figure as printed (so 6 rounds of "5.19MB" render "31.14MB", not the
/// 31.13MB the exact bytes would give).
std::string paper_cumulative_cost(int rounds, long long per_round_bytes);

/// Cumulative single-direction upload bytes through the first round whose
/// server accuracy reaches the target; nullopt when never reached.
std::optional<long long> cost_to_target(const std::vector<RoundRecord>& history,
                                        double target_accuracy);

class CommLedger {
public:
    struct Row {
        int round;
        std::string mode;
        long long param_count;
        int clients;
        long long upload_bytes;
        long long download_bytes;
        long long cumulative_bytes;  // upload, running total
        double server_accuracy;
    };

    void add_round(int round, const std::string& mode, long long param_count, int clients,
                   double server_accuracy);
    const std::vector<Row>& rows() const { return rows_; }
    long long total_upload() const { return total_upload_; }
    long long total_download() const { return total_download_; }

    void write_csv(std::ostream& os) const;
    static void write_csv_header(std::ostream& os);
    static void write_csv_row(std::ostream& os, const Row& row);

private:
    std::vector<Row> rows_;
    long long total_upload_ = 0;
    long long total_download_ = 0;
};

}  // namespace fedpeft
