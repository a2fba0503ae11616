// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace fedpeft {

/// One row of the reference communication table for the 224/16 transformer
/// with 100 classes and 8 participating clients.
struct Table1Row {
    std::string method;
    long long exact_count = 0;
    std::string count_str;      // computed, e.g. "0.17M"
    std::string cost_str;       // computed, e.g. "5.19MB"
    long long expected_exact = 0;
    std::string expected_count;
    std::string expected_cost;

    bool ok() const {
        return exact_count == expected_exact && count_str == expected_count &&
               cost_str == expected_cost;
    }
};

std::vector<Table1Row> table1_rows();

/// Prints the table and a verdict per cell; returns the number of
/// mismatches against the embedded expected values.
int write_table1_report(std::ostream& os);

}  // namespace fedpeft
