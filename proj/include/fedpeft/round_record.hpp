// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

namespace fedpeft {

/// One communication round: who participated, what was transmitted, and how
/// the post-aggregation server model scored.
struct RoundRecord {
    int round = 0;
    std::vector<int> sampled;            // ascending client ids
    std::vector<long long> sizes;        // |D_m| per sampled client
    long long param_count = 0;           // |P|
    long long upload_bytes = 0;          // single direction, 4 B/parameter
    long long download_bytes = 0;
    double accuracy = 0;                 // server model on the held-out set
    double eval_loss = 0;
    double train_loss = 0;               // global objective over the training set
};

}  // namespace fedpeft
