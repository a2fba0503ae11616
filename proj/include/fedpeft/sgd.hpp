// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "fedpeft/errors.hpp"
#include "fedpeft/tensor.hpp"

namespace fedpeft {

struct SgdConfig {
    double learning_rate = 0.01;
    double weight_decay = 0.0;
    int batch_size = 64;

    void validate() const {
        if (learning_rate < 0) throw ConfigError("sgd: learning_rate must be >= 0");
        if (weight_decay < 0) throw ConfigError("sgd: weight_decay must be non-negative");
        if (batch_size < 1) throw ConfigError("sgd: batch_size must be positive");
    }
};

/// theta <- theta - lr * (g + wd * theta), applied only to trainable params;
/// gradients are cleared afterwards. Frozen params are left untouched even if
/// a gradient buffer was populated by accident.
template <typename Real>
void sgd_step(std::vector<Tensor<Real>>& params, const SgdConfig& cfg) {
    const Real lr = static_cast<Real>(cfg.learning_rate);
    const Real wd = static_cast<Real>(cfg.weight_decay);
    for (auto& p : params) {
        if (!p.requires_grad()) continue;
        if (!p.has_grad())
            throw ContractError("sgd_step: trainable parameter of shape " + shape_str(p.shape()) +
                                " has no gradient");
        auto& v = p.data();
        const auto& g = p.grad_data();
        for (std::size_t i = 0; i < v.size(); ++i) v[i] -= lr * (g[i] + wd * v[i]);
        p.clear_grad();
    }
}

}  // namespace fedpeft
