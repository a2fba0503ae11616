// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <vector>

#include "fedpeft/errors.hpp"
#include "fedpeft/model.hpp"
#include "fedpeft/rng.hpp"

namespace fedpeft {

enum class DpGranularity { batch, sample };

struct DpConfig {
    bool enabled = false;
    double epsilon = 5.0;
    double delta = 0.001;
    double clip_norm = 1.0;
    DpGranularity granularity = DpGranularity::batch;

    void validate() const {
        if (!enabled) return;
        if (!(epsilon > 0)) throw InputError("dp: epsilon must be positive");
        if (!(delta > 0 && delta < 1)) throw InputError("dp: delta must be in (0,1)");
        if (!(clip_norm > 0)) throw InputError("dp: clip_norm must be positive");
    }
};

/// Classical Gaussian-mechanism calibration sigma = S * sqrt(2 ln(1.25/delta)) / epsilon.
inline double gaussian_sigma(double epsilon, double delta, double clip_norm) {
    if (!(epsilon > 0) || !(clip_norm > 0))
        throw InputError("gaussian_sigma: epsilon and clip_norm must be positive");
    if (!(delta > 0) || delta >= 1.25)
        throw InputError("gaussian_sigma: delta must be in (0, 1.25) for a positive noise scale");
    return clip_norm * std::sqrt(2.0 * std::log(1.25 / delta)) / epsilon;
}

/// g <- g * min(1, S / ||g||_2) over the concatenation of all buffers.
/// Returns the pre-clip norm.
template <typename Real>
double clip_gradient(std::vector<std::vector<Real>*>& grads, double clip_norm) {
    if (!(clip_norm > 0)) throw InputError("clip_gradient: clip norm must be positive");
    double sq = 0;
    for (const auto* g : grads)
        for (const Real v : *g) sq += static_cast<double>(v) * static_cast<double>(v);
    const double norm = std::sqrt(sq);
    if (norm > clip_norm) {
        const Real f = static_cast<Real>(clip_norm / norm);
        for (auto* g : grads)
            for (Real& v : *g) v *= f;
    }
    return norm;
}

/// Clip, then add i.i.d. N(0, sigma^2) to every trainable-gradient
/// coordinate. Frozen parameters have no gradients and are untouched.
template <typename Real>
void dp_privatize(std::vector<std::vector<Real>*>& grads, const DpConfig& cfg, Rng& rng) {
    cfg.validate();
    if (!cfg.enabled) return;
    clip_gradient(grads, cfg.clip_norm);
    const double sigma = gaussian_sigma(cfg.epsilon, cfg.delta, cfg.clip_norm);
    for (auto* g : grads)
        for (Real& v : *g) v += static_cast<Real>(sigma * rng.normal());
}

/// Gradient buffers of the trainable parameters, in registry order.
template <typename Real>
std::vector<std::vector<Real>*> trainable_grads(Model<Real>& m) {
    std::vector<std::vector<Real>*> out;
    for (std::size_t i = 0; i < m.weights.size(); ++i)
        if (m.registry.entries[i].trainable && m.weights[i].has_grad())
            out.push_back(&m.weights[i].grad());
    return out;
}

}  // namespace fedpeft
