// SPDX-License-Identifier: Apache-2.0
//
// Round orchestration: client sampling, local training, size-weighted
// aggregation of the transmitted set. Client results depend only on the
// broadcast snapshot, the shard, and a per-client rng stream keyed by
// (seed, round, client id), so the history is independent of scheduling.

#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

#include "fedpeft/data.hpp"
#include "fedpeft/model.hpp"
#include "fedpeft/peft.hpp"
#include "fedpeft/privacy.hpp"
#include "fedpeft/round_record.hpp"
#include "fedpeft/sgd.hpp"

namespace fedpeft {

struct FederationConfig {
    int num_clients = 64;      // N
    int participants = 8;      // M
    int rounds = 50;           // T
    int local_epochs = 10;     // E
    std::uint64_t seed = 0;
    SgdConfig sgd;
    DpConfig dp;
    double hflip_prob = 0.0;
    int threads = 1;
    int eval_batch = 64;

    void validate() const {
        if (num_clients < 1) throw ConfigError("federation: need at least one client");
        if (participants < 1 || participants > num_clients)
            throw ConfigError("federation: participants must be in [1, num_clients]");
        if (rounds < 1) throw ConfigError("federation: rounds must be >= 1");
        if (local_epochs < 1) throw ConfigError("federation: local_epochs must be >= 1");
        sgd.validate();
        dp.validate();
    }
};

namespace detail {

inline void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
    if (threads <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mu;
    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= n) return;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mu);
                if (!error) error = std::current_exception();
                return;
            }
        }
    };
    std::vector<std::thread> pool;
    const int count = std::min<int>(threads, static_cast<int>(n));
    pool.reserve(count);
    for (int t = 0; t < count; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
}

/// Assemble a batch tensor from dataset samples; single-channel images are
/// replicated to the model's 3 channels, optional seeded horizontal flip.
template <typename Real>
Tensor<Real> make_batch(const Dataset& data, const std::vector<std::size_t>& indices,
                        const ModelSpec& spec, double hflip_prob, Rng* rng) {
    const std::size_t B = indices.size();
    if (spec.family == Family::vit) {
        const auto H = static_cast<std::size_t>(spec.image_size);
        const auto& fs = data.feature_shape;
        if (fs.size() != 3 || fs[1] != H || fs[2] != H)
            throw InputError("batch: dataset feature shape " + shape_str(fs) +
                             " does not match model image size " + std::to_string(spec.image_size));
        const std::size_t in_ch = fs[0];
        if (in_ch != 1 && in_ch != 3)
            throw InputError("batch: expected 1 or 3 channels, got " + std::to_string(in_ch));
        Tensor<Real> t({B, 3, H, H});
        std::vector<float> tmp(data.feature_size());
        for (std::size_t b = 0; b < B; ++b) {
            std::copy_n(data.sample(indices[b]), tmp.size(), tmp.data());
            if (rng != nullptr) augment_hflip(tmp.data(), fs, hflip_prob, *rng);
            Real* dst = t.data().data() + b * 3 * H * H;
            for (std::size_t c = 0; c < 3; ++c) {
                const float* src = tmp.data() + (in_ch == 3 ? c * H * H : 0);
                for (std::size_t i = 0; i < H * H; ++i) dst[c * H * H + i] = static_cast<Real>(src[i]);
            }
        }
        return t;
    }
    const std::size_t F = data.feature_size();
    Tensor<Real> t({B, F});
    for (std::size_t b = 0; b < B; ++b) {
        const float* src = data.sample(indices[b]);
        Real* dst = t.data().data() + b * F;
        for (std::size_t i = 0; i < F; ++i) dst[i] = static_cast<Real>(src[i]);
    }
    return t;
}

template <typename Real>
std::vector<int> batch_labels(const Dataset& data, const std::vector<std::size_t>& indices) {
    std::vector<int> out(indices.size());
    for (std::size_t i = 0; i < indices.size(); ++i) out[i] = data.labels[indices[i]];
    return out;
}

/// One SGD step on a mini-batch, with the optional Gaussian mechanism applied
/// to the trainable gradients. Returns the batch loss.
template <typename Real>
double train_step(Model<Real>& model, const Dataset& data, const std::vector<std::size_t>& batch,
                  const SgdConfig& sgd, const DpConfig& dp, double hflip_prob, Rng& rng) {
    double loss_value = 0;
    if (dp.enabled && dp.granularity == DpGranularity::sample) {
        // per-sample clipping: clip each sample's gradient, average, noise once
        std::vector<std::vector<Real>> acc;
        for (std::size_t s = 0; s < batch.size(); ++s) {
            Tape<Real> tape;
            Tensor<Real> x = make_batch<Real>(data, {batch[s]}, model.spec, hflip_prob, &rng);
            Tensor<Real> logits = forward_logits(model, x, &tape);
            Tensor<Real> loss = ops::cross_entropy_loss(logits, batch_labels<Real>(data, {batch[s]}), &tape);
            loss_value += static_cast<double>(loss.item());
            backward(loss, tape);
            auto grads = trainable_grads(model);
            clip_gradient(grads, dp.clip_norm);
            if (acc.empty()) acc.resize(grads.size());
            for (std::size_t gi = 0; gi < grads.size(); ++gi) {
                if (acc[gi].empty()) acc[gi].assign(grads[gi]->size(), Real(0));
                for (std::size_t j = 0; j < grads[gi]->size(); ++j) acc[gi][j] += (*grads[gi])[j];
            }
            for (auto* g : grads) g->assign(g->size(), Real(0));
        }
        loss_value /= static_cast<double>(batch.size());
        const double sigma = gaussian_sigma(dp.epsilon, dp.delta, dp.clip_norm);
        const Real inv_b = Real(1) / static_cast<Real>(batch.size());
        std::size_t gi = 0;
        for (std::size_t i = 0; i < model.weights.size(); ++i) {
            if (!model.registry.entries[i].trainable || !model.weights[i].has_grad()) continue;
            auto& g = model.weights[i].grad();
            for (std::size_t j = 0; j < g.size(); ++j)
                g[j] = (acc[gi][j] + static_cast<Real>(sigma * rng.normal())) * inv_b;
            ++gi;
        }
        sgd_step(model.weights, sgd);
        return loss_value;
    }

    Tape<Real> tape;
    Tensor<Real> x = make_batch<Real>(data, batch, model.spec, hflip_prob, &rng);
    Tensor<Real> logits = forward_logits(model, x, &tape);
    Tensor<Real> loss = ops::cross_entropy_loss(logits, batch_labels<Real>(data, batch), &tape);
    loss_value = static_cast<double>(loss.item());
    backward(loss, tape);
    if (dp.enabled) {
        auto grads = trainable_grads(model);
        dp_privatize(grads, dp, rng);
    }
    sgd_step(model.weights, sgd);
    return loss_value;
}

}  // namespace detail

/// Uniform sample of m clients without replacement (partial Fisher-Yates),
/// returned in ascending id order.
inline std::vector<int> sample_clients(const std::vector<int>& eligible, int m, Rng& rng) {
    if (m > static_cast<int>(eligible.size()))
        throw ConfigError("sample_clients: " + std::to_string(m) + " participants but only " +
                          std::to_string(eligible.size()) + " eligible clients");
    std::vector<int> pool = eligible;
    for (int i = 0; i < m; ++i) {
        const auto j = i + static_cast<int>(rng.uniform_below(pool.size() - i));
        std::swap(pool[i], pool[j]);
    }
    std::vector<int> out(pool.begin(), pool.begin() + m);
    std::sort(out.begin(), out.end());
    return out;
}

struct LocalTrainConfig {
    SgdConfig sgd;
    int epochs = 1;
    DpConfig dp;
    double hflip_prob = 0.0;
};

template <typename Real>
struct ClientState {
    int id = 0;
    const Dataset* data = nullptr;
    std::vector<std::size_t> shard;
    Model<Real> model;
    Rng rng{0};
};

/// ClientUpdate: load P with theta, run E epochs of mini-batch SGD on the
/// shard, return the updated transmitted vector. Frozen parameters are never
/// touched.
template <typename Real>
std::vector<Real> client_update(ClientState<Real>& client, const std::vector<Real>& theta,
                                const LocalTrainConfig& cfg) {
    if (client.shard.empty())
        throw ContractError("client_update: client " + std::to_string(client.id) + " has an empty shard");
    load_transmitted(client.model, theta);
    const auto batch_size = static_cast<std::size_t>(cfg.sgd.batch_size);
    std::vector<std::size_t> order = client.shard;
    for (int e = 0; e < cfg.epochs; ++e) {
        client.rng.shuffle(order);
        for (std::size_t off = 0; off < order.size(); off += batch_size) {
            const std::size_t len = std::min(batch_size, order.size() - off);
            std::vector<std::size_t> batch(order.begin() + off, order.begin() + off + len);
            const double loss = detail::train_step(client.model, *client.data, batch, cfg.sgd,
                                                   cfg.dp, cfg.hflip_prob, client.rng);
            if (!std::isfinite(loss))
                throw DivergenceError("client " + std::to_string(client.id) +
                                      ": non-finite loss in local training");
        }
    }
    return snapshot_transmitted(client.model);
}

template <typename Real>
struct ClientUpdateResult {
    int client_id = 0;
    std::vector<Real> theta;
    long long shard_size = 0;
};

/// Size-weighted element-wise mean over the transmitted set. Summation runs
/// in ascending client-id order so any permutation of the input gives a
/// bit-identical result.
template <typename Real>
std::vector<Real> aggregate(std::vector<ClientUpdateResult<Real>> updates) {
    if (updates.empty()) throw ContractError("aggregate: no updates");
    std::sort(updates.begin(), updates.end(),
              [](const auto& a, const auto& b) { return a.client_id < b.client_id; });
    const std::size_t len = updates[0].theta.size();
    long long total = 0;
    for (const auto& u : updates) {
        if (u.theta.size() != len) throw ContractError("aggregate: update length mismatch");
        if (u.shard_size <= 0) throw ContractError("aggregate: non-positive shard size");
        total += u.shard_size;
    }
    std::vector<Real> out(len, Real(0));
    for (const auto& u : updates) {
        const Real w = static_cast<Real>(static_cast<double>(u.shard_size) /
                                         static_cast<double>(total));
        for (std::size_t j = 0; j < len; ++j) out[j] += w * u.theta[j];
    }
    return out;
}

struct EvalResult {
    double accuracy = 0;
    double loss = 0;
};

/// Deterministic full-pass evaluation (argmax ties go to the lowest class).
template <typename Real>
EvalResult evaluate(const Model<Real>& model, const Dataset& data, int batch_size = 64) {
    if (data.size() == 0) throw InputError("evaluate: empty dataset");
    std::size_t correct = 0;
    double loss_sum = 0;
    const auto bs = static_cast<std::size_t>(batch_size);
    for (std::size_t off = 0; off < data.size(); off += bs) {
        const std::size_t len = std::min(bs, data.size() - off);
        std::vector<std::size_t> idx(len);
        for (std::size_t i = 0; i < len; ++i) idx[i] = off + i;
        Tensor<Real> x = detail::make_batch<Real>(data, idx, model.spec, 0.0, nullptr);
        Tensor<Real> logits = forward_logits(model, x, nullptr);
        const auto labels = detail::batch_labels<Real>(data, idx);
        const std::size_t C = logits.dim(1);
        for (std::size_t b = 0; b < len; ++b) {
            const Real* row = logits.data().data() + b * C;
            std::size_t arg = 0;
            for (std::size_t c = 1; c < C; ++c)
                if (row[c] > row[arg]) arg = c;
            if (static_cast<int>(arg) == labels[b]) ++correct;
        }
        Tensor<Real> loss = ops::cross_entropy_loss(logits, labels, nullptr);
        loss_sum += static_cast<double>(loss.item()) * static_cast<double>(len);
    }
    return EvalResult{static_cast<double>(correct) / static_cast<double>(data.size()),
                      loss_sum / static_cast<double>(data.size())};
}

/// Server loop of the federated run. Per round: sample, broadcast, train the
/// sampled clients (possibly on a thread pool), aggregate in id order, load
/// into the global model, evaluate. The callback fires after every completed
/// round so partial histories survive a failed run.
template <typename Real>
std::vector<RoundRecord> run_training(
    Model<Real>& global, const Dataset& train, const PartitionAssignment& partition,
    const Dataset& eval_set, const FederationConfig& cfg,
    const std::function<void(const RoundRecord&)>& on_round = nullptr) {
    cfg.validate();
    if (!global.mode_applied) throw ContractError("run_training: apply a tuning mode first");
    if (eval_set.size() == 0) throw InputError("run_training: empty eval set");

    const auto shards = partition.shards();
    std::vector<int> eligible;
    for (int n = 0; n < cfg.num_clients; ++n)
        if (n < static_cast<int>(shards.size()) && !shards[n].empty()) eligible.push_back(n);
    if (static_cast<int>(eligible.size()) < cfg.participants)
        throw ConfigError("run_training: only " + std::to_string(eligible.size()) +
                          " clients hold data, need " + std::to_string(cfg.participants));

    const long long param_count = global.registry.transmitted_count();
    LocalTrainConfig local{cfg.sgd, cfg.local_epochs, cfg.dp, cfg.hflip_prob};

    std::vector<RoundRecord> history;
    history.reserve(cfg.rounds);
    for (int t = 0; t < cfg.rounds; ++t) {
        Rng sample_rng = Rng::stream(cfg.seed, 0xc11e27e5ull, static_cast<std::uint64_t>(t));
        const std::vector<int> sampled = sample_clients(eligible, cfg.participants, sample_rng);

        const std::vector<Real> theta = snapshot_transmitted(global);
        std::vector<ClientUpdateResult<Real>> updates(sampled.size());
        detail::parallel_for(
            sampled.size(), cfg.threads,
            [&](std::size_t i) {
                const int id = sampled[i];
                ClientState<Real> client{id, &train, shards[id], global.clone(),
                                         Rng::stream(cfg.seed, static_cast<std::uint64_t>(t),
                                                     static_cast<std::uint64_t>(id))};
                updates[i] = ClientUpdateResult<Real>{id, client_update(client, theta, local),
                                                      static_cast<long long>(shards[id].size())};
            });

        load_transmitted(global, aggregate(std::move(updates)));

        const EvalResult ev = evaluate(global, eval_set, cfg.eval_batch);
        const EvalResult tr = evaluate(global, train, cfg.eval_batch);

        RoundRecord rec;
        rec.round = t;
        rec.sampled = sampled;
        for (const int id : sampled) rec.sizes.push_back(static_cast<long long>(shards[id].size()));
        rec.param_count = param_count;
        rec.upload_bytes = 4LL * param_count * cfg.participants;
        rec.download_bytes = rec.upload_bytes;
        rec.accuracy = ev.accuracy;
        rec.eval_loss = ev.loss;
        rec.train_loss = tr.loss;
        history.push_back(rec);
        if (on_round) on_round(rec);
    }
    return history;
}

/// Plain centralized mini-batch SGD on one dataset; used for pretraining and
/// as the equivalence oracle for a degenerate federated round.
template <typename Real>
double centralized_train(Model<Real>& model, const Dataset& data, int epochs,
                         const SgdConfig& sgd, Rng& rng, const DpConfig& dp = {},
                         double hflip_prob = 0.0) {
    double last_loss = 0;
    std::vector<std::size_t> order(data.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    const auto batch_size = static_cast<std::size_t>(sgd.batch_size);
    for (int e = 0; e < epochs; ++e) {
        rng.shuffle(order);
        for (std::size_t off = 0; off < order.size(); off += batch_size) {
            const std::size_t len = std::min(batch_size, order.size() - off);
            std::vector<std::size_t> batch(order.begin() + off, order.begin() + off + len);
            last_loss = detail::train_step(model, data, batch, sgd, dp, hflip_prob, rng);
            if (!std::isfinite(last_loss)) throw DivergenceError("centralized training diverged");
        }
    }
    return last_loss;
}

}  // namespace fedpeft
