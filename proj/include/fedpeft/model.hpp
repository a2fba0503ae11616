// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "fedpeft/errors.hpp"
#include "fedpeft/rng.hpp"
#include "fedpeft/tensor.hpp"

namespace fedpeft {

enum class Family { mlp, vit };

/// Purely analytical architecture description; parameter counts are computed
/// from it without allocating any weights.
struct ModelSpec {
    Family family = Family::vit;
    int image_size = 32;   // for mlp: flat input feature count
    int patch_size = 4;
    int embed_dim = 64;
    int mlp_hidden_dim = 256;
    int depth = 4;
    int num_heads = 4;
    int num_classes = 10;

    void validate() const {
        if (image_size <= 0 || patch_size <= 0 || embed_dim <= 0 || mlp_hidden_dim <= 0 ||
            depth < 0 || num_heads <= 0 || num_classes <= 0)
            throw InputError("model spec: all dimensions must be positive");
        if (family == Family::vit) {
            if (depth < 1) throw InputError("model spec: vit depth must be >= 1");
            if (image_size % patch_size != 0)
                throw InputError("model spec: image_size " + std::to_string(image_size) +
                                 " not divisible by patch_size " + std::to_string(patch_size));
            if (embed_dim % num_heads != 0)
                throw InputError("model spec: embed_dim " + std::to_string(embed_dim) +
                                 " not divisible by num_heads " + std::to_string(num_heads));
        }
    }

    int patches_per_side() const { return image_size / patch_size; }
    int seq_len() const { return 1 + patches_per_side() * patches_per_side(); }

    bool operator==(const ModelSpec&) const = default;
};

/// Standard configuration of the reference transformer backbone (image 224,
/// patch 16, dim 768, hidden 3072, depth 12, heads 12).
inline ModelSpec vit_base_spec(int num_classes) {
    return ModelSpec{Family::vit, 224, 16, 768, 3072, 12, 12, num_classes};
}

/// Desk-scale transformer that trains in minutes on a CPU while exercising
/// every code path.
inline ModelSpec mini_vit_spec(int num_classes) {
    return ModelSpec{Family::vit, 32, 4, 64, 256, 4, 4, num_classes};
}

enum class Role { backbone_weight, backbone_bias, head, adapter, prompt };

inline const char* role_name(Role r) {
    switch (r) {
        case Role::backbone_weight: return "backbone-weight";
        case Role::backbone_bias: return "backbone-bias";
        case Role::head: return "head";
        case Role::adapter: return "adapter";
        case Role::prompt: return "prompt";
    }
    return "?";
}

struct ParamEntry {
    std::string name;
    Shape shape;
    Role role = Role::backbone_weight;
    bool trainable = true;
    bool transmitted = false;

    std::size_t size() const { return shape_numel(shape); }
};

/// Flat catalog of model parameters. Entry order is the canonical order for
/// snapshots and checkpoints.
struct Registry {
    std::vector<ParamEntry> entries;

    long long total_count() const {
        long long n = 0;
        for (const auto& e : entries) n += static_cast<long long>(e.size());
        return n;
    }
    long long trainable_count() const {
        long long n = 0;
        for (const auto& e : entries)
            if (e.trainable) n += static_cast<long long>(e.size());
        return n;
    }
    long long transmitted_count() const {
        long long n = 0;
        for (const auto& e : entries)
            if (e.transmitted) n += static_cast<long long>(e.size());
        return n;
    }
};

enum class ModeKind { full, head, bias, adapter, prompt };

inline const char* mode_name(ModeKind m) {
    switch (m) {
        case ModeKind::full: return "full";
        case ModeKind::head: return "head";
        case ModeKind::bias: return "bias";
        case ModeKind::adapter: return "adapter";
        case ModeKind::prompt: return "prompt";
    }
    return "?";
}

inline ModeKind mode_from_name(std::string_view s) {
    if (s == "full") return ModeKind::full;
    if (s == "head") return ModeKind::head;
    if (s == "bias") return ModeKind::bias;
    if (s == "adapter") return ModeKind::adapter;
    if (s == "prompt") return ModeKind::prompt;
    throw InputError("unknown tuning mode '" + std::string(s) + "'");
}

struct TuningMode {
    ModeKind kind = ModeKind::full;
    int adapter_bottleneck = 8;   // adapter only
    int prompt_length = 10;       // prompt only
    bool prompt_zero_init = false;

    void validate() const {
        if (kind == ModeKind::adapter && adapter_bottleneck <= 0)
            throw InputError("tuning mode: adapter_bottleneck must be positive");
        if (kind == ModeKind::prompt && prompt_length < 0)
            throw InputError("tuning mode: prompt_length must be non-negative");
    }
};

/// Model weights plus the registry that tags them. Immutable once broadcast
/// for a round; clients work on deep copies.
template <typename Real>
struct Model {
    ModelSpec spec;
    Registry registry;
    std::vector<Tensor<Real>> weights;  // parallel to registry.entries
    bool mode_applied = false;
    TuningMode mode;

    std::size_t entry_index(std::string_view name) const {
        auto it = index_.find(std::string(name));
        if (it == index_.end()) throw ContractError("model: no parameter named '" + std::string(name) + "'");
        return it->second;
    }
    Tensor<Real>& weight(std::string_view name) { return weights[entry_index(name)]; }
    const Tensor<Real>& weight(std::string_view name) const { return weights[entry_index(name)]; }
    bool has_weight(std::string_view name) const { return index_.count(std::string(name)) > 0; }

    void rebuild_index() {
        index_.clear();
        for (std::size_t i = 0; i < registry.entries.size(); ++i)
            index_[registry.entries[i].name] = i;
    }

    void push_entry(ParamEntry entry, Tensor<Real> tensor) {
        if (tensor.shape() != entry.shape)
            throw ContractError("model: tensor shape mismatch for '" + entry.name + "'");
        tensor.set_requires_grad(entry.trainable);
        index_[entry.name] = registry.entries.size();
        registry.entries.push_back(std::move(entry));
        weights.push_back(std::move(tensor));
    }

    void insert_entry(std::size_t pos, ParamEntry entry, Tensor<Real> tensor) {
        tensor.set_requires_grad(entry.trainable);
        registry.entries.insert(registry.entries.begin() + pos, std::move(entry));
        weights.insert(weights.begin() + pos, std::move(tensor));
        rebuild_index();
    }

    void set_trainable(std::size_t i, bool trainable, bool transmitted) {
        registry.entries[i].trainable = trainable;
        registry.entries[i].transmitted = transmitted;
        weights[i].set_requires_grad(trainable);
    }

    /// Deep copy; weight tensors get fresh storage and keep their flags.
    Model clone() const {
        Model out;
        out.spec = spec;
        out.registry = registry;
        out.mode_applied = mode_applied;
        out.mode = mode;
        out.weights.reserve(weights.size());
        for (std::size_t i = 0; i < weights.size(); ++i) {
            Tensor<Real> w = weights[i].clone();
            w.set_requires_grad(registry.entries[i].trainable);
            out.weights.push_back(std::move(w));
        }
        out.rebuild_index();
        return out;
    }

private:
    std::unordered_map<std::string, std::size_t> index_;
};

namespace detail {

template <typename Real>
Tensor<Real> init_tensor(Shape shape, std::uint64_t seed, std::string_view name, double stddev) {
    Tensor<Real> t(std::move(shape));
    if (stddev > 0) {
        Rng rng = Rng::stream(seed, fnv1a64(name.data(), name.size()));
        for (auto& v : t.data()) v = static_cast<Real>(rng.truncated_normal(stddev));
    }
    return t;
}

template <typename Real>
Tensor<Real> init_ones(Shape shape) {
    Tensor<Real> t(std::move(shape));
    for (auto& v : t.data()) v = Real(1);
    return t;
}

}  // namespace detail

/// Deterministic model construction. All parameters are tagged
/// backbone-weight / backbone-bias / head; the head is a single linear layer.
/// The fresh model is fully trainable with an empty transmitted set until a
/// tuning mode is applied.
template <typename Real>
Model<Real> build_model(const ModelSpec& spec, std::uint64_t seed) {
    spec.validate();
    Model<Real> m;
    m.spec = spec;

    const auto W = Role::backbone_weight;
    const auto B = Role::backbone_bias;
    auto wname = [&](std::string n, Shape s, Role r, double stddev) {
        m.push_entry(ParamEntry{n, s, r, true, false}, detail::init_tensor<Real>(s, seed, n, stddev));
    };
    auto ones = [&](std::string n, Shape s, Role r) {
        m.push_entry(ParamEntry{n, s, r, true, false}, detail::init_ones<Real>(s));
    };

    const std::size_t d = static_cast<std::size_t>(spec.embed_dim);
    const std::size_t h = static_cast<std::size_t>(spec.mlp_hidden_dim);
    const std::size_t C = static_cast<std::size_t>(spec.num_classes);

    if (spec.family == Family::vit) {
        const std::size_t pd = static_cast<std::size_t>(spec.patch_size) * spec.patch_size * 3;
        wname("patch_embed.weight", {pd, d}, W, 0.02);
        wname("patch_embed.bias", {d}, B, 0.0);
        wname("cls_token", {1, d}, W, 0.02);
        wname("pos_embed", {static_cast<std::size_t>(spec.seq_len()), d}, W, 0.02);
        for (int blk = 0; blk < spec.depth; ++blk) {
            const std::string p = "blocks." + std::to_string(blk) + ".";
            ones(p + "norm1.weight", {d}, W);
            wname(p + "norm1.bias", {d}, B, 0.0);
            wname(p + "attn.qkv.weight", {d, 3 * d}, W, 0.02);
            wname(p + "attn.qkv.bias", {3 * d}, B, 0.0);
            wname(p + "attn.proj.weight", {d, d}, W, 0.02);
            wname(p + "attn.proj.bias", {d}, B, 0.0);
            ones(p + "norm2.weight", {d}, W);
            wname(p + "norm2.bias", {d}, B, 0.0);
            wname(p + "mlp.fc1.weight", {d, h}, W, 0.02);
            wname(p + "mlp.fc1.bias", {h}, B, 0.0);
            wname(p + "mlp.fc2.weight", {h, d}, W, 0.02);
            wname(p + "mlp.fc2.bias", {d}, B, 0.0);
        }
        ones("norm.weight", {d}, W);
        wname("norm.bias", {d}, B, 0.0);
        wname("head.weight", {d, C}, Role::head, 0.01);
        wname("head.bias", {C}, Role::head, 0.0);
    } else {
        // mlp: image_size is the flat input dim, depth hidden layers of width
        // mlp_hidden_dim, single linear head
        const std::size_t in = static_cast<std::size_t>(spec.image_size);
        std::size_t prev = in;
        for (int l = 0; l < spec.depth; ++l) {
            const std::string p = "fc" + std::to_string(l) + ".";
            wname(p + "weight", {prev, h}, W, 0.02);
            wname(p + "bias", {h}, B, 0.0);
            prev = h;
        }
        wname("head.weight", {prev, C}, Role::head, 0.01);
        wname("head.bias", {C}, Role::head, 0.0);
    }
    return m;
}

struct ParamCounts {
    long long total = 0;
    long long tuned = 0;
    long long transmitted = 0;
};

/// Closed-form parameter counts for a spec under a tuning mode; no weights
/// are allocated. transmitted == tuned in every mode.
inline ParamCounts count_params(const ModelSpec& spec, const TuningMode& mode) {
    spec.validate();
    mode.validate();
    const long long d = spec.embed_dim;
    const long long h = spec.mlp_hidden_dim;
    const long long C = spec.num_classes;
    const long long depth = spec.depth;
    const long long head = d * C + C;

    long long total = 0, backbone_bias = 0;
    if (spec.family == Family::vit) {
        const long long p2 = static_cast<long long>(spec.patch_size) * spec.patch_size;
        const long long seq = spec.seq_len();
        total = (p2 * 3 * d + d)               // patch embedding
                + d                            // class token
                + seq * d                      // positional embedding
                + depth * ((d * 3 * d + 3 * d) + (d * d + d) + (d * h + h) + (h * d + d) + 2 * (2 * d))
                + 2 * d                        // final norm
                + head;
        backbone_bias = depth * (3 * d + d + h + d + 2 * d)  // qkv, proj, fc1, fc2, two norm biases
                        + d                                  // patch-embed bias
                        + d;                                 // final-norm bias
    } else {
        long long prev = spec.image_size;
        for (int l = 0; l < spec.depth; ++l) {
            total += prev * h + h;
            backbone_bias += h;
            prev = h;
        }
        const long long mlp_head = prev * C + C;
        total += mlp_head;
        ParamCounts pc;
        pc.total = total;
        switch (mode.kind) {
            case ModeKind::full: pc.tuned = total; break;
            case ModeKind::head: pc.tuned = mlp_head; break;
            case ModeKind::bias: pc.tuned = backbone_bias + mlp_head; break;
            default:
                throw InputError("count_params: mode '" + std::string(mode_name(mode.kind)) +
                                 "' is only supported for the vit family");
        }
        pc.transmitted = pc.tuned;
        return pc;
    }

    ParamCounts pc;
    pc.total = total;
    switch (mode.kind) {
        case ModeKind::full: pc.tuned = total; break;
        case ModeKind::head: pc.tuned = head; break;
        case ModeKind::bias: pc.tuned = backbone_bias + head; break;
        case ModeKind::adapter: {
            const long long b = mode.adapter_bottleneck;
            pc.tuned = depth * ((d * b + b) + (b * d + d)) + head;
            break;
        }
        case ModeKind::prompt:
            pc.tuned = depth * static_cast<long long>(mode.prompt_length) * d + head;
            break;
    }
    pc.transmitted = pc.tuned;
    return pc;
}

/// Flat vector over the transmitted set P, in registry order.
template <typename Real>
std::vector<Real> snapshot_transmitted(const Model<Real>& m) {
    std::vector<Real> out;
    out.reserve(static_cast<std::size_t>(m.registry.transmitted_count()));
    for (std::size_t i = 0; i < m.registry.entries.size(); ++i)
        if (m.registry.entries[i].transmitted)
            out.insert(out.end(), m.weights[i].data().begin(), m.weights[i].data().end());
    return out;
}

/// Overwrites exactly the transmitted entries from a flat vector; everything
/// else is left bit-unchanged.
template <typename Real>
void load_transmitted(Model<Real>& m, const std::vector<Real>& theta) {
    if (static_cast<long long>(theta.size()) != m.registry.transmitted_count())
        throw ContractError("load_transmitted: vector length " + std::to_string(theta.size()) +
                            " != transmitted count " +
                            std::to_string(m.registry.transmitted_count()));
    std::size_t off = 0;
    for (std::size_t i = 0; i < m.registry.entries.size(); ++i) {
        if (!m.registry.entries[i].transmitted) continue;
        auto& v = m.weights[i].data();
        std::copy_n(theta.begin() + off, v.size(), v.begin());
        off += v.size();
    }
}

}  // namespace fedpeft
