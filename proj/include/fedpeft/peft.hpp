// SPDX-License-Identifier: Apache-2.0
//
// Tuning-mode application and model forward passes. A mode decides which
// registry entries are trainable and transmitted, and may inject adapter or
// prompt parameters into the backbone.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedpeft/model.hpp"
#include "fedpeft/ops.hpp"

namespace fedpeft {

/// Freezes/unfreezes parameters and injects adapters or prompts. Transmitted
/// always equals trainable. A model accepts exactly one mode application.
template <typename Real>
void apply_mode(Model<Real>& m, const TuningMode& mode, std::uint64_t seed) {
    mode.validate();
    if (m.mode_applied) throw ContractError("apply_mode: model already has a tuning mode applied");
    if (m.spec.family != Family::vit &&
        (mode.kind == ModeKind::adapter || mode.kind == ModeKind::prompt))
        throw InputError("apply_mode: mode '" + std::string(mode_name(mode.kind)) +
                         "' is only supported for the vit family");

    const std::size_t d = static_cast<std::size_t>(m.spec.embed_dim);

    if (mode.kind == ModeKind::adapter) {
        const std::size_t b = static_cast<std::size_t>(mode.adapter_bottleneck);
        // one bottleneck module per block, inserted after that block's FFN
        // entries; up-projection zero-initialized so the module starts as
        // identity on the residual branch
        for (int blk = 0; blk < m.spec.depth; ++blk) {
            const std::string p = "blocks." + std::to_string(blk) + ".";
            const std::size_t pos = m.entry_index(p + "mlp.fc2.bias") + 1;
            auto mk = [&](const std::string& n, Shape s, double stddev) {
                return std::pair<ParamEntry, Tensor<Real>>(
                    ParamEntry{n, s, Role::adapter, true, true},
                    detail::init_tensor<Real>(s, seed, n, stddev));
            };
            auto [e_dw, t_dw] = mk(p + "adapter.down.weight", {d, b}, 0.01);
            auto [e_db, t_db] = mk(p + "adapter.down.bias", {b}, 0.0);
            auto [e_uw, t_uw] = mk(p + "adapter.up.weight", {b, d}, 0.0);
            auto [e_ub, t_ub] = mk(p + "adapter.up.bias", {d}, 0.0);
            m.insert_entry(pos, e_dw, t_dw);
            m.insert_entry(pos + 1, e_db, t_db);
            m.insert_entry(pos + 2, e_uw, t_uw);
            m.insert_entry(pos + 3, e_ub, t_ub);
        }
    } else if (mode.kind == ModeKind::prompt) {
        const std::size_t len = static_cast<std::size_t>(mode.prompt_length);
        for (int blk = 0; blk < m.spec.depth; ++blk) {
            const std::string n = "blocks." + std::to_string(blk) + ".prompt";
            Tensor<Real> t({len, d});
            if (!mode.prompt_zero_init && len > 0) {
                Rng rng = Rng::stream(seed, fnv1a64(n.data(), n.size()));
                for (auto& v : t.data()) v = static_cast<Real>(rng.uniform(-0.08, 0.08));
            }
            m.push_entry(ParamEntry{n, {len, d}, Role::prompt, true, true}, std::move(t));
        }
    }

    for (std::size_t i = 0; i < m.registry.entries.size(); ++i) {
        const auto& e = m.registry.entries[i];
        bool on = false;
        switch (mode.kind) {
            case ModeKind::full: on = true; break;
            case ModeKind::head: on = (e.role == Role::head); break;
            case ModeKind::bias: on = (e.role == Role::head || e.role == Role::backbone_bias); break;
            case ModeKind::adapter: on = (e.role == Role::head || e.role == Role::adapter); break;
            case ModeKind::prompt: on = (e.role == Role::head || e.role == Role::prompt); break;
        }
        m.set_trainable(i, on, on);
    }
    m.mode = mode;
    m.mode_applied = true;
}

namespace detail {

/// [1, ...] -> [batch, ...] by adding onto a constant zero tensor; the add
/// broadcast takes care of the backward reduction.
template <typename Real>
Tensor<Real> tile_batch(const Tensor<Real>& t, std::size_t batch, Tape<Real>* tape) {
    Shape s = t.shape();
    Shape out = s;
    out.insert(out.begin(), batch);
    return ops::add(Tensor<Real>(out), t, tape);
}

template <typename Real>
Tensor<Real> attention(const Model<Real>& m, const std::string& prefix, const Tensor<Real>& x,
                       Tape<Real>* tape) {
    const std::size_t B = x.dim(0), S = x.dim(1), d = x.dim(2);
    const std::size_t H = static_cast<std::size_t>(m.spec.num_heads);
    const std::size_t dh = d / H;

    Tensor<Real> qkv = ops::linear(x, m.weight(prefix + "qkv.weight"), m.weight(prefix + "qkv.bias"), tape);
    auto split_head = [&](std::size_t part) {
        Tensor<Real> t = ops::slice(qkv, 2, part * d, d, tape);       // [B,S,d]
        t = ops::reshape(t, {B, S, H, dh}, tape);
        return ops::transpose(t, 1, 2, tape);                         // [B,H,S,dh]
    };
    Tensor<Real> q = split_head(0);
    Tensor<Real> k = split_head(1);
    Tensor<Real> v = split_head(2);

    Tensor<Real> kt = ops::transpose(k, 2, 3, tape);                  // [B,H,dh,S]
    Tensor<Real> scores = ops::scale(ops::matmul(q, kt, tape), 1.0 / std::sqrt(double(dh)), tape);
    Tensor<Real> attn = ops::softmax(scores, tape);                   // [B,H,S,S]
    Tensor<Real> ctx = ops::matmul(attn, v, tape);                    // [B,H,S,dh]
    ctx = ops::transpose(ctx, 1, 2, tape);                            // [B,S,H,dh]
    ctx = ops::reshape(ctx, {B, S, d}, tape);
    return ops::linear(ctx, m.weight(prefix + "proj.weight"), m.weight(prefix + "proj.bias"), tape);
}

template <typename Real>
Tensor<Real> affine_norm(const Model<Real>& m, const std::string& prefix, const Tensor<Real>& x,
                         Tape<Real>* tape) {
    Tensor<Real> y = ops::layer_norm(x, tape);
    y = ops::mul(y, m.weight(prefix + "weight"), tape);
    return ops::add(y, m.weight(prefix + "bias"), tape);
}

/// One pre-norm block. Ordering with an adapter present: attention residual,
/// save h, FFN branch, adapter transforms the branch output residually, then
/// the FFN residual h is added.
template <typename Real>
Tensor<Real> vit_block(const Model<Real>& m, int blk, const Tensor<Real>& x_in, Tape<Real>* tape) {
    const std::string p = "blocks." + std::to_string(blk) + ".";
    Tensor<Real> x = ops::add(x_in, attention(m, p + "attn.", affine_norm(m, p + "norm1.", x_in, tape), tape), tape);
    Tensor<Real> h = x;
    Tensor<Real> f = affine_norm(m, p + "norm2.", x, tape);
    f = ops::linear(f, m.weight(p + "mlp.fc1.weight"), m.weight(p + "mlp.fc1.bias"), tape);
    f = ops::gelu(f, tape);
    f = ops::linear(f, m.weight(p + "mlp.fc2.weight"), m.weight(p + "mlp.fc2.bias"), tape);
    if (m.mode_applied && m.mode.kind == ModeKind::adapter) {
        Tensor<Real> a = ops::linear(f, m.weight(p + "adapter.down.weight"),
                                     m.weight(p + "adapter.down.bias"), tape);
        a = ops::gelu(a, tape);
        a = ops::linear(a, m.weight(p + "adapter.up.weight"), m.weight(p + "adapter.up.bias"), tape);
        f = ops::add(a, f, tape);
    }
    return ops::add(f, h, tape);
}

template <typename Real>
Tensor<Real> vit_forward(const Model<Real>& m, const Tensor<Real>& images, Tape<Real>* tape) {
    const std::size_t B = images.dim(0);
    const bool prompts = m.mode_applied && m.mode.kind == ModeKind::prompt;
    const std::size_t plen = prompts ? static_cast<std::size_t>(m.mode.prompt_length) : 0;

    Tensor<Real> x = ops::patchify(images, static_cast<std::size_t>(m.spec.patch_size), tape);
    x = ops::linear(x, m.weight("patch_embed.weight"), m.weight("patch_embed.bias"), tape);
    Tensor<Real> cls = tile_batch(m.weight("cls_token"), B, tape);    // [B,1,d]
    x = ops::concat<Real>({cls, x}, 1, tape);                         // [B,seq,d]
    x = ops::add(x, m.weight("pos_embed"), tape);

    const std::size_t seq = x.dim(1);
    for (int blk = 0; blk < m.spec.depth; ++blk) {
        if (prompts && plen > 0) {
            // prepend this layer's prompt tokens, run the block, strip them;
            // prompts see no positional embedding
            Tensor<Real> pt = tile_batch(m.weight("blocks." + std::to_string(blk) + ".prompt"), B, tape);
            x = ops::concat<Real>({pt, x}, 1, tape);
            x = vit_block(m, blk, x, tape);
            x = ops::slice(x, 1, plen, seq, tape);
        } else {
            x = vit_block(m, blk, x, tape);
        }
    }
    x = affine_norm(m, "norm.", x, tape);
    Tensor<Real> cls_out = ops::slice(x, 1, 0, 1, tape);              // [B,1,d]
    cls_out = ops::reshape(cls_out, {B, x.dim(2)}, tape);
    return ops::linear(cls_out, m.weight("head.weight"), m.weight("head.bias"), tape);
}

template <typename Real>
Tensor<Real> mlp_forward(const Model<Real>& m, const Tensor<Real>& x_in, Tape<Real>* tape) {
    Tensor<Real> x = x_in;
    for (int l = 0; l < m.spec.depth; ++l) {
        const std::string p = "fc" + std::to_string(l) + ".";
        x = ops::linear(x, m.weight(p + "weight"), m.weight(p + "bias"), tape);
        x = ops::gelu(x, tape);
    }
    return ops::linear(x, m.weight("head.weight"), m.weight("head.bias"), tape);
}

}  // namespace detail

/// Logits for a batch. vit expects [B, 3, H, W], mlp expects [B, features].
/// Dispatches to the prompt/adapter paths when the applied mode requires it.
template <typename Real>
Tensor<Real> forward_logits(const Model<Real>& m, const Tensor<Real>& input, Tape<Real>* tape) {
    if (m.spec.family == Family::vit) return detail::vit_forward(m, input, tape);
    return detail::mlp_forward(m, input, tape);
}

}  // namespace fedpeft
