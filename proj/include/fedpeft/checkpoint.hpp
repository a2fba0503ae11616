// SPDX-License-Identifier: Apache-2.0
//
// Versioned binary model container: header (spec, tuning mode, flags),
// registry entries, then raw little-endian values per entry in registry
// order. Layout is documented in docs/checkpoint_format.md.

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "fedpeft/errors.hpp"
#include "fedpeft/model.hpp"
#include "fedpeft/peft.hpp"

namespace fedpeft {

inline constexpr std::uint32_t kCheckpointMagic = 0x4650434bu;  // "FPCK"
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointInfo {
    ModelSpec spec;
    bool pretrained = false;
    bool mode_applied = false;
    TuningMode mode;
    int precision_bytes = 4;
};

namespace ckpt_detail {

inline void put_u8(std::ostream& os, std::uint8_t v) { os.put(static_cast<char>(v)); }
inline void put_u16(std::ostream& os, std::uint16_t v) {
    for (int i = 0; i < 2; ++i) put_u8(os, static_cast<std::uint8_t>(v >> (8 * i)));
}
inline void put_u32(std::ostream& os, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) put_u8(os, static_cast<std::uint8_t>(v >> (8 * i)));
}
inline void put_u64(std::ostream& os, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) put_u8(os, static_cast<std::uint8_t>(v >> (8 * i)));
}

inline std::uint8_t get_u8(std::istream& is, const std::string& path) {
    const int c = is.get();
    if (c == EOF) throw ParseError(path + ": truncated checkpoint at byte " + std::to_string(is.tellg()));
    return static_cast<std::uint8_t>(c);
}
inline std::uint16_t get_u16(std::istream& is, const std::string& path) {
    std::uint16_t v = 0;
    for (int i = 0; i < 2; ++i) v |= static_cast<std::uint16_t>(get_u8(is, path)) << (8 * i);
    return v;
}
inline std::uint32_t get_u32(std::istream& is, const std::string& path) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(get_u8(is, path)) << (8 * i);
    return v;
}
inline std::uint64_t get_u64(std::istream& is, const std::string& path) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(get_u8(is, path)) << (8 * i);
    return v;
}

template <typename Real>
void put_real(std::ostream& os, Real v) {
    if constexpr (sizeof(Real) == 4)
        put_u32(os, std::bit_cast<std::uint32_t>(v));
    else
        put_u64(os, std::bit_cast<std::uint64_t>(v));
}

template <typename Real>
Real get_real(std::istream& is, const std::string& path) {
    if constexpr (sizeof(Real) == 4)
        return std::bit_cast<Real>(get_u32(is, path));
    else
        return std::bit_cast<Real>(get_u64(is, path));
}

inline void write_header(std::ostream& os, const ModelSpec& spec, bool pretrained,
                         bool mode_applied, const TuningMode& mode, int precision_bytes) {
    put_u32(os, kCheckpointMagic);
    put_u32(os, kCheckpointVersion);
    put_u8(os, static_cast<std::uint8_t>(precision_bytes));
    put_u8(os, static_cast<std::uint8_t>((pretrained ? 1 : 0) | (mode_applied ? 2 : 0)));
    put_u8(os, spec.family == Family::vit ? 1 : 0);
    put_u8(os, static_cast<std::uint8_t>(mode.kind));
    for (const int v : {spec.image_size, spec.patch_size, spec.embed_dim, spec.mlp_hidden_dim,
                        spec.depth, spec.num_heads, spec.num_classes, mode.adapter_bottleneck,
                        mode.prompt_length})
        put_u32(os, static_cast<std::uint32_t>(v));
    put_u8(os, mode.prompt_zero_init ? 1 : 0);
}

inline CheckpointInfo read_header(std::istream& is, const std::string& path) {
    if (get_u32(is, path) != kCheckpointMagic) throw ParseError(path + ": bad checkpoint magic");
    const std::uint32_t version = get_u32(is, path);
    if (version != kCheckpointVersion)
        throw ParseError(path + ": unsupported checkpoint version " + std::to_string(version));
    CheckpointInfo info;
    info.precision_bytes = get_u8(is, path);
    const std::uint8_t flags = get_u8(is, path);
    info.pretrained = (flags & 1) != 0;
    info.mode_applied = (flags & 2) != 0;
    info.spec.family = get_u8(is, path) == 1 ? Family::vit : Family::mlp;
    info.mode.kind = static_cast<ModeKind>(get_u8(is, path));
    int vals[9];
    for (auto& v : vals) v = static_cast<int>(get_u32(is, path));
    info.spec.image_size = vals[0];
    info.spec.patch_size = vals[1];
    info.spec.embed_dim = vals[2];
    info.spec.mlp_hidden_dim = vals[3];
    info.spec.depth = vals[4];
    info.spec.num_heads = vals[5];
    info.spec.num_classes = vals[6];
    info.mode.adapter_bottleneck = vals[7];
    info.mode.prompt_length = vals[8];
    info.mode.prompt_zero_init = get_u8(is, path) != 0;
    return info;
}

}  // namespace ckpt_detail

template <typename Real>
void save_checkpoint(const Model<Real>& m, const std::string& path, bool pretrained) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ParseError(path + ": cannot open for writing");
    ckpt_detail::write_header(os, m.spec, pretrained, m.mode_applied, m.mode,
                              static_cast<int>(sizeof(Real)));
    ckpt_detail::put_u32(os, static_cast<std::uint32_t>(m.registry.entries.size()));
    for (const auto& e : m.registry.entries) {
        ckpt_detail::put_u16(os, static_cast<std::uint16_t>(e.name.size()));
        os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
        ckpt_detail::put_u8(os, static_cast<std::uint8_t>(e.role));
        ckpt_detail::put_u8(os, e.trainable ? 1 : 0);
        ckpt_detail::put_u8(os, e.transmitted ? 1 : 0);
        ckpt_detail::put_u8(os, static_cast<std::uint8_t>(e.shape.size()));
        for (const auto d : e.shape) ckpt_detail::put_u64(os, d);
    }
    for (const auto& w : m.weights)
        for (const Real v : w.data()) ckpt_detail::put_real(os, v);
    if (!os) throw ParseError(path + ": write failed");
}

inline CheckpointInfo peek_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ParseError(path + ": cannot open");
    return ckpt_detail::read_header(is, path);
}

/// Rebuilds the model (build + mode application) and overwrites its weights
/// from the file; registry names and shapes must match the file exactly.
template <typename Real>
Model<Real> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ParseError(path + ": cannot open");
    const CheckpointInfo info = ckpt_detail::read_header(is, path);
    if (info.precision_bytes != static_cast<int>(sizeof(Real)))
        throw InputError(path + ": checkpoint precision is " +
                         std::to_string(info.precision_bytes * 8) + "-bit, engine expects " +
                         std::to_string(sizeof(Real) * 8) + "-bit");

    Model<Real> m = build_model<Real>(info.spec, 0);
    if (info.mode_applied) apply_mode(m, info.mode, 0);

    const std::uint32_t count = ckpt_detail::get_u32(is, path);
    if (count != m.registry.entries.size())
        throw ParseError(path + ": entry count " + std::to_string(count) + " != expected " +
                         std::to_string(m.registry.entries.size()));
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint16_t name_len = ckpt_detail::get_u16(is, path);
        std::string name(name_len, '\0');
        if (!is.read(name.data(), name_len)) throw ParseError(path + ": truncated entry name");
        const auto role = static_cast<Role>(ckpt_detail::get_u8(is, path));
        const bool trainable = ckpt_detail::get_u8(is, path) != 0;
        const bool transmitted = ckpt_detail::get_u8(is, path) != 0;
        const std::uint8_t ndim = ckpt_detail::get_u8(is, path);
        Shape shape(ndim);
        for (auto& d : shape) d = ckpt_detail::get_u64(is, path);

        const auto& e = m.registry.entries[i];
        if (e.name != name || e.shape != shape || e.role != role || e.trainable != trainable ||
            e.transmitted != transmitted)
            throw ParseError(path + ": entry " + std::to_string(i) + " ('" + name +
                             "') does not match the rebuilt registry");
    }
    for (auto& w : m.weights)
        for (auto& v : w.data()) v = ckpt_detail::get_real<Real>(is, path);
    return m;
}

}  // namespace fedpeft
