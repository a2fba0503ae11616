// SPDX-License-Identifier: Apache-2.0
//
// Differentiable ops over Tensor<Real>. Every op takes an optional tape; an
// op is recorded only when a tape is active and some input lies on a path to
// a trainable leaf, so frozen subgraphs cost nothing in the backward pass.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "fedpeft/tensor.hpp"

namespace fedpeft {
namespace ops {

inline constexpr double kLayerNormEps = 1e-6;

namespace detail {

template <typename Real>
bool recording(const Tape<Real>* tape, std::initializer_list<const Tensor<Real>*> inputs) {
    if (tape == nullptr) return false;
    for (const auto* t : inputs)
        if ((*t).needs_grad()) return true;
    return false;
}

template <typename Real>
void mark_output(Tensor<Real>& out, bool recorded) {
    out.node()->needs_grad = recorded;
}

template <typename Real>
const std::vector<Real>* out_grad(const std::shared_ptr<TensorNode<Real>>& n) {
    return n->grad.empty() ? nullptr : &n->grad;
}

template <typename Real>
std::vector<Real>& grad_buf(const std::shared_ptr<TensorNode<Real>>& n) {
    if (n->grad.empty()) n->grad.assign(n->value.size(), Real(0));
    return n->grad;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// matmul: [..., m, k] x [k, n] or [..., m, k] x [..., k, n] (equal leading dims)

template <typename Real>
Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b, Tape<Real>* tape) {
    if (a.rank() < 2 || b.rank() < 2)
        throw ShapeError("matmul: operands must have rank >= 2, got " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
    const std::size_t m = a.dim(a.rank() - 2);
    const std::size_t k = a.dim(a.rank() - 1);
    const bool shared_b = (b.rank() == 2);
    if (!shared_b) {
        if (b.rank() != a.rank() ||
            !std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin()))
            throw ShapeError("matmul: leading dims differ, " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
    if (b.dim(b.rank() - 2) != k)
        throw ShapeError("matmul: inner dims differ, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    const std::size_t n = b.dim(b.rank() - 1);

    Shape out_shape(a.shape().begin(), a.shape().end() - 1);
    out_shape.push_back(n);
    Tensor<Real> out(out_shape);

    const std::size_t batches = a.size() / (m * k);
    const Real* pa = a.data().data();
    const Real* pb = b.data().data();
    Real* pc = out.data().data();
    for (std::size_t bi = 0; bi < batches; ++bi) {
        const Real* ab = pa + bi * m * k;
        const Real* bb = shared_b ? pb : pb + bi * k * n;
        Real* cb = pc + bi * m * n;
        for (std::size_t i = 0; i < m; ++i) {
            Real* crow = cb + i * n;
            for (std::size_t kk = 0; kk < k; ++kk) {
                const Real av = ab[i * k + kk];
                const Real* brow = bb + kk * n;
                for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        }
    }

    const bool rec = detail::recording(tape, {&a, &b});
    detail::mark_output(out, rec);
    if (rec) {
        auto na = a.node();
        auto nb = b.node();
        auto nc = out.node();
        tape->record([na, nb, nc, m, k, n, batches, shared_b] {
            const auto* g = detail::out_grad(nc);
            if (!g) return;
            const Real* pg = g->data();
            if (na->needs_grad) {
                auto& da = detail::grad_buf(na);
                const Real* pbv = nb->value.data();
                for (std::size_t bi = 0; bi < batches; ++bi) {
                    const Real* gb = pg + bi * m * n;
                    const Real* bb = shared_b ? pbv : pbv + bi * k * n;
                    Real* dab = da.data() + bi * m * k;
                    for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t kk = 0; kk < k; ++kk) {
                            Real s = 0;
                            const Real* grow = gb + i * n;
                            const Real* brow = bb + kk * n;
                            for (std::size_t j = 0; j < n; ++j) s += grow[j] * brow[j];
                            dab[i * k + kk] += s;
                        }
                }
            }
            if (nb->needs_grad) {
                auto& db = detail::grad_buf(nb);
                const Real* pav = na->value.data();
                for (std::size_t bi = 0; bi < batches; ++bi) {
                    const Real* gb = pg + bi * m * n;
                    const Real* ab = pav + bi * m * k;
                    Real* dbb = shared_b ? db.data() : db.data() + bi * k * n;
                    for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t kk = 0; kk < k; ++kk) {
                            const Real av = ab[i * k + kk];
                            const Real* grow = gb + i * n;
                            Real* drow = dbb + kk * n;
                            for (std::size_t j = 0; j < n; ++j) drow[j] += av * grow[j];
                        }
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// transpose: swap two axes (materialized copy)

namespace detail {

template <typename Real>
void permute_swap(const std::vector<Real>& in, std::vector<Real>& out, const Shape& in_shape,
                  std::size_t d0, std::size_t d1) {
    const std::size_t r = in_shape.size();
    std::vector<std::size_t> in_strides(r, 1);
    for (std::size_t i = r - 1; i > 0; --i) in_strides[i - 1] = in_strides[i] * in_shape[i];
    Shape out_shape = in_shape;
    std::swap(out_shape[d0], out_shape[d1]);
    std::vector<std::size_t> out_strides(r, 1);
    for (std::size_t i = r - 1; i > 0; --i) out_strides[i - 1] = out_strides[i] * out_shape[i];
    // walk output linearly, map each index back to the input
    std::vector<std::size_t> idx(r, 0);
    const std::size_t total = in.size();
    for (std::size_t o = 0; o < total; ++o) {
        std::size_t rem = o, src = 0;
        for (std::size_t i = 0; i < r; ++i) {
            idx[i] = rem / out_strides[i];
            rem %= out_strides[i];
        }
        std::swap(idx[d0], idx[d1]);
        for (std::size_t i = 0; i < r; ++i) src += idx[i] * in_strides[i];
        out[o] = in[src];
    }
}

}  // namespace detail

template <typename Real>
Tensor<Real> transpose(const Tensor<Real>& x, std::size_t d0, std::size_t d1, Tape<Real>* tape) {
    if (d0 >= x.rank() || d1 >= x.rank())
        throw ShapeError("transpose: axis out of range for shape " + shape_str(x.shape()));
    Shape out_shape = x.shape();
    std::swap(out_shape[d0], out_shape[d1]);
    Tensor<Real> out(out_shape);
    detail::permute_swap(x.data(), out.data(), x.shape(), d0, d1);

    const bool rec = detail::recording(tape, {&x});
    detail::mark_output(out, rec);
    if (rec) {
        auto nx = x.node();
        auto nc = out.node();
        Shape oshape = out_shape;
        tape->record([nx, nc, oshape, d0, d1] {
            const auto* g = detail::out_grad(nc);
            if (!g || !nx->needs_grad) return;
            std::vector<Real> tmp(g->size());
            detail::permute_swap(*g, tmp, oshape, d0, d1);
            auto& dx = detail::grad_buf(nx);
            for (std::size_t i = 0; i < tmp.size(); ++i) dx[i] += tmp[i];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// reshape

template <typename Real>
Tensor<Real> reshape(const Tensor<Real>& x, Shape new_shape, Tape<Real>* tape) {
    if (shape_numel(new_shape) != x.size())
        throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                         shape_str(new_shape));
    Tensor<Real> out(std::move(new_shape), x.data());
    const bool rec = detail::recording(tape, {&x});
    detail::mark_output(out, rec);
    if (rec) {
        auto nx = x.node();
        auto nc = out.node();
        tape->record([nx, nc] {
            const auto* g = detail::out_grad(nc);
            if (!g || !nx->needs_grad) return;
            auto& dx = detail::grad_buf(nx);
            for (std::size_t i = 0; i < g->size(); ++i) dx[i] += (*g)[i];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// add / mul: equal shapes, or b broadcast as a trailing suffix (bias, LN affine)

namespace detail {

template <typename Real>
std::size_t broadcast_repeat(const Tensor<Real>& a, const Tensor<Real>& b, const char* op) {
    if (b.shape() == a.shape()) return 1;
    if (b.size() == 1) return a.size();
    if (b.rank() <= a.rank() &&
        std::equal(b.shape().begin(), b.shape().end(), a.shape().end() - b.rank()))
        return a.size() / b.size();
    throw ShapeError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()) + " do not broadcast");
}

}  // namespace detail

template <typename Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b, Tape<Real>* tape) {
    const std::size_t repeat = detail::broadcast_repeat(a, b, "add");
    const std::size_t bn = b.size();
    Tensor<Real> out(a.shape());
    const Real* pa = a.data().data();
    const Real* pb = b.data().data();
    Real* pc = out.data().data();
    if (bn == 1) {
        const Real bv = pb[0];
        for (std::size_t i = 0; i < a.size(); ++i) pc[i] = pa[i] + bv;
    } else {
        for (std::size_t r = 0; r < repeat; ++r)
            for (std::size_t i = 0; i < bn; ++i) pc[r * bn + i] = pa[r * bn + i] + pb[i];
    }

    const bool rec = detail::recording(tape, {&a, &b});
    detail::mark_output(out, rec);
    if (rec) {
        auto na = a.node();
        auto nb = b.node();
        auto nc = out.node();
        tape->record([na, nb, nc, repeat, bn] {
            const auto* g = detail::out_grad(nc);
            if (!g) return;
            if (na->needs_grad) {
                auto& da = detail::grad_buf(na);
                for (std::size_t i = 0; i < g->size(); ++i) da[i] += (*g)[i];
            }
            if (nb->needs_grad) {
                auto& db = detail::grad_buf(nb);
                if (bn == 1) {
                    Real s = 0;
                    for (const Real gv : *g) s += gv;
                    db[0] += s;
                } else {
                    for (std::size_t r = 0; r < repeat; ++r)
                        for (std::size_t i = 0; i < bn; ++i) db[i] += (*g)[r * bn + i];
                }
            }
        });
    }
    return out;
}

template <typename Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b, Tape<Real>* tape) {
    const std::size_t repeat = detail::broadcast_repeat(a, b, "mul");
    const std::size_t bn = b.size();
    Tensor<Real> out(a.shape());
    const Real* pa = a.data().data();
    const Real* pb = b.data().data();
    Real* pc = out.data().data();
    for (std::size_t r = 0; r < repeat; ++r)
        for (std::size_t i = 0; i < bn; ++i) pc[r * bn + i] = pa[r * bn + i] * pb[i];

    const bool rec = detail::recording(tape, {&a, &b});
    detail::mark_output(out, rec);
    if (rec) {
        auto na = a.node();
        auto nb = b.node();
        auto nc = out.node();
        tape->record([na, nb, nc, repeat, bn] {
            const auto* g = detail::out_grad(nc);
            if (!g) return;
            if (na->needs_grad) {
                auto& da = detail::grad_buf(na);
                for (std::size_t r = 0; r < repeat; ++r)
                    for (std::size_t i = 0; i < bn; ++i)
                        da[r * bn + i] += (*g)[r * bn + i] * nb->value[i];
            }
            if (nb->needs_grad) {
                auto& db = detail::grad_buf(nb);
                for (std::size_t r = 0; r < repeat; ++r)
                    for (std::size_t i = 0; i < bn; ++i)
                        db[i] += (*g)[r * bn + i] * na->value[r * bn + i];
            }
        });
    }
    return out;
}

/// Multiply by a compile-time-known constant (e.g. attention 1/sqrt(d_head)).
template <typename Real>
Tensor<Real> scale(const Tensor<Real>& x, double c, Tape<Real>* tape) {
    Tensor<Real> out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out.data()[i] = x.data()[i] * static_cast<Real>(c);
    const bool rec = detail::recording(tape, {&x});
    detail::mark_output(out, rec);
    if (rec) {
        auto nx = x.node();
        auto nc = out.node();
        tape->record([nx, nc, c] {
            const auto* g = detail::out_grad(nc);
            if (!g || !nx->needs_grad) return;
            auto& dx = detail::grad_buf(nx);
            for (std::size_t i = 0; i < g->size(); ++i) dx[i] += (*g)[i] * static_cast<Real>(c);
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// gelu: exact Gaussian-CDF form x * Phi(x)

template <typename Real>
Tensor<Real> gelu(const Tensor<Real>& x, Tape<Real>* tape) {
    Tensor<Real> out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double v = static_cast<double>(x.data()[i]);
        out.data()[i] = static_cast<Real>(v * 0.5 * (1.0 + std::erf(v / M_SQRT2)));
    }
    const bool rec = detail::recording(tape, {&x});
    detail::mark_output(out, rec);
    if (rec) {
        auto nx = x.node();
        auto nc = out.node();
        tape->record([nx, nc] {
            const auto* g = detail::out_grad(nc);
            if (!g || !nx->needs_grad) return;
            auto& dx = detail::grad_buf(nx);
            constexpr double inv_sqrt_2pi = 0.3989422804014327;
            for (std::size_t i = 0; i < g->size(); ++i) {
                const double v = static_cast<double>(nx->value[i]);
                const double cdf = 0.5 * (1.0 + std::erf(v / M_SQRT2));
                const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
                dx[i] += (*g)[i] * static_cast<Real>(cdf + v * pdf);
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// softmax over the last dimension

template <typename Real>
Tensor<Real> softmax(const Tensor<Real>& x, Tape<Real>* tape) {
    if (x.rank() < 1) throw ShapeError("softmax: rank-0 input");
    const std::size_t cols = x.dim(x.rank() - 1);
    const std::size_t rows = x.size() / cols;
    Tensor<Real> out(x.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const Real* xr = x.data().data() + r * cols;
        Real* yr = out.data().data() + r * cols;
        Real mx = xr[0];
        for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, xr[j]);
        Real sum = 0;
        for (std::size_t j = 0; j < cols; ++j) {
            yr[j] = std::exp(xr[j] - mx);
            sum += yr[j];
        }
        for (std::size_t j = 0; j < cols; ++j) yr[j] /= sum;
    }
    const bool rec = detail::recording(tape, {&x});
    detail::mark_output(out, rec);
    if (rec) {
        auto nx = x.node();
        auto nc = out.node();
        tape->record([nx, nc, rows, cols] {
            const auto* g = detail::out_grad(nc);
            if (!g || !nx->needs_grad) return;
            auto& dx = detail::grad_buf(nx);
            for (std::size_t r = 0; r < rows; ++r) {
                const Real* yr = nc->value.data() + r * cols;
                const Real* gr = g->data() + r * cols;
                Real dot = 0;
                for (std::size_t j = 0; j < cols; ++j) dot += gr[j] * yr[j];
                for (std::size_t j = 0; j < cols; ++j) dx[r * cols + j] += yr[j] * (gr[j] - dot);
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// layer_norm over the last dimension, epsilon added to the variance, no affine

template <typename Real>
Tensor<Real> layer_norm(const Tensor<Real>& x, Tape<Real>* tape) {
    if (x.rank() < 1) throw ShapeError("layer_norm: rank-0 input");
    const std::size_t cols = x.dim(x.rank() - 1);
    const std::size_t rows = x.size() / cols;
    Tensor<Real> out(x.shape());
    std::vector<Real> inv_std(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const Real* xr = x.data().data() + r * cols;
        Real* yr = out.data().data() + r * cols;
        Real mean = 0;
        for (std::size_t j = 0; j < cols; ++j) mean += xr[j];
        mean /= static_cast<Real>(cols);
        Real var = 0;
        for (std::size_t j = 0; j < cols; ++j) {
            const Real d = xr[j] - mean;
            var += d * d;
        }
        var /= static_cast<Real>(cols);
        const Real inv = Real(1) / std::sqrt(var + static_cast<Real>(kLayerNormEps));
        inv_std[r] = inv;
        for (std::size_t j = 0; j < cols; ++j) yr[j] = (xr[j] - mean) * inv;
    }
    const bool rec = detail::recording(tape, {&x});
    detail::mark_output(out, rec);
    if (rec) {
        auto nx = x.node();
        auto nc = out.node();
        tape->record([nx, nc, rows, cols, inv_std = std::move(inv_std)] {
            const auto* g = detail::out_grad(nc);
            if (!g || !nx->needs_grad) return;
            auto& dx = detail::grad_buf(nx);
            for (std::size_t r = 0; r < rows; ++r) {
                const Real* yr = nc->value.data() + r * cols;
                const Real* gr = g->data() + r * cols;
                Real gmean = 0, gymean = 0;
                for (std::size_t j = 0; j < cols; ++j) {
                    gmean += gr[j];
                    gymean += gr[j] * yr[j];
                }
                gmean /= static_cast<Real>(cols);
                gymean /= static_cast<Real>(cols);
                for (std::size_t j = 0; j < cols; ++j)
                    dx[r * cols + j] += inv_std[r] * (gr[j] - gmean - yr[j] * gymean);
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// concat / slice along an arbitrary axis

template <typename Real>
Tensor<Real> concat(const std::vector<Tensor<Real>>& parts, std::size_t axis, Tape<Real>* tape) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    const Shape& s0 = parts[0].shape();
    if (axis >= s0.size()) throw ShapeError("concat: axis out of range for " + shape_str(s0));
    std::size_t axis_total = 0;
    for (const auto& p : parts) {
        if (p.rank() != s0.size())
            throw ShapeError("concat: rank mismatch, " + shape_str(s0) + " vs " + shape_str(p.shape()));
        for (std::size_t i = 0; i < s0.size(); ++i)
            if (i != axis && p.shape()[i] != s0[i])
                throw ShapeError("concat: shape mismatch on non-axis dim, " + shape_str(s0) +
                                 " vs " + shape_str(p.shape()));
        axis_total += p.shape()[axis];
    }
    Shape out_shape = s0;
    out_shape[axis] = axis_total;

    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s0[i];
    for (std::size_t i = axis + 1; i < s0.size(); ++i) inner *= s0[i];

    Tensor<Real> out(out_shape);
    Real* pc = out.data().data();
    const std::size_t out_block = axis_total * inner;
    for (std::size_t o = 0; o < outer; ++o) {
        std::size_t off = 0;
        for (const auto& p : parts) {
            const std::size_t blk = p.shape()[axis] * inner;
            std::copy_n(p.data().data() + o * blk, blk, pc + o * out_block + off);
            off += blk;
        }
    }

    bool rec = false;
    if (tape)
        for (const auto& p : parts)
            if (p.needs_grad()) rec = true;
    detail::mark_output(out, rec);
    if (rec) {
        std::vector<std::shared_ptr<TensorNode<Real>>> in_nodes;
        std::vector<std::size_t> blocks;
        for (const auto& p : parts) {
            in_nodes.push_back(p.node());
            blocks.push_back(p.shape()[axis] * inner);
        }
        auto nc = out.node();
        tape->record([in_nodes, blocks, nc, outer, out_block] {
            const auto* g = detail::out_grad(nc);
            if (!g) return;
            for (std::size_t o = 0; o < outer; ++o) {
                std::size_t off = 0;
                for (std::size_t pi = 0; pi < in_nodes.size(); ++pi) {
                    if (in_nodes[pi]->needs_grad) {
                        auto& di = detail::grad_buf(in_nodes[pi]);
                        const Real* src = g->data() + o * out_block + off;
                        Real* dst = di.data() + o * blocks[pi];
                        for (std::size_t i = 0; i < blocks[pi]; ++i) dst[i] += src[i];
                    }
                    off += blocks[pi];
                }
            }
        });
    }
    return out;
}

template <typename Real>
Tensor<Real> slice(const Tensor<Real>& x, std::size_t axis, std::size_t start, std::size_t len,
                   Tape<Real>* tape) {
    if (axis >= x.rank()) throw ShapeError("slice: axis out of range for " + shape_str(x.shape()));
    if (start + len > x.dim(axis))
        throw ShapeError("slice: range [" + std::to_string(start) + "," +
                         std::to_string(start + len) + ") exceeds dim " +
                         std::to_string(x.dim(axis)) + " of " + shape_str(x.shape()));
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
    for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);

    Shape out_shape = x.shape();
    out_shape[axis] = len;
    Tensor<Real> out(out_shape);
    const std::size_t in_block = x.dim(axis) * inner;
    const std::size_t out_block = len * inner;
    for (std::size_t o = 0; o < outer; ++o)
        std::copy_n(x.data().data() + o * in_block + start * inner, out_block,
                    out.data().data() + o * out_block);

    const bool rec = detail::recording(tape, {&x});
    detail::mark_output(out, rec);
    if (rec) {
        auto nx = x.node();
        auto nc = out.node();
        tape->record([nx, nc, outer, inner, in_block, out_block, start] {
            const auto* g = detail::out_grad(nc);
            if (!g || !nx->needs_grad) return;
            auto& dx = detail::grad_buf(nx);
            for (std::size_t o = 0; o < outer; ++o) {
                const Real* src = g->data() + o * out_block;
                Real* dst = dx.data() + o * in_block + start * inner;
                for (std::size_t i = 0; i < out_block; ++i) dst[i] += src[i];
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// reductions

template <typename Real>
Tensor<Real> sum(const Tensor<Real>& x, Tape<Real>* tape) {
    Real s = 0;
    for (const Real v : x.data()) s += v;
    Tensor<Real> out = Tensor<Real>::scalar(s);
    const bool rec = detail::recording(tape, {&x});
    detail::mark_output(out, rec);
    if (rec) {
        auto nx = x.node();
        auto nc = out.node();
        tape->record([nx, nc] {
            const auto* g = detail::out_grad(nc);
            if (!g || !nx->needs_grad) return;
            auto& dx = detail::grad_buf(nx);
            for (auto& d : dx) d += (*g)[0];
        });
    }
    return out;
}

template <typename Real>
Tensor<Real> mean(const Tensor<Real>& x, Tape<Real>* tape) {
    Tensor<Real> s = sum(x, tape);
    return scale(s, 1.0 / static_cast<double>(x.size()), tape);
}

// ---------------------------------------------------------------------------
// cross-entropy: mean negative log-likelihood over the batch

template <typename Real>
Tensor<Real> cross_entropy_loss(const Tensor<Real>& logits, const std::vector<int>& labels,
                                Tape<Real>* tape) {
    if (logits.rank() != 2)
        throw ShapeError("cross_entropy_loss: logits must be [batch, classes], got " +
                         shape_str(logits.shape()));
    const std::size_t batch = logits.dim(0);
    const std::size_t classes = logits.dim(1);
    if (labels.size() != batch)
        throw ShapeError("cross_entropy_loss: " + std::to_string(labels.size()) + " labels for batch " +
                         std::to_string(batch));
    for (const int y : labels)
        if (y < 0 || static_cast<std::size_t>(y) >= classes)
            throw InputError("cross_entropy_loss: label " + std::to_string(y) + " out of [0," +
                             std::to_string(classes) + ")");

    Real total = 0;
    for (std::size_t b = 0; b < batch; ++b) {
        const Real* z = logits.data().data() + b * classes;
        Real mx = z[0];
        for (std::size_t j = 1; j < classes; ++j) mx = std::max(mx, z[j]);
        Real lse = 0;
        for (std::size_t j = 0; j < classes; ++j) lse += std::exp(z[j] - mx);
        lse = mx + std::log(lse);
        total += lse - z[labels[b]];
    }
    Tensor<Real> out = Tensor<Real>::scalar(total / static_cast<Real>(batch));

    const bool rec = detail::recording(tape, {&logits});
    detail::mark_output(out, rec);
    if (rec) {
        auto nz = logits.node();
        auto nc = out.node();
        tape->record([nz, nc, labels, batch, classes] {
            const auto* g = detail::out_grad(nc);
            if (!g || !nz->needs_grad) return;
            auto& dz = detail::grad_buf(nz);
            const Real gv = (*g)[0] / static_cast<Real>(batch);
            for (std::size_t b = 0; b < batch; ++b) {
                const Real* z = nz->value.data() + b * classes;
                Real mx = z[0];
                for (std::size_t j = 1; j < classes; ++j) mx = std::max(mx, z[j]);
                Real sum = 0;
                std::vector<Real> e(classes);
                for (std::size_t j = 0; j < classes; ++j) {
                    e[j] = std::exp(z[j] - mx);
                    sum += e[j];
                }
                for (std::size_t j = 0; j < classes; ++j) {
                    Real p = e[j] / sum;
                    if (j == static_cast<std::size_t>(labels[b])) p -= Real(1);
                    dz[b * classes + j] += gv * p;
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// patchify: [B, C, H, W] -> [B, (H/p)*(W/p), C*p*p]

template <typename Real>
Tensor<Real> patchify(const Tensor<Real>& x, std::size_t patch, Tape<Real>* tape) {
    if (x.rank() != 4)
        throw ShapeError("patchify: expected [batch, channels, h, w], got " + shape_str(x.shape()));
    const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (H % patch != 0 || W % patch != 0)
        throw ShapeError("patchify: image " + shape_str(x.shape()) + " not divisible by patch " +
                         std::to_string(patch));
    const std::size_t gh = H / patch, gw = W / patch;
    const std::size_t S = gh * gw;
    const std::size_t D = C * patch * patch;
    Tensor<Real> out({B, S, D});
    const Real* px = x.data().data();
    Real* pc = out.data().data();
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t sy = 0; sy < gh; ++sy)
            for (std::size_t sx = 0; sx < gw; ++sx) {
                Real* dst = pc + (b * S + sy * gw + sx) * D;
                for (std::size_t c = 0; c < C; ++c)
                    for (std::size_t pi = 0; pi < patch; ++pi)
                        for (std::size_t pj = 0; pj < patch; ++pj)
                            dst[c * patch * patch + pi * patch + pj] =
                                px[((b * C + c) * H + sy * patch + pi) * W + sx * patch + pj];
            }

    const bool rec = detail::recording(tape, {&x});
    detail::mark_output(out, rec);
    if (rec) {
        auto nx = x.node();
        auto nc = out.node();
        tape->record([nx, nc, B, C, H, W, patch, gh, gw, S, D] {
            const auto* g = detail::out_grad(nc);
            if (!g || !nx->needs_grad) return;
            auto& dx = detail::grad_buf(nx);
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t sy = 0; sy < gh; ++sy)
                    for (std::size_t sx = 0; sx < gw; ++sx) {
                        const Real* src = g->data() + (b * S + sy * gw + sx) * D;
                        for (std::size_t c = 0; c < C; ++c)
                            for (std::size_t pi = 0; pi < patch; ++pi)
                                for (std::size_t pj = 0; pj < patch; ++pj)
                                    dx[((b * C + c) * H + sy * patch + pi) * W + sx * patch + pj] +=
                                        src[c * patch * patch + pi * patch + pj];
                    }
        });
    }
    return out;
}

/// x @ W + b
template <typename Real>
Tensor<Real> linear(const Tensor<Real>& x, const Tensor<Real>& w, const Tensor<Real>& b,
                    Tape<Real>* tape) {
    return add(matmul(x, w, tape), b, tape);
}

}  // namespace ops
}  // namespace fedpeft
