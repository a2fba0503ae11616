// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "fedpeft/errors.hpp"

namespace fedpeft {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

template <typename Real>
struct TensorNode {
    Shape shape;
    std::vector<Real> value;
    std::vector<Real> grad;       // allocated lazily on first accumulation
    bool requires_grad = false;   // leaf trainability flag
    bool needs_grad = false;      // true if some recorded path reaches a trainable leaf
};

/// Dense row-major tensor handle. Copies share the underlying node; clone()
/// makes an independent deep copy.
template <typename Real>
class Tensor {
public:
    using Node = TensorNode<Real>;

    Tensor() = default;

    explicit Tensor(Shape shape) : node_(std::make_shared<Node>()) {
        node_->shape = std::move(shape);
        node_->value.assign(shape_numel(node_->shape), Real(0));
    }

    Tensor(Shape shape, std::vector<Real> data) : node_(std::make_shared<Node>()) {
        if (shape_numel(shape) != data.size())
            throw ShapeError("tensor: data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
        node_->shape = std::move(shape);
        node_->value = std::move(data);
    }

    static Tensor scalar(Real v) { return Tensor({1}, {v}); }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t size() const { return node_->value.size(); }
    std::size_t dim(std::size_t i) const { return node_->shape[i]; }
    std::size_t rank() const { return node_->shape.size(); }

    std::vector<Real>& data() { return node_->value; }
    const std::vector<Real>& data() const { return node_->value; }

    Real item() const {
        if (size() != 1) throw ContractError("item: tensor is not scalar, shape " + shape_str(shape()));
        return node_->value[0];
    }

    void set_requires_grad(bool v) {
        node_->requires_grad = v;
        node_->needs_grad = v;
    }
    bool requires_grad() const { return node_->requires_grad; }
    bool needs_grad() const { return node_->needs_grad; }

    bool has_grad() const { return !node_->grad.empty(); }
    std::vector<Real>& grad() {
        if (node_->grad.empty()) node_->grad.assign(node_->value.size(), Real(0));
        return node_->grad;
    }
    const std::vector<Real>& grad_data() const { return node_->grad; }
    void clear_grad() { node_->grad.clear(); }

    std::shared_ptr<Node> node() const { return node_; }

    /// Independent copy of value; grad and flags are not carried over.
    Tensor clone() const {
        Tensor out(node_->shape, node_->value);
        return out;
    }

private:
    std::shared_ptr<Node> node_;
};

/// Ordered record of executed differentiable ops. Replaying backward visits
/// each op exactly once in reverse execution order. One tape per training
/// step; distinct clients own distinct tapes.
template <typename Real>
class Tape {
public:
    void record(std::function<void()> backward) { steps_.push_back(std::move(backward)); }
    std::size_t size() const { return steps_.size(); }
    void clear() { steps_.clear(); }

    void replay_backward() {
        for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
    }

private:
    std::vector<std::function<void()>> steps_;
};

/// Seeds d(loss)/d(loss) = 1 and replays the tape in reverse. Every tensor on
/// a recorded path to a trainable leaf ends up holding its gradient; frozen
/// tensors receive none.
template <typename Real>
void backward(const Tensor<Real>& loss, Tape<Real>& tape) {
    if (loss.size() != 1)
        throw ContractError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
    loss.node()->grad.assign(1, Real(1));
    tape.replay_backward();
}

}  // namespace fedpeft
