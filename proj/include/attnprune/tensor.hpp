#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "attnprune/errors.hpp"

namespace attnprune {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (const auto d : shape) n *= d;
    return n;
}

inline std::string shape_str(const Shape& shape) {
    if (shape.empty()) return "()";
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << "x";
        os << shape[i];
    }
    os << ")";
    return os.str();
}

namespace detail {

/// Storage node behind a Tensor handle. Values are immutable once an op has
/// produced them; only grad accumulates.
template <typename T>
struct TensorNode {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;  // sized like value iff requires_grad
    bool requires_grad = false;
};

}  // namespace detail

/// Dense N-dimensional array participating in reverse-mode differentiation.
/// Copying a Tensor copies the handle, not the buffer; ops create new nodes.
template <typename T>
class Tensor {
public:
    using scalar_type = T;

    Tensor() : node_(std::make_shared<detail::TensorNode<T>>()) {
        node_->shape = {1};
        node_->value.assign(1, T(0));
    }

    static Tensor from(Shape shape, std::vector<T> data, bool requires_grad = false) {
        if (shape_numel(shape) != data.size()) {
            throw shape_error("tensor: shape " + shape_str(shape) + " implies " +
                              std::to_string(shape_numel(shape)) + " elements, got " +
                              std::to_string(data.size()));
        }
        Tensor t;
        t.node_->shape = std::move(shape);
        t.node_->value = std::move(data);
        t.set_requires_grad(requires_grad);
        return t;
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        return full(std::move(shape), T(0), requires_grad);
    }

    static Tensor full(Shape shape, T fill, bool requires_grad = false) {
        const std::size_t n = shape_numel(shape);
        return from(std::move(shape), std::vector<T>(n, fill), requires_grad);
    }

    static Tensor scalar(T v, bool requires_grad = false) {
        return from({1}, {v}, requires_grad);
    }

    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t numel() const { return node_->value.size(); }
    std::size_t dim(std::size_t i) const { return node_->shape.at(i); }

    std::vector<T>& value() { return node_->value; }
    const std::vector<T>& value() const { return node_->value; }

    bool requires_grad() const { return node_->requires_grad; }

    void set_requires_grad(bool on) {
        node_->requires_grad = on;
        if (on) {
            node_->grad.assign(node_->value.size(), T(0));
        } else {
            node_->grad.clear();
        }
    }

    std::vector<T>& grad() {
        if (!node_->requires_grad) {
            throw domain_error("tensor: grad requested on a tensor that does not require it");
        }
        return node_->grad;
    }
    const std::vector<T>& grad() const {
        return const_cast<Tensor*>(this)->grad();
    }

    void zero_grad() {
        if (node_->requires_grad) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
    }

    /// Scalar readout; requires numel() == 1.
    T item() const {
        if (numel() != 1) {
            throw shape_error("tensor: item() on non-scalar of shape " + shape_str(shape()));
        }
        return node_->value[0];
    }

    /// Value-copying clone that shares nothing with this tensor.
    Tensor clone() const {
        return from(node_->shape, node_->value, node_->requires_grad);
    }

    detail::TensorNode<T>* node() const { return node_.get(); }
    std::shared_ptr<detail::TensorNode<T>> node_ptr() const { return node_; }

    bool same_node(const Tensor& other) const { return node_ == other.node_; }

private:
    std::shared_ptr<detail::TensorNode<T>> node_;
};

/// Ordered record of executed operations. Ops append one local-gradient
/// closure each, in execution order, so walking the record backwards visits
/// nodes in reverse topological order. Closures add into input grads, which
/// makes fan-out accumulate naturally.
template <typename T>
class GradientTape {
public:
    GradientTape() = default;
    GradientTape(const GradientTape&) = delete;
    GradientTape& operator=(const GradientTape&) = delete;

    /// Activates a tape for the current thread while in scope.
    class Scope {
    public:
        explicit Scope(GradientTape& tape) : prev_(current_ref()) { current_ref() = &tape; }
        ~Scope() { current_ref() = prev_; }
        Scope(const Scope&) = delete;
        Scope& operator=(const Scope&) = delete;

    private:
        GradientTape* prev_;
    };

    static GradientTape* current() { return current_ref(); }

    void record(std::function<void()> backprop) { entries_.push_back(std::move(backprop)); }

    std::size_t size() const { return entries_.size(); }

    void clear() { entries_.clear(); }

    /// Seeds d(loss)/d(loss) = 1 and replays the record in reverse.
    void backward(Tensor<T>& loss) {
        if (loss.numel() != 1) {
            throw shape_error("backward: loss must be scalar, got " + shape_str(loss.shape()));
        }
        if (!loss.requires_grad()) {
            throw domain_error("backward: loss does not require grad (no recorded path)");
        }
        loss.grad()[0] = T(1);
        for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
    }

private:
    static GradientTape*& current_ref() {
        static thread_local GradientTape* current = nullptr;
        return current;
    }

    std::vector<std::function<void()>> entries_;
};

namespace detail {

/// True when an op executed now should be recorded for the given inputs.
template <typename T>
bool taping(std::initializer_list<const Tensor<T>*> inputs) {
    if (GradientTape<T>::current() == nullptr) return false;
    for (const auto* t : inputs) {
        if (t->requires_grad()) return true;
    }
    return false;
}

}  // namespace detail

}  // namespace attnprune
