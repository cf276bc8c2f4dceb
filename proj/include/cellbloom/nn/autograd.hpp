#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "cellbloom/nn/tensor.hpp"

namespace cellbloom::nn {

template <typename T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;  // allocated on first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    // Reads this->grad and accumulates into parents that require grad.
    std::function<void(Node&)> backward;

    Tensor<T>& grad_buffer() {
        if (grad.shape() != value.shape()) {
            grad = Tensor<T>(value.shape());
        }
        return grad;
    }
};

// Handle to a node of the dynamic computation graph. Copies share the node.
template <typename T>
class Var {
public:
    Var() = default;
    explicit Var(Tensor<T> value, bool requires_grad = false)
        : node_(std::make_shared<Node<T>>()) {
        node_->value = std::move(value);
        node_->requires_grad = requires_grad;
    }
    explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

    const Tensor<T>& value() const { return node_->value; }
    Tensor<T>& mutable_value() { return node_->value; }
    const Tensor<T>& grad() const { return node_->grad; }
    Tensor<T>& mutable_grad() { return node_->grad_buffer(); }
    const Shape& shape() const { return node_->value.shape(); }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    bool defined() const { return static_cast<bool>(node_); }
    const std::shared_ptr<Node<T>>& node() const { return node_; }

    void zero_grad() { node_->grad = Tensor<T>(); }

    // Value copy cut from the graph.
    Var detach() const { return Var(node_->value, false); }

private:
    std::shared_ptr<Node<T>> node_;
};

// While alive on this thread, ops do not record backward closures.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

    static bool enabled();

private:
    bool previous_;
};

// Creates an op result; the closure is kept only when some parent requires grad.
template <typename T>
Var<T> make_result(Tensor<T> value, std::vector<Var<T>> parents, std::function<void(Node<T>&)> backward) {
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(value);
    if (!NoGradGuard::enabled()) {
        for (const auto& p : parents) {
            if (p.requires_grad()) {
                node->requires_grad = true;
                break;
            }
        }
    }
    if (node->requires_grad) {
        node->parents.reserve(parents.size());
        for (auto& p : parents) {
            node->parents.push_back(p.node());
        }
        node->backward = std::move(backward);
    }
    return Var<T>(std::move(node));
}

// Reverse-mode sweep from a scalar. Gradients accumulate into leaves.
template <typename T>
void backward(const Var<T>& loss);

// Adds src into dst elementwise.
template <typename T>
void accumulate(Tensor<T>& dst, const Tensor<T>& src);

}  // namespace cellbloom::nn
