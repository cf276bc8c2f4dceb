#include "cellbloom/nn/autograd.hpp"

#include <sstream>
#include <unordered_set>

namespace cellbloom::nn {

std::string shape_to_string(const Shape& shape) {
    std::ostringstream out;
    out << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out << ',';
        out << shape[i];
    }
    out << ')';
    return out.str();
}

namespace {
thread_local bool no_grad_active = false;
}

NoGradGuard::NoGradGuard() : previous_(no_grad_active) { no_grad_active = true; }
NoGradGuard::~NoGradGuard() { no_grad_active = previous_; }
bool NoGradGuard::enabled() { return no_grad_active; }

template <typename T>
void accumulate(Tensor<T>& dst, const Tensor<T>& src) {
    require_same_shape(dst, src, "accumulate");
    T* d = dst.data();
    const T* s = src.data();
    for (std::size_t i = 0; i < dst.size(); ++i) d[i] += s[i];
}

template <typename T>
void backward(const Var<T>& loss) {
    if (loss.value().size() != 1) {
        throw ShapeError("backward() requires a scalar, got " + shape_to_string(loss.shape()));
    }
    if (!loss.requires_grad()) {
        return;
    }
    // Iterative post-order DFS gives a topological order.
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> visited;
    std::vector<std::pair<Node<T>*, std::size_t>> stack;
    stack.emplace_back(loss.node().get(), 0);
    visited.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node<T>* parent = node->parents[next++].get();
            if (parent->requires_grad && parent->backward && !visited.count(parent)) {
                visited.insert(parent);
                stack.emplace_back(parent, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    loss.node()->grad_buffer().fill(T(1));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* node = *it;
        if (node->backward && node->grad.size() == node->value.size()) {
            node->backward(*node);
        }
        // Interior gradients are no longer needed once propagated.
        if (node != loss.node().get()) {
            node->grad = Tensor<T>();
        }
    }
}

template void backward<float>(const Var<float>&);
template void backward<double>(const Var<double>&);
template void accumulate<float>(Tensor<float>&, const Tensor<float>&);
template void accumulate<double>(Tensor<double>&, const Tensor<double>&);

}  // namespace cellbloom::nn
