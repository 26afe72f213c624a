#pragma once

// Dense row-major tensors with a dynamic reverse-mode gradient tape.
//
// A Tensor is a cheap handle onto a shared node. Operations whose inputs
// require gradients record a node holding references to those inputs and a
// closure that pushes the node's gradient back into them. `backward()` walks
// the recorded graph in reverse topological order and then releases it, so a
// graph can be differentiated once.
//
// A graph and its tensors belong to one thread at a time.

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "vfd/errors.hpp"

namespace vfd {

using Shape = std::vector<std::size_t>;

inline std::size_t numel_of(const Shape& shape)
{
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string to_string(const Shape& shape)
{
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i)
        os << (i ? "," : "") << shape[i];
    os << ')';
    return os.str();
}

template <class T>
struct TensorNode {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;  // empty until something is accumulated
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNode>> inputs;
    std::function<void(TensorNode&)> backward_fn;

    bool is_leaf() const { return !backward_fn; }

    std::vector<T>& grad_buffer()
    {
        if (grad.empty())
            grad.assign(value.size(), T{0});
        return grad;
    }
};

template <class T = double>
class Tensor {
public:
    using value_type = T;
    using Node = TensorNode<T>;

    Tensor() = default;

    Tensor(Shape shape, std::vector<T> values, bool requires_grad = false)
      : node_(std::make_shared<Node>())
    {
        if (numel_of(shape) != values.size())
            throw ContractViolation("tensor shape " + to_string(shape) + " holds " +
                                    std::to_string(numel_of(shape)) + " values, got " +
                                    std::to_string(values.size()));
        node_->shape = std::move(shape);
        node_->value = std::move(values);
        node_->requires_grad = requires_grad;
    }

    static Tensor zeros(Shape shape, bool requires_grad = false)
    {
        const auto n = numel_of(shape);
        return Tensor(std::move(shape), std::vector<T>(n, T{0}), requires_grad);
    }

    static Tensor full(Shape shape, T v, bool requires_grad = false)
    {
        const auto n = numel_of(shape);
        return Tensor(std::move(shape), std::vector<T>(n, v), requires_grad);
    }

    static Tensor scalar(T v, bool requires_grad = false) { return Tensor({}, {v}, requires_grad); }

    /// Internal: wraps a node produced by an op.
    static Tensor from_node(std::shared_ptr<Node> node)
    {
        Tensor t;
        t.node_ = std::move(node);
        return t;
    }

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t numel() const { return node_->value.size(); }

    std::span<const T> data() const { return node_->value; }

    /// Direct value access. Mutating a tensor that already feeds a recorded
    /// graph invalidates that graph's gradients.
    std::span<T> mutable_data() { return node_->value; }

    T item() const
    {
        if (numel() != 1)
            throw ContractViolation("item() on tensor of shape " + to_string(shape()));
        return node_->value[0];
    }

    T operator[](std::size_t i) const { return node_->value.at(i); }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool on) { node_->requires_grad = on; }
    bool is_leaf() const { return node_->is_leaf(); }

    bool has_grad() const { return !node_->grad.empty(); }

    /// Gradient buffer; all zeros if nothing has been accumulated yet.
    std::vector<T> grad() const
    {
        if (node_->grad.empty())
            return std::vector<T>(numel(), T{0});
        return node_->grad;
    }

    std::span<T> mutable_grad() { return node_->grad_buffer(); }

    void zero_grad() { node_->grad.clear(); }

    /// Fresh leaf holding a copy of the values, outside any graph.
    Tensor detach() const { return Tensor(shape(), node_->value, false); }

    /// Same values reinterpreted under a new shape of equal size, as a leaf copy.
    Tensor reshaped_copy(Shape s) const { return Tensor(std::move(s), node_->value, false); }

    const std::shared_ptr<Node>& node() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

namespace detail {

/// Records `value` as the output of an op over `inputs`. The backward closure
/// is only kept when some input requires a gradient.
template <class T, class Backward>
Tensor<T> record(Shape shape, std::vector<T> value, std::initializer_list<Tensor<T>> inputs,
                 Backward&& backward)
{
    auto node = std::make_shared<TensorNode<T>>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    bool any = false;
    for (const auto& in : inputs)
        any = any || in.requires_grad();
    if (any) {
        node->requires_grad = true;
        for (const auto& in : inputs)
            node->inputs.push_back(in.node());
        node->backward_fn = std::forward<Backward>(backward);
    }
    return Tensor<T>::from_node(std::move(node));
}

}  // namespace detail

/// Reverse pass from a scalar loss. Accumulates d(loss)/d(t) into every
/// requires-grad tensor reachable from `loss`, then releases the graph.
template <class T>
void backward(const Tensor<T>& loss)
{
    if (loss.numel() != 1)
        throw ContractViolation("backward() needs a scalar loss, got shape " + to_string(loss.shape()));
    if (!loss.requires_grad())
        throw ContractViolation("backward() on a loss with no recorded graph");

    using Node = TensorNode<T>;
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{loss.node().get(), 0}};
    seen.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            Node* child = node->inputs[next++].get();
            if (child->requires_grad && seen.insert(child).second)
                stack.emplace_back(child, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    loss.node()->grad_buffer()[0] += T{1};
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (node->backward_fn && !node->grad.empty())
            node->backward_fn(*node);
    }
    for (Node* node : order) {
        if (node->backward_fn) {
            node->backward_fn = nullptr;
            node->inputs.clear();
            node->requires_grad = false;
        }
    }
}

}  // namespace vfd
