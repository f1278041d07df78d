#include <algorithm>
#include <cmath>
#include <string>

#include "lddmm/autodiff.hpp"
#include "lddmm/error.hpp"

namespace lddmm::ad {

std::size_t element_count(const Shape& shape) {
    std::size_t n = 1;
    for (auto e : shape) n *= e;
    return n;
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values, bool requires_grad) : node_(std::make_shared<Node<T>>()) {
    if (element_count(shape) != values.size()) throw ShapeError("Tensor: value count != product of shape");
    node_->shape = std::move(shape);
    node_->value = std::move(values);
    node_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
    return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
    const std::size_t n = element_count(shape);
    return Tensor(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
    if (node_->grad.size() != node_->value.size()) node_->grad.assign(node_->value.size(), T(0));
    return node_->grad;
}

template <typename T>
void Tensor<T>::zero_grad() {
    if (node_) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

template <typename T>
T Tensor<T>::item() const {
    if (size() != 1) throw UsageError("Tensor::item: tensor has " + std::to_string(size()) + " elements");
    return node_->value[0];
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
    return Tensor(node_->shape, node_->value, false);
}

// ---------------------------------------------------------------------------

template <typename T>
bool Tape<T>::wants(std::initializer_list<const Tensor<T>*> inputs) const {
    if (!enabled_) return false;
    for (const auto* t : inputs)
        if (t->requires_grad()) return true;
    return false;
}

template <typename T>
bool Tape<T>::wants(std::span<const Tensor<T>> inputs) const {
    if (!enabled_) return false;
    for (const auto& t : inputs)
        if (t.requires_grad()) return true;
    return false;
}

template <typename T>
Tensor<T> Tape<T>::record(Shape shape, std::vector<T> value, std::initializer_list<Tensor<T>> inputs,
                          std::function<void(const Node<T>&)> rule) {
    return record(std::move(shape), std::move(value), std::span<const Tensor<T>>(inputs.begin(), inputs.size()),
                  std::move(rule));
}

template <typename T>
Tensor<T> Tape<T>::record(Shape shape, std::vector<T> value, std::span<const Tensor<T>> inputs,
                          std::function<void(const Node<T>&)> rule) {
    Tensor<T> out(std::move(shape), std::move(value), false);
    if (!wants(inputs)) return out;
    auto* node = out.node();
    node->requires_grad = true;
    node->owner = this;
    node->backward = std::move(rule);
    for (const auto& in : inputs) {
        if (!in.requires_grad() || in.node()->owner != nullptr) continue;
        if (leaf_set_.insert(in.node()).second) leaves_.push_back(in.handle());
    }
    nodes_.push_back(out.handle());
    return out;
}

template <typename T>
void Tape<T>::backward(const Tensor<T>& loss) {
    if (!loss.defined()) throw UsageError("backward: loss tensor is undefined (no forward pass)");
    if (loss.size() != 1) throw UsageError("backward: loss must be a scalar, got " + std::to_string(loss.size()) + " elements");
    auto* root = loss.node();
    if (root->owner != nullptr && root->owner != this)
        throw UsageError("backward: loss was recorded on a different tape");
    if (nodes_.empty() && !root->requires_grad)
        throw UsageError("backward: nothing has been recorded on this tape");

    for (auto& n : nodes_) std::fill(n->grad.begin(), n->grad.end(), T(0));
    for (auto& n : leaves_) std::fill(n->grad.begin(), n->grad.end(), T(0));
    if (!root->requires_grad) return;

    root->grad_buffer()[0] = T(1);
    if (root->owner == nullptr) return;  // the loss is a leaf
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        Node<T>& n = **it;
        if (n.grad.empty() || !n.backward) continue;
        n.backward(n);
    }
}

template <typename T>
void Tape<T>::clear() {
    nodes_.clear();
    leaves_.clear();
    leaf_set_.clear();
}

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;

}  // namespace lddmm::ad
