// SPDX-License-Identifier: Apache-2.0

#include "pdwn/tensor.hpp"

#include <algorithm>
#include <unordered_set>

namespace pdwn {

namespace {
thread_local bool g_grad_enabled = true;
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_mode_enabled() { return g_grad_enabled; }

template <typename T>
Tensor<T>::Tensor(Shape shape, bool requires_grad) : impl_(std::make_shared<TensorImpl<T>>()) {
    PDWN_CHECK(shape.n >= 0 && shape.c >= 0 && shape.h >= 0 && shape.w >= 0,
               "negative dimension in shape " << shape.str());
    impl_->shape = shape;
    impl_->data.assign(static_cast<std::size_t>(shape.numel()), T(0));
    impl_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values, bool requires_grad)
    : impl_(std::make_shared<TensorImpl<T>>()) {
    PDWN_CHECK(static_cast<std::int64_t>(values.size()) == shape.numel(),
               "value count " << values.size() << " does not match shape " << shape.str());
    impl_->shape = shape;
    impl_->data = std::move(values);
    impl_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
    Tensor t(shape, requires_grad);
    std::fill(t.impl_->data.begin(), t.impl_->data.end(), value);
    return t;
}

template <typename T>
T Tensor<T>::item() const {
    PDWN_CHECK(numel() == 1, "item() on tensor of shape " << shape().str());
    return impl_->data[0];
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
    Tensor t;
    t.impl_ = std::make_shared<TensorImpl<T>>();
    t.impl_->shape = impl_->shape;
    t.impl_->data = impl_->data;
    return t;
}

template <typename T>
void Tensor<T>::backward() const {
    PDWN_CHECK(impl_->shape == (Shape{1, 1, 1, 1}),
               "backward() requires a scalar loss of shape (1, 1, 1, 1), got " << impl_->shape.str());
    PDWN_CHECK(impl_->requires_grad, "backward() on a tensor that does not require grad");

    // Iterative post-order DFS gives a topological order.
    std::vector<TensorImpl<T>*> order;
    std::unordered_set<TensorImpl<T>*> visited;
    std::vector<std::pair<TensorImpl<T>*, std::size_t>> stack;
    stack.emplace_back(impl_.get(), 0);
    visited.insert(impl_.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            TensorImpl<T>* child = node->inputs[next++].get();
            if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    impl_->grad_buffer()[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorImpl<T>* node = *it;
        if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
    }
}

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<Tensor<T>> inputs,
                      std::function<void(TensorImpl<T>&)> backward_fn) {
    Tensor<T> out(shape);
    bool needs = false;
    if (grad_mode_enabled()) {
        for (const auto& in : inputs) needs = needs || in.requires_grad();
    }
    if (needs) {
        auto& impl = *out.impl();
        impl.requires_grad = true;
        impl.inputs.reserve(inputs.size());
        for (const auto& in : inputs) impl.inputs.push_back(in.impl());
        impl.backward_fn = std::move(backward_fn);
    }
    return out;
}

template class Tensor<float>;
template class Tensor<double>;
template Tensor<float> make_result(Shape, std::vector<Tensor<float>>, std::function<void(TensorImpl<float>&)>);
template Tensor<double> make_result(Shape, std::vector<Tensor<double>>, std::function<void(TensorImpl<double>&)>);

}  // namespace pdwn
