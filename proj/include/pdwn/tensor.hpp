// SPDX-License-Identifier: Apache-2.0
//
// Dense NCHW tensors with reverse-mode differentiation.

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace pdwn {

#define PDWN_CHECK(cond, msg)                                              \
    do {                                                                   \
        if (!(cond)) {                                                     \
            std::ostringstream pdwn_check_os_;                             \
            pdwn_check_os_ << msg;                                         \
            throw std::invalid_argument(pdwn_check_os_.str());             \
        }                                                                  \
    } while (0)

struct Shape {
    std::int64_t n = 0;
    std::int64_t c = 0;
    std::int64_t h = 0;
    std::int64_t w = 0;

    std::int64_t numel() const { return n * c * h * w; }
    std::int64_t plane() const { return h * w; }
    bool operator==(const Shape&) const = default;
    std::string str() const;
};

inline std::string Shape::str() const {
    std::ostringstream os;
    os << "(" << n << ", " << c << ", " << h << ", " << w << ")";
    return os.str();
}

template <typename T>
struct TensorImpl {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // empty until a gradient is accumulated
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    // Reads this node's grad and accumulates into the inputs' grads.
    std::function<void(TensorImpl&)> backward_fn;

    std::vector<T>& grad_buffer() {
        if (grad.empty()) grad.assign(data.size(), T(0));
        return grad;
    }
};

// While alive, ops do not record a differentiation graph on this thread.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

bool grad_mode_enabled();

// Handle to a shared graph node. Copies alias the same storage, like the
// tensors in most autograd engines; use clone() for a deep copy.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;
    explicit Tensor(Shape shape, bool requires_grad = false);
    Tensor(Shape shape, std::vector<T> values, bool requires_grad = false);

    static Tensor zeros(Shape shape, bool requires_grad = false) { return Tensor(shape, requires_grad); }
    static Tensor full(Shape shape, T value, bool requires_grad = false);
    static Tensor scalar(T value, bool requires_grad = false) { return full({1, 1, 1, 1}, value, requires_grad); }

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    std::int64_t numel() const { return impl_->shape.numel(); }

    std::span<T> data() { return impl_->data; }
    std::span<const T> data() const { return impl_->data; }
    std::span<const T> grad() const { return impl_->grad; }
    std::span<T> mutable_grad() { return impl_->grad_buffer(); }
    bool has_grad() const { return !impl_->grad.empty(); }

    T& at(std::int64_t n, std::int64_t c, std::int64_t y, std::int64_t x) {
        const Shape& s = impl_->shape;
        return impl_->data[static_cast<std::size_t>(((n * s.c + c) * s.h + y) * s.w + x)];
    }
    T at(std::int64_t n, std::int64_t c, std::int64_t y, std::int64_t x) const {
        const Shape& s = impl_->shape;
        return impl_->data[static_cast<std::size_t>(((n * s.c + c) * s.h + y) * s.w + x)];
    }
    T item() const;

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool value) { impl_->requires_grad = value; }
    void zero_grad() { impl_->grad.clear(); }

    // Deep copy without graph history.
    Tensor clone() const;
    // Shares nothing with the graph: a new leaf with copied values.
    Tensor detach() const { return clone(); }

    // Reverse-mode sweep from a scalar (1,1,1,1) tensor.
    void backward() const;

    const std::shared_ptr<TensorImpl<T>>& impl() const { return impl_; }
    static Tensor from_impl(std::shared_ptr<TensorImpl<T>> impl) {
        Tensor t;
        t.impl_ = std::move(impl);
        return t;
    }

private:
    std::shared_ptr<TensorImpl<T>> impl_;
};

// Builds an op result. Graph edges are recorded only when grad mode is on and
// some input requires a gradient.
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<Tensor<T>> inputs,
                      std::function<void(TensorImpl<T>&)> backward_fn);

using Tensorf = Tensor<float>;
using Tensord = Tensor<double>;

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace pdwn
