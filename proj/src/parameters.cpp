// SPDX-License-Identifier: Apache-2.0

#include "pdwn/parameters.hpp"

#include <cmath>

namespace pdwn {

template <typename T>
Tensor<T> ParameterRegistry<T>::add(const std::string& name, Shape shape) {
    return add(name, Tensor<T>(shape, true));
}

template <typename T>
Tensor<T> ParameterRegistry<T>::add(const std::string& name, Tensor<T> tensor) {
    PDWN_CHECK(find(name) == nullptr, "duplicate parameter name '" << name << "'");
    tensor.set_requires_grad(true);
    items_.push_back({name, tensor});
    return tensor;
}

template <typename T>
std::int64_t ParameterRegistry<T>::scalar_count() const {
    std::int64_t total = 0;
    for (const auto& p : items_) total += p.tensor.numel();
    return total;
}

template <typename T>
const Parameter<T>* ParameterRegistry<T>::find(const std::string& name) const {
    for (const auto& p : items_)
        if (p.name == name) return &p;
    return nullptr;
}

template <typename T>
Parameter<T>* ParameterRegistry<T>::find(const std::string& name) {
    for (auto& p : items_)
        if (p.name == name) return &p;
    return nullptr;
}

template <typename T>
void ParameterRegistry<T>::zero_grad() {
    for (auto& p : items_) p.tensor.zero_grad();
}

template <typename T>
void init_fan_in_uniform(Tensor<T>& weight, std::int64_t fan_in, std::mt19937_64& rng) {
    PDWN_CHECK(fan_in > 0, "fan_in must be positive");
    const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (T& v : weight.data()) v = static_cast<T>(dist(rng));
}

template <typename T>
void init_he_uniform(Tensor<T>& weight, std::int64_t fan_in, double slope, std::mt19937_64& rng) {
    PDWN_CHECK(fan_in > 0, "fan_in must be positive");
    const double bound = std::sqrt(6.0 / ((1.0 + slope * slope) * static_cast<double>(fan_in)));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (T& v : weight.data()) v = static_cast<T>(dist(rng));
}

template <typename T>
void Adam<T>::step(ParameterRegistry<T>& params) {
    auto& items = params.items();
    bool any_grad = false;
    for (const auto& p : items) any_grad = any_grad || p.tensor.has_grad();
    PDWN_CHECK(any_grad, "Adam::step called before backward: no parameter has a gradient");

    if (m_.empty()) {
        for (const auto& p : items) {
            m_.emplace_back(static_cast<std::size_t>(p.tensor.numel()), T(0));
            v_.emplace_back(static_cast<std::size_t>(p.tensor.numel()), T(0));
        }
        t_.assign(items.size(), 0);
    }
    PDWN_CHECK(m_.size() == items.size(), "Adam state holds " << m_.size() << " tensors, registry has " << items.size());

    ++step_;
    const T b1 = options_.beta1;
    const T b2 = options_.beta2;
    for (std::size_t i = 0; i < items.size(); ++i) {
        auto& tensor = items[i].tensor;
        if (!tensor.has_grad()) continue;  // a disabled branch: no update, no moment decay
        const auto t = static_cast<double>(++t_[i]);
        const T correction1 = T(1) - static_cast<T>(std::pow(static_cast<double>(b1), t));
        const T correction2 = T(1) - static_cast<T>(std::pow(static_cast<double>(b2), t));
        auto data = tensor.data();
        auto grad = tensor.grad();
        auto& m = m_[i];
        auto& v = v_[i];
        for (std::size_t j = 0; j < data.size(); ++j) {
            const T g = grad[j];
            m[j] = b1 * m[j] + (T(1) - b1) * g;
            v[j] = b2 * v[j] + (T(1) - b2) * g * g;
            const T m_hat = m[j] / correction1;
            const T v_hat = v[j] / correction2;
            data[j] -= options_.lr * m_hat / (std::sqrt(v_hat) + options_.eps);
        }
    }
}

template <typename T>
void Adam<T>::restore(AdamState<T> state) {
    PDWN_CHECK(state.first.size() == state.second.size() && state.first.size() == state.parameter_steps.size(),
               "Adam::restore: moment and step lists differ in length");
    step_ = state.step;
    m_ = std::move(state.first);
    v_ = std::move(state.second);
    t_ = std::move(state.parameter_steps);
}

template class ParameterRegistry<float>;
template class ParameterRegistry<double>;
template class Adam<float>;
template class Adam<double>;
template void init_fan_in_uniform(Tensor<float>&, std::int64_t, std::mt19937_64&);
template void init_fan_in_uniform(Tensor<double>&, std::int64_t, std::mt19937_64&);
template void init_he_uniform(Tensor<float>&, std::int64_t, double, std::mt19937_64&);
template void init_he_uniform(Tensor<double>&, std::int64_t, double, std::mt19937_64&);

}  // namespace pdwn
