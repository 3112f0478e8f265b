// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "pdwn/tensor.hpp"

namespace pdwn {

template <typename T>
struct Parameter {
    std::string name;
    Tensor<T> tensor;
};

// Ordered, name-unique collection of trainable tensors. Order is the
// registration order and defines the checkpoint layout.
template <typename T>
class ParameterRegistry {
public:
    Tensor<T> add(const std::string& name, Shape shape);
    // Registers an existing leaf tensor (marked requires_grad).
    Tensor<T> add(const std::string& name, Tensor<T> tensor);

    const std::vector<Parameter<T>>& items() const { return items_; }
    std::vector<Parameter<T>>& items() { return items_; }
    std::size_t size() const { return items_.size(); }
    std::int64_t scalar_count() const;

    const Parameter<T>* find(const std::string& name) const;
    Parameter<T>* find(const std::string& name);

    void zero_grad();

private:
    std::vector<Parameter<T>> items_;
};

// uniform(-b, b) with b = sqrt(1 / fan_in).
template <typename T>
void init_fan_in_uniform(Tensor<T>& weight, std::int64_t fan_in, std::mt19937_64& rng);

// uniform(-b, b) with b = sqrt(6 / ((1 + slope^2) fan_in)): preserves
// activation variance through a leaky ReLU with the given negative slope.
template <typename T>
void init_he_uniform(Tensor<T>& weight, std::int64_t fan_in, double slope, std::mt19937_64& rng);

template <typename T>
struct AdamOptions {
    T lr = T(0.0002);
    T beta1 = T(0.9);
    T beta2 = T(0.999);
    T eps = T(1e-8);
};

template <typename T>
struct AdamState {
    std::int64_t step = 0;
    std::vector<std::vector<T>> first, second;
    // Updates each parameter has received; drives its bias correction.
    std::vector<std::int64_t> parameter_steps;
};

// Adam with bias correction. Moments and update counts are kept per
// parameter, in registry order, and persist across steps. A parameter that
// receives no gradient in a step is left untouched and its count does not
// advance, so a branch enabled late starts with fresh statistics.
template <typename T>
class Adam {
public:
    explicit Adam(AdamOptions<T> options = {}) : options_(options) {}

    // Updates every parameter of the registry from its accumulated gradient.
    // Throws if no parameter carries a gradient (backward never ran).
    void step(ParameterRegistry<T>& params);

    const AdamOptions<T>& options() const { return options_; }
    void set_lr(T lr) { options_.lr = lr; }
    std::int64_t step_count() const { return step_; }

    const std::vector<std::vector<T>>& first_moments() const { return m_; }
    const std::vector<std::vector<T>>& second_moments() const { return v_; }
    const std::vector<std::int64_t>& parameter_steps() const { return t_; }
    AdamState<T> state() const { return {step_, m_, v_, t_}; }
    // Restores saved state; list lengths must agree with each other.
    void restore(AdamState<T> state);

private:
    AdamOptions<T> options_;
    std::int64_t step_ = 0;
    std::vector<std::vector<T>> m_;
    std::vector<std::vector<T>> v_;
    std::vector<std::int64_t> t_;
};

extern template class ParameterRegistry<float>;
extern template class ParameterRegistry<double>;
extern template class Adam<float>;
extern template class Adam<double>;

}  // namespace pdwn
