// SPDX-License-Identifier: Apache-2.0
//
// Differentiable primitives. No broadcasting: elementwise ops require equal
// shapes and concatenation is along channels only.

#pragma once

#include <array>
#include <string_view>

#include "pdwn/tensor.hpp"

namespace pdwn {

// Names of every differentiable op in the library. The gradient-check suite
// must provide a check for each entry; see gradcheck.hpp.
inline constexpr std::array<std::string_view, 19> kDifferentiableOps{
    "conv2d",      "leaky_relu",      "max_pool2", "bilinear_resize", "sigmoid", "softmax_channels", "add",
    "sub",         "mul",             "scale",     "concat",          "slice_channels", "sum", "alpha_blend",
    "l1_loss",     "deformable_warp", "flow_warp", "cost_volume",     "learnt_cost"};

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias, int stride = 1,
                 int padding = 0);

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& input, T slope);

// Whether max_pool2 padded the input to even size by edge replication.
struct PoolPadding {
    bool rows = false;
    bool cols = false;
};

// 2x2 window, stride 2. Odd sizes are padded right/bottom by replication.
template <typename T>
Tensor<T> max_pool2(const Tensor<T>& input, PoolPadding* padding = nullptr);

// Half-pixel centres (align_corners = false), source coordinates clamped to
// the image.
template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& input, std::int64_t out_h, std::int64_t out_w);

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& input);

template <typename T>
Tensor<T> softmax_channels(const Tensor<T>& input);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor);

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts);
template <typename T>
Tensor<T> slice_channels(const Tensor<T>& input, std::int64_t begin, std::int64_t count);

// Sum of all elements as a (1,1,1,1) tensor.
template <typename T>
Tensor<T> sum(const Tensor<T>& input);

// alpha * a + (1 - alpha) * b, with one alpha channel shared by every channel
// of a and b.
template <typename T>
Tensor<T> alpha_blend(const Tensor<T>& a, const Tensor<T>& b, const Tensor<T>& alpha);

// Mean absolute error as a (1,1,1,1) tensor.
template <typename T>
Tensor<T> l1_loss(const Tensor<T>& pred, const Tensor<T>& target);

// Non-differentiable helpers for I/O boundaries.
template <typename T>
Tensor<T> pad_replicate(const Tensor<T>& input, std::int64_t bottom, std::int64_t right);
template <typename T>
Tensor<T> crop(const Tensor<T>& input, std::int64_t h, std::int64_t w);
template <typename T>
Tensor<T> flip_horizontal(const Tensor<T>& input);

}  // namespace pdwn
