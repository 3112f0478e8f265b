// SPDX-License-Identifier: Apache-2.0
//
// Warping operators: modulated deformable warping, single-tap flow warping,
// and the two cost-volume constructions that compare warped features.

#pragma once

#include "pdwn/tensor.hpp"

namespace pdwn {

// Per-pixel sampling displacements for one warp direction.
//
// offsets:    (N, 2*K*K, H, W), channel 2j is the row (dy) and 2j+1 the column
//             (dx) displacement of tap j, in pixels of the field's own scale.
// modulation: (N, K*K, H, W), one gate per tap, in [0, 1] once activated.
//
// Tap j = ky*K + kx sits at grid position (ky - K/2, kx - K/2).
template <typename T>
struct OffsetField {
    Tensor<T> offsets;
    Tensor<T> modulation;

    int kernel() const;
    int taps() const { return kernel() * kernel(); }
};

// Spatially invariant filter shared by every warp direction at one scale.
template <typename T>
struct GlobalFilter {
    Tensor<T> weight;  // (C_out, C_in, K, K)
};

// Samples `feature` at x + R(j) + f(j, x) with bilinear interpolation
// (out-of-range corners contribute zero), scales by m(j, x) and mixes taps
// and channels with the filter. Output has the feature's spatial size.
template <typename T>
Tensor<T> deformable_warp(const Tensor<T>& feature, const OffsetField<T>& field, const GlobalFilter<T>& filter);

// Backward warp by a 2-channel (dy, dx) flow: out(x) = feature(x + flow(x)).
template <typename T>
Tensor<T> flow_warp(const Tensor<T>& feature, const Tensor<T>& flow);

enum class CostNormalization {
    kernel_area,  // 1 / k^2 with k = 2 * radius + 1
    feature_dim,  // 1 / C
};

// Correlation of left(x) with right(x + d) for every d in the (2r+1)^2 window.
// Channel (dy + r) * k + (dx + r) holds displacement (dy, dx); samples of
// `right` outside the image contribute zero.
template <typename T>
Tensor<T> cost_volume(const Tensor<T>& left, const Tensor<T>& right, int radius,
                      CostNormalization normalization = CostNormalization::kernel_area);

// Two-layer convolutional replacement for the fixed correlation. Produces
// (2r+1)^2 channels so it drops in wherever cost_volume does.
template <typename T>
struct LearntCostNet {
    Tensor<T> w1, b1;  // (hidden, 2C, 3, 3)
    Tensor<T> w2, b2;  // ((2r+1)^2, hidden, 3, 3)
    T slope = T(0.1);

    std::int64_t output_channels() const { return w2.shape().n; }
};

template <typename T>
Tensor<T> learnt_cost(const Tensor<T>& left, const Tensor<T>& right, const LearntCostNet<T>& net);

// Modulation-weighted mean displacement of each pixel's taps, (N, 2, H, W) as
// (dy, dx). For visualisation; records no graph.
template <typename T>
Tensor<T> mean_offset(const OffsetField<T>& field);

}  // namespace pdwn
