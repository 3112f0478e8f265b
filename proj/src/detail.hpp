// SPDX-License-Identifier: Apache-2.0
//
// Helpers shared by the op implementations. Not installed.

#pragma once

#include <algorithm>
#include <cstring>
#include <vector>

#include "pdwn/kernels.hpp"
#include "pdwn/tensor.hpp"

namespace pdwn::detail {

// Gradient buffer of the i-th recorded input, or nullptr when that input does
// not take a gradient.
template <typename T>
T* grad_of(TensorImpl<T>& node, std::size_t i) {
    auto& in = *node.inputs[i];
    return in.requires_grad ? in.grad_buffer().data() : nullptr;
}

template <typename T>
const T* data_of(TensorImpl<T>& node, std::size_t i) {
    return node.inputs[i]->data.data();
}

// Per-thread reusable buffer; contents are unspecified on return. Distinct
// slots may be live at the same time, a slot must not be held across a call
// that can use the same slot.
template <typename T>
T* scratch(int slot, std::size_t size) {
    thread_local std::vector<T> buffers[8];
    auto& b = buffers[slot];
    if (b.size() < size) b.resize(size);
    return b.data();
}

inline std::int64_t conv_out_size(std::int64_t in, int k, int stride, int pad) {
    return (in + 2 * pad - k) / stride + 1;
}

// Unfolds one image (C,H,W) into columns (C*k*k, Ho*Wo).
template <typename T>
void im2col(const T* in, std::int64_t channels, std::int64_t h, std::int64_t w, int k, int stride, int pad,
            std::int64_t out_h, std::int64_t out_w, T* col) {
    const std::int64_t plane = out_h * out_w;
    for (std::int64_t c = 0; c < channels; ++c) {
        const T* src = in + c * h * w;
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                T* dst = col + ((c * k + ky) * k + kx) * plane;
                for (std::int64_t oy = 0; oy < out_h; ++oy) {
                    const std::int64_t iy = oy * stride - pad + ky;
                    T* drow = dst + oy * out_w;
                    if (iy < 0 || iy >= h) {
                        std::memset(drow, 0, sizeof(T) * static_cast<std::size_t>(out_w));
                        continue;
                    }
                    const T* srow = src + iy * w;
                    if (stride == 1) {
                        const std::int64_t lo = std::max<std::int64_t>(0, pad - kx);
                        const std::int64_t hi = std::min<std::int64_t>(out_w, w + pad - kx);
                        for (std::int64_t ox = 0; ox < lo && ox < out_w; ++ox) drow[ox] = T(0);
                        if (hi > lo) std::memcpy(drow + lo, srow + lo - pad + kx, sizeof(T) * static_cast<std::size_t>(hi - lo));
                        for (std::int64_t ox = std::max(hi, lo); ox < out_w; ++ox) drow[ox] = T(0);
                    } else {
                        for (std::int64_t ox = 0; ox < out_w; ++ox) {
                            const std::int64_t ix = ox * stride - pad + kx;
                            drow[ox] = (ix >= 0 && ix < w) ? srow[ix] : T(0);
                        }
                    }
                }
            }
        }
    }
}

// Adjoint of im2col: accumulates columns back into an image gradient.
template <typename T>
void col2im(const T* col, std::int64_t channels, std::int64_t h, std::int64_t w, int k, int stride, int pad,
            std::int64_t out_h, std::int64_t out_w, T* in_grad) {
    const std::int64_t plane = out_h * out_w;
    for (std::int64_t c = 0; c < channels; ++c) {
        T* dst = in_grad + c * h * w;
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                const T* src = col + ((c * k + ky) * k + kx) * plane;
                for (std::int64_t oy = 0; oy < out_h; ++oy) {
                    const std::int64_t iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= h) continue;
                    T* drow = dst + iy * w;
                    const T* srow = src + oy * out_w;
                    if (stride == 1) {
                        const std::int64_t lo = std::max<std::int64_t>(0, pad - kx);
                        const std::int64_t hi = std::min<std::int64_t>(out_w, w + pad - kx);
                        if (hi > lo) kernels::axpy(hi - lo, T(1), srow + lo, drow + lo - pad + kx);
                        continue;
                    }
                    for (std::int64_t ox = 0; ox < out_w; ++ox) {
                        const std::int64_t ix = ox * stride - pad + kx;
                        if (ix >= 0 && ix < w) drow[ix] += srow[ox];
                    }
                }
            }
        }
    }
}

// Row-major transpose of a (rows x cols) matrix.
template <typename T>
void transpose(const T* src, std::int64_t rows, std::int64_t cols, T* dst) {
    constexpr std::int64_t kTile = 32;
    for (std::int64_t r0 = 0; r0 < rows; r0 += kTile) {
        for (std::int64_t c0 = 0; c0 < cols; c0 += kTile) {
            const std::int64_t r1 = std::min(rows, r0 + kTile);
            const std::int64_t c1 = std::min(cols, c0 + kTile);
            for (std::int64_t r = r0; r < r1; ++r)
                for (std::int64_t c = c0; c < c1; ++c) dst[c * rows + r] = src[r * cols + c];
        }
    }
}

}  // namespace pdwn::detail
