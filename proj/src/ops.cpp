// SPDX-License-Identifier: Apache-2.0

#include "pdwn/ops.hpp"

#include <algorithm>
#include <cmath>

#include "detail.hpp"
#include "pdwn/kernels.hpp"

namespace pdwn {

using detail::data_of;
using detail::grad_of;

namespace {

template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    PDWN_CHECK(a.shape() == b.shape(),
               op << ": shape mismatch " << a.shape().str() << " vs " << b.shape().str());
}

inline void leaky_forward(std::int64_t n, const float* x, float slope, float* y) {
    kernels::active().leaky_relu(n, x, slope, y);
}
inline void leaky_forward(std::int64_t n, const double* x, double slope, double* y) {
    for (std::int64_t i = 0; i < n; ++i) y[i] = x[i] >= 0.0 ? x[i] : slope * x[i];
}
inline void leaky_backward(std::int64_t n, const float* x, const float* dy, float slope, float* dx) {
    kernels::active().leaky_relu_backward(n, x, dy, slope, dx);
}
inline void leaky_backward(std::int64_t n, const double* x, const double* dy, double slope, double* dx) {
    for (std::int64_t i = 0; i < n; ++i) dx[i] += x[i] > 0.0 ? dy[i] : slope * dy[i];
}

// Source index pair and weight for one output coordinate of a resize.
struct Tap1d {
    std::int64_t i0;
    std::int64_t i1;
    double frac;
};

std::vector<Tap1d> resize_taps(std::int64_t in, std::int64_t out) {
    std::vector<Tap1d> taps(static_cast<std::size_t>(out));
    const double ratio = static_cast<double>(in) / static_cast<double>(out);
    for (std::int64_t o = 0; o < out; ++o) {
        double src = (static_cast<double>(o) + 0.5) * ratio - 0.5;
        if (src < 0.0) src = 0.0;
        std::int64_t i0 = static_cast<std::int64_t>(std::floor(src));
        if (i0 >= in - 1) {
            taps[o] = {in - 1, in - 1, 0.0};
            continue;
        }
        taps[o] = {i0, i0 + 1, src - static_cast<double>(i0)};
    }
    return taps;
}

}  // namespace

// ---------------------------------------------------------------------------
// conv2d

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias, int stride, int padding) {
    const Shape& is = input.shape();
    const Shape& ws = weight.shape();
    PDWN_CHECK(ws.h == ws.w, "conv2d: kernel must be square, got " << ws.h << "x" << ws.w);
    PDWN_CHECK(ws.c == is.c, "conv2d: input channels " << is.c << " != weight input channels " << ws.c);
    PDWN_CHECK(stride >= 1 && padding >= 0, "conv2d: invalid stride " << stride << " / padding " << padding);
    const bool has_bias = bias.defined();
    if (has_bias)
        PDWN_CHECK(bias.numel() == ws.n, "conv2d: bias length " << bias.numel() << " != output channels " << ws.n);
    const int k = static_cast<int>(ws.h);
    const std::int64_t out_h = detail::conv_out_size(is.h, k, stride, padding);
    const std::int64_t out_w = detail::conv_out_size(is.w, k, stride, padding);
    PDWN_CHECK(out_h >= 1 && out_w >= 1, "conv2d: kernel " << k << " larger than padded input " << is.str());

    const Shape os{is.n, ws.n, out_h, out_w};
    const std::int64_t kdim = is.c * k * k;
    const std::int64_t plane = out_h * out_w;

    std::vector<Tensor<T>> inputs{input, weight};
    if (has_bias) inputs.push_back(bias);

    auto out = make_result<T>(os, inputs, [is, ws, os, k, stride, padding, has_bias, kdim, plane](TensorImpl<T>& self) {
        const T* x = data_of(self, 0);
        const T* wt = data_of(self, 1);
        T* dx = grad_of(self, 0);
        T* dw = grad_of(self, 1);
        T* db = has_bias ? grad_of(self, 2) : nullptr;
        const T* dy = self.grad.data();

        T* col = detail::scratch<T>(0, static_cast<std::size_t>(kdim * plane));
        T* dy_t = dw ? detail::scratch<T>(1, static_cast<std::size_t>(plane * os.c)) : nullptr;
        T* dw_t = dw ? detail::scratch<T>(2, static_cast<std::size_t>(kdim * os.c)) : nullptr;
        T* w_t = dx ? detail::scratch<T>(3, static_cast<std::size_t>(kdim * ws.n)) : nullptr;
        if (dx) detail::transpose(wt, ws.n, kdim, w_t);
        for (std::int64_t n = 0; n < is.n; ++n) {
            const T* dy_n = dy + n * os.c * plane;
            if (db) {
                for (std::int64_t co = 0; co < os.c; ++co) {
                    T acc = 0;
                    const T* row = dy_n + co * plane;
                    for (std::int64_t p = 0; p < plane; ++p) acc += row[p];
                    db[co] += acc;
                }
            }
            if (dw) {
                // dW^T = col * dy^T keeps the large column matrix untransposed.
                detail::im2col(x + n * is.c * is.h * is.w, is.c, is.h, is.w, k, stride, padding, os.h, os.w, col);
                detail::transpose(dy_n, os.c, plane, dy_t);
                kernels::gemm(kdim, os.c, plane, col, plane, dy_t, os.c, dw_t, os.c, n > 0);
            }
            if (dx) {
                kernels::gemm(kdim, plane, os.c, w_t, os.c, dy_n, plane, col, plane, false);
                detail::col2im(col, is.c, is.h, is.w, k, stride, padding, os.h, os.w, dx + n * is.c * is.h * is.w);
            }
        }
        if (dw) {
            for (std::int64_t co = 0; co < os.c; ++co)
                for (std::int64_t i = 0; i < kdim; ++i) dw[co * kdim + i] += dw_t[i * os.c + co];
        }
    });

    const T* x = input.data().data();
    const T* wt = weight.data().data();
    T* y = out.data().data();
    T* col = detail::scratch<T>(0, static_cast<std::size_t>(kdim * plane));
    for (std::int64_t n = 0; n < is.n; ++n) {
        detail::im2col(x + n * is.c * is.h * is.w, is.c, is.h, is.w, k, stride, padding, out_h, out_w, col);
        T* y_n = y + n * os.c * plane;
        kernels::gemm(os.c, plane, kdim, wt, kdim, col, plane, y_n, plane, false);
        if (has_bias) {
            const T* b = bias.data().data();
            for (std::int64_t co = 0; co < os.c; ++co) {
                T* row = y_n + co * plane;
                for (std::int64_t p = 0; p < plane; ++p) row[p] += b[co];
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Activations

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& input, T slope) {
    auto out = make_result<T>(input.shape(), {input}, [slope](TensorImpl<T>& self) {
        if (T* dx = grad_of(self, 0))
            leaky_backward(static_cast<std::int64_t>(self.data.size()), data_of(self, 0), self.grad.data(), slope, dx);
    });
    leaky_forward(input.numel(), input.data().data(), slope, out.data().data());
    return out;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& input) {
    auto out = make_result<T>(input.shape(), {input}, [](TensorImpl<T>& self) {
        if (T* dx = grad_of(self, 0)) {
            for (std::size_t i = 0; i < self.data.size(); ++i) {
                const T y = self.data[i];
                dx[i] += self.grad[i] * y * (T(1) - y);
            }
        }
    });
    auto x = input.data();
    auto y = out.data();
    for (std::size_t i = 0; i < x.size(); ++i) {
        const T t = x[i];
        if (t >= T(0)) {
            y[i] = T(1) / (T(1) + std::exp(-t));
        } else {
            const T e = std::exp(t);
            y[i] = e / (T(1) + e);
        }
    }
    return out;
}

template <typename T>
Tensor<T> softmax_channels(const Tensor<T>& input) {
    const Shape s = input.shape();
    PDWN_CHECK(s.c >= 2, "softmax_channels: needs at least 2 channels, got " << s.c);
    auto out = make_result<T>(s, {input}, [s](TensorImpl<T>& self) {
        T* dx = grad_of(self, 0);
        if (!dx) return;
        const std::int64_t plane = s.plane();
        for (std::int64_t n = 0; n < s.n; ++n) {
            const std::int64_t base = n * s.c * plane;
            for (std::int64_t p = 0; p < plane; ++p) {
                T dot = 0;
                for (std::int64_t c = 0; c < s.c; ++c) {
                    const std::int64_t i = base + c * plane + p;
                    dot += self.data[i] * self.grad[i];
                }
                for (std::int64_t c = 0; c < s.c; ++c) {
                    const std::int64_t i = base + c * plane + p;
                    dx[i] += self.data[i] * (self.grad[i] - dot);
                }
            }
        }
    });
    const T* x = input.data().data();
    T* y = out.data().data();
    const std::int64_t plane = s.plane();
    for (std::int64_t n = 0; n < s.n; ++n) {
        const std::int64_t base = n * s.c * plane;
        for (std::int64_t p = 0; p < plane; ++p) {
            T peak = x[base + p];
            for (std::int64_t c = 1; c < s.c; ++c) peak = std::max(peak, x[base + c * plane + p]);
            T total = 0;
            for (std::int64_t c = 0; c < s.c; ++c) {
                const T e = std::exp(x[base + c * plane + p] - peak);
                y[base + c * plane + p] = e;
                total += e;
            }
            const T inv = T(1) / total;
            for (std::int64_t c = 0; c < s.c; ++c) y[base + c * plane + p] *= inv;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Resampling

template <typename T>
Tensor<T> max_pool2(const Tensor<T>& input, PoolPadding* padding) {
    const Shape is = input.shape();
    PDWN_CHECK(is.h >= 1 && is.w >= 1, "max_pool2: empty spatial extent " << is.str());
    const Shape os{is.n, is.c, (is.h + 1) / 2, (is.w + 1) / 2};
    if (padding) *padding = PoolPadding{is.h % 2 != 0, is.w % 2 != 0};

    // Flat input index of the winner for every output element. Replicated
    // padding never beats the element it copies, so windows at an odd edge
    // just scan their in-bounds elements.
    auto argmax = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(os.numel()));
    auto out = make_result<T>(os, {input}, [argmax](TensorImpl<T>& self) {
        if (T* dx = grad_of(self, 0)) {
            for (std::size_t i = 0; i < argmax->size(); ++i) dx[(*argmax)[i]] += self.grad[i];
        }
    });
    const T* x = input.data().data();
    T* y = out.data().data();
    std::size_t o = 0;
    for (std::int64_t nc = 0; nc < is.n * is.c; ++nc) {
        const std::int64_t base = nc * is.h * is.w;
        for (std::int64_t oy = 0; oy < os.h; ++oy) {
            for (std::int64_t ox = 0; ox < os.w; ++ox, ++o) {
                std::int64_t best = base + (2 * oy) * is.w + 2 * ox;
                for (std::int64_t dy = 0; dy < 2; ++dy) {
                    const std::int64_t iy = 2 * oy + dy;
                    if (iy >= is.h) break;
                    for (std::int64_t dx = 0; dx < 2; ++dx) {
                        const std::int64_t ix = 2 * ox + dx;
                        if (ix >= is.w) break;
                        const std::int64_t idx = base + iy * is.w + ix;
                        if (x[idx] > x[best]) best = idx;
                    }
                }
                (*argmax)[o] = best;
                y[o] = x[best];
            }
        }
    }
    return out;
}

template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& input, std::int64_t out_h, std::int64_t out_w) {
    PDWN_CHECK(out_h >= 1 && out_w >= 1, "bilinear_resize: output size must be positive, got " << out_h << "x" << out_w);
    const Shape is = input.shape();
    const Shape os{is.n, is.c, out_h, out_w};
    auto ty = std::make_shared<std::vector<Tap1d>>(resize_taps(is.h, out_h));
    auto tx = std::make_shared<std::vector<Tap1d>>(resize_taps(is.w, out_w));

    auto out = make_result<T>(os, {input}, [is, os, ty, tx](TensorImpl<T>& self) {
        T* dx = grad_of(self, 0);
        if (!dx) return;
        const T* dy = self.grad.data();
        for (std::int64_t nc = 0; nc < is.n * is.c; ++nc) {
            T* d = dx + nc * is.h * is.w;
            const T* g = dy + nc * os.h * os.w;
            for (std::int64_t oy = 0; oy < os.h; ++oy) {
                const Tap1d& a = (*ty)[oy];
                const T wy1 = static_cast<T>(a.frac);
                const T wy0 = T(1) - wy1;
                for (std::int64_t ox = 0; ox < os.w; ++ox) {
                    const Tap1d& b = (*tx)[ox];
                    const T wx1 = static_cast<T>(b.frac);
                    const T wx0 = T(1) - wx1;
                    const T v = g[oy * os.w + ox];
                    d[a.i0 * is.w + b.i0] += v * wy0 * wx0;
                    d[a.i0 * is.w + b.i1] += v * wy0 * wx1;
                    d[a.i1 * is.w + b.i0] += v * wy1 * wx0;
                    d[a.i1 * is.w + b.i1] += v * wy1 * wx1;
                }
            }
        }
    });
    const T* x = input.data().data();
    T* y = out.data().data();
    for (std::int64_t nc = 0; nc < is.n * is.c; ++nc) {
        const T* s = x + nc * is.h * is.w;
        T* d = y + nc * os.h * os.w;
        for (std::int64_t oy = 0; oy < os.h; ++oy) {
            const Tap1d& a = (*ty)[oy];
            const T wy1 = static_cast<T>(a.frac);
            const T wy0 = T(1) - wy1;
            for (std::int64_t ox = 0; ox < os.w; ++ox) {
                const Tap1d& b = (*tx)[ox];
                const T wx1 = static_cast<T>(b.frac);
                const T wx0 = T(1) - wx1;
                d[oy * os.w + ox] = wy0 * (wx0 * s[a.i0 * is.w + b.i0] + wx1 * s[a.i0 * is.w + b.i1]) +
                                    wy1 * (wx0 * s[a.i1 * is.w + b.i0] + wx1 * s[a.i1 * is.w + b.i1]);
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Elementwise arithmetic

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    check_same_shape(a, b, "add");
    auto out = make_result<T>(a.shape(), {a, b}, [](TensorImpl<T>& self) {
        const auto n = static_cast<std::int64_t>(self.grad.size());
        if (T* da = grad_of(self, 0)) kernels::axpy(n, T(1), self.grad.data(), da);
        if (T* db = grad_of(self, 1)) kernels::axpy(n, T(1), self.grad.data(), db);
    });
    auto x = a.data();
    auto y = b.data();
    auto z = out.data();
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = x[i] + y[i];
    return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    check_same_shape(a, b, "sub");
    auto out = make_result<T>(a.shape(), {a, b}, [](TensorImpl<T>& self) {
        const auto n = static_cast<std::int64_t>(self.grad.size());
        if (T* da = grad_of(self, 0)) kernels::axpy(n, T(1), self.grad.data(), da);
        if (T* db = grad_of(self, 1)) kernels::axpy(n, T(-1), self.grad.data(), db);
    });
    auto x = a.data();
    auto y = b.data();
    auto z = out.data();
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = x[i] - y[i];
    return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    check_same_shape(a, b, "mul");
    auto out = make_result<T>(a.shape(), {a, b}, [](TensorImpl<T>& self) {
        const auto n = static_cast<std::int64_t>(self.grad.size());
        if (T* da = grad_of(self, 0)) kernels::mul_acc(n, self.grad.data(), data_of(self, 1), da);
        if (T* db = grad_of(self, 1)) kernels::mul_acc(n, self.grad.data(), data_of(self, 0), db);
    });
    auto x = a.data();
    auto y = b.data();
    auto z = out.data();
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = x[i] * y[i];
    return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
    auto out = make_result<T>(a.shape(), {a}, [factor](TensorImpl<T>& self) {
        if (T* da = grad_of(self, 0))
            kernels::axpy(static_cast<std::int64_t>(self.grad.size()), factor, self.grad.data(), da);
    });
    auto x = a.data();
    auto z = out.data();
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = x[i] * factor;
    return out;
}

// ---------------------------------------------------------------------------
// Channel plumbing

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts) {
    PDWN_CHECK(!parts.empty(), "concat: no inputs");
    const Shape first = parts.front().shape();
    std::int64_t channels = 0;
    std::vector<std::int64_t> widths;
    for (const auto& p : parts) {
        const Shape s = p.shape();
        PDWN_CHECK(s.n == first.n && s.h == first.h && s.w == first.w,
                   "concat: part shape " << s.str() << " incompatible with " << first.str());
        widths.push_back(s.c);
        channels += s.c;
    }
    const Shape os{first.n, channels, first.h, first.w};
    const std::int64_t plane = first.plane();
    auto out = make_result<T>(os, parts, [widths, os, plane](TensorImpl<T>& self) {
        std::int64_t offset = 0;
        for (std::size_t i = 0; i < widths.size(); ++i) {
            if (T* d = grad_of(self, i)) {
                const std::int64_t block = widths[i] * plane;
                for (std::int64_t n = 0; n < os.n; ++n)
                    kernels::axpy(block, T(1), self.grad.data() + n * os.c * plane + offset * plane, d + n * block);
            }
            offset += widths[i];
        }
    });
    T* y = out.data().data();
    std::int64_t offset = 0;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        const std::int64_t block = widths[i] * plane;
        const T* x = parts[i].data().data();
        for (std::int64_t n = 0; n < os.n; ++n)
            std::copy(x + n * block, x + (n + 1) * block, y + n * os.c * plane + offset * plane);
        offset += widths[i];
    }
    return out;
}

template <typename T>
Tensor<T> slice_channels(const Tensor<T>& input, std::int64_t begin, std::int64_t count) {
    const Shape is = input.shape();
    PDWN_CHECK(begin >= 0 && count >= 1 && begin + count <= is.c,
               "slice_channels: range [" << begin << ", " << begin + count << ") outside " << is.c << " channels");
    const Shape os{is.n, count, is.h, is.w};
    const std::int64_t plane = is.plane();
    auto out = make_result<T>(os, {input}, [is, begin, count, plane](TensorImpl<T>& self) {
        if (T* d = grad_of(self, 0)) {
            for (std::int64_t n = 0; n < is.n; ++n)
                kernels::axpy(count * plane, T(1), self.grad.data() + n * count * plane,
                              d + (n * is.c + begin) * plane);
        }
    });
    const T* x = input.data().data();
    T* y = out.data().data();
    for (std::int64_t n = 0; n < is.n; ++n)
        std::copy(x + (n * is.c + begin) * plane, x + (n * is.c + begin + count) * plane, y + n * count * plane);
    return out;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& input) {
    auto out = make_result<T>({1, 1, 1, 1}, {input}, [](TensorImpl<T>& self) {
        if (T* d = grad_of(self, 0)) {
            const T g = self.grad[0];
            const std::size_t n = self.inputs[0]->data.size();
            for (std::size_t i = 0; i < n; ++i) d[i] += g;
        }
    });
    T acc = 0;
    for (T v : input.data()) acc += v;
    out.data()[0] = acc;
    return out;
}

template <typename T>
Tensor<T> alpha_blend(const Tensor<T>& a, const Tensor<T>& b, const Tensor<T>& alpha) {
    check_same_shape(a, b, "alpha_blend");
    const Shape s = a.shape();
    const Shape as = alpha.shape();
    PDWN_CHECK(as.n == s.n && as.c == 1 && as.h == s.h && as.w == s.w,
               "alpha_blend: alpha shape " << as.str() << " must be (" << s.n << ", 1, " << s.h << ", " << s.w << ")");
    const std::int64_t plane = s.plane();
    auto out = make_result<T>(s, {a, b, alpha}, [s, plane](TensorImpl<T>& self) {
        const T* x0 = data_of(self, 0);
        const T* x1 = data_of(self, 1);
        const T* al = data_of(self, 2);
        T* d0 = grad_of(self, 0);
        T* d1 = grad_of(self, 1);
        T* da = grad_of(self, 2);
        for (std::int64_t n = 0; n < s.n; ++n) {
            for (std::int64_t c = 0; c < s.c; ++c) {
                const std::int64_t base = (n * s.c + c) * plane;
                for (std::int64_t p = 0; p < plane; ++p) {
                    const T g = self.grad[base + p];
                    const T w = al[n * plane + p];
                    if (d0) d0[base + p] += w * g;
                    if (d1) d1[base + p] += (T(1) - w) * g;
                    if (da) da[n * plane + p] += (x0[base + p] - x1[base + p]) * g;
                }
            }
        }
    });
    const T* x0 = a.data().data();
    const T* x1 = b.data().data();
    const T* al = alpha.data().data();
    T* y = out.data().data();
    for (std::int64_t n = 0; n < s.n; ++n) {
        for (std::int64_t c = 0; c < s.c; ++c) {
            const std::int64_t base = (n * s.c + c) * plane;
            for (std::int64_t p = 0; p < plane; ++p) {
                const T w = al[n * plane + p];
                y[base + p] = w * x0[base + p] + (T(1) - w) * x1[base + p];
            }
        }
    }
    return out;
}

template <typename T>
Tensor<T> l1_loss(const Tensor<T>& pred, const Tensor<T>& target) {
    check_same_shape(pred, target, "l1_loss");
    const auto count = static_cast<T>(pred.numel());
    auto out = make_result<T>({1, 1, 1, 1}, {pred, target}, [count](TensorImpl<T>& self) {
        const T* p = data_of(self, 0);
        const T* t = data_of(self, 1);
        T* dp = grad_of(self, 0);
        T* dt = grad_of(self, 1);
        const T g = self.grad[0] / count;
        const std::size_t n = self.inputs[0]->data.size();
        for (std::size_t i = 0; i < n; ++i) {
            const T diff = p[i] - t[i];
            const T sg = diff > T(0) ? g : (diff < T(0) ? -g : T(0));
            if (dp) dp[i] += sg;
            if (dt) dt[i] -= sg;
        }
    });
    auto p = pred.data();
    auto t = target.data();
    // Accumulate in double so the float loss does not drift with image size.
    double acc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) acc += std::abs(static_cast<double>(p[i]) - static_cast<double>(t[i]));
    out.data()[0] = static_cast<T>(acc / static_cast<double>(p.size()));
    return out;
}

// ---------------------------------------------------------------------------
// Non-differentiable helpers

template <typename T>
Tensor<T> pad_replicate(const Tensor<T>& input, std::int64_t bottom, std::int64_t right) {
    PDWN_CHECK(bottom >= 0 && right >= 0, "pad_replicate: negative padding");
    const Shape is = input.shape();
    Tensor<T> out({is.n, is.c, is.h + bottom, is.w + right});
    for (std::int64_t nc = 0; nc < is.n * is.c; ++nc) {
        for (std::int64_t y = 0; y < is.h + bottom; ++y) {
            const std::int64_t sy = std::min(y, is.h - 1);
            for (std::int64_t x = 0; x < is.w + right; ++x) {
                const std::int64_t sx = std::min(x, is.w - 1);
                out.data()[(nc * (is.h + bottom) + y) * (is.w + right) + x] = input.data()[(nc * is.h + sy) * is.w + sx];
            }
        }
    }
    return out;
}

template <typename T>
Tensor<T> crop(const Tensor<T>& input, std::int64_t h, std::int64_t w) {
    const Shape is = input.shape();
    PDWN_CHECK(h >= 1 && w >= 1 && h <= is.h && w <= is.w, "crop: " << h << "x" << w << " outside " << is.str());
    Tensor<T> out({is.n, is.c, h, w});
    for (std::int64_t nc = 0; nc < is.n * is.c; ++nc)
        for (std::int64_t y = 0; y < h; ++y)
            for (std::int64_t x = 0; x < w; ++x)
                out.data()[(nc * h + y) * w + x] = input.data()[(nc * is.h + y) * is.w + x];
    return out;
}

template <typename T>
Tensor<T> flip_horizontal(const Tensor<T>& input) {
    const Shape s = input.shape();
    Tensor<T> out(s);
    for (std::int64_t row = 0; row < s.n * s.c * s.h; ++row)
        for (std::int64_t x = 0; x < s.w; ++x) out.data()[row * s.w + x] = input.data()[row * s.w + (s.w - 1 - x)];
    return out;
}

#define PDWN_INSTANTIATE_OPS(T)                                                                           \
    template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int, int);           \
    template Tensor<T> leaky_relu(const Tensor<T>&, T);                                                  \
    template Tensor<T> max_pool2(const Tensor<T>&, PoolPadding*);                                        \
    template Tensor<T> bilinear_resize(const Tensor<T>&, std::int64_t, std::int64_t);                    \
    template Tensor<T> sigmoid(const Tensor<T>&);                                                        \
    template Tensor<T> softmax_channels(const Tensor<T>&);                                               \
    template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                          \
    template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                          \
    template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                          \
    template Tensor<T> scale(const Tensor<T>&, T);                                                       \
    template Tensor<T> concat(const std::vector<Tensor<T>>&);                                            \
    template Tensor<T> slice_channels(const Tensor<T>&, std::int64_t, std::int64_t);                     \
    template Tensor<T> sum(const Tensor<T>&);                                                            \
    template Tensor<T> alpha_blend(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                \
    template Tensor<T> l1_loss(const Tensor<T>&, const Tensor<T>&);                                      \
    template Tensor<T> pad_replicate(const Tensor<T>&, std::int64_t, std::int64_t);                      \
    template Tensor<T> crop(const Tensor<T>&, std::int64_t, std::int64_t);                               \
    template Tensor<T> flip_horizontal(const Tensor<T>&);

PDWN_INSTANTIATE_OPS(float)
PDWN_INSTANTIATE_OPS(double)

}  // namespace pdwn
