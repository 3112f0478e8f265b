// SPDX-License-Identifier: Apache-2.0

#include "pdwn/warp.hpp"

#include <algorithm>
#include <cmath>

#include "detail.hpp"
#include "pdwn/kernels.hpp"
#include "pdwn/ops.hpp"

namespace pdwn {

using detail::data_of;
using detail::grad_of;

namespace {

// Bilinear footprint of one sampling position. Corners outside the image have
// index -1 and never contribute.
template <typename T>
struct Footprint {
    std::int64_t idx[4];  // (y0,x0) (y0,x1) (y1,x0) (y1,x1)
    T ly;
    T lx;
};

template <typename T>
Footprint<T> footprint(T y, T x, std::int64_t h, std::int64_t w) {
    Footprint<T> f;
    if (!std::isfinite(y) || !std::isfinite(x)) {
        f.idx[0] = f.idx[1] = f.idx[2] = f.idx[3] = -1;
        f.ly = f.lx = T(0);
        return f;
    }
    const T fy = std::floor(y);
    const T fx = std::floor(x);
    f.ly = y - fy;
    f.lx = x - fx;
    // Far-away positions: clamp before the integer cast; all corners end up
    // out of range anyway.
    const T lim_y = static_cast<T>(h + 1);
    const T lim_x = static_cast<T>(w + 1);
    const std::int64_t y0 = static_cast<std::int64_t>(std::clamp(fy, T(-2), lim_y));
    const std::int64_t x0 = static_cast<std::int64_t>(std::clamp(fx, T(-2), lim_x));
    const std::int64_t ys[2] = {y0, y0 + 1};
    const std::int64_t xs[2] = {x0, x0 + 1};
    for (int a = 0; a < 2; ++a) {
        for (int b = 0; b < 2; ++b) {
            const bool inside = ys[a] >= 0 && ys[a] < h && xs[b] >= 0 && xs[b] < w;
            f.idx[a * 2 + b] = inside ? ys[a] * w + xs[b] : -1;
        }
    }
    return f;
}

template <typename T>
T sample(const T* plane, const Footprint<T>& f) {
    const T v00 = f.idx[0] >= 0 ? plane[f.idx[0]] : T(0);
    const T v01 = f.idx[1] >= 0 ? plane[f.idx[1]] : T(0);
    const T v10 = f.idx[2] >= 0 ? plane[f.idx[2]] : T(0);
    const T v11 = f.idx[3] >= 0 ? plane[f.idx[3]] : T(0);
    return (T(1) - f.ly) * ((T(1) - f.lx) * v00 + f.lx * v01) + f.ly * ((T(1) - f.lx) * v10 + f.lx * v11);
}

// Accumulates g * d(sample)/d(value) into the plane gradient and returns the
// partial derivatives of the sample w.r.t. its (y, x) position.
template <typename T>
void sample_backward(const T* plane, T* plane_grad, const Footprint<T>& f, T g, T& d_y, T& d_x) {
    const T v00 = f.idx[0] >= 0 ? plane[f.idx[0]] : T(0);
    const T v01 = f.idx[1] >= 0 ? plane[f.idx[1]] : T(0);
    const T v10 = f.idx[2] >= 0 ? plane[f.idx[2]] : T(0);
    const T v11 = f.idx[3] >= 0 ? plane[f.idx[3]] : T(0);
    d_y = (T(1) - f.lx) * (v10 - v00) + f.lx * (v11 - v01);
    d_x = (T(1) - f.ly) * (v01 - v00) + f.ly * (v11 - v10);
    if (plane_grad) {
        const T w[4] = {(T(1) - f.ly) * (T(1) - f.lx), (T(1) - f.ly) * f.lx, f.ly * (T(1) - f.lx), f.ly * f.lx};
        for (int i = 0; i < 4; ++i)
            if (f.idx[i] >= 0) plane_grad[f.idx[i]] += g * w[i];
    }
}

// Footprints for every (tap, pixel) of one sample, tap-major.
template <typename T>
std::vector<Footprint<T>> deform_footprints(const T* offsets, int k, std::int64_t h, std::int64_t w) {
    const std::int64_t plane = h * w;
    const int half = k / 2;
    std::vector<Footprint<T>> out(static_cast<std::size_t>(k * k * plane));
    for (int j = 0; j < k * k; ++j) {
        const T ry = static_cast<T>(j / k - half);
        const T rx = static_cast<T>(j % k - half);
        const T* oy = offsets + (2 * j) * plane;
        const T* ox = offsets + (2 * j + 1) * plane;
        for (std::int64_t y = 0; y < h; ++y) {
            for (std::int64_t x = 0; x < w; ++x) {
                const std::int64_t p = y * w + x;
                out[j * plane + p] = footprint(static_cast<T>(y) + ry + oy[p], static_cast<T>(x) + rx + ox[p], h, w);
            }
        }
    }
    return out;
}

// Modulated sampling columns (C*K*K, H*W) for one image.
template <typename T>
void deform_im2col(const T* feature, const T* modulation, const std::vector<Footprint<T>>& fp, std::int64_t channels,
                   int taps, std::int64_t plane, T* col) {
    for (std::int64_t c = 0; c < channels; ++c) {
        const T* src = feature + c * plane;
        for (int j = 0; j < taps; ++j) {
            T* dst = col + (c * taps + j) * plane;
            const T* m = modulation + j * plane;
            const Footprint<T>* f = fp.data() + j * plane;
            for (std::int64_t p = 0; p < plane; ++p) dst[p] = m[p] * sample(src, f[p]);
        }
    }
}

}  // namespace

template <typename T>
int OffsetField<T>::kernel() const {
    const std::int64_t taps = modulation.shape().c;
    const int k = static_cast<int>(std::lround(std::sqrt(static_cast<double>(taps))));
    PDWN_CHECK(static_cast<std::int64_t>(k) * k == taps, "modulation channel count " << taps << " is not a square");
    return k;
}

// ---------------------------------------------------------------------------
// deformable_warp

template <typename T>
Tensor<T> deformable_warp(const Tensor<T>& feature, const OffsetField<T>& field, const GlobalFilter<T>& filter) {
    const Shape fs = feature.shape();
    const Shape ws = filter.weight.shape();
    PDWN_CHECK(ws.h == ws.w && ws.h % 2 == 1, "deformable_warp: filter must be square and odd, got " << ws.str());
    const int k = static_cast<int>(ws.h);
    const int taps = k * k;
    PDWN_CHECK(ws.c == fs.c, "deformable_warp: feature channels " << fs.c << " != filter input channels " << ws.c);
    const Shape os = field.offsets.shape();
    const Shape ms = field.modulation.shape();
    PDWN_CHECK(os.c == 2 * taps, "deformable_warp: offsets need " << 2 * taps << " channels, got " << os.c);
    PDWN_CHECK(ms.c == taps, "deformable_warp: modulation needs " << taps << " channels, got " << ms.c);
    PDWN_CHECK(os.n == fs.n && os.h == fs.h && os.w == fs.w,
               "deformable_warp: offsets " << os.str() << " do not match feature " << fs.str());
    PDWN_CHECK(ms.n == fs.n && ms.h == fs.h && ms.w == fs.w,
               "deformable_warp: modulation " << ms.str() << " does not match feature " << fs.str());

    const std::int64_t plane = fs.plane();
    const std::int64_t kdim = fs.c * taps;
    const Shape out_shape{fs.n, ws.n, fs.h, fs.w};

    auto out = make_result<T>(
        out_shape, {feature, field.offsets, field.modulation, filter.weight},
        [fs, ws, k, taps, plane, kdim](TensorImpl<T>& self) {
            const T* x = data_of(self, 0);
            const T* off = data_of(self, 1);
            const T* mod = data_of(self, 2);
            const T* wt = data_of(self, 3);
            T* dx = grad_of(self, 0);
            T* doff = grad_of(self, 1);
            T* dmod = grad_of(self, 2);
            T* dw = grad_of(self, 3);
            const T* dy = self.grad.data();
            const bool need_col_grad = dx || doff || dmod;

            T* col = detail::scratch<T>(0, static_cast<std::size_t>(kdim * plane));
            T* dy_t = dw ? detail::scratch<T>(1, static_cast<std::size_t>(plane * ws.n)) : nullptr;
            T* dw_t = dw ? detail::scratch<T>(2, static_cast<std::size_t>(kdim * ws.n)) : nullptr;
            T* w_t = need_col_grad ? detail::scratch<T>(3, static_cast<std::size_t>(kdim * ws.n)) : nullptr;
            if (need_col_grad) detail::transpose(wt, ws.n, kdim, w_t);
            for (std::int64_t n = 0; n < fs.n; ++n) {
                const T* x_n = x + n * fs.c * plane;
                const T* off_n = off + n * 2 * taps * plane;
                const T* mod_n = mod + n * taps * plane;
                const T* dy_n = dy + n * ws.n * plane;
                const auto fp = deform_footprints(off_n, k, fs.h, fs.w);
                if (dw) {
                    deform_im2col(x_n, mod_n, fp, fs.c, taps, plane, col);
                    detail::transpose(dy_n, ws.n, plane, dy_t);
                    kernels::gemm(kdim, ws.n, plane, col, plane, dy_t, ws.n, dw_t, ws.n, n > 0);
                }
                if (!need_col_grad) continue;
                // col now holds d loss / d column.
                kernels::gemm(kdim, plane, ws.n, w_t, ws.n, dy_n, plane, col, plane, false);
                T* dx_n = dx ? dx + n * fs.c * plane : nullptr;
                T* doff_n = doff ? doff + n * 2 * taps * plane : nullptr;
                T* dmod_n = dmod ? dmod + n * taps * plane : nullptr;
                for (int j = 0; j < taps; ++j) {
                    const T* m = mod_n + j * plane;
                    const Footprint<T>* f = fp.data() + j * plane;
                    for (std::int64_t p = 0; p < plane; ++p) {
                        T acc_y = 0;
                        T acc_x = 0;
                        T acc_m = 0;
                        for (std::int64_t c = 0; c < fs.c; ++c) {
                            const T g = col[(c * taps + j) * plane + p];
                            if (g == T(0)) continue;
                            const T* src = x_n + c * plane;
                            T d_y;
                            T d_x;
                            sample_backward(src, dx_n ? dx_n + c * plane : nullptr, f[p], g * m[p], d_y, d_x);
                            acc_y += g * d_y;
                            acc_x += g * d_x;
                            if (dmod_n) acc_m += g * sample(src, f[p]);
                        }
                        if (doff_n) {
                            doff_n[(2 * j) * plane + p] += acc_y * m[p];
                            doff_n[(2 * j + 1) * plane + p] += acc_x * m[p];
                        }
                        if (dmod_n) dmod_n[j * plane + p] += acc_m;
                    }
                }
            }
            if (dw) {
                for (std::int64_t co = 0; co < ws.n; ++co)
                    for (std::int64_t i = 0; i < kdim; ++i) dw[co * kdim + i] += dw_t[i * ws.n + co];
            }
        });

    const T* x = feature.data().data();
    const T* off = field.offsets.data().data();
    const T* mod = field.modulation.data().data();
    const T* wt = filter.weight.data().data();
    T* y = out.data().data();
    T* col = detail::scratch<T>(0, static_cast<std::size_t>(kdim * plane));
    for (std::int64_t n = 0; n < fs.n; ++n) {
        const auto fp = deform_footprints(off + n * 2 * taps * plane, k, fs.h, fs.w);
        deform_im2col(x + n * fs.c * plane, mod + n * taps * plane, fp, fs.c, taps, plane, col);
        kernels::gemm(ws.n, plane, kdim, wt, kdim, col, plane, y + n * ws.n * plane, plane, false);
    }
    return out;
}

// ---------------------------------------------------------------------------
// flow_warp

template <typename T>
Tensor<T> flow_warp(const Tensor<T>& feature, const Tensor<T>& flow) {
    const Shape fs = feature.shape();
    const Shape vs = flow.shape();
    PDWN_CHECK(vs.c == 2, "flow_warp: flow needs 2 channels (dy, dx), got " << vs.c);
    PDWN_CHECK(vs.n == fs.n && vs.h == fs.h && vs.w == fs.w,
               "flow_warp: flow " << vs.str() << " does not match feature " << fs.str());
    const std::int64_t plane = fs.plane();

    auto footprints = [fs, plane](const T* v) {
        std::vector<Footprint<T>> fp(static_cast<std::size_t>(plane));
        for (std::int64_t y = 0; y < fs.h; ++y)
            for (std::int64_t x = 0; x < fs.w; ++x) {
                const std::int64_t p = y * fs.w + x;
                fp[p] = footprint(static_cast<T>(y) + v[p], static_cast<T>(x) + v[plane + p], fs.h, fs.w);
            }
        return fp;
    };

    auto out = make_result<T>(fs, {feature, flow}, [fs, plane, footprints](TensorImpl<T>& self) {
        const T* x = data_of(self, 0);
        const T* v = data_of(self, 1);
        T* dx = grad_of(self, 0);
        T* dv = grad_of(self, 1);
        for (std::int64_t n = 0; n < fs.n; ++n) {
            const auto fp = footprints(v + n * 2 * plane);
            for (std::int64_t c = 0; c < fs.c; ++c) {
                const std::int64_t base = (n * fs.c + c) * plane;
                for (std::int64_t p = 0; p < plane; ++p) {
                    const T g = self.grad[base + p];
                    T d_y;
                    T d_x;
                    sample_backward(x + base, dx ? dx + base : nullptr, fp[p], g, d_y, d_x);
                    if (dv) {
                        dv[n * 2 * plane + p] += g * d_y;
                        dv[n * 2 * plane + plane + p] += g * d_x;
                    }
                }
            }
        }
    });
    const T* x = feature.data().data();
    const T* v = flow.data().data();
    T* y = out.data().data();
    for (std::int64_t n = 0; n < fs.n; ++n) {
        const auto fp = footprints(v + n * 2 * plane);
        for (std::int64_t c = 0; c < fs.c; ++c) {
            const std::int64_t base = (n * fs.c + c) * plane;
            for (std::int64_t p = 0; p < plane; ++p) y[base + p] = sample(x + base, fp[p]);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// cost_volume

template <typename T>
Tensor<T> cost_volume(const Tensor<T>& left, const Tensor<T>& right, int radius, CostNormalization normalization) {
    PDWN_CHECK(left.shape() == right.shape(),
               "cost_volume: left " << left.shape().str() << " and right " << right.shape().str() << " differ");
    PDWN_CHECK(radius >= 0, "cost_volume: negative radius " << radius);
    const Shape s = left.shape();
    const int k = 2 * radius + 1;
    const Shape os{s.n, static_cast<std::int64_t>(k) * k, s.h, s.w};
    const std::int64_t plane = s.plane();
    const T norm = normalization == CostNormalization::kernel_area ? T(1) / static_cast<T>(k * k)
                                                                   : T(1) / static_cast<T>(s.c);

    // Visits every valid (channel, row, displacement) run: out[d][y][x0:x1]
    // pairs with left[c][y][x0:x1] and right[c][y+dy][x0+dx:x1+dx].
    auto for_each_run = [s, radius, k, plane](auto&& fn) {
        for (std::int64_t n = 0; n < s.n; ++n) {
            for (int dy = -radius; dy <= radius; ++dy) {
                for (int dx = -radius; dx <= radius; ++dx) {
                    const std::int64_t d = (dy + radius) * k + (dx + radius);
                    const std::int64_t x0 = std::max<std::int64_t>(0, -dx);
                    const std::int64_t x1 = std::min<std::int64_t>(s.w, s.w - dx);
                    if (x1 <= x0) continue;
                    for (std::int64_t y = 0; y < s.h; ++y) {
                        const std::int64_t yr = y + dy;
                        if (yr < 0 || yr >= s.h) continue;
                        const std::int64_t out_off = ((n * k * k + d) * s.h + y) * s.w + x0;
                        for (std::int64_t c = 0; c < s.c; ++c) {
                            const std::int64_t l_off = ((n * s.c + c) * s.h + y) * s.w + x0;
                            const std::int64_t r_off = ((n * s.c + c) * s.h + yr) * s.w + x0 + dx;
                            fn(out_off, l_off, r_off, x1 - x0);
                        }
                    }
                }
            }
        }
        (void)plane;
    };

    auto out = make_result<T>(os, {left, right}, [for_each_run, norm](TensorImpl<T>& self) {
        const T* l = data_of(self, 0);
        const T* r = data_of(self, 1);
        T* dl = grad_of(self, 0);
        T* dr = grad_of(self, 1);
        std::vector<T> g(self.grad.size());
        for (std::size_t i = 0; i < g.size(); ++i) g[i] = self.grad[i] * norm;
        for_each_run([&](std::int64_t o, std::int64_t li, std::int64_t ri, std::int64_t len) {
            if (dl) kernels::mul_acc(len, g.data() + o, r + ri, dl + li);
            if (dr) kernels::mul_acc(len, g.data() + o, l + li, dr + ri);
        });
    });
    const T* l = left.data().data();
    const T* r = right.data().data();
    T* y = out.data().data();
    for_each_run([&](std::int64_t o, std::int64_t li, std::int64_t ri, std::int64_t len) {
        kernels::mul_acc(len, l + li, r + ri, y + o);
    });
    for (T& v : out.data()) v *= norm;
    return out;
}

// ---------------------------------------------------------------------------
// learnt_cost

template <typename T>
Tensor<T> learnt_cost(const Tensor<T>& left, const Tensor<T>& right, const LearntCostNet<T>& net) {
    PDWN_CHECK(left.shape() == right.shape(),
               "learnt_cost: left " << left.shape().str() << " and right " << right.shape().str() << " differ");
    PDWN_CHECK(net.w1.shape().c == 2 * left.shape().c,
               "learnt_cost: net expects " << net.w1.shape().c << " input channels, features give " << 2 * left.shape().c);
    auto hidden = leaky_relu(conv2d(concat<T>({left, right}), net.w1, net.b1, 1, 1), net.slope);
    return conv2d(hidden, net.w2, net.b2, 1, 1);
}

// ---------------------------------------------------------------------------
// mean_offset

template <typename T>
Tensor<T> mean_offset(const OffsetField<T>& field) {
    const int k = field.kernel();
    const int taps = k * k;
    const Shape ms = field.modulation.shape();
    PDWN_CHECK(field.offsets.shape().c == 2 * taps, "mean_offset: offsets need " << 2 * taps << " channels");
    const std::int64_t plane = ms.plane();
    Tensor<T> out({ms.n, 2, ms.h, ms.w});
    const T* off = field.offsets.data().data();
    const T* mod = field.modulation.data().data();
    T* y = out.data().data();
    for (std::int64_t n = 0; n < ms.n; ++n) {
        for (std::int64_t p = 0; p < plane; ++p) {
            T sy = 0;
            T sx = 0;
            T sm = 0;
            for (int j = 0; j < taps; ++j) {
                const T m = mod[(n * taps + j) * plane + p];
                sy += (static_cast<T>(j / k - k / 2) + off[(n * 2 * taps + 2 * j) * plane + p]) * m;
                sx += (static_cast<T>(j % k - k / 2) + off[(n * 2 * taps + 2 * j + 1) * plane + p]) * m;
                sm += m;
            }
            y[(n * 2) * plane + p] = sy / (sm + T(1e-8));
            y[(n * 2 + 1) * plane + p] = sx / (sm + T(1e-8));
        }
    }
    return out;
}

#define PDWN_INSTANTIATE_WARP(T)                                                                             \
    template struct OffsetField<T>;                                                                          \
    template Tensor<T> deformable_warp(const Tensor<T>&, const OffsetField<T>&, const GlobalFilter<T>&);    \
    template Tensor<T> flow_warp(const Tensor<T>&, const Tensor<T>&);                                       \
    template Tensor<T> cost_volume(const Tensor<T>&, const Tensor<T>&, int, CostNormalization);             \
    template Tensor<T> learnt_cost(const Tensor<T>&, const Tensor<T>&, const LearntCostNet<T>&);            \
    template Tensor<T> mean_offset(const OffsetField<T>&);

PDWN_INSTANTIATE_WARP(float)
PDWN_INSTANTIATE_WARP(double)

}  // namespace pdwn
