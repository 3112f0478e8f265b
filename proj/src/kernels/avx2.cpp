// SPDX-License-Identifier: Apache-2.0
//
// AVX2 + FMA kernels. This translation unit is the only one compiled with
// -mavx2 -mfma; nothing here may run before the CPUID check in dispatch.cpp.

#include "pdwn/kernels.hpp"

#if defined(PDWN_HAVE_AVX2)

#include <immintrin.h>

#include <array>

namespace pdwn::kernels {

namespace {

// Lane mask for the first `count` (< 8) floats.
inline __m256i tail_mask(std::int64_t count) {
    alignas(32) static const std::array<int, 16> bits{-1, -1, -1, -1, -1, -1, -1, -1, 0, 0, 0, 0, 0, 0, 0, 0};
    return _mm256_loadu_si256(reinterpret_cast<const __m256i*>(bits.data() + 8 - count));
}

// Rows x 16 register block: two 8-wide accumulators per row.
template <int Rows>
inline void block_16(std::int64_t k, const float* a, std::int64_t lda, const float* b, std::int64_t ldb, float* c,
                     std::int64_t ldc, bool accumulate) {
    __m256 acc0[Rows];
    __m256 acc1[Rows];
    for (int r = 0; r < Rows; ++r) {
        if (accumulate) {
            acc0[r] = _mm256_loadu_ps(c + r * ldc);
            acc1[r] = _mm256_loadu_ps(c + r * ldc + 8);
        } else {
            acc0[r] = _mm256_setzero_ps();
            acc1[r] = _mm256_setzero_ps();
        }
    }
    for (std::int64_t p = 0; p < k; ++p) {
        const __m256 b0 = _mm256_loadu_ps(b + p * ldb);
        const __m256 b1 = _mm256_loadu_ps(b + p * ldb + 8);
        for (int r = 0; r < Rows; ++r) {
            const __m256 av = _mm256_broadcast_ss(a + r * lda + p);
            acc0[r] = _mm256_fmadd_ps(av, b0, acc0[r]);
            acc1[r] = _mm256_fmadd_ps(av, b1, acc1[r]);
        }
    }
    for (int r = 0; r < Rows; ++r) {
        _mm256_storeu_ps(c + r * ldc, acc0[r]);
        _mm256_storeu_ps(c + r * ldc + 8, acc1[r]);
    }
}

// Rows x `width` (< 16) block using masked loads and stores.
template <int Rows>
inline void block_tail(std::int64_t k, std::int64_t width, const float* a, std::int64_t lda, const float* b,
                       std::int64_t ldb, float* c, std::int64_t ldc, bool accumulate) {
    const std::int64_t w0 = width < 8 ? width : 8;
    const std::int64_t w1 = width - w0;
    const __m256i m0 = w0 == 8 ? _mm256_set1_epi32(-1) : tail_mask(w0);
    const __m256i m1 = w1 > 0 ? tail_mask(w1) : _mm256_setzero_si256();
    __m256 acc0[Rows];
    __m256 acc1[Rows];
    for (int r = 0; r < Rows; ++r) {
        if (accumulate) {
            acc0[r] = _mm256_maskload_ps(c + r * ldc, m0);
            acc1[r] = w1 > 0 ? _mm256_maskload_ps(c + r * ldc + 8, m1) : _mm256_setzero_ps();
        } else {
            acc0[r] = _mm256_setzero_ps();
            acc1[r] = _mm256_setzero_ps();
        }
    }
    for (std::int64_t p = 0; p < k; ++p) {
        const __m256 b0 = _mm256_maskload_ps(b + p * ldb, m0);
        const __m256 b1 = w1 > 0 ? _mm256_maskload_ps(b + p * ldb + 8, m1) : _mm256_setzero_ps();
        for (int r = 0; r < Rows; ++r) {
            const __m256 av = _mm256_broadcast_ss(a + r * lda + p);
            acc0[r] = _mm256_fmadd_ps(av, b0, acc0[r]);
            acc1[r] = _mm256_fmadd_ps(av, b1, acc1[r]);
        }
    }
    for (int r = 0; r < Rows; ++r) {
        _mm256_maskstore_ps(c + r * ldc, m0, acc0[r]);
        if (w1 > 0) _mm256_maskstore_ps(c + r * ldc + 8, m1, acc1[r]);
    }
}

template <int Rows>
void row_panel(std::int64_t n, std::int64_t k, const float* a, std::int64_t lda, const float* b, std::int64_t ldb,
               float* c, std::int64_t ldc, bool accumulate) {
    std::int64_t j = 0;
    for (; j + 16 <= n; j += 16) block_16<Rows>(k, a, lda, b + j, ldb, c + j, ldc, accumulate);
    if (j < n) block_tail<Rows>(k, n - j, a, lda, b + j, ldb, c + j, ldc, accumulate);
}

void gemm_avx2(std::int64_t m, std::int64_t n, std::int64_t k, const float* a, std::int64_t lda, const float* b,
               std::int64_t ldb, float* c, std::int64_t ldc, bool accumulate) {
    // Column strips of 256 keep the B panel resident in L2 across row blocks.
    constexpr std::int64_t kStrip = 256;
    for (std::int64_t j0 = 0; j0 < n; j0 += kStrip) {
        const std::int64_t nj = n - j0 < kStrip ? n - j0 : kStrip;
        std::int64_t i = 0;
        for (; i + 4 <= m; i += 4) row_panel<4>(nj, k, a + i * lda, lda, b + j0, ldb, c + i * ldc + j0, ldc, accumulate);
        switch (m - i) {
            case 3: row_panel<3>(nj, k, a + i * lda, lda, b + j0, ldb, c + i * ldc + j0, ldc, accumulate); break;
            case 2: row_panel<2>(nj, k, a + i * lda, lda, b + j0, ldb, c + i * ldc + j0, ldc, accumulate); break;
            case 1: row_panel<1>(nj, k, a + i * lda, lda, b + j0, ldb, c + i * ldc + j0, ldc, accumulate); break;
            default: break;
        }
    }
}

void mul_acc_avx2(std::int64_t n, const float* x, const float* y, float* out) {
    std::int64_t i = 0;
    for (; i + 8 <= n; i += 8) {
        const __m256 acc = _mm256_fmadd_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i), _mm256_loadu_ps(out + i));
        _mm256_storeu_ps(out + i, acc);
    }
    for (; i < n; ++i) out[i] += x[i] * y[i];
}

void axpy_avx2(std::int64_t n, float alpha, const float* x, float* y) {
    const __m256 av = _mm256_set1_ps(alpha);
    std::int64_t i = 0;
    for (; i + 8 <= n; i += 8) {
        _mm256_storeu_ps(y + i, _mm256_fmadd_ps(av, _mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
    }
    for (; i < n; ++i) y[i] += alpha * x[i];
}

void leaky_relu_avx2(std::int64_t n, const float* x, float slope, float* y) {
    const __m256 sv = _mm256_set1_ps(slope);
    const __m256 zero = _mm256_setzero_ps();
    std::int64_t i = 0;
    for (; i + 8 <= n; i += 8) {
        const __m256 v = _mm256_loadu_ps(x + i);
        const __m256 neg = _mm256_cmp_ps(v, zero, _CMP_LT_OQ);
        _mm256_storeu_ps(y + i, _mm256_blendv_ps(v, _mm256_mul_ps(v, sv), neg));
    }
    for (; i < n; ++i) y[i] = x[i] >= 0.0f ? x[i] : slope * x[i];
}

void leaky_relu_backward_avx2(std::int64_t n, const float* x, const float* dy, float slope, float* dx) {
    const __m256 sv = _mm256_set1_ps(slope);
    const __m256 one = _mm256_set1_ps(1.0f);
    const __m256 zero = _mm256_setzero_ps();
    std::int64_t i = 0;
    for (; i + 8 <= n; i += 8) {
        const __m256 pos = _mm256_cmp_ps(_mm256_loadu_ps(x + i), zero, _CMP_GT_OQ);
        const __m256 scale = _mm256_blendv_ps(sv, one, pos);
        _mm256_storeu_ps(dx + i, _mm256_fmadd_ps(scale, _mm256_loadu_ps(dy + i), _mm256_loadu_ps(dx + i)));
    }
    for (; i < n; ++i) dx[i] += x[i] > 0.0f ? dy[i] : slope * dy[i];
}

}  // namespace

const KernelTable* avx2_table() {
    static const KernelTable table{Isa::avx2, gemm_avx2, mul_acc_avx2, axpy_avx2, leaky_relu_avx2,
                                   leaky_relu_backward_avx2};
    return &table;
}

}  // namespace pdwn::kernels

#else

namespace pdwn::kernels {
const KernelTable* avx2_table() { return nullptr; }
}  // namespace pdwn::kernels

#endif
