// SPDX-License-Identifier: Apache-2.0
//
// Inner-loop kernels. Every kernel has a portable scalar reference; float has
// an AVX2/FMA variant chosen once at startup from CPUID. PDWN_KERNELS=scalar
// in the environment forces the reference path.

#pragma once

#include <cstdint>
#include <string_view>

namespace pdwn::kernels {

enum class Isa { scalar, avx2 };

struct KernelTable {
    Isa isa;
    // C[M,N] (+)= A[M,K] * B[K,N], all row-major with explicit leading dims.
    void (*gemm)(std::int64_t m, std::int64_t n, std::int64_t k, const float* a, std::int64_t lda,
                 const float* b, std::int64_t ldb, float* c, std::int64_t ldc, bool accumulate);
    // out[i] += x[i] * y[i]
    void (*mul_acc)(std::int64_t n, const float* x, const float* y, float* out);
    // y[i] += alpha * x[i]
    void (*axpy)(std::int64_t n, float alpha, const float* x, float* y);
    // y[i] = x[i] >= 0 ? x[i] : slope * x[i]
    void (*leaky_relu)(std::int64_t n, const float* x, float slope, float* y);
    // dx[i] += x[i] > 0 ? dy[i] : slope * dy[i]
    void (*leaky_relu_backward)(std::int64_t n, const float* x, const float* dy, float slope, float* dx);
};

const KernelTable& scalar_table();
// nullptr when the binary was built without AVX2 support.
const KernelTable* avx2_table();
bool cpu_has_avx2_fma();

// Table in use by the ops; resolved on first call.
const KernelTable& active();
// Test hook: pin the active table. Returns the previous ISA.
Isa set_active(Isa isa);
std::string_view isa_name(Isa isa);

// Generic reference kernels used for double precision (gradient checks).
template <typename T>
void gemm_ref(std::int64_t m, std::int64_t n, std::int64_t k, const T* a, std::int64_t lda, const T* b,
              std::int64_t ldb, T* c, std::int64_t ldc, bool accumulate) {
    for (std::int64_t i = 0; i < m; ++i) {
        T* crow = c + i * ldc;
        if (!accumulate)
            for (std::int64_t j = 0; j < n; ++j) crow[j] = T(0);
        for (std::int64_t p = 0; p < k; ++p) {
            const T av = a[i * lda + p];
            if (av == T(0)) continue;
            const T* brow = b + p * ldb;
            for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

template <typename T>
void mul_acc_ref(std::int64_t n, const T* x, const T* y, T* out) {
    for (std::int64_t i = 0; i < n; ++i) out[i] += x[i] * y[i];
}

template <typename T>
void axpy_ref(std::int64_t n, T alpha, const T* x, T* y) {
    for (std::int64_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

// Typed front ends: float goes through the dispatch table, double through the
// reference templates.
inline void gemm(std::int64_t m, std::int64_t n, std::int64_t k, const float* a, std::int64_t lda, const float* b,
                 std::int64_t ldb, float* c, std::int64_t ldc, bool accumulate) {
    active().gemm(m, n, k, a, lda, b, ldb, c, ldc, accumulate);
}
inline void gemm(std::int64_t m, std::int64_t n, std::int64_t k, const double* a, std::int64_t lda,
                 const double* b, std::int64_t ldb, double* c, std::int64_t ldc, bool accumulate) {
    gemm_ref(m, n, k, a, lda, b, ldb, c, ldc, accumulate);
}
inline void mul_acc(std::int64_t n, const float* x, const float* y, float* out) { active().mul_acc(n, x, y, out); }
inline void mul_acc(std::int64_t n, const double* x, const double* y, double* out) { mul_acc_ref(n, x, y, out); }
inline void axpy(std::int64_t n, float alpha, const float* x, float* y) { active().axpy(n, alpha, x, y); }
inline void axpy(std::int64_t n, double alpha, const double* x, double* y) { axpy_ref(n, alpha, x, y); }

}  // namespace pdwn::kernels
