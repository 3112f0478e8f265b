// SPDX-License-Identifier: Apache-2.0

#include "pdwn/kernels.hpp"

namespace pdwn::kernels {

namespace {

void gemm_scalar(std::int64_t m, std::int64_t n, std::int64_t k, const float* a, std::int64_t lda, const float* b,
                 std::int64_t ldb, float* c, std::int64_t ldc, bool accumulate) {
    gemm_ref<float>(m, n, k, a, lda, b, ldb, c, ldc, accumulate);
}

void mul_acc_scalar(std::int64_t n, const float* x, const float* y, float* out) { mul_acc_ref<float>(n, x, y, out); }

void axpy_scalar(std::int64_t n, float alpha, const float* x, float* y) { axpy_ref<float>(n, alpha, x, y); }

void leaky_relu_scalar(std::int64_t n, const float* x, float slope, float* y) {
    for (std::int64_t i = 0; i < n; ++i) y[i] = x[i] >= 0.0f ? x[i] : slope * x[i];
}

void leaky_relu_backward_scalar(std::int64_t n, const float* x, const float* dy, float slope, float* dx) {
    for (std::int64_t i = 0; i < n; ++i) dx[i] += x[i] > 0.0f ? dy[i] : slope * dy[i];
}

}  // namespace

const KernelTable& scalar_table() {
    static const KernelTable table{Isa::scalar, gemm_scalar, mul_acc_scalar, axpy_scalar, leaky_relu_scalar,
                                   leaky_relu_backward_scalar};
    return table;
}

}  // namespace pdwn::kernels
