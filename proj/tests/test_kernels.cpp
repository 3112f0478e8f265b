// SPDX-License-Identifier: Apache-2.0
//
// SIMD variants against the scalar reference.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <random>
#include <vector>

#include "oracles.hpp"
#include "pdwn/kernels.hpp"
#include "pdwn/ops.hpp"
#include "pdwn/warp.hpp"

using namespace pdwn;

namespace {

std::vector<float> random_vec(std::size_t n, std::mt19937_64& rng) {
    std::uniform_real_distribution<float> d(-1.0f, 1.0f);
    std::vector<float> v(n);
    for (auto& x : v) x = d(rng);
    return v;
}

double max_diff(const std::vector<float>& a, const std::vector<float>& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, static_cast<double>(std::abs(a[i] - b[i])));
    return m;
}

// Restores the dispatch choice on scope exit.
struct IsaScope {
    explicit IsaScope(kernels::Isa isa) : previous(kernels::set_active(isa)) {}
    ~IsaScope() { kernels::set_active(previous); }
    kernels::Isa previous;
};

}  // namespace

TEST_CASE("dispatch resolves to an available table") {
    const auto& active = kernels::active();
    if (kernels::avx2_table() != nullptr && kernels::cpu_has_avx2_fma() && std::getenv("PDWN_KERNELS") == nullptr)
        CHECK(active.isa == kernels::Isa::avx2);
    else
        CHECK(active.isa == kernels::Isa::scalar);
    MESSAGE("active kernels: " << kernels::isa_name(active.isa));
}

TEST_CASE("avx2 kernels match scalar reference") {
    const kernels::KernelTable* simd = kernels::avx2_table();
    if (simd == nullptr || !kernels::cpu_has_avx2_fma()) {
        MESSAGE("AVX2 unavailable; skipping");
        return;
    }
    const auto& ref = kernels::scalar_table();
    std::mt19937_64 rng(11);

    SUBCASE("gemm over tail shapes, with and without accumulation") {
        for (std::int64_t m : {1, 2, 3, 4, 5, 7, 9, 16}) {
            for (std::int64_t n : {1, 7, 8, 9, 15, 16, 17, 33, 300}) {
                for (std::int64_t k : {1, 3, 27, 64}) {
                    for (bool accumulate : {false, true}) {
                        // Non-tight leading dimensions exercise the strides.
                        const std::int64_t lda = k + 2, ldb = n + 3, ldc = n + 1;
                        auto a = random_vec(static_cast<std::size_t>(m * lda), rng);
                        auto b = random_vec(static_cast<std::size_t>(k * ldb), rng);
                        auto c0 = random_vec(static_cast<std::size_t>(m * ldc), rng);
                        auto c1 = c0;
                        ref.gemm(m, n, k, a.data(), lda, b.data(), ldb, c0.data(), ldc, accumulate);
                        simd->gemm(m, n, k, a.data(), lda, b.data(), ldb, c1.data(), ldc, accumulate);
                        INFO("m=" << m << " n=" << n << " k=" << k << " acc=" << accumulate);
                        CHECK(max_diff(c0, c1) < 1e-4);
                    }
                }
            }
        }
    }
    SUBCASE("gemm leaves padding columns untouched") {
        const std::int64_t m = 3, n = 13, k = 5, ldc = 20;
        auto a = random_vec(m * k, rng);
        auto b = random_vec(k * n, rng);
        std::vector<float> c(m * ldc, 42.0f);
        simd->gemm(m, n, k, a.data(), k, b.data(), n, c.data(), ldc, false);
        for (std::int64_t i = 0; i < m; ++i)
            for (std::int64_t j = n; j < ldc; ++j) CHECK(c[i * ldc + j] == 42.0f);
    }
    SUBCASE("elementwise kernels") {
        for (std::int64_t n : {0, 1, 7, 8, 9, 31, 100}) {
            auto x = random_vec(n, rng);
            auto y = random_vec(n, rng);
            auto o0 = random_vec(n, rng);
            auto o1 = o0;
            ref.mul_acc(n, x.data(), y.data(), o0.data());
            simd->mul_acc(n, x.data(), y.data(), o1.data());
            CHECK(max_diff(o0, o1) < 1e-6);

            ref.axpy(n, 0.37f, x.data(), o0.data());
            simd->axpy(n, 0.37f, x.data(), o1.data());
            CHECK(max_diff(o0, o1) < 1e-6);

            ref.leaky_relu(n, x.data(), 0.1f, o0.data());
            simd->leaky_relu(n, x.data(), 0.1f, o1.data());
            CHECK(max_diff(o0, o1) == 0.0);

            ref.leaky_relu_backward(n, x.data(), y.data(), 0.1f, o0.data());
            simd->leaky_relu_backward(n, x.data(), y.data(), 0.1f, o1.data());
            CHECK(max_diff(o0, o1) < 1e-6);
        }
    }
    SUBCASE("ops agree end to end under both tables") {
        auto x = oracle::random_tensor<float>({2, 5, 11, 13}, rng);
        auto w = oracle::random_tensor<float>({6, 5, 3, 3}, rng);
        auto b = oracle::random_tensor<float>({1, 1, 1, 6}, rng);
        auto off = oracle::random_tensor<float>({2, 18, 11, 13}, rng, -2.0, 2.0);
        auto mod = oracle::random_tensor<float>({2, 9, 11, 13}, rng, 0.0, 1.0);
        auto run = [&] {
            auto xg = x.clone();
            xg.set_requires_grad(true);
            auto y1 = conv2d(xg, w, b, 1, 1);
            auto y2 = deformable_warp(xg, OffsetField<float>{off, mod}, GlobalFilter<float>{w});
            auto y3 = cost_volume(y1, y2, 2);
            sum(mul(y3, y3)).backward();
            std::vector<float> out(y3.data().begin(), y3.data().end());
            out.insert(out.end(), xg.grad().begin(), xg.grad().end());
            return out;
        };
        std::vector<float> scalar_out, simd_out;
        {
            IsaScope scope(kernels::Isa::scalar);
            scalar_out = run();
        }
        {
            IsaScope scope(kernels::Isa::avx2);
            simd_out = run();
        }
        double scale = 0.0;
        for (float v : scalar_out) scale = std::max(scale, static_cast<double>(std::abs(v)));
        CHECK(max_diff(scalar_out, simd_out) <= 1e-5 * std::max(1.0, scale));
    }
}
