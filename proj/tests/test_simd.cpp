#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstdlib>
#include <vector>

#include "canids/rng.hpp"
#include "canids/simd/kernels.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace canids;
using simd::KernelTable;

namespace {

std::vector<float> random_vec(Rng& rng, int n, float lo = -2.0f, float hi = 2.0f) {
    std::vector<float> v(static_cast<size_t>(n));
    for (auto& x : v) x = static_cast<float>(rng.uniform(lo, hi));
    return v;
}

// relative or absolute, whichever is looser, against a double reference
void check_close(float got, double want, double tol) {
    double diff = std::abs(static_cast<double>(got) - want);
    double scale = std::max(1.0, std::abs(want));
    CHECK(diff <= tol * scale);
}

const int kDims[] = {1, 2, 3, 5, 6, 7, 8, 9, 15, 16, 17, 31, 63, 64, 100};

void check_gemm_against_oracle(const KernelTable& k, int M, int N, int K) {
    Rng rng(static_cast<uint64_t>(M * 73856093 ^ N * 19349663 ^ K * 83492791));
    std::vector<float> a = random_vec(rng, M * K);
    std::vector<float> b = random_vec(rng, K * N);
    std::vector<double> want(static_cast<size_t>(M) * N);
    oracle::matmul(a.data(), b.data(), want.data(), M, N, K);

    // float accumulation drifts from the double oracle with the depth of the
    // sum, and vector kernels reorder it, so the bound grows with K
    double tol = 1e-6 * std::max(8, K);

    // nn, fresh and accumulating
    std::vector<float> c(static_cast<size_t>(M) * N, 7.0f);
    k.gemm_nn(M, N, K, a.data(), b.data(), c.data(), false);
    for (size_t i = 0; i < c.size(); ++i) check_close(c[i], want[i], tol);
    k.gemm_nn(M, N, K, a.data(), b.data(), c.data(), true);
    for (size_t i = 0; i < c.size(); ++i) check_close(c[i], 2.0 * want[i], tol);

    // nt: B stored transposed (N x K)
    std::vector<float> bt(static_cast<size_t>(N) * K);
    for (int r = 0; r < K; ++r)
        for (int col = 0; col < N; ++col) bt[static_cast<size_t>(col) * K + r] = b[static_cast<size_t>(r) * N + col];
    std::fill(c.begin(), c.end(), 0.0f);
    k.gemm_nt(M, N, K, a.data(), bt.data(), c.data(), false);
    for (size_t i = 0; i < c.size(); ++i) check_close(c[i], want[i], tol);

    // tn: A stored transposed (K x M)
    std::vector<float> at(static_cast<size_t>(K) * M);
    for (int r = 0; r < M; ++r)
        for (int col = 0; col < K; ++col) at[static_cast<size_t>(col) * M + r] = a[static_cast<size_t>(r) * K + col];
    std::fill(c.begin(), c.end(), 0.0f);
    k.gemm_tn(M, N, K, at.data(), b.data(), c.data(), false);
    for (size_t i = 0; i < c.size(); ++i) check_close(c[i], want[i], tol);
}

}  // namespace

TEST_CASE("scalar gemm matches the double-precision oracle") {
    const KernelTable& k = simd::scalar_kernels();
    for (int m : {1, 2, 5, 17})
        for (int n : {1, 6, 16, 33})
            for (int kk : {1, 4, 29, 100}) check_gemm_against_oracle(k, m, n, kk);
}

TEST_CASE("scalar elementwise ops match plain loops") {
    const KernelTable& k = simd::scalar_kernels();
    Rng rng(11);
    for (int n : kDims) {
        std::vector<float> x = random_vec(rng, n);
        std::vector<float> y = random_vec(rng, n);
        std::vector<float> out(static_cast<size_t>(n));

        k.relu(x.data(), out.data(), n);
        for (int i = 0; i < n; ++i) CHECK(out[static_cast<size_t>(i)] == std::max(x[static_cast<size_t>(i)], 0.0f));

        std::vector<float> y2 = y;
        k.axpy(0.5f, x.data(), y2.data(), n);
        for (int i = 0; i < n; ++i)
            CHECK(y2[static_cast<size_t>(i)] == doctest::Approx(y[static_cast<size_t>(i)] + 0.5f * x[static_cast<size_t>(i)]));

        double want = 0.0;
        for (int i = 0; i < n; ++i)
            want += static_cast<double>(x[static_cast<size_t>(i)]) * static_cast<double>(y[static_cast<size_t>(i)]);
        check_close(k.dot(x.data(), y.data(), n), want, 1e-6 * std::max(8, n));

        want = 0.0;
        for (int i = 0; i < n; ++i) want += static_cast<double>(x[static_cast<size_t>(i)]);
        check_close(k.reduce_sum(x.data(), n), want, 1e-6 * std::max(8, n));
    }
}

#if defined(CANIDS_BUILD_AVX2)

TEST_CASE("vector gemm agrees with scalar on awkward shapes") {
    if (!simd::cpu_supports_avx2_fma()) return;
    const KernelTable& v = simd::avx2_kernels();
    for (int m : {1, 2, 3, 5, 6, 7, 11, 12, 16, 17, 64})
        for (int n : {1, 7, 8, 15, 16, 17, 24, 33, 100})
            for (int kk : {1, 3, 9, 29, 128}) check_gemm_against_oracle(v, m, n, kk);
}

TEST_CASE("vector elementwise ops are bitwise equal to scalar") {
    if (!simd::cpu_supports_avx2_fma()) return;
    const KernelTable& s = simd::scalar_kernels();
    const KernelTable& v = simd::avx2_kernels();
    Rng rng(12);
    for (int n : kDims) {
        std::vector<float> x = random_vec(rng, n);
        std::vector<float> y = random_vec(rng, n);
        // sprinkle exact zeros and negatives to hit the relu boundary
        if (n > 2) {
            x[static_cast<size_t>(n / 2)] = 0.0f;
            x[static_cast<size_t>(n - 1)] = -0.0f;
        }

        std::vector<float> a(static_cast<size_t>(n)), b(static_cast<size_t>(n));

        s.relu(x.data(), a.data(), n);
        v.relu(x.data(), b.data(), n);
        CHECK(a == b);

        s.relu_bwd(a.data(), y.data(), a.data(), n);
        v.relu_bwd(b.data(), y.data(), b.data(), n);
        CHECK(a == b);

        s.add(x.data(), y.data(), a.data(), n);
        v.add(x.data(), y.data(), b.data(), n);
        CHECK(a == b);

        s.scale_shift(x.data(), 1.25f, -0.5f, a.data(), n);
        v.scale_shift(x.data(), 1.25f, -0.5f, b.data(), n);
        CHECK(a == b);

        std::vector<float> ya = y, yb = y;
        s.axpy(0.75f, x.data(), ya.data(), n);
        v.axpy(0.75f, x.data(), yb.data(), n);
        CHECK(ya == yb);
    }
}

TEST_CASE("vector reductions agree with scalar to rounding") {
    if (!simd::cpu_supports_avx2_fma()) return;
    const KernelTable& s = simd::scalar_kernels();
    const KernelTable& v = simd::avx2_kernels();
    Rng rng(13);
    for (int n : kDims) {
        std::vector<float> x = random_vec(rng, n);
        std::vector<float> y = random_vec(rng, n);
        check_close(v.dot(x.data(), y.data(), n), static_cast<double>(s.dot(x.data(), y.data(), n)), 1e-6 * std::max(8, n));
        check_close(v.reduce_sum(x.data(), n), static_cast<double>(s.reduce_sum(x.data(), n)), 1e-6 * std::max(8, n));
    }
}

#endif  // CANIDS_BUILD_AVX2

TEST_CASE("kernel forcing selects the named table") {
    CHECK(simd::force_kernels("scalar"));
    CHECK(std::string(simd::kernels().name) == "scalar");
    CHECK_FALSE(simd::force_kernels("neon"));
    CHECK(std::string(simd::kernels().name) == "scalar");
#if defined(CANIDS_BUILD_AVX2)
    if (simd::cpu_supports_avx2_fma()) {
        CHECK(simd::force_kernels("avx2"));
        CHECK(std::string(simd::kernels().name) == "avx2");
    }
#endif
}
