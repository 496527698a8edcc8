#include "canids/simd/kernels.hpp"

#if defined(CANIDS_BUILD_AVX2)

#include <immintrin.h>

#include <cstddef>
#include <cstdint>

// AVX2/FMA kernels. The GEMMs share one register-blocked core: up to 6 rows
// of C by 16 columns held in ymm accumulators, A values broadcast, B rows
// loaded contiguously. Column tails use a masked 8-lane block, so no scalar
// cleanup loop runs over K.

namespace canids::simd {
namespace {

inline float hsum(__m256 v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    lo = _mm_add_ps(lo, hi);
    lo = _mm_add_ps(lo, _mm_movehl_ps(lo, lo));
    lo = _mm_add_ss(lo, _mm_shuffle_ps(lo, lo, 1));
    return _mm_cvtss_f32(lo);
}

inline __m256i tail_mask(int n) {
    alignas(32) static const int32_t bits[16] = {-1, -1, -1, -1, -1, -1, -1, -1,
                                                 0,  0,  0,  0,  0,  0,  0,  0};
    return _mm256_loadu_si256(reinterpret_cast<const __m256i*>(bits + 8 - n));
}

// One row block of C, 16 columns wide. A is addressed as a[r*a_rs + k*a_cs],
// which covers both the NN layout (a_rs=K, a_cs=1) and the TN layout
// (a_rs=1, a_cs=M).
template <int MR>
void block16(int K, const float* a, size_t a_rs, size_t a_cs, const float* b, size_t ldb,
             float* c, size_t ldc, bool acc) {
    __m256 c0[MR], c1[MR];
    for (int r = 0; r < MR; ++r) {
        if (acc) {
            c0[r] = _mm256_loadu_ps(c + r * ldc);
            c1[r] = _mm256_loadu_ps(c + r * ldc + 8);
        } else {
            c0[r] = _mm256_setzero_ps();
            c1[r] = _mm256_setzero_ps();
        }
    }
    for (int k = 0; k < K; ++k) {
        __m256 b0 = _mm256_loadu_ps(b + k * ldb);
        __m256 b1 = _mm256_loadu_ps(b + k * ldb + 8);
        for (int r = 0; r < MR; ++r) {
            __m256 av = _mm256_set1_ps(a[r * a_rs + k * a_cs]);
            c0[r] = _mm256_fmadd_ps(av, b0, c0[r]);
            c1[r] = _mm256_fmadd_ps(av, b1, c1[r]);
        }
    }
    for (int r = 0; r < MR; ++r) {
        _mm256_storeu_ps(c + r * ldc, c0[r]);
        _mm256_storeu_ps(c + r * ldc + 8, c1[r]);
    }
}

// Masked variant for the last 1..8 columns.
template <int MR>
void block8m(int K, const float* a, size_t a_rs, size_t a_cs, const float* b, size_t ldb,
             float* c, size_t ldc, bool acc, int ncols) {
    __m256i m = tail_mask(ncols);
    __m256 c0[MR];
    for (int r = 0; r < MR; ++r)
        c0[r] = acc ? _mm256_maskload_ps(c + r * ldc, m) : _mm256_setzero_ps();
    for (int k = 0; k < K; ++k) {
        __m256 b0 = _mm256_maskload_ps(b + k * ldb, m);
        for (int r = 0; r < MR; ++r) {
            __m256 av = _mm256_set1_ps(a[r * a_rs + k * a_cs]);
            c0[r] = _mm256_fmadd_ps(av, b0, c0[r]);
        }
    }
    for (int r = 0; r < MR; ++r) _mm256_maskstore_ps(c + r * ldc, m, c0[r]);
}

template <int MR>
void row_block(int N, int K, const float* a, size_t a_rs, size_t a_cs, const float* b,
               float* c, size_t ldc, bool acc) {
    int j = 0;
    for (; j + 16 <= N; j += 16)
        block16<MR>(K, a, a_rs, a_cs, b + j, static_cast<size_t>(N), c + j, ldc, acc);
    for (; j < N; j += 8)
        block8m<MR>(K, a, a_rs, a_cs, b + j, static_cast<size_t>(N), c + j, ldc, acc,
                    N - j >= 8 ? 8 : N - j);
}

void gemm_broadcast(int M, int N, int K, const float* A, size_t a_rs, size_t a_cs,
                    const float* B, float* C, bool acc) {
    size_t ldc = static_cast<size_t>(N);
    int i = 0;
    for (; i + 6 <= M; i += 6)
        row_block<6>(N, K, A + i * a_rs, a_rs, a_cs, B, C + i * ldc, ldc, acc);
    switch (M - i) {
        case 5: row_block<5>(N, K, A + i * a_rs, a_rs, a_cs, B, C + i * ldc, ldc, acc); break;
        case 4: row_block<4>(N, K, A + i * a_rs, a_rs, a_cs, B, C + i * ldc, ldc, acc); break;
        case 3: row_block<3>(N, K, A + i * a_rs, a_rs, a_cs, B, C + i * ldc, ldc, acc); break;
        case 2: row_block<2>(N, K, A + i * a_rs, a_rs, a_cs, B, C + i * ldc, ldc, acc); break;
        case 1: row_block<1>(N, K, A + i * a_rs, a_rs, a_cs, B, C + i * ldc, ldc, acc); break;
        default: break;
    }
}

void gemm_nn_avx2(int M, int N, int K, const float* A, const float* B, float* C, bool acc) {
    gemm_broadcast(M, N, K, A, static_cast<size_t>(K), 1, B, C, acc);
}

void gemm_tn_avx2(int M, int N, int K, const float* A, const float* B, float* C, bool acc) {
    gemm_broadcast(M, N, K, A, 1, static_cast<size_t>(M), B, C, acc);
}

// NT: every C entry is a dot of two contiguous rows. Four B rows are walked
// per pass so the A row stays in registers/L1.
void gemm_nt_avx2(int M, int N, int K, const float* A, const float* B, float* C, bool acc) {
    for (int i = 0; i < M; ++i) {
        const float* a = A + static_cast<size_t>(i) * K;
        float* c = C + static_cast<size_t>(i) * N;
        int j = 0;
        for (; j + 4 <= N; j += 4) {
            const float* b0 = B + static_cast<size_t>(j) * K;
            const float* b1 = b0 + K;
            const float* b2 = b1 + K;
            const float* b3 = b2 + K;
            __m256 s0 = _mm256_setzero_ps(), s1 = _mm256_setzero_ps();
            __m256 s2 = _mm256_setzero_ps(), s3 = _mm256_setzero_ps();
            int k = 0;
            for (; k + 8 <= K; k += 8) {
                __m256 av = _mm256_loadu_ps(a + k);
                s0 = _mm256_fmadd_ps(av, _mm256_loadu_ps(b0 + k), s0);
                s1 = _mm256_fmadd_ps(av, _mm256_loadu_ps(b1 + k), s1);
                s2 = _mm256_fmadd_ps(av, _mm256_loadu_ps(b2 + k), s2);
                s3 = _mm256_fmadd_ps(av, _mm256_loadu_ps(b3 + k), s3);
            }
            float r0 = hsum(s0), r1 = hsum(s1), r2 = hsum(s2), r3 = hsum(s3);
            for (; k < K; ++k) {
                float av = a[k];
                r0 += av * b0[k];
                r1 += av * b1[k];
                r2 += av * b2[k];
                r3 += av * b3[k];
            }
            if (acc) {
                c[j] += r0; c[j + 1] += r1; c[j + 2] += r2; c[j + 3] += r3;
            } else {
                c[j] = r0; c[j + 1] = r1; c[j + 2] = r2; c[j + 3] = r3;
            }
        }
        for (; j < N; ++j) {
            const float* b = B + static_cast<size_t>(j) * K;
            __m256 s = _mm256_setzero_ps();
            int k = 0;
            for (; k + 8 <= K; k += 8)
                s = _mm256_fmadd_ps(_mm256_loadu_ps(a + k), _mm256_loadu_ps(b + k), s);
            float r = hsum(s);
            for (; k < K; ++k) r += a[k] * b[k];
            c[j] = acc ? c[j] + r : r;
        }
    }
}

float dot_avx2(const float* a, const float* b, int n) {
    __m256 s0 = _mm256_setzero_ps(), s1 = _mm256_setzero_ps();
    int i = 0;
    for (; i + 16 <= n; i += 16) {
        s0 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), s0);
        s1 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i + 8), _mm256_loadu_ps(b + i + 8), s1);
    }
    for (; i + 8 <= n; i += 8)
        s0 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), s0);
    float r = hsum(_mm256_add_ps(s0, s1));
    for (; i < n; ++i) r += a[i] * b[i];
    return r;
}

float reduce_sum_avx2(const float* a, int n) {
    __m256 s0 = _mm256_setzero_ps(), s1 = _mm256_setzero_ps();
    int i = 0;
    for (; i + 16 <= n; i += 16) {
        s0 = _mm256_add_ps(s0, _mm256_loadu_ps(a + i));
        s1 = _mm256_add_ps(s1, _mm256_loadu_ps(a + i + 8));
    }
    for (; i + 8 <= n; i += 8) s0 = _mm256_add_ps(s0, _mm256_loadu_ps(a + i));
    float r = hsum(_mm256_add_ps(s0, s1));
    for (; i < n; ++i) r += a[i];
    return r;
}

// axpy and scale_shift avoid fmadd on purpose: they must stay bitwise equal to
// the scalar table (mul, then add, two roundings), and both are memory bound.
void axpy_avx2(float alpha, const float* x, float* y, int n) {
    __m256 av = _mm256_set1_ps(alpha);
    int i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(y + i, _mm256_add_ps(_mm256_loadu_ps(y + i), _mm256_mul_ps(av, _mm256_loadu_ps(x + i))));
    for (; i < n; ++i) y[i] += alpha * x[i];
}

void scale_shift_avx2(const float* x, float a, float b, float* y, int n) {
    __m256 av = _mm256_set1_ps(a), bv = _mm256_set1_ps(b);
    int i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(y + i, _mm256_add_ps(_mm256_mul_ps(av, _mm256_loadu_ps(x + i)), bv));
    for (; i < n; ++i) y[i] = a * x[i] + b;
}

void add_avx2(const float* a, const float* b, float* y, int n) {
    int i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(y + i, _mm256_add_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
    for (; i < n; ++i) y[i] = a[i] + b[i];
}

void relu_avx2(const float* x, float* y, int n) {
    __m256 z = _mm256_setzero_ps();
    int i = 0;
    for (; i + 8 <= n; i += 8) _mm256_storeu_ps(y + i, _mm256_max_ps(_mm256_loadu_ps(x + i), z));
    for (; i < n; ++i) y[i] = x[i] > 0.0f ? x[i] : 0.0f;
}

void relu_bwd_avx2(const float* y, const float* dy, float* dx, int n) {
    __m256 z = _mm256_setzero_ps();
    int i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 mask = _mm256_cmp_ps(_mm256_loadu_ps(y + i), z, _CMP_GT_OQ);
        _mm256_storeu_ps(dx + i, _mm256_and_ps(_mm256_loadu_ps(dy + i), mask));
    }
    for (; i < n; ++i) dx[i] = y[i] > 0.0f ? dy[i] : 0.0f;
}

}  // namespace

const KernelTable& avx2_kernels() {
    static const KernelTable table = {
        "avx2",
        gemm_nn_avx2, gemm_nt_avx2, gemm_tn_avx2,
        dot_avx2,     reduce_sum_avx2,
        axpy_avx2,    scale_shift_avx2,
        add_avx2,     relu_avx2,
        relu_bwd_avx2,
    };
    return table;
}

}  // namespace canids::simd

#endif  // CANIDS_BUILD_AVX2
