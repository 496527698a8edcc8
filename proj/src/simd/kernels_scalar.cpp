#include "canids/simd/kernels.hpp"

// Reference kernels. Plain loops, no intrinsics: these define the semantics
// the vectorized tables are tested against.

namespace canids::simd {
namespace {

void gemm_nn_scalar(int M, int N, int K, const float* A, const float* B, float* C, bool acc) {
    for (int i = 0; i < M; ++i) {
        const float* a = A + static_cast<size_t>(i) * K;
        float* c = C + static_cast<size_t>(i) * N;
        if (!acc)
            for (int j = 0; j < N; ++j) c[j] = 0.0f;
        for (int k = 0; k < K; ++k) {
            float av = a[k];
            const float* b = B + static_cast<size_t>(k) * N;
            for (int j = 0; j < N; ++j) c[j] += av * b[j];
        }
    }
}

void gemm_nt_scalar(int M, int N, int K, const float* A, const float* B, float* C, bool acc) {
    for (int i = 0; i < M; ++i) {
        const float* a = A + static_cast<size_t>(i) * K;
        float* c = C + static_cast<size_t>(i) * N;
        for (int j = 0; j < N; ++j) {
            const float* b = B + static_cast<size_t>(j) * K;
            float s = 0.0f;
            for (int k = 0; k < K; ++k) s += a[k] * b[k];
            c[j] = acc ? c[j] + s : s;
        }
    }
}

void gemm_tn_scalar(int M, int N, int K, const float* A, const float* B, float* C, bool acc) {
    for (int i = 0; i < M; ++i) {
        float* c = C + static_cast<size_t>(i) * N;
        if (!acc)
            for (int j = 0; j < N; ++j) c[j] = 0.0f;
        for (int k = 0; k < K; ++k) {
            float av = A[static_cast<size_t>(k) * M + i];
            const float* b = B + static_cast<size_t>(k) * N;
            for (int j = 0; j < N; ++j) c[j] += av * b[j];
        }
    }
}

float dot_scalar(const float* a, const float* b, int n) {
    float s = 0.0f;
    for (int i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

float reduce_sum_scalar(const float* a, int n) {
    float s = 0.0f;
    for (int i = 0; i < n; ++i) s += a[i];
    return s;
}

void axpy_scalar(float alpha, const float* x, float* y, int n) {
    for (int i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void scale_shift_scalar(const float* x, float a, float b, float* y, int n) {
    for (int i = 0; i < n; ++i) y[i] = a * x[i] + b;
}

void add_scalar(const float* a, const float* b, float* y, int n) {
    for (int i = 0; i < n; ++i) y[i] = a[i] + b[i];
}

void relu_scalar(const float* x, float* y, int n) {
    for (int i = 0; i < n; ++i) y[i] = x[i] > 0.0f ? x[i] : 0.0f;
}

void relu_bwd_scalar(const float* y, const float* dy, float* dx, int n) {
    for (int i = 0; i < n; ++i) dx[i] = y[i] > 0.0f ? dy[i] : 0.0f;
}

}  // namespace

const KernelTable& scalar_kernels() {
    static const KernelTable table = {
        "scalar",
        gemm_nn_scalar, gemm_nt_scalar, gemm_tn_scalar,
        dot_scalar,     reduce_sum_scalar,
        axpy_scalar,    scale_shift_scalar,
        add_scalar,     relu_scalar,
        relu_bwd_scalar,
    };
    return table;
}

}  // namespace canids::simd
