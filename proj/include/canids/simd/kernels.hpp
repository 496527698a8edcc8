#pragma once

#include <string>

namespace canids::simd {

// Hot inner loops of the network, expressed as a dispatch table. Every entry
// has a portable scalar reference implementation; vectorized variants are
// registered at startup when the CPU supports them and must agree with the
// reference (exactly for the elementwise ops, to rounding for the reductions).
//
// GEMM semantics (all matrices dense row-major, no leading-dim padding):
//   gemm_nn: C[M,N] = A[M,K]  * B[K,N]   (+C when acc)
//   gemm_nt: C[M,N] = A[M,K]  * B[N,K]^T (+C when acc)
//   gemm_tn: C[M,N] = A[K,M]^T* B[K,N]   (+C when acc)
struct KernelTable {
    const char* name;

    void (*gemm_nn)(int M, int N, int K, const float* A, const float* B, float* C, bool acc);
    void (*gemm_nt)(int M, int N, int K, const float* A, const float* B, float* C, bool acc);
    void (*gemm_tn)(int M, int N, int K, const float* A, const float* B, float* C, bool acc);

    float (*dot)(const float* a, const float* b, int n);
    float (*reduce_sum)(const float* a, int n);

    void (*axpy)(float alpha, const float* x, float* y, int n);          // y += alpha*x
    void (*scale_shift)(const float* x, float a, float b, float* y, int n);  // y = a*x + b
    void (*add)(const float* a, const float* b, float* y, int n);        // y = a + b
    void (*relu)(const float* x, float* y, int n);                       // y = max(x, 0)
    void (*relu_bwd)(const float* y, const float* dy, float* dx, int n); // dx = dy where y>0
};

const KernelTable& scalar_kernels();

#if defined(CANIDS_BUILD_AVX2)
const KernelTable& avx2_kernels();
#endif

bool cpu_supports_avx2_fma();

// Active table. Selected once: the CANIDS_SIMD environment variable
// ("scalar" or "avx2") overrides autodetection; unknown names fall back to
// autodetection.
const KernelTable& kernels();

// Force a table by name, for equivalence tests. Returns false if the name is
// unknown or unsupported on this CPU.
bool force_kernels(const std::string& name);

}  // namespace canids::simd
