#include "canids/simd/kernels.hpp"

#include <cstdlib>

namespace canids::simd {

bool cpu_supports_avx2_fma() {
#if defined(CANIDS_BUILD_AVX2)
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

namespace {

const KernelTable* pick(const char* requested) {
    if (requested) {
        std::string want(requested);
        if (want == "scalar") return &scalar_kernels();
#if defined(CANIDS_BUILD_AVX2)
        if (want == "avx2" && cpu_supports_avx2_fma()) return &avx2_kernels();
#endif
        // unknown or unsupported request: fall through to autodetection
    }
#if defined(CANIDS_BUILD_AVX2)
    if (cpu_supports_avx2_fma()) return &avx2_kernels();
#endif
    return &scalar_kernels();
}

const KernelTable*& active_slot() {
    static const KernelTable* active = pick(std::getenv("CANIDS_SIMD"));
    return active;
}

}  // namespace

const KernelTable& kernels() { return *active_slot(); }

bool force_kernels(const std::string& name) {
    if (name == "scalar") {
        active_slot() = &scalar_kernels();
        return true;
    }
#if defined(CANIDS_BUILD_AVX2)
    if (name == "avx2" && cpu_supports_avx2_fma()) {
        active_slot() = &avx2_kernels();
        return true;
    }
#endif
    return false;
}

}  // namespace canids::simd
