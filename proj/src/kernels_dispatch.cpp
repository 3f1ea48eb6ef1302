#include "bms/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <cstring>

#include "bms/errors.hpp"

namespace bms::kern {

bool avx2_available() {
#if defined(__x86_64__) || defined(__i386__)
    return avx2_compiled_in() && __builtin_cpu_supports("avx2");
#else
    return false;
#endif
}

namespace {

Isa resolve_initial_isa() {
    if (const char* env = std::getenv("BMS_KERNELS")) {
        if (std::strcmp(env, "scalar") == 0) return Isa::scalar;
        if (std::strcmp(env, "avx2") == 0) {
            if (!avx2_available()) throw Error("BMS_KERNELS=avx2 but AVX2 is unavailable");
            return Isa::avx2;
        }
        throw Error(std::string("unknown BMS_KERNELS value: ") + env);
    }
    return avx2_available() ? Isa::avx2 : Isa::scalar;
}

std::atomic<Isa>& isa_slot() {
    static std::atomic<Isa> isa{resolve_initial_isa()};
    return isa;
}

}  // namespace

Isa active_isa() { return isa_slot().load(std::memory_order_relaxed); }

void force_isa(Isa isa) {
    if (isa == Isa::avx2 && !avx2_available()) throw Error("AVX2 kernels unavailable on this host");
    isa_slot().store(isa, std::memory_order_relaxed);
}

template <>
const Kernels<double>& kernels<double>() {
    return active_isa() == Isa::avx2 ? avx2_kernels<double>() : scalar_kernels<double>();
}

template <>
const Kernels<float>& kernels<float>() {
    return active_isa() == Isa::avx2 ? avx2_kernels<float>() : scalar_kernels<float>();
}

}  // namespace bms::kern
