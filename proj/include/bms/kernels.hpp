#pragma once

#include <cstddef>

namespace bms::kern {

enum class Isa { scalar, avx2 };

// Data-parallel inner loops used by the tensor layer. Two implementations
// exist per scalar type: a plain reference version and an AVX2 version,
// selected once at startup from CPUID (override with BMS_KERNELS=scalar|avx2
// or force_isa). Elementwise entries and adam are bitwise-identical across
// ISAs (same per-element operation order, no FMA contraction); dot/sum
// reassociate lanes and agree to rounding error only. Transcendentals stay
// in scalar libm calls at the tensor layer.
template <typename Real>
struct Kernels {
    void (*add)(const Real* a, const Real* b, Real* out, std::size_t n);
    void (*sub)(const Real* a, const Real* b, Real* out, std::size_t n);
    void (*mul)(const Real* a, const Real* b, Real* out, std::size_t n);
    void (*div)(const Real* a, const Real* b, Real* out, std::size_t n);
    // y += a * x
    void (*axpy)(Real a, const Real* x, Real* y, std::size_t n);
    // x *= a
    void (*scale)(Real a, Real* x, std::size_t n);
    Real (*dot)(const Real* a, const Real* b, std::size_t n);
    Real (*sum)(const Real* a, std::size_t n);
    // n >= 1
    Real (*max)(const Real* a, std::size_t n);
    // m = b1*m + (1-b1)*g; v = b2*v + (1-b2)*g^2;
    // p -= lr * (m*bc1) / (sqrt(v*bc2) + eps)
    void (*adam)(Real* p, Real* m, Real* v, const Real* g, std::size_t n,
                 Real lr, Real b1, Real b2, Real eps, Real bc1, Real bc2);
};

template <typename Real>
const Kernels<Real>& scalar_kernels();

// Defined only where the build has AVX2 codegen support; never selected at
// runtime unless CPUID reports the feature.
template <typename Real>
const Kernels<Real>& avx2_kernels();

bool avx2_compiled_in();
bool avx2_available();

// Active table. Resolved once (env BMS_KERNELS wins, else best available).
template <typename Real>
const Kernels<Real>& kernels();

Isa active_isa();
void force_isa(Isa isa);  // throws bms::Error if the ISA is unavailable

}  // namespace bms::kern
