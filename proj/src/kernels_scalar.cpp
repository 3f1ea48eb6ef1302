#include "bms/kernels.hpp"

#include <cmath>

namespace bms::kern {

namespace {

template <typename Real>
void add_s(const Real* a, const Real* b, Real* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

template <typename Real>
void sub_s(const Real* a, const Real* b, Real* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}

template <typename Real>
void mul_s(const Real* a, const Real* b, Real* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

template <typename Real>
void div_s(const Real* a, const Real* b, Real* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] / b[i];
}

template <typename Real>
void axpy_s(Real a, const Real* x, Real* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

template <typename Real>
void scale_s(Real a, Real* x, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) x[i] *= a;
}

template <typename Real>
Real dot_s(const Real* a, const Real* b, std::size_t n) {
    Real acc = 0;
    for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

template <typename Real>
Real sum_s(const Real* a, std::size_t n) {
    Real acc = 0;
    for (std::size_t i = 0; i < n; ++i) acc += a[i];
    return acc;
}

template <typename Real>
Real max_s(const Real* a, std::size_t n) {
    Real m = a[0];
    for (std::size_t i = 1; i < n; ++i) m = a[i] > m ? a[i] : m;
    return m;
}

template <typename Real>
void adam_s(Real* p, Real* m, Real* v, const Real* g, std::size_t n, Real lr,
            Real b1, Real b2, Real eps, Real bc1, Real bc2) {
    const Real one = 1;
    for (std::size_t i = 0; i < n; ++i) {
        m[i] = b1 * m[i] + (one - b1) * g[i];
        v[i] = b2 * v[i] + (one - b2) * (g[i] * g[i]);
        p[i] -= lr * ((m[i] * bc1) / (std::sqrt(v[i] * bc2) + eps));
    }
}

template <typename Real>
Kernels<Real> make_table() {
    Kernels<Real> k;
    k.add = add_s<Real>;
    k.sub = sub_s<Real>;
    k.mul = mul_s<Real>;
    k.div = div_s<Real>;
    k.axpy = axpy_s<Real>;
    k.scale = scale_s<Real>;
    k.dot = dot_s<Real>;
    k.sum = sum_s<Real>;
    k.max = max_s<Real>;
    k.adam = adam_s<Real>;
    return k;
}

}  // namespace

template <>
const Kernels<double>& scalar_kernels<double>() {
    static const Kernels<double> table = make_table<double>();
    return table;
}

template <>
const Kernels<float>& scalar_kernels<float>() {
    static const Kernels<float> table = make_table<float>();
    return table;
}

}  // namespace bms::kern
