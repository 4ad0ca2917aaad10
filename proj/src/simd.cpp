#include "hm/simd.hpp"

#include <cstdlib>
#include <cstring>

namespace hm::simd {

namespace scalar {

void fma_row(float* y, const float* x, float a, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}
void fma_row(double* y, const double* x, double a, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}
float dot(const float* x, const float* y, std::size_t n) {
    float s = 0.0f;
    for (std::size_t i = 0; i < n; ++i) s += x[i] * y[i];
    return s;
}
double dot(const double* x, const double* y, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += x[i] * y[i];
    return s;
}

#define HM_SCALAR_BINOP(name, expr)                                          \
    void name(float* z, const float* x, const float* y, std::size_t n) {     \
        for (std::size_t i = 0; i < n; ++i) z[i] = expr;                     \
    }                                                                        \
    void name(double* z, const double* x, const double* y, std::size_t n) {  \
        for (std::size_t i = 0; i < n; ++i) z[i] = expr;                     \
    }

HM_SCALAR_BINOP(add, x[i] + y[i])
HM_SCALAR_BINOP(sub, x[i] - y[i])
HM_SCALAR_BINOP(mul, x[i] * y[i])
HM_SCALAR_BINOP(div, x[i] / y[i])
#undef HM_SCALAR_BINOP

void accumulate(float* y, const float* x, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += x[i];
}
void accumulate(double* y, const double* x, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += x[i];
}
void scale(float* y, float a, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] *= a;
}
void scale(double* y, double a, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] *= a;
}

}  // namespace scalar

#if !defined(HM_HAVE_AVX2_TU)
namespace avx2 {
bool supported() { return false; }
void fma_row(float*, const float*, float, std::size_t) {}
void fma_row(double*, const double*, double, std::size_t) {}
float dot(const float*, const float*, std::size_t) { return 0.0f; }
double dot(const double*, const double*, std::size_t) { return 0.0; }
void add(float*, const float*, const float*, std::size_t) {}
void add(double*, const double*, const double*, std::size_t) {}
void sub(float*, const float*, const float*, std::size_t) {}
void sub(double*, const double*, const double*, std::size_t) {}
void mul(float*, const float*, const float*, std::size_t) {}
void mul(double*, const double*, const double*, std::size_t) {}
void div(float*, const float*, const float*, std::size_t) {}
void div(double*, const double*, const double*, std::size_t) {}
void accumulate(float*, const float*, std::size_t) {}
void accumulate(double*, const double*, std::size_t) {}
void scale(float*, float, std::size_t) {}
void scale(double*, double, std::size_t) {}
}  // namespace avx2
#endif

namespace {

bool resolve_avx2() {
    const char* env = std::getenv("HM_SIMD");
    if (env != nullptr) {
        if (std::strcmp(env, "scalar") == 0) return false;
        if (std::strcmp(env, "avx2") == 0) return avx2::supported();
    }
    return avx2::supported();
}

bool g_use_avx2 = resolve_avx2();

}  // namespace

bool using_avx2() { return g_use_avx2; }
const char* backend_name() { return g_use_avx2 ? "avx2" : "scalar"; }

#define HM_DISPATCH(ret, name, sig, args)       \
    ret name sig {                              \
        if (g_use_avx2) return avx2::name args; \
        return scalar::name args;               \
    }

HM_DISPATCH(void, fma_row, (float* y, const float* x, float a, std::size_t n), (y, x, a, n))
HM_DISPATCH(void, fma_row, (double* y, const double* x, double a, std::size_t n), (y, x, a, n))
HM_DISPATCH(float, dot, (const float* x, const float* y, std::size_t n), (x, y, n))
HM_DISPATCH(double, dot, (const double* x, const double* y, std::size_t n), (x, y, n))
HM_DISPATCH(void, add, (float* z, const float* x, const float* y, std::size_t n), (z, x, y, n))
HM_DISPATCH(void, add, (double* z, const double* x, const double* y, std::size_t n), (z, x, y, n))
HM_DISPATCH(void, sub, (float* z, const float* x, const float* y, std::size_t n), (z, x, y, n))
HM_DISPATCH(void, sub, (double* z, const double* x, const double* y, std::size_t n), (z, x, y, n))
HM_DISPATCH(void, mul, (float* z, const float* x, const float* y, std::size_t n), (z, x, y, n))
HM_DISPATCH(void, mul, (double* z, const double* x, const double* y, std::size_t n), (z, x, y, n))
HM_DISPATCH(void, div, (float* z, const float* x, const float* y, std::size_t n), (z, x, y, n))
HM_DISPATCH(void, div, (double* z, const double* x, const double* y, std::size_t n), (z, x, y, n))
HM_DISPATCH(void, accumulate, (float* y, const float* x, std::size_t n), (y, x, n))
HM_DISPATCH(void, accumulate, (double* y, const double* x, std::size_t n), (y, x, n))
HM_DISPATCH(void, scale, (float* y, float a, std::size_t n), (y, a, n))
HM_DISPATCH(void, scale, (double* y, double a, std::size_t n), (y, a, n))
#undef HM_DISPATCH

}  // namespace hm::simd
