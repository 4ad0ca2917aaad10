// AVX2+FMA variants of the inner-loop kernels. This translation unit is
// compiled with -mavx2 -mfma on x86-64 only; callers must check supported().

#include "hm/simd.hpp"

#if defined(__x86_64__) || defined(_M_X64)
#include <immintrin.h>

namespace hm::simd::avx2 {

bool supported() {
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
}

void fma_row(float* y, const float* x, float a, std::size_t n) {
    const __m256 av = _mm256_set1_ps(a);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 yv = _mm256_loadu_ps(y + i);
        __m256 xv = _mm256_loadu_ps(x + i);
        _mm256_storeu_ps(y + i, _mm256_fmadd_ps(av, xv, yv));
    }
    for (; i < n; ++i) y[i] += a * x[i];
}

void fma_row(double* y, const double* x, double a, std::size_t n) {
    const __m256d av = _mm256_set1_pd(a);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d yv = _mm256_loadu_pd(y + i);
        __m256d xv = _mm256_loadu_pd(x + i);
        _mm256_storeu_pd(y + i, _mm256_fmadd_pd(av, xv, yv));
    }
    for (; i < n; ++i) y[i] += a * x[i];
}

float dot(const float* x, const float* y, std::size_t n) {
    __m256 acc = _mm256_setzero_ps();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 xv = _mm256_loadu_ps(x + i);
        __m256 yv = _mm256_loadu_ps(y + i);
        acc = _mm256_fmadd_ps(xv, yv, acc);
    }
    __m128 lo = _mm256_castps256_ps128(acc);
    __m128 hi = _mm256_extractf128_ps(acc, 1);
    __m128 s = _mm_add_ps(lo, hi);
    s = _mm_hadd_ps(s, s);
    s = _mm_hadd_ps(s, s);
    float total = _mm_cvtss_f32(s);
    for (; i < n; ++i) total += x[i] * y[i];
    return total;
}

double dot(const double* x, const double* y, std::size_t n) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d xv = _mm256_loadu_pd(x + i);
        __m256d yv = _mm256_loadu_pd(y + i);
        acc = _mm256_fmadd_pd(xv, yv, acc);
    }
    __m128d lo = _mm256_castpd256_pd128(acc);
    __m128d hi = _mm256_extractf128_pd(acc, 1);
    __m128d s = _mm_add_pd(lo, hi);
    double total = _mm_cvtsd_f64(s) + _mm_cvtsd_f64(_mm_unpackhi_pd(s, s));
    for (; i < n; ++i) total += x[i] * y[i];
    return total;
}

#define HM_AVX2_BINOP(name, op_ps, op_pd, expr)                              \
    void name(float* z, const float* x, const float* y, std::size_t n) {     \
        std::size_t i = 0;                                                   \
        for (; i + 8 <= n; i += 8) {                                         \
            __m256 xv = _mm256_loadu_ps(x + i);                              \
            __m256 yv = _mm256_loadu_ps(y + i);                              \
            _mm256_storeu_ps(z + i, op_ps(xv, yv));                          \
        }                                                                    \
        for (; i < n; ++i) z[i] = expr;                                      \
    }                                                                        \
    void name(double* z, const double* x, const double* y, std::size_t n) {  \
        std::size_t i = 0;                                                   \
        for (; i + 4 <= n; i += 4) {                                         \
            __m256d xv = _mm256_loadu_pd(x + i);                             \
            __m256d yv = _mm256_loadu_pd(y + i);                             \
            _mm256_storeu_pd(z + i, op_pd(xv, yv));                          \
        }                                                                    \
        for (; i < n; ++i) z[i] = expr;                                      \
    }

HM_AVX2_BINOP(add, _mm256_add_ps, _mm256_add_pd, x[i] + y[i])
HM_AVX2_BINOP(sub, _mm256_sub_ps, _mm256_sub_pd, x[i] - y[i])
HM_AVX2_BINOP(mul, _mm256_mul_ps, _mm256_mul_pd, x[i] * y[i])
HM_AVX2_BINOP(div, _mm256_div_ps, _mm256_div_pd, x[i] / y[i])
#undef HM_AVX2_BINOP

void accumulate(float* y, const float* x, std::size_t n) {
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 yv = _mm256_loadu_ps(y + i);
        __m256 xv = _mm256_loadu_ps(x + i);
        _mm256_storeu_ps(y + i, _mm256_add_ps(yv, xv));
    }
    for (; i < n; ++i) y[i] += x[i];
}

void accumulate(double* y, const double* x, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d yv = _mm256_loadu_pd(y + i);
        __m256d xv = _mm256_loadu_pd(x + i);
        _mm256_storeu_pd(y + i, _mm256_add_pd(yv, xv));
    }
    for (; i < n; ++i) y[i] += x[i];
}

void scale(float* y, float a, std::size_t n) {
    const __m256 av = _mm256_set1_ps(a);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        _mm256_storeu_ps(y + i, _mm256_mul_ps(_mm256_loadu_ps(y + i), av));
    }
    for (; i < n; ++i) y[i] *= a;
}

void scale(double* y, double a, std::size_t n) {
    const __m256d av = _mm256_set1_pd(a);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(y + i, _mm256_mul_pd(_mm256_loadu_pd(y + i), av));
    }
    for (; i < n; ++i) y[i] *= a;
}

}  // namespace hm::simd::avx2

#endif  // x86-64
