#pragma once

#include <cstddef>

// Data-parallel inner-loop kernels. Scalar reference implementations always
// exist; an AVX2 variant is compiled on x86-64 and selected at runtime when
// the CPU supports it. Set HM_SIMD=scalar in the environment to force the
// reference path.
namespace hm::simd {

const char* backend_name();
bool using_avx2();

// y[i] += a * x[i]
void fma_row(float* y, const float* x, float a, std::size_t n);
void fma_row(double* y, const double* x, double a, std::size_t n);

// sum_i x[i] * y[i]
float dot(const float* x, const float* y, std::size_t n);
double dot(const double* x, const double* y, std::size_t n);

// z[i] = x[i] (op) y[i]
void add(float* z, const float* x, const float* y, std::size_t n);
void add(double* z, const double* x, const double* y, std::size_t n);
void sub(float* z, const float* x, const float* y, std::size_t n);
void sub(double* z, const double* x, const double* y, std::size_t n);
void mul(float* z, const float* x, const float* y, std::size_t n);
void mul(double* z, const double* x, const double* y, std::size_t n);
void div(float* z, const float* x, const float* y, std::size_t n);
void div(double* z, const double* x, const double* y, std::size_t n);

// y[i] += x[i]
void accumulate(float* y, const float* x, std::size_t n);
void accumulate(double* y, const double* x, std::size_t n);

// y[i] *= a
void scale(float* y, float a, std::size_t n);
void scale(double* y, double a, std::size_t n);

// Reference kernels, exposed so the dispatched variants can be
// equivalence-tested against them.
namespace scalar {
void fma_row(float* y, const float* x, float a, std::size_t n);
void fma_row(double* y, const double* x, double a, std::size_t n);
float dot(const float* x, const float* y, std::size_t n);
double dot(const double* x, const double* y, std::size_t n);
void add(float* z, const float* x, const float* y, std::size_t n);
void add(double* z, const double* x, const double* y, std::size_t n);
void sub(float* z, const float* x, const float* y, std::size_t n);
void sub(double* z, const double* x, const double* y, std::size_t n);
void mul(float* z, const float* x, const float* y, std::size_t n);
void mul(double* z, const double* x, const double* y, std::size_t n);
void div(float* z, const float* x, const float* y, std::size_t n);
void div(double* z, const double* x, const double* y, std::size_t n);
void accumulate(float* y, const float* x, std::size_t n);
void accumulate(double* y, const double* x, std::size_t n);
void scale(float* y, float a, std::size_t n);
void scale(double* y, double a, std::size_t n);
}  // namespace scalar

namespace avx2 {
// True when the AVX2 translation unit was compiled in and the CPU has
// avx2+fma. The kernels below must only be called when this returns true.
bool supported();
void fma_row(float* y, const float* x, float a, std::size_t n);
void fma_row(double* y, const double* x, double a, std::size_t n);
float dot(const float* x, const float* y, std::size_t n);
double dot(const double* x, const double* y, std::size_t n);
void add(float* z, const float* x, const float* y, std::size_t n);
void add(double* z, const double* x, const double* y, std::size_t n);
void sub(float* z, const float* x, const float* y, std::size_t n);
void sub(double* z, const double* x, const double* y, std::size_t n);
void mul(float* z, const float* x, const float* y, std::size_t n);
void mul(double* z, const double* x, const double* y, std::size_t n);
void div(float* z, const float* x, const float* y, std::size_t n);
void div(double* z, const double* x, const double* y, std::size_t n);
void accumulate(float* y, const float* x, std::size_t n);
void accumulate(double* y, const double* x, std::size_t n);
void scale(float* y, float a, std::size_t n);
void scale(double* y, double a, std::size_t n);
}  // namespace avx2

}  // namespace hm::simd
