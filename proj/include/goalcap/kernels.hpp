// Data-parallel inner loops used by the tensor layer: scalar reference
// kernels plus AVX2 variants selected once at startup. Double-precision
// overloads always run the scalar reference path; they exist for the
// high-precision gradient-check mode.
#pragma once

#include <cstddef>

namespace goalcap::kernels {

enum class Backend { Scalar, Avx2 };

// Backend chosen at first use: best available ISA, overridable with the
// GOALCAP_KERNELS environment variable ("scalar" or "avx2").
Backend active();
bool available(Backend b);
void force(Backend b);  // throws std::runtime_error if unavailable
const char* name(Backend b);

// z = x + y
void add(float* z, const float* x, const float* y, std::size_t n);
void add(double* z, const double* x, const double* y, std::size_t n);
// z = x * y
void mul(float* z, const float* x, const float* y, std::size_t n);
void mul(double* z, const double* x, const double* y, std::size_t n);
// y += a * x
void axpy(float* y, float a, const float* x, std::size_t n);
void axpy(double* y, double a, const double* x, std::size_t n);
// x *= a
void scale(float* x, float a, std::size_t n);
void scale(double* x, double a, std::size_t n);

float dot(const float* x, const float* y, std::size_t n);
double dot(const double* x, const double* y, std::size_t n);

// C += A * B          A:[m x k]  B:[k x n]  C:[m x n], all row-major
void gemm_nn(float* c, const float* a, const float* b, std::size_t m, std::size_t k, std::size_t n);
void gemm_nn(double* c, const double* a, const double* b, std::size_t m, std::size_t k, std::size_t n);
// C += A * B^T        A:[m x k]  B:[n x k]  C:[m x n]
void gemm_nt(float* c, const float* a, const float* b, std::size_t m, std::size_t n, std::size_t k);
void gemm_nt(double* c, const double* a, const double* b, std::size_t m, std::size_t n, std::size_t k);
// C += A^T * B        A:[k x m]  B:[k x n]  C:[m x n]
void gemm_tn(float* c, const float* a, const float* b, std::size_t k, std::size_t m, std::size_t n);
void gemm_tn(double* c, const double* a, const double* b, std::size_t k, std::size_t m, std::size_t n);

// One optimizer step over a flat parameter block. bc1/bc2 are the
// precomputed bias-correction factors 1/(1-beta1^t) and 1/(1-beta2^t).
//   m = beta1*m + (1-beta1)*g
//   v = beta2*v + (1-beta2)*g^2
//   p -= lr * (m*bc1) / (sqrt(v*bc2) + eps)
void adam_update(float* p, float* m, float* v, const float* g, std::size_t n,
                 float lr, float beta1, float beta2, float eps, float bc1, float bc2);
void adam_update(double* p, double* m, double* v, const double* g, std::size_t n,
                 double lr, double beta1, double beta2, double eps, double bc1, double bc2);

}  // namespace goalcap::kernels
