// Scalar reference kernels. These define the semantics; the SIMD variants
// are equivalence-tested against them.
#include "goalcap/kernels.hpp"

#include <cmath>

namespace goalcap::kernels::scalar {

template <typename T>
void add_impl(T* z, const T* x, const T* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) z[i] = x[i] + y[i];
}

template <typename T>
void mul_impl(T* z, const T* x, const T* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) z[i] = x[i] * y[i];
}

template <typename T>
void axpy_impl(T* y, T a, const T* x, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

template <typename T>
void scale_impl(T* x, T a, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) x[i] *= a;
}

template <typename T>
T dot_impl(const T* x, const T* y, std::size_t n) {
    T acc = T(0);
    for (std::size_t i = 0; i < n; ++i) acc += x[i] * y[i];
    return acc;
}

template <typename T>
void gemm_nn_impl(T* c, const T* a, const T* b, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        T* crow = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const T av = a[i * k + p];
            const T* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

template <typename T>
void gemm_nt_impl(T* c, const T* a, const T* b, std::size_t m, std::size_t n, std::size_t k) {
    for (std::size_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            c[i * n + j] += dot_impl(arow, b + j * k, k);
        }
    }
}

template <typename T>
void gemm_tn_impl(T* c, const T* a, const T* b, std::size_t k, std::size_t m, std::size_t n) {
    for (std::size_t p = 0; p < k; ++p) {
        const T* brow = b + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            const T av = a[p * m + i];
            T* crow = c + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

template <typename T>
void adam_impl(T* p, T* m, T* v, const T* g, std::size_t n,
               T lr, T beta1, T beta2, T eps, T bc1, T bc2) {
    for (std::size_t i = 0; i < n; ++i) {
        const T gi = g[i];
        m[i] = beta1 * m[i] + (T(1) - beta1) * gi;
        v[i] = beta2 * v[i] + (T(1) - beta2) * gi * gi;
        p[i] -= lr * (m[i] * bc1) / (std::sqrt(v[i] * bc2) + eps);
    }
}

void add_f32(float* z, const float* x, const float* y, std::size_t n) { add_impl(z, x, y, n); }
void mul_f32(float* z, const float* x, const float* y, std::size_t n) { mul_impl(z, x, y, n); }
void axpy_f32(float* y, float a, const float* x, std::size_t n) { axpy_impl(y, a, x, n); }
void scale_f32(float* x, float a, std::size_t n) { scale_impl(x, a, n); }
float dot_f32(const float* x, const float* y, std::size_t n) { return dot_impl(x, y, n); }
void gemm_nn_f32(float* c, const float* a, const float* b, std::size_t m, std::size_t k, std::size_t n) { gemm_nn_impl(c, a, b, m, k, n); }
void gemm_nt_f32(float* c, const float* a, const float* b, std::size_t m, std::size_t n, std::size_t k) { gemm_nt_impl(c, a, b, m, n, k); }
void gemm_tn_f32(float* c, const float* a, const float* b, std::size_t k, std::size_t m, std::size_t n) { gemm_tn_impl(c, a, b, k, m, n); }
void adam_f32(float* p, float* m, float* v, const float* g, std::size_t n,
              float lr, float beta1, float beta2, float eps, float bc1, float bc2) {
    adam_impl(p, m, v, g, n, lr, beta1, beta2, eps, bc1, bc2);
}

}  // namespace goalcap::kernels::scalar

namespace goalcap::kernels {

// Double precision has no SIMD variant; forward straight to the reference.
void add(double* z, const double* x, const double* y, std::size_t n) { scalar::add_impl(z, x, y, n); }
void mul(double* z, const double* x, const double* y, std::size_t n) { scalar::mul_impl(z, x, y, n); }
void axpy(double* y, double a, const double* x, std::size_t n) { scalar::axpy_impl(y, a, x, n); }
void scale(double* x, double a, std::size_t n) { scalar::scale_impl(x, a, n); }
double dot(const double* x, const double* y, std::size_t n) { return scalar::dot_impl(x, y, n); }
void gemm_nn(double* c, const double* a, const double* b, std::size_t m, std::size_t k, std::size_t n) { scalar::gemm_nn_impl(c, a, b, m, k, n); }
void gemm_nt(double* c, const double* a, const double* b, std::size_t m, std::size_t n, std::size_t k) { scalar::gemm_nt_impl(c, a, b, m, n, k); }
void gemm_tn(double* c, const double* a, const double* b, std::size_t k, std::size_t m, std::size_t n) { scalar::gemm_tn_impl(c, a, b, k, m, n); }
void adam_update(double* p, double* m, double* v, const double* g, std::size_t n,
                 double lr, double beta1, double beta2, double eps, double bc1, double bc2) {
    scalar::adam_impl(p, m, v, g, n, lr, beta1, beta2, eps, bc1, bc2);
}

}  // namespace goalcap::kernels
