// AVX2+FMA variants of the float kernels. This translation unit is compiled
// with -mavx2 -mfma and only ever entered through the dispatch table after a
// runtime CPU check. Reductions accumulate in 8 lanes, so results can differ
// from the scalar reference in the last bits; the equivalence tests bound
// the difference.
#include "goalcap/kernels.hpp"

#if defined(__x86_64__) || defined(_M_X64)

#include <immintrin.h>

#include <cmath>

namespace goalcap::kernels::avx2 {

namespace {

inline float hsum8(__m256 v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    __m128 s = _mm_add_ps(lo, hi);
    s = _mm_hadd_ps(s, s);
    s = _mm_hadd_ps(s, s);
    return _mm_cvtss_f32(s);
}

}  // namespace

void add_f32(float* z, const float* x, const float* y, std::size_t n) {
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        _mm256_storeu_ps(z + i, _mm256_add_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
    }
    for (; i < n; ++i) z[i] = x[i] + y[i];
}

void mul_f32(float* z, const float* x, const float* y, std::size_t n) {
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        _mm256_storeu_ps(z + i, _mm256_mul_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
    }
    for (; i < n; ++i) z[i] = x[i] * y[i];
}

void axpy_f32(float* y, float a, const float* x, std::size_t n) {
    const __m256 va = _mm256_set1_ps(a);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        _mm256_storeu_ps(y + i, _mm256_fmadd_ps(va, _mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
    }
    for (; i < n; ++i) y[i] += a * x[i];
}

void scale_f32(float* x, float a, std::size_t n) {
    const __m256 va = _mm256_set1_ps(a);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        _mm256_storeu_ps(x + i, _mm256_mul_ps(va, _mm256_loadu_ps(x + i)));
    }
    for (; i < n; ++i) x[i] *= a;
}

float dot_f32(const float* x, const float* y, std::size_t n) {
    __m256 acc = _mm256_setzero_ps();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        acc = _mm256_fmadd_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i), acc);
    }
    float r = hsum8(acc);
    for (; i < n; ++i) r += x[i] * y[i];
    return r;
}

void gemm_nn_f32(float* c, const float* a, const float* b, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        float* crow = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const __m256 va = _mm256_set1_ps(a[i * k + p]);
            const float* brow = b + p * n;
            std::size_t j = 0;
            for (; j + 8 <= n; j += 8) {
                _mm256_storeu_ps(crow + j, _mm256_fmadd_ps(va, _mm256_loadu_ps(brow + j), _mm256_loadu_ps(crow + j)));
            }
            const float av = a[i * k + p];
            for (; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void gemm_nt_f32(float* c, const float* a, const float* b, std::size_t m, std::size_t n, std::size_t k) {
    for (std::size_t i = 0; i < m; ++i) {
        const float* arow = a + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            c[i * n + j] += dot_f32(arow, b + j * k, k);
        }
    }
}

void gemm_tn_f32(float* c, const float* a, const float* b, std::size_t k, std::size_t m, std::size_t n) {
    for (std::size_t p = 0; p < k; ++p) {
        const float* brow = b + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            const __m256 va = _mm256_set1_ps(a[p * m + i]);
            float* crow = c + i * n;
            std::size_t j = 0;
            for (; j + 8 <= n; j += 8) {
                _mm256_storeu_ps(crow + j, _mm256_fmadd_ps(va, _mm256_loadu_ps(brow + j), _mm256_loadu_ps(crow + j)));
            }
            const float av = a[p * m + i];
            for (; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void adam_f32(float* p, float* m, float* v, const float* g, std::size_t n,
              float lr, float beta1, float beta2, float eps, float bc1, float bc2) {
    const __m256 vb1 = _mm256_set1_ps(beta1);
    const __m256 vb2 = _mm256_set1_ps(beta2);
    const __m256 v1mb1 = _mm256_set1_ps(1.0f - beta1);
    const __m256 v1mb2 = _mm256_set1_ps(1.0f - beta2);
    const __m256 vlr = _mm256_set1_ps(lr);
    const __m256 veps = _mm256_set1_ps(eps);
    const __m256 vbc1 = _mm256_set1_ps(bc1);
    const __m256 vbc2 = _mm256_set1_ps(bc2);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        const __m256 vg = _mm256_loadu_ps(g + i);
        // no FMA here so the rounding matches the scalar reference exactly
        __m256 vm = _mm256_add_ps(_mm256_mul_ps(vb1, _mm256_loadu_ps(m + i)), _mm256_mul_ps(v1mb1, vg));
        __m256 vv = _mm256_add_ps(_mm256_mul_ps(vb2, _mm256_loadu_ps(v + i)),
                                  _mm256_mul_ps(_mm256_mul_ps(v1mb2, vg), vg));
        _mm256_storeu_ps(m + i, vm);
        _mm256_storeu_ps(v + i, vv);
        const __m256 num = _mm256_mul_ps(vlr, _mm256_mul_ps(vm, vbc1));
        const __m256 den = _mm256_add_ps(_mm256_sqrt_ps(_mm256_mul_ps(vv, vbc2)), veps);
        _mm256_storeu_ps(p + i, _mm256_sub_ps(_mm256_loadu_ps(p + i), _mm256_div_ps(num, den)));
    }
    for (; i < n; ++i) {
        const float gi = g[i];
        m[i] = beta1 * m[i] + (1.0f - beta1) * gi;
        v[i] = beta2 * v[i] + (1.0f - beta2) * gi * gi;
        p[i] -= lr * (m[i] * bc1) / (std::sqrt(v[i] * bc2) + eps);
    }
}

}  // namespace goalcap::kernels::avx2

#endif  // x86_64
