#include "goalcap/kernels.hpp"

#include <cstdlib>
#include <cstring>
#include <mutex>
#include <stdexcept>
#include <string>

namespace goalcap::kernels {

namespace scalar {
void add_f32(float*, const float*, const float*, std::size_t);
void mul_f32(float*, const float*, const float*, std::size_t);
void axpy_f32(float*, float, const float*, std::size_t);
void scale_f32(float*, float, std::size_t);
float dot_f32(const float*, const float*, std::size_t);
void gemm_nn_f32(float*, const float*, const float*, std::size_t, std::size_t, std::size_t);
void gemm_nt_f32(float*, const float*, const float*, std::size_t, std::size_t, std::size_t);
void gemm_tn_f32(float*, const float*, const float*, std::size_t, std::size_t, std::size_t);
void adam_f32(float*, float*, float*, const float*, std::size_t, float, float, float, float, float, float);
}  // namespace scalar

#if defined(__x86_64__) || defined(_M_X64)
namespace avx2 {
void add_f32(float*, const float*, const float*, std::size_t);
void mul_f32(float*, const float*, const float*, std::size_t);
void axpy_f32(float*, float, const float*, std::size_t);
void scale_f32(float*, float, std::size_t);
float dot_f32(const float*, const float*, std::size_t);
void gemm_nn_f32(float*, const float*, const float*, std::size_t, std::size_t, std::size_t);
void gemm_nt_f32(float*, const float*, const float*, std::size_t, std::size_t, std::size_t);
void gemm_tn_f32(float*, const float*, const float*, std::size_t, std::size_t, std::size_t);
void adam_f32(float*, float*, float*, const float*, std::size_t, float, float, float, float, float, float);
}  // namespace avx2
#endif

namespace {

struct Table {
    void (*add)(float*, const float*, const float*, std::size_t);
    void (*mul)(float*, const float*, const float*, std::size_t);
    void (*axpy)(float*, float, const float*, std::size_t);
    void (*scale)(float*, float, std::size_t);
    float (*dot)(const float*, const float*, std::size_t);
    void (*gemm_nn)(float*, const float*, const float*, std::size_t, std::size_t, std::size_t);
    void (*gemm_nt)(float*, const float*, const float*, std::size_t, std::size_t, std::size_t);
    void (*gemm_tn)(float*, const float*, const float*, std::size_t, std::size_t, std::size_t);
    void (*adam)(float*, float*, float*, const float*, std::size_t, float, float, float, float, float, float);
};

constexpr Table kScalarTable{scalar::add_f32, scalar::mul_f32, scalar::axpy_f32,
                             scalar::scale_f32, scalar::dot_f32, scalar::gemm_nn_f32,
                             scalar::gemm_nt_f32, scalar::gemm_tn_f32, scalar::adam_f32};

#if defined(__x86_64__) || defined(_M_X64)
constexpr Table kAvx2Table{avx2::add_f32, avx2::mul_f32, avx2::axpy_f32,
                           avx2::scale_f32, avx2::dot_f32, avx2::gemm_nn_f32,
                           avx2::gemm_nt_f32, avx2::gemm_tn_f32, avx2::adam_f32};
#endif

Backend g_backend = Backend::Scalar;
const Table* g_table = &kScalarTable;
std::once_flag g_init_flag;

void apply(Backend b) {
    switch (b) {
        case Backend::Scalar:
            g_backend = Backend::Scalar;
            g_table = &kScalarTable;
            return;
        case Backend::Avx2:
#if defined(__x86_64__) || defined(_M_X64)
            g_backend = Backend::Avx2;
            g_table = &kAvx2Table;
            return;
#else
            break;
#endif
    }
    throw std::runtime_error("kernel backend unavailable on this CPU");
}

void init_once() {
    std::call_once(g_init_flag, [] {
        Backend pick = available(Backend::Avx2) ? Backend::Avx2 : Backend::Scalar;
        if (const char* env = std::getenv("GOALCAP_KERNELS")) {
            if (std::strcmp(env, "scalar") == 0) pick = Backend::Scalar;
            else if (std::strcmp(env, "avx2") == 0) pick = Backend::Avx2;
        }
        apply(pick);
    });
}

}  // namespace

bool available(Backend b) {
    if (b == Backend::Scalar) return true;
#if defined(__x86_64__) || defined(_M_X64)
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

Backend active() {
    init_once();
    return g_backend;
}

void force(Backend b) {
    init_once();
    if (!available(b)) throw std::runtime_error(std::string("kernel backend unavailable: ") + name(b));
    apply(b);
}

const char* name(Backend b) {
    return b == Backend::Scalar ? "scalar" : "avx2";
}

void add(float* z, const float* x, const float* y, std::size_t n) { init_once(); g_table->add(z, x, y, n); }
void mul(float* z, const float* x, const float* y, std::size_t n) { init_once(); g_table->mul(z, x, y, n); }
void axpy(float* y, float a, const float* x, std::size_t n) { init_once(); g_table->axpy(y, a, x, n); }
void scale(float* x, float a, std::size_t n) { init_once(); g_table->scale(x, a, n); }
float dot(const float* x, const float* y, std::size_t n) { init_once(); return g_table->dot(x, y, n); }
void gemm_nn(float* c, const float* a, const float* b, std::size_t m, std::size_t k, std::size_t n) { init_once(); g_table->gemm_nn(c, a, b, m, k, n); }
void gemm_nt(float* c, const float* a, const float* b, std::size_t m, std::size_t n, std::size_t k) { init_once(); g_table->gemm_nt(c, a, b, m, n, k); }
void gemm_tn(float* c, const float* a, const float* b, std::size_t k, std::size_t m, std::size_t n) { init_once(); g_table->gemm_tn(c, a, b, k, m, n); }
void adam_update(float* p, float* m, float* v, const float* g, std::size_t n,
                 float lr, float beta1, float beta2, float eps, float bc1, float bc2) {
    init_once();
    g_table->adam(p, m, v, g, n, lr, beta1, beta2, eps, bc1, bc2);
}

}  // namespace goalcap::kernels
