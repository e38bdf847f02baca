#include "doctest.h"

#include "goalcap/kernels.hpp"
#include "goalcap/rng.hpp"

#include <cmath>
#include <cstring>
#include <tuple>
#include <vector>

using namespace goalcap;

namespace {

std::vector<float> random_vec(std::mt19937_64& rng, std::size_t n) {
    std::vector<float> v(n);
    for (auto& x : v) x = static_cast<float>(normal01(rng));
    return v;
}

bool bitwise_equal(const std::vector<float>& a, const std::vector<float>& b) {
    return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

}  // namespace

TEST_CASE("scalar gemm_nn matches a hand-computed 2x2 product") {
    // A = [[1,2],[3,4]], B = [[5,6],[7,8]], C starts at zero
    std::vector<float> a{1, 2, 3, 4}, b{5, 6, 7, 8}, c(4, 0.0f);
    kernels::force(kernels::Backend::Scalar);
    kernels::gemm_nn(c.data(), a.data(), b.data(), 2, 2, 2);
    CHECK(c == std::vector<float>{19, 22, 43, 50});
    // accumulation: a second call doubles the result
    kernels::gemm_nn(c.data(), a.data(), b.data(), 2, 2, 2);
    CHECK(c == std::vector<float>{38, 44, 86, 100});
}

TEST_CASE("gemm_nt and gemm_tn agree with explicit transposition through gemm_nn") {
    auto rng = make_rng(11, 1);
    const std::size_t m = 5, k = 7, n = 3;
    auto a = random_vec(rng, m * k);
    auto b = random_vec(rng, k * n);
    kernels::force(kernels::Backend::Scalar);

    // bt[j, t] = b[t, j]
    std::vector<float> bt(n * k);
    for (std::size_t t = 0; t < k; ++t)
        for (std::size_t j = 0; j < n; ++j) bt[j * k + t] = b[t * n + j];
    std::vector<float> c1(m * n, 0.0f), c2(m * n, 0.0f);
    kernels::gemm_nn(c1.data(), a.data(), b.data(), m, k, n);
    kernels::gemm_nt(c2.data(), a.data(), bt.data(), m, n, k);
    for (std::size_t i = 0; i < c1.size(); ++i) CHECK(c1[i] == doctest::Approx(c2[i]).epsilon(1e-5));

    // at[t, i] = a[i, t]; gemm_tn(at, b) == gemm_nn(a, b)
    std::vector<float> at(k * m);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t t = 0; t < k; ++t) at[t * m + i] = a[i * k + t];
    std::vector<float> c3(m * n, 0.0f);
    kernels::gemm_tn(c3.data(), at.data(), b.data(), k, m, n);
    for (std::size_t i = 0; i < c1.size(); ++i) CHECK(c1[i] == doctest::Approx(c3[i]).epsilon(1e-5));
}

TEST_CASE("scalar adam_update matches an independently computed single step") {
    kernels::force(kernels::Backend::Scalar);
    float p = 1.0f, m = 0.0f, v = 0.0f;
    const float g = 0.5f, lr = 0.1f, b1 = 0.9f, b2 = 0.98f, eps = 1e-8f;
    const float bc1 = 1.0f / (1.0f - b1), bc2 = 1.0f / (1.0f - b2);
    kernels::adam_update(&p, &m, &v, &g, 1, lr, b1, b2, eps, bc1, bc2);

    const float em = (1.0f - b1) * g;
    const float ev = (1.0f - b2) * g * g;
    const float expected = 1.0f - lr * (em * bc1) / (std::sqrt(ev * bc2) + eps);
    CHECK(m == em);
    CHECK(v == ev);
    CHECK(p == expected);
}

TEST_CASE("avx2 backend matches the scalar reference") {
    if (!kernels::available(kernels::Backend::Avx2)) {
        MESSAGE("avx2 not available on this host; skipping");
        return;
    }
    auto rng = make_rng(42, 2);
    const std::size_t n = 1003;  // odd length exercises the tail loops
    auto x = random_vec(rng, n);
    auto y = random_vec(rng, n);

    auto run_elementwise = [&](kernels::Backend b) {
        kernels::force(b);
        std::vector<float> add_out(n), mul_out(n), scale_out(x);
        kernels::add(add_out.data(), x.data(), y.data(), n);
        kernels::mul(mul_out.data(), x.data(), y.data(), n);
        kernels::scale(scale_out.data(), 1.7f, n);
        return std::tuple{add_out, mul_out, scale_out};
    };
    auto [add_s, mul_s, scale_s] = run_elementwise(kernels::Backend::Scalar);
    auto [add_a, mul_a, scale_a] = run_elementwise(kernels::Backend::Avx2);
    CHECK(bitwise_equal(add_s, add_a));
    CHECK(bitwise_equal(mul_s, mul_a));
    CHECK(bitwise_equal(scale_s, scale_a));

    // adam keeps identical rounding in both backends (no fused ops)
    auto run_adam = [&](kernels::Backend b) {
        kernels::force(b);
        std::vector<float> p(x), m(n, 0.01f), v(n, 0.02f);
        kernels::adam_update(p.data(), m.data(), v.data(), y.data(), n, 1e-3f, 0.9f, 0.98f, 1e-8f,
                             1.0f / (1.0f - 0.9f), 1.0f / (1.0f - 0.98f));
        return std::tuple{p, m, v};
    };
    auto [p_s, m_s, v_s] = run_adam(kernels::Backend::Scalar);
    auto [p_a, m_a, v_a] = run_adam(kernels::Backend::Avx2);
    CHECK(bitwise_equal(p_s, p_a));
    CHECK(bitwise_equal(m_s, m_a));
    CHECK(bitwise_equal(v_s, v_a));

    // reductions and gemm reassociate, so compare within float tolerance
    kernels::force(kernels::Backend::Scalar);
    const float dot_s = kernels::dot(x.data(), y.data(), n);
    std::vector<float> axpy_s(y);
    kernels::axpy(axpy_s.data(), 0.3f, x.data(), n);
    kernels::force(kernels::Backend::Avx2);
    const float dot_a = kernels::dot(x.data(), y.data(), n);
    std::vector<float> axpy_a(y);
    kernels::axpy(axpy_a.data(), 0.3f, x.data(), n);
    CHECK(dot_s == doctest::Approx(dot_a).epsilon(1e-5));
    for (std::size_t i = 0; i < n; ++i) CHECK(axpy_s[i] == doctest::Approx(axpy_a[i]).epsilon(1e-5));

    const std::size_t m2 = 9, k2 = 33, n2 = 17;
    auto a2 = random_vec(rng, m2 * k2);
    auto b2 = random_vec(rng, k2 * n2);
    auto bt2 = random_vec(rng, n2 * k2);
    auto run_gemm = [&](kernels::Backend b) {
        kernels::force(b);
        std::vector<float> nn(m2 * n2, 0.0f), nt(m2 * n2, 0.0f), tn(m2 * n2, 0.0f);
        kernels::gemm_nn(nn.data(), a2.data(), b2.data(), m2, k2, n2);
        kernels::gemm_nt(nt.data(), a2.data(), bt2.data(), m2, n2, k2);
        std::vector<float> at(k2 * m2);
        for (std::size_t i = 0; i < m2; ++i)
            for (std::size_t t = 0; t < k2; ++t) at[t * m2 + i] = a2[i * k2 + t];
        kernels::gemm_tn(tn.data(), at.data(), b2.data(), k2, m2, n2);
        return std::tuple{nn, nt, tn};
    };
    auto [nn_s, nt_s, tn_s] = run_gemm(kernels::Backend::Scalar);
    auto [nn_a, nt_a, tn_a] = run_gemm(kernels::Backend::Avx2);
    for (std::size_t i = 0; i < nn_s.size(); ++i) {
        CHECK(nn_s[i] == doctest::Approx(nn_a[i]).epsilon(2e-5));
        CHECK(nt_s[i] == doctest::Approx(nt_a[i]).epsilon(2e-5));
        CHECK(tn_s[i] == doctest::Approx(tn_a[i]).epsilon(2e-5));
    }
    kernels::force(kernels::Backend::Scalar);
}

TEST_CASE("double-precision kernels always use the scalar path") {
    std::vector<double> a{1.5, -2.0}, b{0.5, 4.0}, out(2);
    kernels::add(out.data(), a.data(), b.data(), 2);
    CHECK(out == std::vector<double>{2.0, 2.0});
    CHECK(kernels::dot(a.data(), b.data(), 2) == doctest::Approx(-7.25));
}

TEST_CASE("forcing an unavailable backend reports an error") {
    if (kernels::available(kernels::Backend::Avx2)) {
        CHECK_NOTHROW(kernels::force(kernels::Backend::Avx2));
        kernels::force(kernels::Backend::Scalar);
    } else {
        CHECK_THROWS(kernels::force(kernels::Backend::Avx2));
    }
    CHECK(std::string(kernels::name(kernels::active())) == "scalar");
}
