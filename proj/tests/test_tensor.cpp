#include "doctest.h"

#include "goalcap/rng.hpp"
#include "goalcap/tensor.hpp"

#include <cmath>
#include <functional>
#include <vector>

using namespace goalcap;

namespace {

using DT = Tensor<double>;

DT random_tensor(std::mt19937_64& rng, Shape shape, bool requires_grad = true) {
    std::vector<double> data(shape_numel(shape));
    for (auto& x : data) x = normal01(rng);
    auto t = DT::from(std::move(shape), std::move(data));
    t.set_requires_grad(requires_grad);
    return t;
}

// Reduces an arbitrary-shaped output to a scalar through fixed random weights
// so every output element carries an independent gradient signal.
DT weighted(const DT& y, std::mt19937_64& rng) {
    std::vector<double> w(y.numel());
    for (auto& x : w) x = normal01(rng);
    return sum(mul(y, DT::from(y.shape(), std::move(w))));
}

// Central finite differences against the reverse-mode gradient, double
// precision, h = 1e-5, relative error <= 1e-4.
void gradcheck(const std::function<DT()>& build, std::vector<DT> params, double tol = 1e-4) {
    for (auto& p : params) p.zero_grad();
    backward(build());
    const double h = 1e-5;
    for (auto& p : params) {
        REQUIRE(p.grad().size() == static_cast<std::size_t>(p.numel()));
        for (std::int64_t i = 0; i < p.numel(); ++i) {
            const double analytic = p.grad()[i];
            const double orig = p.data()[i];
            double f_plus, f_minus;
            {
                NoGradGuard ng;
                p.data()[i] = orig + h;
                f_plus = build().item();
                p.data()[i] = orig - h;
                f_minus = build().item();
                p.data()[i] = orig;
            }
            const double numeric = (f_plus - f_minus) / (2 * h);
            const double err = std::abs(analytic - numeric) /
                               std::max({1.0, std::abs(analytic), std::abs(numeric)});
            CHECK(err <= tol);
        }
    }
}

}  // namespace

TEST_CASE("masked softmax basics") {
    auto x = Tensor<double>::from({1, 2}, {0.0, 0.0});
    auto p = masked_softmax(x, {1, 1});
    CHECK(p.data()[0] == doctest::Approx(0.5));
    CHECK(p.data()[1] == doctest::Approx(0.5));

    auto y = Tensor<double>::from({1, 2}, {5.0, 0.0});
    auto q = masked_softmax(y, {1, 0});
    CHECK(q.data()[0] == 1.0);
    CHECK(q.data()[1] == 0.0);  // excluded position is exactly zero

    CHECK_THROWS_AS(masked_softmax(y, std::vector<std::uint8_t>{0, 0}), TensorError);
}

TEST_CASE("masked softmax is a probability vector and shift invariant") {
    auto rng = make_rng(7, 100);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 2 + uniform_index(rng, 7);
        std::vector<double> logits(n);
        for (auto& v : logits) v = 4.0 * normal01(rng);
        std::vector<std::uint8_t> mask(n);
        for (auto& m : mask) m = uniform01(rng) < 0.5 ? 1 : 0;
        mask[uniform_index(rng, n)] = 1;  // keep at least one

        auto x = Tensor<double>::from({1, static_cast<std::int64_t>(n)}, logits);
        auto p = masked_softmax(x, mask);
        double total = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            CHECK(p.data()[j] >= 0.0);
            if (!mask[j]) CHECK(p.data()[j] == 0.0);
            total += p.data()[j];
        }
        CHECK(std::abs(total - 1.0) <= 1e-9);

        const double c = 10.0 * normal01(rng);
        std::vector<double> shifted(logits);
        for (std::size_t j = 0; j < n; ++j) {
            if (mask[j]) shifted[j] += c;
        }
        auto p2 = masked_softmax(Tensor<double>::from({1, static_cast<std::int64_t>(n)}, shifted), mask);
        for (std::size_t j = 0; j < n; ++j) CHECK(std::abs(p.data()[j] - p2.data()[j]) <= 1e-12);
    }
}

TEST_CASE("layer norm maps a constant row to the shift parameter") {
    auto x = Tensor<double>::from({1, 4}, {3.0, 3.0, 3.0, 3.0});
    auto gamma = Tensor<double>::from({4}, {2.0, 2.0, 2.0, 2.0});
    auto beta = Tensor<double>::from({4}, {7.0, 7.0, 7.0, 7.0});
    auto y = layer_norm(x, gamma, beta);
    for (auto v : y.data()) CHECK(v == doctest::Approx(7.0));  // normalized part is exactly zero
}

TEST_CASE("product rule: d(x*y)/dx at x=2, y=3 is 3") {
    auto x = DT::scalar(2.0).set_requires_grad();
    auto y = DT::scalar(3.0).set_requires_grad();
    auto loss = sum(mul(x, y));
    backward(loss);
    CHECK(x.grad()[0] == doctest::Approx(3.0));
    CHECK(y.grad()[0] == doctest::Approx(2.0));
}

TEST_CASE("softmax component gradient at [0,0] is [0.25, -0.25]") {
    auto x = DT::from({1, 2}, {0.0, 0.0}).set_requires_grad();
    auto p = softmax(x);
    backward(sum(slice_cols(p, 0, 1)));
    CHECK(x.grad()[0] == doctest::Approx(0.25).epsilon(1e-9));
    CHECK(x.grad()[1] == doctest::Approx(-0.25).epsilon(1e-9));
}

TEST_CASE("gradients accumulate additively across backward calls") {
    auto x = DT::scalar(2.0).set_requires_grad();
    auto make = [&] { return sum(mul(x, DT::scalar(3.0))); };
    backward(make());
    CHECK(x.grad()[0] == doctest::Approx(3.0));
    backward(make());
    CHECK(x.grad()[0] == doctest::Approx(6.0));
    x.zero_grad();
    backward(make());
    CHECK(x.grad()[0] == doctest::Approx(3.0));
}

TEST_CASE("backward rejects non-scalar losses and detached graphs") {
    auto x = DT::from({2}, {1.0, 2.0}).set_requires_grad();
    CHECK_THROWS_AS(backward(scale(x, 2.0)), TensorError);
    auto detached = sum(DT::from({2}, {1.0, 2.0}));
    CHECK_THROWS_AS(backward(detached), TensorError);
}

TEST_CASE("shape mismatches are reported") {
    auto a = DT::zeros({2, 3});
    auto b = DT::zeros({3, 3});
    CHECK_THROWS_AS(add(a, b), TensorError);
    CHECK_THROWS_AS(matmul(a, DT::zeros({2, 2})), TensorError);
    CHECK_THROWS_AS(add_bias(a, DT::zeros({2})), TensorError);
}

TEST_CASE("non-finite results are detected when checks are on") {
    auto big = DT::scalar(1e308);
    CHECK_THROWS_AS(mul(big, big), TensorError);
    set_finite_checks(false);
    CHECK_NOTHROW(mul(big, big));
    set_finite_checks(true);
}

TEST_CASE("no-grad scope builds no graph") {
    auto x = DT::scalar(2.0).set_requires_grad();
    NoGradGuard ng;
    auto y = mul(x, x);
    CHECK(!y.requires_grad());
    CHECK(y.item() == doctest::Approx(4.0));
}

TEST_CASE("finite-difference checks for every differentiable primitive") {
    auto rng = make_rng(2024, 500);
    const int cases = 100;

    SUBCASE("matmul") {
        for (int t = 0; t < cases; ++t) {
            const std::int64_t m = 1 + uniform_index(rng, 4), k = 1 + uniform_index(rng, 4),
                               n = 1 + uniform_index(rng, 4);
            auto a = random_tensor(rng, {m, k});
            auto b = random_tensor(rng, {k, n});
            auto wseed = rng();
            gradcheck(
                [&, wseed] {
                    auto wr = make_rng(wseed, 0);
                    return weighted(matmul(a, b), wr);
                },
                {a, b});
        }
    }
    SUBCASE("matmul_nt") {
        for (int t = 0; t < cases; ++t) {
            const std::int64_t m = 1 + uniform_index(rng, 4), k = 1 + uniform_index(rng, 4),
                               n = 1 + uniform_index(rng, 4);
            auto a = random_tensor(rng, {m, k});
            auto b = random_tensor(rng, {n, k});
            auto wseed = rng();
            gradcheck(
                [&, wseed] {
                    auto wr = make_rng(wseed, 0);
                    return weighted(matmul_nt(a, b), wr);
                },
                {a, b});
        }
    }
    SUBCASE("add and mul and scale") {
        for (int t = 0; t < cases; ++t) {
            const std::int64_t m = 1 + uniform_index(rng, 3), n = 1 + uniform_index(rng, 5);
            auto a = random_tensor(rng, {m, n});
            auto b = random_tensor(rng, {m, n});
            auto wseed = rng();
            gradcheck(
                [&, wseed] {
                    auto wr = make_rng(wseed, 0);
                    return weighted(scale(add(a, mul(a, b)), 0.7), wr);
                },
                {a, b});
        }
    }
    SUBCASE("add_bias") {
        for (int t = 0; t < cases; ++t) {
            const std::int64_t m = 1 + uniform_index(rng, 4), n = 1 + uniform_index(rng, 4);
            auto x = random_tensor(rng, {m, n});
            auto b = random_tensor(rng, {n});
            auto wseed = rng();
            gradcheck(
                [&, wseed] {
                    auto wr = make_rng(wseed, 0);
                    return weighted(add_bias(x, b), wr);
                },
                {x, b});
        }
    }
    SUBCASE("gelu") {
        for (int t = 0; t < cases; ++t) {
            auto x = random_tensor(rng, {1 + static_cast<std::int64_t>(uniform_index(rng, 3)),
                                         1 + static_cast<std::int64_t>(uniform_index(rng, 5))});
            auto wseed = rng();
            gradcheck(
                [&, wseed] {
                    auto wr = make_rng(wseed, 0);
                    return weighted(gelu(x), wr);
                },
                {x});
        }
    }
    SUBCASE("layer_norm") {
        for (int t = 0; t < cases; ++t) {
            const std::int64_t m = 1 + uniform_index(rng, 3), n = 2 + uniform_index(rng, 5);
            auto x = random_tensor(rng, {m, n});
            auto g = random_tensor(rng, {n});
            auto b = random_tensor(rng, {n});
            auto wseed = rng();
            gradcheck(
                [&, wseed] {
                    auto wr = make_rng(wseed, 0);
                    return weighted(layer_norm(x, g, b), wr);
                },
                {x, g, b});
        }
    }
    SUBCASE("embedding") {
        for (int t = 0; t < cases; ++t) {
            const std::int64_t v = 3 + uniform_index(rng, 4), d = 1 + uniform_index(rng, 4);
            auto table = random_tensor(rng, {v, d});
            std::vector<std::int32_t> ids(2 + uniform_index(rng, 4));
            for (auto& id : ids) id = static_cast<std::int32_t>(uniform_index(rng, v));
            auto wseed = rng();
            gradcheck(
                [&, wseed] {
                    auto wr = make_rng(wseed, 0);
                    return weighted(embedding(table, ids), wr);
                },
                {table});
        }
    }
    SUBCASE("masked_softmax and log") {
        for (int t = 0; t < cases; ++t) {
            const std::int64_t m = 1 + uniform_index(rng, 3), n = 2 + uniform_index(rng, 5);
            auto x = random_tensor(rng, {m, n});
            std::vector<std::uint8_t> mask(m * n);
            for (std::int64_t i = 0; i < m; ++i) {
                for (std::int64_t j = 0; j < n; ++j) mask[i * n + j] = uniform01(rng) < 0.6 ? 1 : 0;
                mask[i * n + static_cast<std::int64_t>(uniform_index(rng, n))] = 1;
            }
            auto wseed = rng();
            gradcheck(
                [&, wseed] {
                    auto wr = make_rng(wseed, 0);
                    // log of kept probabilities via a small epsilon shift keeps
                    // excluded zeros out of the log
                    auto p = masked_softmax(x, mask);
                    auto shifted = add(p, Tensor<double>::full(p.shape(), 1e-3));
                    return weighted(log(shifted), wr);
                },
                {x});
        }
    }
    SUBCASE("concat and slice") {
        for (int t = 0; t < cases; ++t) {
            const std::int64_t n = 2 + uniform_index(rng, 3);
            auto a = random_tensor(rng, {2, n});
            auto b = random_tensor(rng, {3, n});
            auto c = random_tensor(rng, {2, 2});
            auto wseed = rng();
            gradcheck(
                [&, wseed] {
                    auto wr = make_rng(wseed, 0);
                    auto rows = concat_rows({a, b});               // [5 x n]
                    auto sl = slice_rows(rows, 1, 4);              // [3 x n]
                    auto cols = concat_cols({slice_rows(sl, 0, 2), c});  // [2 x (n+2)]
                    return weighted(slice_cols(cols, 1, n + 1), wr);
                },
                {a, b, c});
        }
    }
    SUBCASE("reductions and gather_cols_sum") {
        for (int t = 0; t < cases; ++t) {
            const std::int64_t m = 1 + uniform_index(rng, 3), n = 2 + uniform_index(rng, 5);
            auto x = random_tensor(rng, {m, n});
            std::vector<std::vector<std::int32_t>> groups(m);
            for (auto& g : groups) {
                const std::size_t sz = 1 + uniform_index(rng, n);
                for (std::size_t j = 0; j < sz; ++j)
                    g.push_back(static_cast<std::int32_t>(uniform_index(rng, n)));
            }
            auto wseed = rng();
            gradcheck(
                [&, wseed] {
                    auto wr = make_rng(wseed, 0);
                    auto gathered = gather_cols_sum(x, groups);
                    return add(add(weighted(gathered, wr), mean(x)), sum(x));
                },
                {x});
        }
    }
    SUBCASE("sum_of") {
        for (int t = 0; t < cases; ++t) {
            auto a = random_tensor(rng, {2, 3});
            auto b = random_tensor(rng, {2, 3});
            auto c = random_tensor(rng, {2, 3});
            auto wseed = rng();
            gradcheck(
                [&, wseed] {
                    auto wr = make_rng(wseed, 0);
                    return weighted(sum_of({a, b, c}), wr);
                },
                {a, b, c});
        }
    }
    SUBCASE("dropout with a replayed mask") {
        for (int t = 0; t < cases; ++t) {
            auto x = random_tensor(rng, {3, 4});
            auto dseed = rng();
            auto wseed = rng();
            gradcheck(
                [&, dseed, wseed] {
                    auto dr = make_rng(dseed, 0);
                    auto wr = make_rng(wseed, 0);
                    return weighted(dropout(x, 0.4, &dr), wr);
                },
                {x});
        }
    }
    SUBCASE("layernorm+matmul composite") {
        for (int t = 0; t < cases; ++t) {
            const std::int64_t m = 2 + uniform_index(rng, 3), k = 2 + uniform_index(rng, 4),
                               n = 1 + uniform_index(rng, 4);
            auto x = random_tensor(rng, {m, k});
            auto g = random_tensor(rng, {k});
            auto b = random_tensor(rng, {k});
            auto w = random_tensor(rng, {k, n});
            auto wseed = rng();
            gradcheck(
                [&, wseed] {
                    auto wr = make_rng(wseed, 0);
                    return weighted(matmul(layer_norm(x, g, b), w), wr);
                },
                {x, g, b, w});
        }
    }
    SUBCASE("attention-shaped composite") {
        for (int t = 0; t < cases; ++t) {
            const std::int64_t tq = 2, tk = 3, d = 4;
            auto q = random_tensor(rng, {tq, d});
            auto kk = random_tensor(rng, {tk, d});
            auto v = random_tensor(rng, {tk, d});
            std::vector<std::uint8_t> mask(tq * tk, 1);
            mask[1] = 0;  // one masked attention edge
            auto wseed = rng();
            gradcheck(
                [&, wseed] {
                    auto wr = make_rng(wseed, 0);
                    auto scores = scale(matmul_nt(q, kk), 1.0 / std::sqrt(double(d)));
                    auto attn = masked_softmax(scores, mask);
                    auto ctx = matmul(attn, v);
                    return weighted(gelu(ctx), wr);
                },
                {q, kk, v});
        }
    }
}

TEST_CASE("dropout in eval mode is the identity") {
    auto x = DT::from({2, 2}, {1.0, 2.0, 3.0, 4.0});
    auto y = dropout(x, 0.5, nullptr);
    CHECK(y.node() == x.node());
    auto rng = make_rng(1, 1);
    auto z = dropout(x, 0.0, &rng);
    CHECK(z.node() == x.node());
}
