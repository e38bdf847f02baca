// Dense row-major tensors with reverse-mode differentiation. The op set is
// exactly what the captioner needs: matmul (plain and B-transposed), affine
// adds, GELU, layer norm, embedding gather, masked softmax, log, concat,
// slicing and reductions. Templated on the scalar type: training runs in
// float, the gradient-check tests instantiate the identical code in double.
#pragma once

#include "goalcap/kernels.hpp"
#include "goalcap/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace goalcap {

using Shape = std::vector<std::int64_t>;

class TensorError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace detail {
bool& grad_enabled_flag();
bool& finite_checks_flag();
}  // namespace detail

inline bool grad_enabled() { return detail::grad_enabled_flag(); }
inline bool finite_checks_enabled() { return detail::finite_checks_flag(); }
inline void set_finite_checks(bool on) { detail::finite_checks_flag() = on; }

// Disables graph construction in scope; used for decoding and baselines.
struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(detail::grad_enabled_flag()) { detail::grad_enabled_flag() = false; }
    ~NoGradGuard() { detail::grad_enabled_flag() = prev; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

inline std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (auto e : s) n *= e;
    return n;
}

template <typename T>
struct TensorNode {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;  // empty until first needed; same length as value afterwards
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNode<T>>> parents;
    std::function<void(TensorNode<T>&)> backward_fn;

    std::int64_t numel() const { return static_cast<std::int64_t>(value.size()); }
    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    }
};

template <typename T>
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<TensorNode<T>> n) : node_(std::move(n)) {}

    static Tensor zeros(Shape shape) {
        auto n = std::make_shared<TensorNode<T>>();
        n->value.assign(static_cast<std::size_t>(shape_numel(shape)), T(0));
        n->shape = std::move(shape);
        return Tensor(std::move(n));
    }
    static Tensor full(Shape shape, T v) {
        Tensor t = zeros(std::move(shape));
        std::fill(t.node_->value.begin(), t.node_->value.end(), v);
        return t;
    }
    static Tensor from(Shape shape, std::vector<T> data) {
        if (static_cast<std::int64_t>(data.size()) != shape_numel(shape))
            throw TensorError("tensor data length does not match shape");
        auto n = std::make_shared<TensorNode<T>>();
        n->shape = std::move(shape);
        n->value = std::move(data);
        return Tensor(std::move(n));
    }
    static Tensor scalar(T v) { return from({1}, {v}); }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::int64_t rank() const { return static_cast<std::int64_t>(node_->shape.size()); }
    std::int64_t numel() const { return node_->numel(); }
    std::int64_t rows() const { return node_->shape.at(0); }
    std::int64_t cols() const { return node_->shape.at(1); }

    std::span<T> data() { return {node_->value.data(), node_->value.size()}; }
    std::span<const T> data() const { return {node_->value.data(), node_->value.size()}; }
    T item() const {
        if (numel() != 1) throw TensorError("item() on non-scalar tensor");
        return node_->value[0];
    }
    std::span<const T> grad() const { return {node_->grad.data(), node_->grad.size()}; }
    std::span<T> grad_mut() {
        node_->ensure_grad();
        return {node_->grad.data(), node_->grad.size()};
    }

    bool requires_grad() const { return node_->requires_grad; }
    Tensor& set_requires_grad(bool on = true) {
        node_->requires_grad = on;
        return *this;
    }
    void zero_grad() {
        if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
    }

    Tensor clone_value() const {
        return Tensor::from(node_->shape, node_->value);
    }

    std::shared_ptr<TensorNode<T>> node() const { return node_; }

private:
    std::shared_ptr<TensorNode<T>> node_;
};

namespace detail {

template <typename T>
void check_finite(const TensorNode<T>& n, const char* op) {
    if (!finite_checks_flag()) return;
    for (T v : n.value) {
        if (!std::isfinite(v)) throw TensorError(std::string("non-finite value produced by ") + op);
    }
}

template <typename T>
Tensor<T> make_op(Shape shape, std::vector<T> value,
                  std::vector<std::shared_ptr<TensorNode<T>>> parents,
                  std::function<void(TensorNode<T>&)> backward_fn, const char* op) {
    auto n = std::make_shared<TensorNode<T>>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    bool needs = false;
    if (grad_enabled_flag()) {
        for (const auto& p : parents) needs = needs || p->requires_grad;
    }
    if (needs) {
        n->requires_grad = true;
        n->parents = std::move(parents);
        n->backward_fn = std::move(backward_fn);
    }
    check_finite(*n, op);
    return Tensor<T>(std::move(n));
}

template <typename T>
void require_rank2(const Tensor<T>& t, const char* op) {
    if (t.rank() != 2) throw TensorError(std::string(op) + ": rank-2 tensor required");
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (a.shape() != b.shape()) throw TensorError(std::string(op) + ": shape mismatch");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// primitives

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_rank2(a, "matmul");
    detail::require_rank2(b, "matmul");
    if (a.cols() != b.rows()) throw TensorError("matmul: inner dimensions disagree");
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    std::vector<T> out(m * n, T(0));
    kernels::gemm_nn(out.data(), a.data().data(), b.data().data(), m, k, n);
    auto an = a.node(), bn = b.node();
    return detail::make_op<T>(
        {a.rows(), b.cols()}, std::move(out), {an, bn},
        [an, bn, m, k, n](TensorNode<T>& self) {
            if (an->requires_grad) {
                an->ensure_grad();
                kernels::gemm_nt(an->grad.data(), self.grad.data(), bn->value.data(), m, k, n);
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                kernels::gemm_tn(bn->grad.data(), an->value.data(), self.grad.data(), m, k, n);
            }
        },
        "matmul");
}

// a * b^T with b stored row-major [n x k]; the attention-score product.
template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_rank2(a, "matmul_nt");
    detail::require_rank2(b, "matmul_nt");
    if (a.cols() != b.cols()) throw TensorError("matmul_nt: inner dimensions disagree");
    const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
    std::vector<T> out(m * n, T(0));
    kernels::gemm_nt(out.data(), a.data().data(), b.data().data(), m, n, k);
    auto an = a.node(), bn = b.node();
    return detail::make_op<T>(
        {a.rows(), b.rows()}, std::move(out), {an, bn},
        [an, bn, m, k, n](TensorNode<T>& self) {
            if (an->requires_grad) {
                an->ensure_grad();
                kernels::gemm_nn(an->grad.data(), self.grad.data(), bn->value.data(), m, n, k);
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                kernels::gemm_tn(bn->grad.data(), self.grad.data(), an->value.data(), m, n, k);
            }
        },
        "matmul_nt");
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape(a, b, "add");
    std::vector<T> out(a.numel());
    kernels::add(out.data(), a.data().data(), b.data().data(), out.size());
    auto an = a.node(), bn = b.node();
    return detail::make_op<T>(
        a.shape(), std::move(out), {an, bn},
        [an, bn](TensorNode<T>& self) {
            if (an->requires_grad) {
                an->ensure_grad();
                kernels::axpy(an->grad.data(), T(1), self.grad.data(), self.grad.size());
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                kernels::axpy(bn->grad.data(), T(1), self.grad.data(), self.grad.size());
            }
        },
        "add");
}

// x:[m x n] + bias:[n] broadcast over rows.
template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias) {
    detail::require_rank2(x, "add_bias");
    if (bias.rank() != 1 || bias.numel() != x.cols()) throw TensorError("add_bias: bias length must equal column count");
    const std::size_t m = x.rows(), n = x.cols();
    std::vector<T> out(m * n);
    for (std::size_t i = 0; i < m; ++i) {
        kernels::add(out.data() + i * n, x.data().data() + i * n, bias.data().data(), n);
    }
    auto xn = x.node(), bn = bias.node();
    return detail::make_op<T>(
        x.shape(), std::move(out), {xn, bn},
        [xn, bn, m, n](TensorNode<T>& self) {
            if (xn->requires_grad) {
                xn->ensure_grad();
                kernels::axpy(xn->grad.data(), T(1), self.grad.data(), self.grad.size());
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (std::size_t i = 0; i < m; ++i) {
                    kernels::add(bn->grad.data(), bn->grad.data(), self.grad.data() + i * n, n);
                }
            }
        },
        "add_bias");
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape(a, b, "mul");
    std::vector<T> out(a.numel());
    kernels::mul(out.data(), a.data().data(), b.data().data(), out.size());
    auto an = a.node(), bn = b.node();
    return detail::make_op<T>(
        a.shape(), std::move(out), {an, bn},
        [an, bn](TensorNode<T>& self) {
            const std::size_t n = self.grad.size();
            if (an->requires_grad) {
                an->ensure_grad();
                for (std::size_t i = 0; i < n; ++i) an->grad[i] += self.grad[i] * bn->value[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (std::size_t i = 0; i < n; ++i) bn->grad[i] += self.grad[i] * an->value[i];
            }
        },
        "mul");
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c) {
    std::vector<T> out(a.data().begin(), a.data().end());
    kernels::scale(out.data(), c, out.size());
    auto an = a.node();
    return detail::make_op<T>(
        a.shape(), std::move(out), {an},
        [an, c](TensorNode<T>& self) {
            if (an->requires_grad) {
                an->ensure_grad();
                kernels::axpy(an->grad.data(), c, self.grad.data(), self.grad.size());
            }
        },
        "scale");
}

// Exact GELU: x * Phi(x) with Phi the standard normal CDF.
template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
    const std::size_t n = a.numel();
    std::vector<T> out(n);
    const T inv_sqrt2 = T(0.7071067811865475244);
    for (std::size_t i = 0; i < n; ++i) {
        const T x = a.data()[i];
        out[i] = T(0.5) * x * (T(1) + std::erf(x * inv_sqrt2));
    }
    auto an = a.node();
    return detail::make_op<T>(
        a.shape(), std::move(out), {an},
        [an, inv_sqrt2](TensorNode<T>& self) {
            if (!an->requires_grad) return;
            an->ensure_grad();
            const T inv_sqrt2pi = T(0.3989422804014326779);
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                const T x = an->value[i];
                const T cdf = T(0.5) * (T(1) + std::erf(x * inv_sqrt2));
                const T pdf = inv_sqrt2pi * std::exp(T(-0.5) * x * x);
                an->grad[i] += self.grad[i] * (cdf + x * pdf);
            }
        },
        "gelu");
}

// Row-wise layer normalization with affine parameters gamma/beta of length n.
// Variance is the biased (1/n) estimate; eps keeps constant rows finite and
// maps them to beta exactly.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps = T(1e-5)) {
    detail::require_rank2(x, "layer_norm");
    const std::size_t m = x.rows(), n = x.cols();
    if (gamma.numel() != static_cast<std::int64_t>(n) || beta.numel() != static_cast<std::int64_t>(n))
        throw TensorError("layer_norm: gamma/beta length must equal column count");
    std::vector<T> out(m * n);
    auto xhat = std::make_shared<std::vector<T>>(m * n);
    auto inv_sigma = std::make_shared<std::vector<T>>(m);
    for (std::size_t i = 0; i < m; ++i) {
        const T* row = x.data().data() + i * n;
        T mean = T(0);
        for (std::size_t j = 0; j < n; ++j) mean += row[j];
        mean /= T(n);
        T var = T(0);
        for (std::size_t j = 0; j < n; ++j) {
            const T d = row[j] - mean;
            var += d * d;
        }
        var /= T(n);
        const T is = T(1) / std::sqrt(var + eps);
        (*inv_sigma)[i] = is;
        for (std::size_t j = 0; j < n; ++j) {
            const T xh = (row[j] - mean) * is;
            (*xhat)[i * n + j] = xh;
            out[i * n + j] = xh * gamma.data()[j] + beta.data()[j];
        }
    }
    auto xn = x.node(), gn = gamma.node(), bn = beta.node();
    return detail::make_op<T>(
        x.shape(), std::move(out), {xn, gn, bn},
        [xn, gn, bn, xhat, inv_sigma, m, n](TensorNode<T>& self) {
            for (std::size_t i = 0; i < m; ++i) {
                const T* g = self.grad.data() + i * n;
                const T* xh = xhat->data() + i * n;
                if (gn->requires_grad) {
                    gn->ensure_grad();
                    for (std::size_t j = 0; j < n; ++j) gn->grad[j] += g[j] * xh[j];
                }
                if (bn->requires_grad) {
                    bn->ensure_grad();
                    for (std::size_t j = 0; j < n; ++j) bn->grad[j] += g[j];
                }
                if (xn->requires_grad) {
                    xn->ensure_grad();
                    // dy[j] = g[j]*gamma[j]; dx = (dy - mean(dy) - xhat*mean(dy*xhat)) * inv_sigma
                    T mean_dy = T(0), mean_dyxh = T(0);
                    for (std::size_t j = 0; j < n; ++j) {
                        const T dy = g[j] * gn->value[j];
                        mean_dy += dy;
                        mean_dyxh += dy * xh[j];
                    }
                    mean_dy /= T(n);
                    mean_dyxh /= T(n);
                    const T is = (*inv_sigma)[i];
                    for (std::size_t j = 0; j < n; ++j) {
                        const T dy = g[j] * gn->value[j];
                        xn->grad[i * n + j] += (dy - mean_dy - xh[j] * mean_dyxh) * is;
                    }
                }
            }
        },
        "layer_norm");
}

// Gather rows of table by id; backward scatter-adds into the table.
template <typename T>
Tensor<T> embedding(const Tensor<T>& table, const std::vector<std::int32_t>& ids) {
    detail::require_rank2(table, "embedding");
    const std::size_t d = table.cols();
    const std::int32_t v = static_cast<std::int32_t>(table.rows());
    std::vector<T> out(ids.size() * d);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= v) throw TensorError("embedding: id out of range");
        std::copy_n(table.data().data() + static_cast<std::size_t>(ids[i]) * d, d, out.data() + i * d);
    }
    auto tn = table.node();
    auto ids_copy = std::make_shared<std::vector<std::int32_t>>(ids);
    return detail::make_op<T>(
        {static_cast<std::int64_t>(ids.size()), static_cast<std::int64_t>(d)}, std::move(out), {tn},
        [tn, ids_copy, d](TensorNode<T>& self) {
            if (!tn->requires_grad) return;
            tn->ensure_grad();
            for (std::size_t i = 0; i < ids_copy->size(); ++i) {
                kernels::add(tn->grad.data() + static_cast<std::size_t>((*ids_copy)[i]) * d,
                             tn->grad.data() + static_cast<std::size_t>((*ids_copy)[i]) * d,
                             self.grad.data() + i * d, d);
            }
        },
        "embedding");
}

// Row-wise softmax over kept positions; excluded positions get exactly zero
// probability and pass no gradient. The mask has either m*n entries or n
// entries broadcast to every row (nonzero byte = keep).
template <typename T>
Tensor<T> masked_softmax(const Tensor<T>& x, const std::vector<std::uint8_t>& mask) {
    detail::require_rank2(x, "masked_softmax");
    const std::size_t m = x.rows(), n = x.cols();
    const bool broadcast = mask.size() == n;
    if (!broadcast && mask.size() != m * n)
        throw TensorError("masked_softmax: mask must have n or m*n entries");
    std::vector<T> out(m * n, T(0));
    for (std::size_t i = 0; i < m; ++i) {
        const std::uint8_t* mrow = broadcast ? mask.data() : mask.data() + i * n;
        const T* row = x.data().data() + i * n;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < n; ++j) {
            if (mrow[j] && row[j] > mx) mx = row[j];
        }
        if (mx == -std::numeric_limits<T>::infinity())
            throw TensorError("masked_softmax: row has no kept positions");
        T z = T(0);
        for (std::size_t j = 0; j < n; ++j) {
            if (mrow[j]) {
                const T e = std::exp(row[j] - mx);
                out[i * n + j] = e;
                z += e;
            }
        }
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= z;
    }
    auto xn = x.node();
    auto mask_copy = std::make_shared<std::vector<std::uint8_t>>(mask);
    auto probs = std::make_shared<std::vector<T>>(out);
    return detail::make_op<T>(
        x.shape(), std::move(out), {xn},
        [xn, mask_copy, probs, m, n, broadcast](TensorNode<T>& self) {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            for (std::size_t i = 0; i < m; ++i) {
                const std::uint8_t* mrow = broadcast ? mask_copy->data() : mask_copy->data() + i * n;
                const T* p = probs->data() + i * n;
                const T* g = self.grad.data() + i * n;
                T s = T(0);
                for (std::size_t j = 0; j < n; ++j) {
                    if (mrow[j]) s += p[j] * g[j];
                }
                for (std::size_t j = 0; j < n; ++j) {
                    if (mrow[j]) xn->grad[i * n + j] += p[j] * (g[j] - s);
                }
            }
        },
        "masked_softmax");
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x) {
    return masked_softmax(x, std::vector<std::uint8_t>(x.cols(), 1));
}

template <typename T>
Tensor<T> log(const Tensor<T>& x) {
    std::vector<T> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(x.data()[i]);
    auto xn = x.node();
    return detail::make_op<T>(
        x.shape(), std::move(out), {xn},
        [xn](TensorNode<T>& self) {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += self.grad[i] / xn->value[i];
        },
        "log");
}

template <typename T>
Tensor<T> concat_rows(std::span<const Tensor<T>> parts) {
    if (parts.empty()) throw TensorError("concat_rows: no inputs");
    const std::int64_t n = parts[0].cols();
    std::int64_t m = 0;
    std::vector<std::shared_ptr<TensorNode<T>>> parents;
    for (const auto& p : parts) {
        detail::require_rank2(p, "concat_rows");
        if (p.cols() != n) throw TensorError("concat_rows: column counts differ");
        m += p.rows();
        parents.push_back(p.node());
    }
    std::vector<T> out;
    out.reserve(m * n);
    for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
    auto parents_copy = parents;
    return detail::make_op<T>(
        {m, n}, std::move(out), std::move(parents),
        [parents_copy](TensorNode<T>& self) {
            std::size_t off = 0;
            for (const auto& p : parents_copy) {
                const std::size_t len = p->value.size();
                if (p->requires_grad) {
                    p->ensure_grad();
                    kernels::axpy(p->grad.data(), T(1), self.grad.data() + off, len);
                }
                off += len;
            }
        },
        "concat_rows");
}

template <typename T>
Tensor<T> concat_rows(std::initializer_list<Tensor<T>> parts) {
    std::vector<Tensor<T>> v(parts);
    return concat_rows(std::span<const Tensor<T>>(v));
}

template <typename T>
Tensor<T> concat_cols(std::span<const Tensor<T>> parts) {
    if (parts.empty()) throw TensorError("concat_cols: no inputs");
    const std::int64_t m = parts[0].rows();
    std::int64_t n = 0;
    std::vector<std::shared_ptr<TensorNode<T>>> parents;
    std::vector<std::int64_t> widths;
    for (const auto& p : parts) {
        detail::require_rank2(p, "concat_cols");
        if (p.rows() != m) throw TensorError("concat_cols: row counts differ");
        n += p.cols();
        widths.push_back(p.cols());
        parents.push_back(p.node());
    }
    std::vector<T> out(m * n);
    std::int64_t coff = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const std::int64_t w = widths[k];
        for (std::int64_t i = 0; i < m; ++i) {
            std::copy_n(parts[k].data().data() + i * w, w, out.data() + i * n + coff);
        }
        coff += w;
    }
    auto parents_copy = parents;
    auto widths_copy = std::make_shared<std::vector<std::int64_t>>(widths);
    return detail::make_op<T>(
        {m, n}, std::move(out), std::move(parents),
        [parents_copy, widths_copy, m, n](TensorNode<T>& self) {
            std::int64_t coff = 0;
            for (std::size_t k = 0; k < parents_copy.size(); ++k) {
                const std::int64_t w = (*widths_copy)[k];
                const auto& p = parents_copy[k];
                if (p->requires_grad) {
                    p->ensure_grad();
                    for (std::int64_t i = 0; i < m; ++i) {
                        kernels::add(p->grad.data() + i * w, p->grad.data() + i * w,
                                     self.grad.data() + i * n + coff, w);
                    }
                }
                coff += w;
            }
        },
        "concat_cols");
}

template <typename T>
Tensor<T> concat_cols(std::initializer_list<Tensor<T>> parts) {
    std::vector<Tensor<T>> v(parts);
    return concat_cols(std::span<const Tensor<T>>(v));
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, std::int64_t r0, std::int64_t r1) {
    detail::require_rank2(x, "slice_rows");
    if (r0 < 0 || r1 > x.rows() || r0 >= r1) throw TensorError("slice_rows: bad range");
    const std::size_t n = x.cols();
    std::vector<T> out(x.data().begin() + r0 * n, x.data().begin() + r1 * n);
    auto xn = x.node();
    return detail::make_op<T>(
        {r1 - r0, x.cols()}, std::move(out), {xn},
        [xn, r0, n](TensorNode<T>& self) {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            kernels::axpy(xn->grad.data() + static_cast<std::size_t>(r0) * n, T(1), self.grad.data(),
                          self.grad.size());
        },
        "slice_rows");
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, std::int64_t c0, std::int64_t c1) {
    detail::require_rank2(x, "slice_cols");
    if (c0 < 0 || c1 > x.cols() || c0 >= c1) throw TensorError("slice_cols: bad range");
    const std::size_t m = x.rows(), n = x.cols(), w = c1 - c0;
    std::vector<T> out(m * w);
    for (std::size_t i = 0; i < m; ++i) {
        std::copy_n(x.data().data() + i * n + c0, w, out.data() + i * w);
    }
    auto xn = x.node();
    return detail::make_op<T>(
        {x.rows(), c1 - c0}, std::move(out), {xn},
        [xn, c0, m, n, w](TensorNode<T>& self) {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            for (std::size_t i = 0; i < m; ++i) {
                kernels::add(xn->grad.data() + i * n + c0, xn->grad.data() + i * n + c0,
                             self.grad.data() + i * w, w);
            }
        },
        "slice_cols");
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
    T s = T(0);
    for (T v : x.data()) s += v;
    auto xn = x.node();
    return detail::make_op<T>(
        {1}, {s}, {xn},
        [xn](TensorNode<T>& self) {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            const T g = self.grad[0];
            for (auto& v : xn->grad) v += g;
        },
        "sum");
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
    return scale(sum(x), T(1) / T(x.numel()));
}

// y[i] = sum over j in groups[i] of x[i, j]; used to pool the probability
// mass of one surface token spread across several vocabulary slots.
template <typename T>
Tensor<T> gather_cols_sum(const Tensor<T>& x, const std::vector<std::vector<std::int32_t>>& groups) {
    detail::require_rank2(x, "gather_cols_sum");
    const std::size_t m = x.rows(), n = x.cols();
    if (groups.size() != m) throw TensorError("gather_cols_sum: one group per row required");
    std::vector<T> out(m, T(0));
    for (std::size_t i = 0; i < m; ++i) {
        if (groups[i].empty()) throw TensorError("gather_cols_sum: empty group");
        for (std::int32_t j : groups[i]) {
            if (j < 0 || static_cast<std::size_t>(j) >= n) throw TensorError("gather_cols_sum: column out of range");
            out[i] += x.data()[i * n + static_cast<std::size_t>(j)];
        }
    }
    auto xn = x.node();
    auto groups_copy = std::make_shared<std::vector<std::vector<std::int32_t>>>(groups);
    return detail::make_op<T>(
        {static_cast<std::int64_t>(m)}, std::move(out), {xn},
        [xn, groups_copy, n](TensorNode<T>& self) {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            for (std::size_t i = 0; i < groups_copy->size(); ++i) {
                for (std::int32_t j : (*groups_copy)[i]) {
                    xn->grad[i * n + static_cast<std::size_t>(j)] += self.grad[i];
                }
            }
        },
        "gather_cols_sum");
}

// Elementwise sum of same-shaped tensors (batch loss assembly).
template <typename T>
Tensor<T> sum_of(std::span<const Tensor<T>> parts) {
    if (parts.empty()) throw TensorError("sum_of: no inputs");
    std::vector<std::shared_ptr<TensorNode<T>>> parents;
    std::vector<T> out(parts[0].numel(), T(0));
    for (const auto& p : parts) {
        detail::require_same_shape(parts[0], p, "sum_of");
        kernels::add(out.data(), out.data(), p.data().data(), out.size());
        parents.push_back(p.node());
    }
    auto parents_copy = parents;
    return detail::make_op<T>(
        parts[0].shape(), std::move(out), std::move(parents),
        [parents_copy](TensorNode<T>& self) {
            for (const auto& p : parents_copy) {
                if (p->requires_grad) {
                    p->ensure_grad();
                    kernels::axpy(p->grad.data(), T(1), self.grad.data(), self.grad.size());
                }
            }
        },
        "sum_of");
}

template <typename T>
Tensor<T> sum_of(std::initializer_list<Tensor<T>> parts) {
    std::vector<Tensor<T>> v(parts);
    return sum_of(std::span<const Tensor<T>>(v));
}

// Inverted dropout; identity when rate == 0 or rng == nullptr (eval mode).
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, std::mt19937_64* rng) {
    if (rate <= 0.0 || rng == nullptr) return x;
    if (rate >= 1.0) throw TensorError("dropout: rate must be < 1");
    const T keep_scale = T(1.0 / (1.0 - rate));
    auto mask = std::make_shared<std::vector<T>>(x.numel());
    std::vector<T> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const T m = uniform01(*rng) < rate ? T(0) : keep_scale;
        (*mask)[i] = m;
        out[i] = x.data()[i] * m;
    }
    auto xn = x.node();
    return detail::make_op<T>(
        x.shape(), std::move(out), {xn},
        [xn, mask](TensorNode<T>& self) {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += self.grad[i] * (*mask)[i];
        },
        "dropout");
}

// ---------------------------------------------------------------------------
// reverse pass

// Populates grads of every requires_grad ancestor of loss. Grads accumulate:
// calling twice without zeroing doubles them.
template <typename T>
void backward(const Tensor<T>& loss) {
    if (loss.numel() != 1) throw TensorError("backward: loss must be scalar");
    auto root = loss.node();
    if (!root->requires_grad)
        throw TensorError("backward: loss does not depend on any parameter");

    // iterative post-order topological sort over the requires_grad subgraph
    std::vector<TensorNode<T>*> order;
    std::unordered_set<TensorNode<T>*> visited;
    std::vector<std::pair<TensorNode<T>*, std::size_t>> stack;
    stack.emplace_back(root.get(), 0);
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            TensorNode<T>* p = node->parents[idx++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root->ensure_grad();
    root->grad[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorNode<T>* n = *it;
        if (n->backward_fn) {
            n->ensure_grad();
            n->backward_fn(*n);
        }
    }
}

}  // namespace goalcap
