// ADAM with the inverse-sqrt learning-rate schedule: linear warmup to base_lr
// over warmup_steps, then base_lr * sqrt(warmup/effective), continuous at the
// boundary. `offset` shifts the effective step so a fine-tuning phase can
// resume deep in the decay region without re-entering warmup.
#pragma once

#include "goalcap/kernels.hpp"
#include "goalcap/tensor.hpp"

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace goalcap {

class OptimError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct AdamConfig {
    double base_lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.98;
    double eps = 1e-8;
    std::int64_t warmup_steps = 2000;
};

struct ScheduleState {
    std::int64_t step = 0;    // advanced once per minibatch, before the update
    std::int64_t offset = 0;  // 0 for the first phase; phase boundary shift later
    std::int64_t effective() const { return step + offset; }
};

inline double scheduled_lr(const AdamConfig& cfg, std::int64_t effective) {
    if (effective < 1) effective = 1;
    const double w = cfg.warmup_steps > 0 ? static_cast<double>(cfg.warmup_steps) : 1.0;
    const double e = static_cast<double>(effective);
    if (e <= w) return cfg.base_lr * e / w;
    return cfg.base_lr * std::sqrt(w / e);
}

template <typename T>
class Adam {
public:
    Adam(AdamConfig cfg, std::vector<Tensor<T>> params) : cfg_(cfg), params_(std::move(params)) {
        if (!(0 < cfg_.beta1 && cfg_.beta1 < cfg_.beta2 && cfg_.beta2 < 1))
            throw OptimError("adam: requires 0 < beta1 < beta2 < 1");
        if (cfg_.warmup_steps < 0) throw OptimError("adam: warmup_steps must be >= 0");
        m_.reserve(params_.size());
        v_.reserve(params_.size());
        for (const auto& p : params_) {
            m_.emplace_back(p.numel(), T(0));
            v_.emplace_back(p.numel(), T(0));
        }
    }

    // One update from the grads currently stored on the parameters. The whole
    // step is rejected (state untouched) if any gradient is non-finite.
    void step() {
        for (std::size_t i = 0; i < params_.size(); ++i) {
            for (T g : params_[i].grad()) {
                if (!std::isfinite(g))
                    throw OptimError("adam: non-finite gradient in parameter " + std::to_string(i));
            }
        }
        sched_.step += 1;
        updates_ += 1;
        const double lr = scheduled_lr(cfg_, sched_.effective());
        const T bc1 = T(1.0 / (1.0 - std::pow(cfg_.beta1, static_cast<double>(updates_))));
        const T bc2 = T(1.0 / (1.0 - std::pow(cfg_.beta2, static_cast<double>(updates_))));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto& p = params_[i];
            if (p.grad().empty()) p.grad_mut();  // untouched parameter: zero grad, moments decay
            kernels::adam_update(p.data().data(), m_[i].data(), v_[i].data(), p.grad().data(),
                                 p.numel(), T(lr), T(cfg_.beta1), T(cfg_.beta2), T(cfg_.eps), bc1, bc2);
        }
    }

    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }

    double current_lr() const { return scheduled_lr(cfg_, sched_.effective()); }

    const AdamConfig& config() const { return cfg_; }
    ScheduleState& schedule() { return sched_; }
    const ScheduleState& schedule() const { return sched_; }
    std::vector<Tensor<T>>& params() { return params_; }
    std::vector<std::vector<T>>& moment1() { return m_; }
    std::vector<std::vector<T>>& moment2() { return v_; }
    std::int64_t& update_count() { return updates_; }
    std::int64_t update_count() const { return updates_; }

private:
    AdamConfig cfg_;
    std::vector<Tensor<T>> params_;
    std::vector<std::vector<T>> m_, v_;
    ScheduleState sched_;
    std::int64_t updates_ = 0;  // bias-correction exponent
};

}  // namespace goalcap
