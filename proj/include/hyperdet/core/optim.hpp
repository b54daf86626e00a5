#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "hyperdet/core/autodiff.hpp"
#include "hyperdet/core/error.hpp"

namespace hyperdet {

// Adaptive-moment optimizer. No weight decay; bias-corrected moments.
class Adam {
public:
    explicit Adam(std::vector<Parameter*> params, double lr,
                  double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
        m_.reserve(params_.size());
        v_.reserve(params_.size());
        for (auto* p : params_) {
            m_.push_back(Tensor::zeros(p->value.shape()));
            v_.push_back(Tensor::zeros(p->value.shape()));
        }
    }

    double lr() const { return lr_; }
    void set_lr(double lr) { lr_ = lr; }
    std::int64_t steps() const { return t_; }

    void zero_grad() {
        for (auto* p : params_)
            if (p->grad.defined()) p->grad.fill(0.0);
    }

    // One update from the accumulated gradients; grads scaled by `grad_scale`
    // first (used to turn summed per-sample gradients into a batch mean).
    void step(double grad_scale = 1.0) {
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, double(t_));
        const double bc2 = 1.0 - std::pow(beta2_, double(t_));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            Parameter& p = *params_[i];
            if (!p.grad.defined()) continue;
            double* w = p.value.data();
            const double* g = p.grad.data();
            double* m = m_[i].data();
            double* v = v_[i].data();
            for (std::size_t j = 0, n = p.value.size(); j < n; ++j) {
                const double gj = g[j] * grad_scale;
                m[j] = beta1_ * m[j] + (1.0 - beta1_) * gj;
                v[j] = beta2_ * v[j] + (1.0 - beta2_) * gj * gj;
                const double mhat = m[j] / bc1;
                const double vhat = v[j] / bc2;
                w[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
            }
        }
    }

    double grad_norm(double grad_scale = 1.0) const {
        double s = 0.0;
        for (auto* p : params_) {
            if (!p->grad.defined()) continue;
            for (std::size_t j = 0, n = p->grad.size(); j < n; ++j) {
                const double g = p->grad[j] * grad_scale;
                s += g * g;
            }
        }
        return std::sqrt(s);
    }

    const std::vector<Parameter*>& params() const { return params_; }
    std::vector<Tensor>& moment1() { return m_; }
    std::vector<Tensor>& moment2() { return v_; }
    void set_steps(std::int64_t t) { t_ = t; }

private:
    std::vector<Parameter*> params_;
    double lr_, beta1_, beta2_, eps_;
    std::int64_t t_ = 0;
    std::vector<Tensor> m_, v_;
};

}  // namespace hyperdet
