#pragma once

#include <cmath>
#include <vector>

#include "imlsp/autodiff.hpp"
#include "imlsp/error.hpp"
#include "imlsp/tensor.hpp"

namespace imlsp {

struct AdamWConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 0.01;
};

// One AdamW update on a single tensor with bias-corrected moments and
// decoupled weight decay: p <- p - lr * m_hat / (sqrt(v_hat) + eps)
//                              - lr * wd * p.
inline void adamw_update(Tensor& value, const Tensor& grad, Tensor& m, Tensor& v,
                         std::size_t t, const AdamWConfig& cfg) {
    if (!value.same_shape(grad) || !value.same_shape(m) || !value.same_shape(v))
        throw ShapeError("adamw_update: parameter/gradient/state shapes differ");
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < value.size(); ++i) {
        const double g = grad[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        const double m_hat = m[i] / bc1;
        const double v_hat = v[i] / bc2;
        value[i] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon) +
                    cfg.learning_rate * cfg.weight_decay * value[i];
    }
}

class AdamW {
public:
    AdamW(std::vector<Parameter*> params, AdamWConfig cfg)
        : params_(std::move(params)), cfg_(cfg) {
        for (const Parameter* p : params_) {
            m_.emplace_back(p->value.shape());
            v_.emplace_back(p->value.shape());
        }
    }

    // Applies one update from the gradients currently accumulated in the
    // parameters; does not reset them.
    void step() {
        ++t_;
        for (std::size_t i = 0; i < params_.size(); ++i)
            adamw_update(params_[i]->value, params_[i]->grad, m_[i], v_[i], t_, cfg_);
    }

    double learning_rate() const { return cfg_.learning_rate; }
    void set_learning_rate(double lr) { cfg_.learning_rate = lr; }
    std::size_t steps() const { return t_; }

private:
    std::vector<Parameter*> params_;
    AdamWConfig cfg_;
    std::vector<Tensor> m_, v_;
    std::size_t t_ = 0;
};

}  // namespace imlsp
