#include "slidealign/optimizer.hpp"

#include <cmath>

namespace sa {

Adam::Adam(std::vector<Parameter*> params, AdamConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const Parameter* p : params_) {
        m_.emplace_back(p->value.shape());
        v_.emplace_back(p->value.shape());
    }
}

void Adam::step(double lr) {
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (size_t i = 0; i < params_.size(); ++i) {
        Parameter& p = *params_[i];
        require(p.grad.all_finite(), ErrKind::numeric, "non-finite gradient for " + p.name);
        Tensor& m = m_[i];
        Tensor& v = v_[i];
        for (int64_t k = 0; k < p.value.numel(); ++k) {
            const double g = p.grad[k];
            m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * g;
            v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * g * g;
            const double mhat = m[k] / bc1;
            const double vhat = v[k] / bc2;
            p.value[k] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }
}

double CyclicLr::at(int64_t step) const {
    require(base_lr > 0.0 && base_lr <= max_lr, ErrKind::config,
            "cyclic lr requires 0 < base_lr <= max_lr");
    require(cycle_len_steps >= 1, ErrKind::config, "cyclic lr cycle length must be >= 1");
    require(step >= 0, ErrKind::contract, "cyclic lr step must be >= 0");
    const int64_t phase = step % cycle_len_steps;
    const double pos = 2.0 * static_cast<double>(phase) / static_cast<double>(cycle_len_steps);
    const double tri = pos <= 1.0 ? pos : 2.0 - pos;
    return base_lr + (max_lr - base_lr) * tri;
}

}  // namespace sa
