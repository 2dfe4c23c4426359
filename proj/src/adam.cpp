#include "lmforge/adam.hpp"

#include <cmath>

#include "lmforge/kernels.hpp"

namespace lmforge {

AdamState::AdamState(std::vector<std::shared_ptr<Tensor>> params, AdamConfig config)
    : params_(std::move(params)), config_(config) {
    if (config_.lr < 0.0f) throw UsageError("learning rate must be non-negative");
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto& p : params_) {
        if (!p) throw UsageError("null parameter tensor");
        m_.emplace_back(p->shape, 0.0f);
        v_.emplace_back(p->shape, 0.0f);
    }
}

void AdamState::step(const std::vector<const Tensor*>& grads, float lr_override) {
    if (grads.size() != params_.size())
        throw DimensionError("gradient list does not match parameter list");
    for (size_t i = 0; i < params_.size(); ++i) {
        if (grads[i] && !grads[i]->same_shape(*params_[i]))
            throw DimensionError("gradient shape does not match parameter shape");
    }
    ++step_;
    const float lr = lr_override >= 0.0f ? lr_override : config_.lr;
    const double t = static_cast<double>(step_);
    const float bc1 =
        static_cast<float>(1.0 / (1.0 - std::pow(static_cast<double>(config_.beta1), t)));
    const float bc2 =
        static_cast<float>(1.0 / (1.0 - std::pow(static_cast<double>(config_.beta2), t)));
    for (size_t i = 0; i < params_.size(); ++i) {
        Tensor& p = *params_[i];
        const int64_t n = p.numel();
        Tensor zero;
        const float* g;
        if (grads[i]) {
            g = grads[i]->data.data();
        } else {
            zero = Tensor(p.shape, 0.0f);
            g = zero.data.data();
        }
        kernels::adam_update(p.data.data(), g, m_[i].data.data(), v_[i].data.data(), n,
                             lr, config_.beta1, config_.beta2, config_.eps, bc1, bc2);
    }
}

int64_t AdamState::scalar_count() const {
    int64_t total = 0;
    for (const auto& p : params_) total += p->numel();
    return total;
}

}  // namespace lmforge
