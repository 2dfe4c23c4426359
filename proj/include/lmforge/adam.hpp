#pragma once

#include <memory>
#include <vector>

#include "lmforge/tensor.hpp"

namespace lmforge {

struct AdamConfig {
    float lr = 1e-4f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
};

// Adam with bias correction over a fixed list of parameter tensors. Moment
// buffers are allocated per parameter at construction; step() applies one
// update from a gradient list aligned with the parameter list (null entries
// mean zero gradient).
class AdamState {
public:
    AdamState(std::vector<std::shared_ptr<Tensor>> params, AdamConfig config);

    // lr_override < 0 means "use the configured learning rate"; schedules
    // pass the per-step rate here.
    void step(const std::vector<const Tensor*>& grads, float lr_override = -1.0f);

    int64_t step_count() const { return step_; }
    const AdamConfig& config() const { return config_; }
    // Number of scalars touched by one step (tied tensors counted once).
    int64_t scalar_count() const;
    size_t param_count() const { return params_.size(); }

private:
    std::vector<std::shared_ptr<Tensor>> params_;
    std::vector<Tensor> m_;
    std::vector<Tensor> v_;
    AdamConfig config_;
    int64_t step_ = 0;
};

}  // namespace lmforge
