#pragma once

// Finite-difference validation of the full model backward pass, shared by
// the unit tests and the acceptance suite.
//
// The check perturbs one parameter tensor at a time along a random unit
// direction and compares the analytic directional derivative against a
// central difference of the (float32) loss. Initialization draws weights
// uniformly at a larger magnitude than the training init: with sigma-0.02
// weights many directional gradients sit below the float32 quantization
// noise of the loss and the comparison would measure rounding, not math.

#include <string>
#include <utility>
#include <vector>

#include "lmforge/graph.hpp"
#include "lmforge/model.hpp"
#include "lmforge/rng.hpp"
#include "test_util.hpp"

namespace testutil {

struct GradientSuiteResult {
    double max_rel_err = 0.0;
    std::vector<std::pair<std::string, double>> per_tensor;
};

// Each tensor is checked over a sweep of step sizes and the best-agreeing
// central difference counts: small steps drown weakly coupled tensors in the
// float32 rounding of the loss (the key-projection bias gradient is even
// mathematically zero, since a constant key shift cancels in softmax), large
// steps pick up curvature. A genuine backward bug stays wrong at every h.
inline GradientSuiteResult run_model_gradient_suite(lmforge::ModelConfig config,
                                                    uint64_t seed) {
    using namespace lmforge;
    // Unused position rows only dilute the directional signal.
    config.max_positions = 8;
    ModelParameters params = new_model(config, seed);
    Rng rng = Rng::with_stream(seed, 0xfd);
    for (auto& [name, tensor] : params.tensors) {
        const bool is_gain = name.find("norm.gain") != std::string::npos;
        for (float& v : tensor->data) {
            const float u = 0.6f * rng.next_float() - 0.3f;
            v = is_gain ? 1.0f + u : u;
        }
    }

    const int64_t batch = 2, seq = 6;
    ForwardInput input;
    input.token_ids = TokenMatrix(batch, seq);
    input.attention_mask = TokenMatrix(batch, seq, 1);
    for (auto& id : input.token_ids.data)
        id = static_cast<int32_t>(rng.uniform_int(5, config.vocab_size));
    input.attention_mask.at(1, seq - 1) = 0;
    if (config.uses_segments()) {
        input.segment_ids = TokenMatrix(batch, seq, 0);
        for (int64_t s = seq / 2; s < seq; ++s) input.segment_ids->at(0, s) = 1;
    }
    std::vector<int32_t> labels(static_cast<size_t>(batch * seq));
    for (auto& l : labels)
        l = static_cast<int32_t>(rng.uniform_int(5, config.vocab_size));
    std::vector<int32_t> nsp_labels = {0, 1};

    auto build = [&](Graph& g) {
        ForwardVars vars = forward_on_graph(g, params, config, input);
        Var loss = g.cross_entropy(
            g.reshape(vars.mlm_logits, {batch * seq, config.vocab_size}), labels);
        if (vars.nsp_logits.valid())
            loss = g.add(loss, g.cross_entropy(vars.nsp_logits, nsp_labels));
        return loss;
    };

    GradientSuiteResult result;
    for (const auto& [name, tensor] : params.tensors) {
        double best_rel = 1e30;
        for (int attempt = 0; attempt < 2 && best_rel >= 1e-2; ++attempt) {
            std::vector<double> dir(tensor->data.size());
            double norm = 0.0;
            for (double& v : dir) {
                v = rng.normal();
                norm += v * v;
            }
            norm = std::sqrt(norm);
            for (double& v : dir) v /= norm;

            Graph g;
            Graph::Var root = build(g);
            g.backward(root);
            const Tensor* grad = g.grad_for(tensor.get());
            double analytic = 0.0;
            if (grad)
                for (size_t i = 0; i < dir.size(); ++i)
                    analytic += grad->data[i] * dir[i];

            const std::vector<float> saved = tensor->data;
            for (const double h : {1e-2, 3e-2, 1e-1}) {
                for (size_t i = 0; i < dir.size(); ++i)
                    tensor->data[i] = static_cast<float>(saved[i] + h * dir[i]);
                const double lp = eval_loss(build);
                for (size_t i = 0; i < dir.size(); ++i)
                    tensor->data[i] = static_cast<float>(saved[i] - h * dir[i]);
                const double lm = eval_loss(build);
                tensor->data = saved;
                const double numeric = (lp - lm) / (2.0 * h);
                const double scale =
                    std::max({std::abs(analytic), std::abs(numeric), 1e-3});
                best_rel = std::min(best_rel, std::abs(analytic - numeric) / scale);
            }
        }
        result.per_tensor.push_back({name, best_rel});
        result.max_rel_err = std::max(result.max_rel_err, best_rel);
    }
    return result;
}

}  // namespace testutil
