#pragma once

#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "lmforge/graph.hpp"
#include "lmforge/tensor.hpp"

namespace lmforge {

enum class ModelFlavor { kBert, kDistil, kRoberta };

const char* to_string(ModelFlavor flavor);
ModelFlavor model_flavor_from_string(const std::string& name);

struct ModelConfig {
    ModelFlavor flavor = ModelFlavor::kBert;
    int64_t vocab_size = 0;
    int64_t hidden_size = 768;
    int64_t num_layers = 12;
    int64_t num_heads = 12;
    int64_t feedforward_size = 3072;
    int64_t max_positions = 512;
    int64_t num_segment_types = 2;  // 0 for the distil and roberta flavors
    bool cased = true;
    bool tie_mlm_head = true;

    bool has_nsp() const { return flavor == ModelFlavor::kBert; }
    bool uses_segments() const { return num_segment_types > 0; }
    void validate() const;
};

// Named parameter tensors in manifest order. A tied MLM decoder reuses the
// token-embedding storage and does not appear in the table.
struct ModelParameters {
    std::vector<std::pair<std::string, std::shared_ptr<Tensor>>> tensors;

    const std::shared_ptr<Tensor>& find(const std::string& name) const;
    bool has(const std::string& name) const;
    std::vector<std::shared_ptr<Tensor>> storage() const;
    int64_t scalar_count() const;
    ModelParameters clone() const;
};

// Truncated-normal init (sigma 0.02, clipped at 2 sigma) for weights and
// embeddings, zeros for biases, ones for layer-norm gains. Deterministic
// under the seed.
ModelParameters new_model(const ModelConfig& config, uint64_t seed);

// Exact trainable scalar count from the configuration alone.
int64_t param_count(const ModelConfig& config);

struct ForwardInput {
    TokenMatrix token_ids;
    TokenMatrix attention_mask;
    std::optional<TokenMatrix> segment_ids;
};

struct ForwardVars {
    Var hidden;      // [batch, seq, hidden]
    Var mlm_logits;  // [batch, seq, vocab]
    Var nsp_logits;  // [batch, 2]; invalid when the flavor has no NSP head
    std::vector<Var> attention_probs;  // per layer, [batch, heads, seq, seq]
};

struct ForwardOutput {
    Tensor hidden;
    Tensor mlm_logits;
    std::optional<Tensor> nsp_logits;
};

ForwardVars forward_on_graph(Graph& graph, const ModelParameters& params,
                             const ModelConfig& config, const ForwardInput& input);
ForwardOutput forward(const ModelParameters& params, const ModelConfig& config,
                      const ForwardInput& input);

// Checkpoint directory layout: manifest.json (config + tensor table with
// byte offsets + tokenizer file names), weights.bin (row-major little-endian
// float32 in manifest order), plus copies of the tokenizer files.
void save_checkpoint(const ModelParameters& params, const ModelConfig& config,
                     const std::vector<std::string>& tokenizer_files,
                     const std::string& dir);
std::pair<ModelParameters, ModelConfig> load_checkpoint(const std::string& dir);

// Fresh token embeddings (and MLM bias) for a new vocabulary; every
// transformer-body tensor is carried over bit-exactly.
std::pair<ModelParameters, ModelConfig> replace_embeddings_for_new_tokenizer(
    const ModelParameters& params, const ModelConfig& config, int64_t new_vocab_size,
    uint64_t seed);

}  // namespace lmforge
