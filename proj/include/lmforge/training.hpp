#pragma once

#include <optional>
#include <string>
#include <vector>

#include "lmforge/corpus.hpp"
#include "lmforge/model.hpp"
#include "lmforge/tokenizer.hpp"

namespace lmforge {

constexpr int32_t kIgnoreLabel = -1;

// Token selection and replacement fractions for the fill-in-the-blanks
// objective: each non-special token is selected with select_prob; selected
// tokens are masked, replaced by a random token, or kept.
struct MaskingPolicy {
    double select_prob = 0.15;
    double mask_frac = 0.8;
    double random_frac = 0.1;
    double keep_frac = 0.1;
    void validate() const;
};

struct TrainingBatch {
    TokenMatrix token_ids;
    TokenMatrix attention_mask;
    std::optional<TokenMatrix> segment_ids;
    TokenMatrix mlm_labels;  // kIgnoreLabel at unselected positions
    std::optional<std::vector<int32_t>> nsp_labels;  // 1 = continuation
};

// Encodes sentence pairs, truncates the longer side to fit max_seq, applies
// the masking policy to non-special positions, and pads to the batch's
// longest sequence. Deterministic under the seed.
TrainingBatch build_mlm_batch(const std::vector<SentencePair>& pairs,
                              const Tokenizer& tokenizer, const MaskingPolicy& policy,
                              int64_t max_seq, uint64_t seed, bool with_nsp,
                              bool with_segments);

ForwardInput input_from(const TrainingBatch& batch);

struct LossBreakdown {
    float mlm = 0.0f;
    float nsp = 0.0f;
    float total = 0.0f;  // always the computed sum mlm + nsp
};

// Mean cross-entropy over selected positions (plus the next-sentence term
// when present); evaluation-path twin of the in-graph training loss.
LossBreakdown mlm_nsp_loss(const ForwardOutput& output, const TrainingBatch& batch);

struct TrainSchedule {
    int64_t epochs = 1;
    int64_t batch_size = 16;
    double lr = 1e-4;
    double warmup_fraction = 0.1;  // linear warmup over this share of steps
    int64_t max_seq = 64;
    uint64_t seed = 0;
    double nsp_positive_fraction = 0.5;
    MaskingPolicy masking;
    std::string out_dir;  // when set: epoch-N/ checkpoints and report.tsv
};

struct EpochStats {
    double mlm = 0.0;
    double nsp = 0.0;
    double total = 0.0;
    double seconds = 0.0;
    int64_t steps = 0;
};

struct TrainReport {
    std::vector<EpochStats> epochs;
    double wall_seconds = 0.0;
    int64_t total_steps = 0;
    std::string final_checkpoint;
    double final_kl_to_teacher = 0.0;  // distillation runs only
    std::vector<float> step_losses;    // per-step totals, in order
};

TrainReport pretrain(const ModelConfig& config, const Corpus& corpus,
                     const Tokenizer& tokenizer, const TrainSchedule& schedule);

struct FinetuneOptions {
    std::optional<std::string> replace_tokenizer_dir;  // retrain-embeddings path
    int64_t epochs = 1;
    int64_t batch_size = 16;
    double lr = 5e-5;
    double warmup_fraction = 0.1;
    int64_t max_seq = 64;
    uint64_t seed = 0;
    double nsp_positive_fraction = 0.5;
    MaskingPolicy masking;
    std::string out_dir;
};

TrainReport finetune(const std::string& checkpoint_dir, const Corpus& corpus,
                     const FinetuneOptions& options);

struct DistillationConfig {
    double temperature = 2.0;
    double alpha_soft = 0.5;
    double alpha_mlm = 0.2;
    double alpha_cos = 0.3;
    ModelConfig student;
    void validate() const;
};

// alpha_soft * T^2 * KL(teacher || student) at selected positions
// + alpha_mlm * hard cross-entropy
// + alpha_cos * (1 - cosine) between final hidden states over non-pad
// positions. The teacher side carries no gradient.
float distillation_loss(const ForwardOutput& student_out,
                        const ForwardOutput& teacher_out, const TrainingBatch& batch,
                        const DistillationConfig& dconf);

TrainReport distill(const std::string& teacher_checkpoint_dir, const Corpus& corpus,
                    const DistillationConfig& dconf, const TrainSchedule& schedule);

// Mean temperature-softened KL from student to teacher over the selected
// positions of the given batches.
double mean_kl_to_teacher(const ModelParameters& student_params,
                          const ModelConfig& student_config,
                          const ModelParameters& teacher_params,
                          const ModelConfig& teacher_config,
                          const std::vector<TrainingBatch>& batches,
                          double temperature);

// Tokenizer algo the flavor trains with (wordpiece for bert/distil, bpe for
// roberta); mismatches are usage errors in the train entry points.
TokenizerAlgo expected_tokenizer_algo(ModelFlavor flavor);

}  // namespace lmforge
