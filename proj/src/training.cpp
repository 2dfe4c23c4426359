#include "lmforge/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <sstream>

#include "lmforge/adam.hpp"
#include "lmforge/rng.hpp"

namespace lmforge {

namespace {

double now_seconds() {
    return std::chrono::duration<double>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

uint64_t step_stream(uint64_t epoch, uint64_t step) {
    return 0x8000000 + epoch * 1000003 + step;
}

double row_log_softmax_at(const float* logits, int64_t n, int32_t label) {
    float mx = logits[0];
    for (int64_t i = 1; i < n; ++i) mx = std::max(mx, logits[i]);
    double lse = 0.0;
    for (int64_t i = 0; i < n; ++i)
        lse += std::exp(static_cast<double>(logits[i] - mx));
    return static_cast<double>(logits[label] - mx) - std::log(lse);
}

void tempered_softmax(const float* logits, int64_t n, double temperature,
                      std::vector<double>& out) {
    out.resize(static_cast<size_t>(n));
    double mx = -1e300;
    for (int64_t i = 0; i < n; ++i)
        mx = std::max(mx, static_cast<double>(logits[i]) / temperature);
    double denom = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        out[static_cast<size_t>(i)] =
            std::exp(static_cast<double>(logits[i]) / temperature - mx);
        denom += out[static_cast<size_t>(i)];
    }
    for (double& v : out) v /= denom;
}

}  // namespace

void MaskingPolicy::validate() const {
    if (!(select_prob > 0.0 && select_prob < 1.0) &&
        !(select_prob == 1.0))  // 1.0 allowed for the mask-everything case
        throw UsageError("select_prob must lie in (0, 1]");
    if (mask_frac < 0 || random_frac < 0 || keep_frac < 0)
        throw UsageError("masking fractions must be non-negative");
    if (std::abs(mask_frac + random_frac + keep_frac - 1.0) > 1e-9)
        throw UsageError("mask, random and keep fractions must sum to 1");
}

TokenizerAlgo expected_tokenizer_algo(ModelFlavor flavor) {
    return flavor == ModelFlavor::kRoberta ? TokenizerAlgo::kBpe
                                           : TokenizerAlgo::kWordPiece;
}

TrainingBatch build_mlm_batch(const std::vector<SentencePair>& pairs,
                              const Tokenizer& tokenizer, const MaskingPolicy& policy,
                              int64_t max_seq, uint64_t seed, bool with_nsp,
                              bool with_segments) {
    if (pairs.empty()) throw UsageError("cannot build a batch from zero pairs");
    if (max_seq < 4) throw UsageError("max_seq too small for a sentence pair");
    policy.validate();

    const int64_t vocab = tokenizer.vocab_size();
    Rng rng = Rng::with_stream(seed, 0xba7c);

    struct Row {
        std::vector<int32_t> ids;
        std::vector<int32_t> segments;
    };
    std::vector<Row> rows;
    rows.reserve(pairs.size());
    int64_t longest = 0;
    for (const auto& pair : pairs) {
        std::vector<int32_t> a = tokenizer.encode(pair.sentence_a, false).ids;
        std::vector<int32_t> b = tokenizer.encode(pair.sentence_b, false).ids;
        const int64_t budget = max_seq - 3;  // begin + two separators
        while (static_cast<int64_t>(a.size() + b.size()) > budget) {
            if (a.size() > b.size())
                a.pop_back();
            else
                b.pop_back();
        }
        Row row;
        row.ids.push_back(tokenizer.begin_id());
        row.segments.push_back(0);
        for (int32_t id : a) {
            row.ids.push_back(id);
            row.segments.push_back(0);
        }
        row.ids.push_back(tokenizer.end_id());
        row.segments.push_back(0);
        for (int32_t id : b) {
            row.ids.push_back(id);
            row.segments.push_back(1);
        }
        row.ids.push_back(tokenizer.end_id());
        row.segments.push_back(1);
        longest = std::max(longest, static_cast<int64_t>(row.ids.size()));
        rows.push_back(std::move(row));
    }

    const int64_t batch = static_cast<int64_t>(rows.size());
    TrainingBatch out;
    out.token_ids = TokenMatrix(batch, longest, tokenizer.pad_id());
    out.attention_mask = TokenMatrix(batch, longest, 0);
    out.mlm_labels = TokenMatrix(batch, longest, kIgnoreLabel);
    if (with_segments) out.segment_ids = TokenMatrix(batch, longest, 0);
    if (with_nsp) {
        out.nsp_labels = std::vector<int32_t>();
        for (const auto& pair : pairs)
            out.nsp_labels->push_back(pair.is_next ? 1 : 0);
    }

    for (int64_t r = 0; r < batch; ++r) {
        const Row& row = rows[static_cast<size_t>(r)];
        for (size_t s = 0; s < row.ids.size(); ++s) {
            const int64_t col = static_cast<int64_t>(s);
            int32_t id = row.ids[s];
            out.attention_mask.at(r, col) = 1;
            if (out.segment_ids) out.segment_ids->at(r, col) = row.segments[s];
            if (!tokenizer.is_special(id) && rng.bernoulli(policy.select_prob)) {
                out.mlm_labels.at(r, col) = id;
                const double roll = rng.next_double();
                if (roll < policy.mask_frac) {
                    id = tokenizer.mask_token_id();
                } else if (roll < policy.mask_frac + policy.random_frac) {
                    id = static_cast<int32_t>(rng.uniform_int(5, vocab));
                }  // else keep the original token
            }
            out.token_ids.at(r, col) = id;
        }
    }
    return out;
}

ForwardInput input_from(const TrainingBatch& batch) {
    ForwardInput in;
    in.token_ids = batch.token_ids;
    in.attention_mask = batch.attention_mask;
    in.segment_ids = batch.segment_ids;
    return in;
}

LossBreakdown mlm_nsp_loss(const ForwardOutput& output, const TrainingBatch& batch) {
    const auto& logits = output.mlm_logits;
    if (logits.rank() != 3) throw DimensionError("mlm logits must be [B, S, V]");
    const int64_t b = logits.shape[0], s = logits.shape[1], v = logits.shape[2];
    if (batch.mlm_labels.rows != b || batch.mlm_labels.cols != s)
        throw DimensionError("labels do not match logits");

    double mlm_sum = 0.0;
    int64_t selected = 0;
    for (int64_t i = 0; i < b * s; ++i) {
        const int32_t label = batch.mlm_labels.data[static_cast<size_t>(i)];
        if (label < 0) continue;
        if (label >= v) throw UsageError("label out of vocabulary range");
        mlm_sum -= row_log_softmax_at(logits.data.data() + i * v, v, label);
        ++selected;
    }
    if (selected == 0)
        throw UsageError("batch has no selected positions to score");

    LossBreakdown out;
    out.mlm = static_cast<float>(mlm_sum / static_cast<double>(selected));
    out.nsp = 0.0f;
    if (batch.nsp_labels && output.nsp_logits) {
        const auto& nsp = *output.nsp_logits;
        if (nsp.shape != std::vector<int64_t>{b, 2})
            throw DimensionError("nsp logits must be [B, 2]");
        double nsp_sum = 0.0;
        for (int64_t i = 0; i < b; ++i) {
            const int32_t label = (*batch.nsp_labels)[static_cast<size_t>(i)];
            if (label < 0 || label > 1) throw UsageError("nsp label must be 0 or 1");
            nsp_sum -= row_log_softmax_at(nsp.data.data() + i * 2, 2, label);
        }
        out.nsp = static_cast<float>(nsp_sum / static_cast<double>(b));
    }
    out.total = out.mlm + out.nsp;
    if (!std::isfinite(out.total)) throw Error("non-finite training loss");
    return out;
}

namespace {

struct StepLoss {
    float mlm = 0.0f;
    float nsp = 0.0f;
    float total = 0.0f;
};

// One forward/backward/update step on an MLM (+NSP) objective.
StepLoss train_step(ModelParameters& params, const ModelConfig& config,
                    AdamState& opt, const TrainingBatch& batch, float lr) {
    Graph g;
    ForwardVars vars = forward_on_graph(g, params, config, input_from(batch));
    const int64_t b = batch.token_ids.rows;
    const int64_t s = batch.token_ids.cols;
    std::vector<int32_t> flat_labels(batch.mlm_labels.data.begin(),
                                     batch.mlm_labels.data.end());
    Var mlm = g.cross_entropy(
        g.reshape(vars.mlm_logits, {b * s, config.vocab_size}), flat_labels);
    Var total = mlm;
    StepLoss loss;
    loss.mlm = g.value(mlm).data[0];
    if (batch.nsp_labels && vars.nsp_logits.valid()) {
        Var nsp = g.cross_entropy(vars.nsp_logits, *batch.nsp_labels);
        loss.nsp = g.value(nsp).data[0];
        total = g.add(mlm, nsp);
    }
    loss.total = loss.mlm + loss.nsp;
    if (!std::isfinite(loss.total)) throw Error("non-finite training loss");
    g.backward(total);

    std::vector<const Tensor*> grads;
    grads.reserve(params.tensors.size());
    for (const auto& [name, tensor] : params.tensors)
        grads.push_back(g.grad_for(tensor.get()));
    opt.step(grads, lr);
    return loss;
}

void write_report_tsv(const std::string& out_dir, const TrainReport& report) {
    std::ostringstream os;
    os << "epoch\tmlm_loss\tnsp_loss\ttotal_loss\tseconds\n";
    char line[256];
    for (size_t e = 0; e < report.epochs.size(); ++e) {
        const EpochStats& st = report.epochs[e];
        std::snprintf(line, sizeof(line), "%zu\t%.6f\t%.6f\t%.6f\t%.3f\n", e + 1,
                      st.mlm, st.nsp, st.total, st.seconds);
        os << line;
    }
    write_text_file(out_dir + "/report.tsv", os.str());
}

std::vector<std::string> persist_tokenizer(const Tokenizer& tokenizer,
                                           const std::string& out_dir) {
    const std::string tok_dir = out_dir + "/tokenizer";
    tokenizer.save(tok_dir);
    std::vector<std::string> files = {tok_dir + "/vocab.txt"};
    if (tokenizer.algo() == TokenizerAlgo::kBpe)
        files.push_back(tok_dir + "/merges.txt");
    return files;
}

// Shared pretrain/finetune loop: samples pairs per epoch, builds masked
// batches, steps Adam under linear warmup, checkpoints per epoch.
TrainReport run_mlm_training(ModelParameters& params, const ModelConfig& config,
                             const Tokenizer& tokenizer, const Corpus& corpus,
                             const TrainSchedule& schedule) {
    if (corpus.sentence_count() == 0) throw UsageError("empty training corpus");
    if (tokenizer.vocab_size() != config.vocab_size)
        throw UsageError("tokenizer vocabulary (" +
                         std::to_string(tokenizer.vocab_size()) +
                         ") does not match the model config (" +
                         std::to_string(config.vocab_size) + ")");
    if (tokenizer.algo() != expected_tokenizer_algo(config.flavor))
        throw UsageError(std::string("flavor ") + to_string(config.flavor) +
                         " expects a " +
                         to_string(expected_tokenizer_algo(config.flavor)) +
                         " tokenizer");
    if (schedule.epochs <= 0 || schedule.batch_size <= 0)
        throw UsageError("epochs and batch_size must be positive");

    const bool with_nsp = config.has_nsp();
    const bool with_segments = config.uses_segments();
    const double positive_fraction =
        with_nsp ? schedule.nsp_positive_fraction : 1.0;

    const int64_t steps_per_epoch = std::max<int64_t>(
        1, (corpus.sentence_count() + schedule.batch_size - 1) / schedule.batch_size);
    const int64_t total_steps = schedule.epochs * steps_per_epoch;
    const int64_t warmup_steps = static_cast<int64_t>(
        std::llround(schedule.warmup_fraction * static_cast<double>(total_steps)));

    AdamConfig adam_cfg;
    adam_cfg.lr = static_cast<float>(schedule.lr);
    AdamState opt(params.storage(), adam_cfg);

    std::vector<std::string> tokenizer_files;
    if (!schedule.out_dir.empty()) {
        std::filesystem::create_directories(schedule.out_dir);
        tokenizer_files = persist_tokenizer(tokenizer, schedule.out_dir);
    }

    TrainReport report;
    const double t_start = now_seconds();
    int64_t global_step = 0;
    for (int64_t epoch = 0; epoch < schedule.epochs; ++epoch) {
        const double e_start = now_seconds();
        auto pairs = sample_sentence_pairs(
            corpus, steps_per_epoch * schedule.batch_size, positive_fraction,
            Rng::with_stream(schedule.seed, 0xe90c + static_cast<uint64_t>(epoch))
                .next_u64());
        EpochStats stats;
        for (int64_t step = 0; step < steps_per_epoch; ++step) {
            std::vector<SentencePair> slice(
                pairs.begin() + step * schedule.batch_size,
                pairs.begin() + (step + 1) * schedule.batch_size);
            TrainingBatch batch = build_mlm_batch(
                slice, tokenizer, schedule.masking, schedule.max_seq,
                Rng::with_stream(schedule.seed,
                                 step_stream(static_cast<uint64_t>(epoch),
                                             static_cast<uint64_t>(step)))
                    .next_u64(),
                with_nsp, with_segments);
            const float lr =
                warmup_steps > 0
                    ? static_cast<float>(schedule.lr *
                                         std::min<double>(
                                             1.0, static_cast<double>(global_step + 1) /
                                                      static_cast<double>(warmup_steps)))
                    : static_cast<float>(schedule.lr);
            StepLoss loss = train_step(params, config, opt, batch, lr);
            stats.mlm += loss.mlm;
            stats.nsp += loss.nsp;
            stats.total += loss.total;
            ++stats.steps;
            ++global_step;
            report.step_losses.push_back(loss.total);
        }
        stats.mlm /= static_cast<double>(stats.steps);
        stats.nsp /= static_cast<double>(stats.steps);
        stats.total /= static_cast<double>(stats.steps);
        stats.seconds = now_seconds() - e_start;
        report.epochs.push_back(stats);

        if (!schedule.out_dir.empty()) {
            const std::string ckpt =
                schedule.out_dir + "/epoch-" + std::to_string(epoch + 1);
            save_checkpoint(params, config, tokenizer_files, ckpt);
            report.final_checkpoint = ckpt;
            write_report_tsv(schedule.out_dir, report);
        }
    }
    report.total_steps = global_step;
    report.wall_seconds = now_seconds() - t_start;
    if (!schedule.out_dir.empty()) write_report_tsv(schedule.out_dir, report);
    return report;
}

}  // namespace

TrainReport pretrain(const ModelConfig& config, const Corpus& corpus,
                     const Tokenizer& tokenizer, const TrainSchedule& schedule) {
    config.validate();
    ModelParameters params = new_model(config, schedule.seed);
    return run_mlm_training(params, config, tokenizer, corpus, schedule);
}

TrainReport finetune(const std::string& checkpoint_dir, const Corpus& corpus,
                     const FinetuneOptions& options) {
    auto [params, config] = load_checkpoint(checkpoint_dir);
    Tokenizer tokenizer = Tokenizer::load(checkpoint_dir);

    if (options.replace_tokenizer_dir) {
        Tokenizer fresh = Tokenizer::load(*options.replace_tokenizer_dir);
        if (fresh.algo() != expected_tokenizer_algo(config.flavor))
            throw UsageError("replacement tokenizer does not match the model flavor");
        auto [new_params, new_config] = replace_embeddings_for_new_tokenizer(
            params, config, fresh.vocab_size(), options.seed);
        params = std::move(new_params);
        config = new_config;
        tokenizer = std::move(fresh);
    }

    TrainSchedule schedule;
    schedule.epochs = options.epochs;
    schedule.batch_size = options.batch_size;
    schedule.lr = options.lr;
    schedule.warmup_fraction = options.warmup_fraction;
    schedule.max_seq = options.max_seq;
    schedule.seed = options.seed;
    schedule.nsp_positive_fraction = options.nsp_positive_fraction;
    schedule.masking = options.masking;
    schedule.out_dir = options.out_dir;
    return run_mlm_training(params, config, tokenizer, corpus, schedule);
}

void DistillationConfig::validate() const {
    if (temperature <= 0.0) throw UsageError("temperature must be positive");
    if (alpha_soft < 0 || alpha_mlm < 0 || alpha_cos < 0)
        throw UsageError("distillation weights must be non-negative");
    if (std::abs(alpha_soft + alpha_mlm + alpha_cos - 1.0) > 1e-9)
        throw UsageError("distillation weights must sum to 1");
}

float distillation_loss(const ForwardOutput& student_out,
                        const ForwardOutput& teacher_out, const TrainingBatch& batch,
                        const DistillationConfig& dconf) {
    dconf.validate();
    const auto& sl = student_out.mlm_logits;
    const auto& tl = teacher_out.mlm_logits;
    if (sl.shape != tl.shape)
        throw UsageError("student and teacher vocabularies differ");
    const int64_t rows = sl.shape[0] * sl.shape[1];
    const int64_t v = sl.shape[2];

    double kl_sum = 0.0;
    int64_t kl_rows = 0;
    std::vector<double> ps, pt;
    for (int64_t r = 0; r < rows; ++r) {
        if (batch.mlm_labels.data[static_cast<size_t>(r)] < 0) continue;
        tempered_softmax(sl.data.data() + r * v, v, dconf.temperature, ps);
        tempered_softmax(tl.data.data() + r * v, v, dconf.temperature, pt);
        for (int64_t i = 0; i < v; ++i) {
            const size_t k = static_cast<size_t>(i);
            if (pt[k] <= 0.0) continue;
            kl_sum += pt[k] * (std::log(pt[k]) - std::log(std::max(ps[k], 1e-300)));
        }
        ++kl_rows;
    }
    if (kl_rows == 0) throw UsageError("batch has no selected positions");
    const double soft = kl_sum / static_cast<double>(kl_rows);

    const double hard = mlm_nsp_loss(student_out, batch).mlm;

    const int64_t d = student_out.hidden.shape[2];
    if (teacher_out.hidden.shape != student_out.hidden.shape)
        throw UsageError("student and teacher hidden sizes differ");
    double cos_sum = 0.0;
    int64_t cos_rows = 0;
    for (int64_t r = 0; r < rows; ++r) {
        if (!batch.attention_mask.data[static_cast<size_t>(r)]) continue;
        const float* a = student_out.hidden.data.data() + r * d;
        const float* b = teacher_out.hidden.data.data() + r * d;
        double dot = 0, na = 0, nb = 0;
        for (int64_t i = 0; i < d; ++i) {
            dot += static_cast<double>(a[i]) * b[i];
            na += static_cast<double>(a[i]) * a[i];
            nb += static_cast<double>(b[i]) * b[i];
        }
        const double denom = std::sqrt(na) * std::sqrt(nb);
        cos_sum += denom < 1e-30 ? 1.0 : 1.0 - dot / denom;
        ++cos_rows;
    }
    const double cos = cos_rows ? cos_sum / static_cast<double>(cos_rows) : 0.0;

    return static_cast<float>(dconf.alpha_soft * dconf.temperature *
                                  dconf.temperature * soft +
                              dconf.alpha_mlm * hard + dconf.alpha_cos * cos);
}

double mean_kl_to_teacher(const ModelParameters& student_params,
                          const ModelConfig& student_config,
                          const ModelParameters& teacher_params,
                          const ModelConfig& teacher_config,
                          const std::vector<TrainingBatch>& batches,
                          double temperature) {
    double total = 0.0;
    int64_t rows_seen = 0;
    std::vector<double> ps, pt;
    for (const auto& batch : batches) {
        ForwardInput in = input_from(batch);
        in.segment_ids.reset();
        ForwardOutput s = forward(student_params, student_config, in);
        ForwardOutput t = forward(teacher_params, teacher_config, in);
        const int64_t rows = s.mlm_logits.shape[0] * s.mlm_logits.shape[1];
        const int64_t v = s.mlm_logits.shape[2];
        for (int64_t r = 0; r < rows; ++r) {
            if (batch.mlm_labels.data[static_cast<size_t>(r)] < 0) continue;
            tempered_softmax(s.mlm_logits.data.data() + r * v, v, temperature, ps);
            tempered_softmax(t.mlm_logits.data.data() + r * v, v, temperature, pt);
            for (int64_t i = 0; i < v; ++i) {
                const size_t k = static_cast<size_t>(i);
                if (pt[k] <= 0.0) continue;
                total += pt[k] * (std::log(pt[k]) - std::log(std::max(ps[k], 1e-300)));
            }
            ++rows_seen;
        }
    }
    if (rows_seen == 0) throw EvaluationError("no selected positions in the batches");
    return total / static_cast<double>(rows_seen);
}

TrainReport distill(const std::string& teacher_checkpoint_dir, const Corpus& corpus,
                    const DistillationConfig& dconf, const TrainSchedule& schedule) {
    dconf.validate();
    auto [teacher_params, teacher_config] = load_checkpoint(teacher_checkpoint_dir);
    Tokenizer tokenizer = Tokenizer::load(teacher_checkpoint_dir);

    ModelConfig student_config = dconf.student;
    student_config.validate();
    if (student_config.hidden_size != teacher_config.hidden_size)
        throw UsageError("student hidden size must match the teacher for the cosine term");
    if (student_config.vocab_size != teacher_config.vocab_size)
        throw UsageError("student and teacher must share one vocabulary");
    if (corpus.sentence_count() == 0) throw UsageError("empty distillation corpus");

    ModelParameters student = new_model(student_config, schedule.seed);
    AdamConfig adam_cfg;
    adam_cfg.lr = static_cast<float>(schedule.lr);
    AdamState opt(student.storage(), adam_cfg);

    const int64_t steps_per_epoch = std::max<int64_t>(
        1, (corpus.sentence_count() + schedule.batch_size - 1) / schedule.batch_size);
    const int64_t total_steps = schedule.epochs * steps_per_epoch;
    const int64_t warmup_steps = static_cast<int64_t>(
        std::llround(schedule.warmup_fraction * static_cast<double>(total_steps)));

    std::vector<std::string> tokenizer_files;
    if (!schedule.out_dir.empty()) {
        std::filesystem::create_directories(schedule.out_dir);
        tokenizer_files = persist_tokenizer(tokenizer, schedule.out_dir);
    }

    TrainReport report;
    const double t_start = now_seconds();
    int64_t global_step = 0;
    std::vector<TrainingBatch> held_batches;
    for (int64_t epoch = 0; epoch < schedule.epochs; ++epoch) {
        const double e_start = now_seconds();
        auto pairs = sample_sentence_pairs(
            corpus, steps_per_epoch * schedule.batch_size, 1.0,
            Rng::with_stream(schedule.seed, 0xd197 + static_cast<uint64_t>(epoch))
                .next_u64());
        EpochStats stats;
        for (int64_t step = 0; step < steps_per_epoch; ++step) {
            std::vector<SentencePair> slice(
                pairs.begin() + step * schedule.batch_size,
                pairs.begin() + (step + 1) * schedule.batch_size);
            TrainingBatch batch = build_mlm_batch(
                slice, tokenizer, schedule.masking, schedule.max_seq,
                Rng::with_stream(schedule.seed,
                                 step_stream(static_cast<uint64_t>(epoch),
                                             static_cast<uint64_t>(step)))
                    .next_u64(),
                false, false);
            if (epoch == 0 && held_batches.size() < 8) held_batches.push_back(batch);

            ForwardOutput teacher_out =
                forward(teacher_params, teacher_config, input_from(batch));

            Graph g;
            ForwardVars vars =
                forward_on_graph(g, student, student_config, input_from(batch));
            const int64_t b = batch.token_ids.rows;
            const int64_t s = batch.token_ids.cols;
            const int64_t v = student_config.vocab_size;
            std::vector<int32_t> flat_labels(batch.mlm_labels.data.begin(),
                                             batch.mlm_labels.data.end());
            std::vector<int32_t> selected(flat_labels.size());
            for (size_t i = 0; i < flat_labels.size(); ++i)
                selected[i] = flat_labels[i] >= 0 ? 1 : 0;

            Var logits2d = g.reshape(vars.mlm_logits, {b * s, v});
            Tensor teacher_logits2d =
                Tensor::from({b * s, v}, teacher_out.mlm_logits.data);
            Var soft = g.kl_to_teacher(logits2d, teacher_logits2d, selected,
                                       static_cast<float>(dconf.temperature));
            Var hard = g.cross_entropy(logits2d, flat_labels);
            Tensor teacher_hidden2d = Tensor::from(
                {b * s, student_config.hidden_size}, teacher_out.hidden.data);
            Var cos = g.cosine_distance(
                g.reshape(vars.hidden, {b * s, student_config.hidden_size}),
                teacher_hidden2d, batch.attention_mask.data);

            const float t2 =
                static_cast<float>(dconf.temperature * dconf.temperature);
            Var total = g.add(
                g.add(g.scale(soft, static_cast<float>(dconf.alpha_soft) * t2),
                      g.scale(hard, static_cast<float>(dconf.alpha_mlm))),
                g.scale(cos, static_cast<float>(dconf.alpha_cos)));

            const float loss = g.value(total).data[0];
            if (!std::isfinite(loss)) throw Error("non-finite distillation loss");
            g.backward(total);
            std::vector<const Tensor*> grads;
            for (const auto& [name, tensor] : student.tensors)
                grads.push_back(g.grad_for(tensor.get()));
            const float lr =
                warmup_steps > 0
                    ? static_cast<float>(
                          schedule.lr *
                          std::min<double>(1.0, static_cast<double>(global_step + 1) /
                                                    static_cast<double>(warmup_steps)))
                    : static_cast<float>(schedule.lr);
            opt.step(grads, lr);

            stats.mlm += g.value(hard).data[0];
            stats.total += loss;
            ++stats.steps;
            ++global_step;
            report.step_losses.push_back(loss);
        }
        stats.mlm /= static_cast<double>(stats.steps);
        stats.total /= static_cast<double>(stats.steps);
        stats.seconds = now_seconds() - e_start;
        report.epochs.push_back(stats);
        if (!schedule.out_dir.empty()) {
            const std::string ckpt =
                schedule.out_dir + "/epoch-" + std::to_string(epoch + 1);
            save_checkpoint(student, student_config, tokenizer_files, ckpt);
            report.final_checkpoint = ckpt;
            write_report_tsv(schedule.out_dir, report);
        }
    }
    report.total_steps = global_step;
    report.wall_seconds = now_seconds() - t_start;
    report.final_kl_to_teacher =
        mean_kl_to_teacher(student, student_config, teacher_params, teacher_config,
                           held_batches, dconf.temperature);
    if (!schedule.out_dir.empty()) write_report_tsv(schedule.out_dir, report);
    return report;
}

}  // namespace lmforge
