#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "lmforge/adam.hpp"
#include "lmforge/corpus.hpp"
#include "lmforge/model.hpp"
#include "gradient_suite.hpp"
#include "test_util.hpp"

using namespace lmforge;

namespace {

ModelConfig tiny_config(ModelFlavor flavor = ModelFlavor::kBert, int64_t vocab = 61,
                        int64_t d = 16, int64_t layers = 2) {
    ModelConfig c;
    c.flavor = flavor;
    c.vocab_size = vocab;
    c.hidden_size = d;
    c.num_layers = layers;
    c.num_heads = 4;
    c.feedforward_size = d * 4;
    c.max_positions = 32;
    c.num_segment_types = flavor == ModelFlavor::kBert ? 2 : 0;
    return c;
}

ForwardInput random_input(const ModelConfig& c, int64_t batch, int64_t seq,
                          uint64_t seed) {
    Rng rng(seed);
    ForwardInput in;
    in.token_ids = TokenMatrix(batch, seq);
    in.attention_mask = TokenMatrix(batch, seq, 1);
    for (auto& id : in.token_ids.data)
        id = static_cast<int32_t>(rng.uniform_int(5, c.vocab_size));
    if (c.uses_segments()) in.segment_ids = TokenMatrix(batch, seq, 0);
    return in;
}

// Shape-table oracle: enumerate every tensor of the architecture and sum.
int64_t enumerate_param_count(const ModelConfig& c) {
    int64_t total = 0;
    auto add = [&total](std::vector<int64_t> shape) {
        int64_t n = 1;
        for (int64_t d : shape) n *= d;
        total += n;
    };
    add({c.vocab_size, c.hidden_size});
    add({c.max_positions, c.hidden_size});
    if (c.num_segment_types > 0) add({c.num_segment_types, c.hidden_size});
    add({c.hidden_size});
    add({c.hidden_size});
    for (int64_t i = 0; i < c.num_layers; ++i) {
        for (int p = 0; p < 4; ++p) {
            add({c.hidden_size, c.hidden_size});
            add({c.hidden_size});
        }
        add({c.hidden_size});
        add({c.hidden_size});
        add({c.hidden_size, c.feedforward_size});
        add({c.feedforward_size});
        add({c.feedforward_size, c.hidden_size});
        add({c.hidden_size});
        add({c.hidden_size});
        add({c.hidden_size});
    }
    add({c.hidden_size, c.hidden_size});
    add({c.hidden_size});
    add({c.hidden_size});
    add({c.hidden_size});
    if (!c.tie_mlm_head) add({c.vocab_size, c.hidden_size});
    add({c.vocab_size});
    if (c.flavor == ModelFlavor::kBert) {
        add({c.hidden_size, c.hidden_size});
        add({c.hidden_size});
        add({c.hidden_size, 2});
        add({2});
    }
    return total;
}

}  // namespace

TEST_CASE("new_model is deterministic and initializes norms to identity") {
    ModelConfig c = tiny_config();
    ModelParameters a = new_model(c, 42);
    ModelParameters b = new_model(c, 42);
    REQUIRE(a.tensors.size() == b.tensors.size());
    for (size_t i = 0; i < a.tensors.size(); ++i) {
        CHECK(a.tensors[i].first == b.tensors[i].first);
        CHECK(testutil::bitwise_equal(a.tensors[i].second->data,
                                      b.tensors[i].second->data));
    }
    for (const auto& [name, t] : a.tensors) {
        if (name.find("norm.gain") != std::string::npos)
            for (float v : t->data) CHECK(v == 1.0f);
        if (name.find("norm.bias") != std::string::npos)
            for (float v : t->data) CHECK(v == 0.0f);
    }
    ModelParameters other = new_model(c, 43);
    CHECK_FALSE(testutil::bitwise_equal(a.find("embeddings.token")->data,
                                        other.find("embeddings.token")->data));
}

TEST_CASE("tied MLM head shares the embedding storage") {
    ModelConfig c = tiny_config();
    ModelParameters tied = new_model(c, 1);
    CHECK_FALSE(tied.has("mlm.decoder.weight"));

    ForwardInput in = random_input(c, 1, 4, 2);
    ForwardOutput before = forward(tied, c, in);
    // Mutating the embedding matrix must be visible through the decoder.
    tied.find("embeddings.token")->data[static_cast<size_t>(7 * c.hidden_size)] += 2.5f;
    ForwardOutput after = forward(tied, c, in);
    CHECK_FALSE(testutil::bitwise_equal(before.mlm_logits.data,
                                        after.mlm_logits.data));

    ModelConfig untied_cfg = c;
    untied_cfg.tie_mlm_head = false;
    CHECK(new_model(untied_cfg, 1).has("mlm.decoder.weight"));
}

TEST_CASE("forward emits contract shapes and normalized logit rows") {
    ModelConfig c = tiny_config();
    ModelParameters params = new_model(c, 3);
    ForwardInput in = random_input(c, 2, 6, 4);
    ForwardOutput out = forward(params, c, in);
    CHECK(out.hidden.shape == std::vector<int64_t>{2, 6, c.hidden_size});
    CHECK(out.mlm_logits.shape == std::vector<int64_t>{2, 6, c.vocab_size});
    REQUIRE(out.nsp_logits.has_value());
    CHECK(out.nsp_logits->shape == std::vector<int64_t>{2, 2});
    CHECK(all_finite(out.hidden));
    CHECK(all_finite(out.mlm_logits));

    Graph g;
    auto probs = g.value(g.softmax(g.constant(out.mlm_logits), -1));
    for (int64_t r = 0; r < 12; ++r) {
        double total = 0.0;
        for (int64_t v = 0; v < c.vocab_size; ++v)
            total += probs.data[static_cast<size_t>(r * c.vocab_size + v)];
        CHECK(std::abs(total - 1.0) < 1e-5);
    }
}

TEST_CASE("padding with masked positions does not change shared outputs") {
    ModelConfig c = tiny_config();
    ModelParameters params = new_model(c, 5);
    ForwardInput in = random_input(c, 1, 5, 6);
    ForwardOutput plain = forward(params, c, in);

    ForwardInput padded;
    padded.token_ids = TokenMatrix(1, 8, 0);
    padded.attention_mask = TokenMatrix(1, 8, 0);
    padded.segment_ids = TokenMatrix(1, 8, 0);
    for (int64_t i = 0; i < 5; ++i) {
        padded.token_ids.at(0, i) = in.token_ids.at(0, i);
        padded.attention_mask.at(0, i) = 1;
    }
    ForwardOutput with_pad = forward(params, c, padded);
    for (int64_t s = 0; s < 5; ++s)
        for (int64_t v = 0; v < c.vocab_size; ++v)
            CHECK(std::abs(plain.mlm_logits.at({0, s, v}) -
                           with_pad.mlm_logits.at({0, s, v})) < 1e-5);
}

TEST_CASE("attention rows are distributions and masked keys get no weight") {
    ModelConfig c = tiny_config();
    ModelParameters params = new_model(c, 7);
    ForwardInput in = random_input(c, 2, 6, 8);
    in.attention_mask.at(0, 5) = 0;
    in.attention_mask.at(1, 2) = 0;

    Graph g;
    ForwardVars vars = forward_on_graph(g, params, c, in);
    REQUIRE(vars.attention_probs.size() == static_cast<size_t>(c.num_layers));
    for (Var probs_var : vars.attention_probs) {
        const Tensor& probs = g.value(probs_var);
        for (int64_t b = 0; b < 2; ++b)
            for (int64_t h = 0; h < c.num_heads; ++h)
                for (int64_t qpos = 0; qpos < 6; ++qpos) {
                    double total = 0.0;
                    for (int64_t kpos = 0; kpos < 6; ++kpos) {
                        const float w = probs.at({b, h, qpos, kpos});
                        if (!in.attention_mask.at(b, kpos)) CHECK(w < 1e-6f);
                        total += w;
                    }
                    CHECK(std::abs(total - 1.0) < 1e-5);
                }
    }
}

TEST_CASE("forward rejects overlong sequences and out-of-range ids") {
    ModelConfig c = tiny_config();
    ModelParameters params = new_model(c, 9);
    ForwardInput in = random_input(c, 1, 33, 10);
    CHECK_THROWS_AS((void)forward(params, c, in), UsageError);

    ForwardInput bad = random_input(c, 1, 4, 11);
    bad.token_ids.at(0, 0) = static_cast<int32_t>(c.vocab_size);
    CHECK_THROWS_AS((void)forward(params, c, bad), UsageError);
}

TEST_CASE("param_count reproduces the published model sizes") {
    ModelConfig bert;
    bert.flavor = ModelFlavor::kBert;
    bert.vocab_size = 119547;
    bert.hidden_size = 768;
    bert.num_layers = 12;
    bert.num_heads = 12;
    bert.feedforward_size = 3072;
    bert.max_positions = 512;
    bert.num_segment_types = 2;

    ModelConfig distil = bert;
    distil.flavor = ModelFlavor::kDistil;
    distil.num_layers = 6;
    distil.num_segment_types = 0;

    ModelConfig roberta = distil;
    roberta.flavor = ModelFlavor::kRoberta;
    roberta.vocab_size = 52000;

    const int64_t bert_n = param_count(bert);
    const int64_t distil_n = param_count(distil);
    const int64_t roberta_n = param_count(roberta);

    CHECK(bert_n == enumerate_param_count(bert));
    CHECK(distil_n == enumerate_param_count(distil));
    CHECK(roberta_n == enumerate_param_count(roberta));

    CHECK(std::abs(bert_n - 179e6) / 179e6 < 0.03);
    CHECK(std::abs(distil_n - 135e6) / 135e6 < 0.03);
    CHECK(std::abs(roberta_n - 84e6) / 84e6 < 0.03);

    const double distil_ratio = static_cast<double>(distil_n) / bert_n;
    const double roberta_ratio = static_cast<double>(roberta_n) / bert_n;
    CHECK(distil_ratio > 0.73);
    CHECK(distil_ratio < 0.77);
    CHECK(roberta_ratio > 0.45);
    CHECK(roberta_ratio < 0.49);
}

TEST_CASE("param_count equals the scalars one optimizer step updates") {
    ModelConfig c = tiny_config();
    ModelParameters params = new_model(c, 12);
    AdamState opt(params.storage(), {});
    CHECK(opt.scalar_count() == param_count(c));
    CHECK(params.scalar_count() == param_count(c));

    ModelConfig untied = c;
    untied.tie_mlm_head = false;
    ModelParameters up = new_model(untied, 12);
    CHECK(up.scalar_count() == param_count(untied));
    CHECK(param_count(untied) - param_count(c) == c.vocab_size * c.hidden_size);
}

TEST_CASE("checkpoints round-trip bit-exactly and reject corruption") {
    ModelConfig c = tiny_config();
    ModelParameters params = new_model(c, 13);
    ForwardInput in = random_input(c, 2, 5, 14);
    ForwardOutput before = forward(params, c, in);

    auto dir = testutil::temp_dir("ckpt");
    auto tok_dir = testutil::temp_dir("ckpt_tok");
    write_text_file((tok_dir / "vocab.txt").string(), "[PAD]\n[UNK]\n[CLS]\n[SEP]\n[MASK]\n");
    save_checkpoint(params, c, {(tok_dir / "vocab.txt").string()}, dir.string());
    CHECK(std::filesystem::exists(dir / "vocab.txt"));

    auto [loaded, loaded_cfg] = load_checkpoint(dir.string());
    CHECK(loaded_cfg.vocab_size == c.vocab_size);
    ForwardOutput after = forward(loaded, loaded_cfg, in);
    CHECK(testutil::bitwise_equal(before.mlm_logits.data, after.mlm_logits.data));
    CHECK(testutil::bitwise_equal(before.hidden.data, after.hidden.data));

    const int64_t bytes = std::filesystem::file_size(dir / "weights.bin");
    CHECK(bytes == 4 * param_count(c));

    // Truncate the blob: loading must fail with a corruption error.
    std::filesystem::resize_file(dir / "weights.bin", bytes - 40);
    CHECK_THROWS_AS((void)load_checkpoint(dir.string()), CorruptionError);

    CHECK_THROWS_AS((void)load_checkpoint("/nonexistent/ckpt"), IoError);
}

TEST_CASE("replace_embeddings_for_new_tokenizer keeps the body bit-exact") {
    ModelConfig c = tiny_config();
    ModelParameters params = new_model(c, 15);
    const int64_t new_vocab = 101;
    auto [replaced, new_cfg] =
        replace_embeddings_for_new_tokenizer(params, c, new_vocab, 16);

    CHECK(new_cfg.vocab_size == new_vocab);
    CHECK(replaced.find("embeddings.token")->shape ==
          std::vector<int64_t>{new_vocab, c.hidden_size});
    for (const auto& [name, t] : params.tensors) {
        if (name == "embeddings.token" || name == "mlm.decoder.bias") continue;
        CHECK(testutil::bitwise_equal(t->data, replaced.find(name)->data));
    }
    // Fresh rows actually differ from the old initialization.
    CHECK_FALSE(testutil::bitwise_equal(
        params.find("embeddings.token")->data,
        std::vector<float>(replaced.find("embeddings.token")->data.begin(),
                           replaced.find("embeddings.token")->data.begin() +
                               static_cast<long>(params.find("embeddings.token")->data.size()))));

    // Tied layout: count changes by (newV - oldV) * (d + 1).
    CHECK(param_count(new_cfg) - param_count(c) ==
          (new_vocab - c.vocab_size) * (c.hidden_size + 1));

    CHECK_THROWS_AS(replace_embeddings_for_new_tokenizer(params, c, 4, 1), UsageError);
}

TEST_CASE("tied-head gradient equals lookup plus decoder gradients") {
    ModelConfig tied_cfg = tiny_config(ModelFlavor::kBert, 31, 8, 1);
    ModelParameters tied = new_model(tied_cfg, 17);

    ModelConfig untied_cfg = tied_cfg;
    untied_cfg.tie_mlm_head = false;
    ModelParameters untied;
    for (const auto& [name, t] : tied.tensors) {
        untied.tensors.push_back({name, std::make_shared<Tensor>(*t)});
        if (name == "mlm.norm.bias") {
            auto decoder = std::make_shared<Tensor>(*tied.find("embeddings.token"));
            untied.tensors.push_back({"mlm.decoder.weight", decoder});
        }
    }

    ForwardInput in = random_input(tied_cfg, 2, 4, 18);
    std::vector<int32_t> labels(8, -1);
    labels[1] = 7;
    labels[5] = 20;

    auto loss_of = [&](const ModelParameters& p, const ModelConfig& cfg, Graph& g) {
        ForwardVars vars = forward_on_graph(g, p, cfg, in);
        return g.cross_entropy(
            g.reshape(vars.mlm_logits, {8, cfg.vocab_size}), labels);
    };

    Graph gt;
    gt.backward(loss_of(tied, tied_cfg, gt));
    const Tensor* tied_grad = gt.grad_for(tied.find("embeddings.token").get());
    REQUIRE(tied_grad != nullptr);

    Graph gu;
    gu.backward(loss_of(untied, untied_cfg, gu));
    const Tensor* lookup_grad = gu.grad_for(untied.find("embeddings.token").get());
    const Tensor* decoder_grad = gu.grad_for(untied.find("mlm.decoder.weight").get());
    REQUIRE(lookup_grad != nullptr);
    REQUIRE(decoder_grad != nullptr);

    for (size_t i = 0; i < tied_grad->data.size(); ++i) {
        const float combined = lookup_grad->data[i] + decoder_grad->data[i];
        CHECK(tied_grad->data[i] == doctest::Approx(combined).epsilon(1e-4));
    }
}

TEST_CASE("full tiny model gradients match finite differences") {
    ModelConfig c = tiny_config(ModelFlavor::kBert, 41, 16, 2);
    auto result = testutil::run_model_gradient_suite(c, 19);
    for (const auto& [name, rel] : result.per_tensor) {
        INFO("parameter ", name, " rel err ", rel);
        CHECK(rel < 1e-2);
    }
}

TEST_CASE("forward is pure: repeated calls give bit-identical outputs") {
    ModelConfig c = tiny_config(ModelFlavor::kRoberta, 37, 16, 1);
    c.num_segment_types = 0;
    ModelParameters params = new_model(c, 22);
    ForwardInput in = random_input(c, 2, 7, 23);
    ForwardOutput a = forward(params, c, in);
    ForwardOutput b = forward(params, c, in);
    CHECK(testutil::bitwise_equal(a.mlm_logits.data, b.mlm_logits.data));
    CHECK_FALSE(a.nsp_logits.has_value());
}
