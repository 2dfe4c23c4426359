#include "lmforge/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "lmforge/rng.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace lmforge {

using nlohmann::json;

const char* to_string(ModelFlavor flavor) {
    switch (flavor) {
        case ModelFlavor::kBert: return "bert";
        case ModelFlavor::kDistil: return "distil";
        case ModelFlavor::kRoberta: return "roberta";
    }
    return "?";
}

ModelFlavor model_flavor_from_string(const std::string& name) {
    if (name == "bert") return ModelFlavor::kBert;
    if (name == "distil") return ModelFlavor::kDistil;
    if (name == "roberta") return ModelFlavor::kRoberta;
    throw UsageError("unknown model flavor: " + name);
}

void ModelConfig::validate() const {
    if (vocab_size <= 5) throw UsageError("vocab_size must exceed the special tokens");
    if (hidden_size <= 0 || num_layers <= 0 || num_heads <= 0 ||
        feedforward_size <= 0 || max_positions <= 0)
        throw UsageError("model dimensions must be positive");
    if (hidden_size % num_heads != 0)
        throw UsageError("hidden_size must be divisible by num_heads");
    if (flavor != ModelFlavor::kBert && num_segment_types != 0)
        throw UsageError("segment embeddings are a bert-flavor feature");
    if (num_segment_types != 0 && num_segment_types != 2)
        throw UsageError("num_segment_types must be 0 or 2");
}

const std::shared_ptr<Tensor>& ModelParameters::find(const std::string& name) const {
    for (const auto& [n, t] : tensors)
        if (n == name) return t;
    throw UsageError("no parameter named " + name);
}

bool ModelParameters::has(const std::string& name) const {
    for (const auto& [n, t] : tensors)
        if (n == name) return true;
    return false;
}

std::vector<std::shared_ptr<Tensor>> ModelParameters::storage() const {
    std::vector<std::shared_ptr<Tensor>> out;
    out.reserve(tensors.size());
    for (const auto& [n, t] : tensors) out.push_back(t);
    return out;
}

int64_t ModelParameters::scalar_count() const {
    int64_t total = 0;
    for (const auto& [n, t] : tensors) total += t->numel();
    return total;
}

ModelParameters ModelParameters::clone() const {
    ModelParameters out;
    out.tensors.reserve(tensors.size());
    for (const auto& [n, t] : tensors)
        out.tensors.push_back({n, std::make_shared<Tensor>(*t)});
    return out;
}

namespace {

constexpr float kInitSigma = 0.02f;
constexpr float kLayerNormEps = 1e-12f;

void fill_truncated_normal(Tensor& t, Rng& rng) {
    for (float& v : t.data) v = rng.truncated_normal(kInitSigma);
}

struct ParamBuilder {
    ModelParameters params;
    Rng rng;

    explicit ParamBuilder(uint64_t seed) : rng(Rng::with_stream(seed, 0x1417)) {}

    std::shared_ptr<Tensor> add(const std::string& name, std::vector<int64_t> shape,
                                float fill, bool random) {
        auto t = std::make_shared<Tensor>(std::move(shape), fill);
        t->requires_grad = true;
        if (random) fill_truncated_normal(*t, rng);
        params.tensors.push_back({name, t});
        return t;
    }
};

std::string layer_prefix(int64_t i) { return "layer" + std::to_string(i) + "."; }

}  // namespace

ModelParameters new_model(const ModelConfig& config, uint64_t seed) {
    config.validate();
    const int64_t d = config.hidden_size;
    const int64_t ff = config.feedforward_size;
    const int64_t v = config.vocab_size;

    ParamBuilder b(seed);
    b.add("embeddings.token", {v, d}, 0.0f, true);
    b.add("embeddings.position", {config.max_positions, d}, 0.0f, true);
    if (config.uses_segments())
        b.add("embeddings.segment", {config.num_segment_types, d}, 0.0f, true);
    b.add("embeddings.norm.gain", {d}, 1.0f, false);
    b.add("embeddings.norm.bias", {d}, 0.0f, false);
    for (int64_t i = 0; i < config.num_layers; ++i) {
        const std::string p = layer_prefix(i);
        for (const char* proj : {"query", "key", "value", "output"}) {
            b.add(p + "attention." + proj + ".weight", {d, d}, 0.0f, true);
            b.add(p + "attention." + proj + ".bias", {d}, 0.0f, false);
        }
        b.add(p + "attention.norm.gain", {d}, 1.0f, false);
        b.add(p + "attention.norm.bias", {d}, 0.0f, false);
        b.add(p + "ffn.intermediate.weight", {d, ff}, 0.0f, true);
        b.add(p + "ffn.intermediate.bias", {ff}, 0.0f, false);
        b.add(p + "ffn.output.weight", {ff, d}, 0.0f, true);
        b.add(p + "ffn.output.bias", {d}, 0.0f, false);
        b.add(p + "ffn.norm.gain", {d}, 1.0f, false);
        b.add(p + "ffn.norm.bias", {d}, 0.0f, false);
    }
    b.add("mlm.transform.weight", {d, d}, 0.0f, true);
    b.add("mlm.transform.bias", {d}, 0.0f, false);
    b.add("mlm.norm.gain", {d}, 1.0f, false);
    b.add("mlm.norm.bias", {d}, 0.0f, false);
    if (!config.tie_mlm_head) b.add("mlm.decoder.weight", {v, d}, 0.0f, true);
    b.add("mlm.decoder.bias", {v}, 0.0f, false);
    if (config.has_nsp()) {
        b.add("pooler.weight", {d, d}, 0.0f, true);
        b.add("pooler.bias", {d}, 0.0f, false);
        b.add("nsp.weight", {d, 2}, 0.0f, true);
        b.add("nsp.bias", {2}, 0.0f, false);
    }
    return std::move(b.params);
}

int64_t param_count(const ModelConfig& config) {
    config.validate();
    const int64_t d = config.hidden_size;
    const int64_t ff = config.feedforward_size;
    const int64_t v = config.vocab_size;

    int64_t embeddings = v * d + config.max_positions * d +
                         config.num_segment_types * d + 2 * d;
    int64_t per_layer = 4 * (d * d + d)   // attention projections
                        + 2 * d           // attention layer norm
                        + d * ff + ff     // intermediate
                        + ff * d + d      // output
                        + 2 * d;          // ffn layer norm
    int64_t mlm_head = (d * d + d) + 2 * d + (config.tie_mlm_head ? 0 : v * d) + v;
    int64_t nsp_head = config.has_nsp() ? (d * d + d) + (2 * d + 2) : 0;
    return embeddings + config.num_layers * per_layer + mlm_head + nsp_head;
}

namespace {

void validate_input(const ModelConfig& config, const ForwardInput& input) {
    const auto& ids = input.token_ids;
    const auto& mask = input.attention_mask;
    if (ids.rows <= 0 || ids.cols <= 0) throw UsageError("empty input batch");
    if (ids.cols > config.max_positions)
        throw UsageError("sequence length " + std::to_string(ids.cols) +
                         " exceeds max_positions " +
                         std::to_string(config.max_positions));
    if (mask.rows != ids.rows || mask.cols != ids.cols)
        throw DimensionError("attention mask shape does not match token ids");
    for (int32_t id : ids.data)
        if (id < 0 || id >= config.vocab_size)
            throw UsageError("token id " + std::to_string(id) +
                             " out of range for vocab " +
                             std::to_string(config.vocab_size));
    if (input.segment_ids) {
        if (!config.uses_segments())
            throw UsageError("segment ids passed to a flavor without segments");
        if (input.segment_ids->rows != ids.rows || input.segment_ids->cols != ids.cols)
            throw DimensionError("segment ids shape does not match token ids");
        for (int32_t s : input.segment_ids->data)
            if (s < 0 || s >= config.num_segment_types)
                throw UsageError("segment id out of range");
    }
}

}  // namespace

ForwardVars forward_on_graph(Graph& g, const ModelParameters& params,
                             const ModelConfig& config, const ForwardInput& input) {
    config.validate();
    validate_input(config, input);
    const int64_t batch = input.token_ids.rows;
    const int64_t seq = input.token_ids.cols;
    const int64_t d = config.hidden_size;

    auto p = [&](const std::string& name) { return g.leaf(params.find(name)); };
    // x @ W + b over the flattened token axis.
    auto linear = [&](Var x, const std::string& weight, const std::string& bias,
                      int64_t out_dim) {
        const int64_t in_dim = g.value(x).shape.back();
        Var flat = g.reshape(x, {batch * seq, in_dim});
        Var y = g.add_bias(g.matmul(flat, p(weight)), p(bias));
        return g.reshape(y, {batch, seq, out_dim});
    };

    Var x = g.embedding(p("embeddings.token"), input.token_ids.data, {batch, seq});
    {
        std::vector<int32_t> positions(static_cast<size_t>(seq));
        for (int64_t i = 0; i < seq; ++i) positions[static_cast<size_t>(i)] =
            static_cast<int32_t>(i);
        Var pos = g.embedding(p("embeddings.position"), positions, {seq});
        x = g.add_bias(x, pos);  // broadcast [seq, d] over the batch
    }
    if (config.uses_segments()) {
        TokenMatrix zeros(batch, seq, 0);
        const TokenMatrix& seg = input.segment_ids ? *input.segment_ids : zeros;
        x = g.add(x, g.embedding(p("embeddings.segment"), seg.data, {batch, seq}));
    }
    x = g.layer_norm(x, p("embeddings.norm.gain"), p("embeddings.norm.bias"),
                     kLayerNormEps);

    ForwardVars out;
    const int64_t heads = config.num_heads;
    const float inv_sqrt_dh =
        1.0f / std::sqrt(static_cast<float>(d / heads));
    for (int64_t i = 0; i < config.num_layers; ++i) {
        const std::string lp = layer_prefix(i);
        Var q = g.split_heads(linear(x, lp + "attention.query.weight",
                                     lp + "attention.query.bias", d), heads);
        Var k = g.split_heads(linear(x, lp + "attention.key.weight",
                                     lp + "attention.key.bias", d), heads);
        Var v = g.split_heads(linear(x, lp + "attention.value.weight",
                                     lp + "attention.value.bias", d), heads);
        Var scores = g.scale(g.matmul_nt(q, k), inv_sqrt_dh);
        Var probs = g.masked_softmax(scores, input.attention_mask);
        out.attention_probs.push_back(probs);
        Var context = g.merge_heads(g.matmul(probs, v));
        Var attn = linear(context, lp + "attention.output.weight",
                          lp + "attention.output.bias", d);
        x = g.layer_norm(g.add(x, attn), p(lp + "attention.norm.gain"),
                         p(lp + "attention.norm.bias"), kLayerNormEps);
        Var inner = g.gelu(linear(x, lp + "ffn.intermediate.weight",
                                  lp + "ffn.intermediate.bias",
                                  config.feedforward_size));
        Var ffn = linear(inner, lp + "ffn.output.weight", lp + "ffn.output.bias", d);
        x = g.layer_norm(g.add(x, ffn), p(lp + "ffn.norm.gain"),
                         p(lp + "ffn.norm.bias"), kLayerNormEps);
    }
    out.hidden = x;

    Var transform = g.layer_norm(
        g.gelu(linear(x, "mlm.transform.weight", "mlm.transform.bias", d)),
        p("mlm.norm.gain"), p("mlm.norm.bias"), kLayerNormEps);
    Var decoder = config.tie_mlm_head ? p("embeddings.token") : p("mlm.decoder.weight");
    Var logits = g.add_bias(
        g.matmul_nt(g.reshape(transform, {batch * seq, d}), decoder),
        p("mlm.decoder.bias"));
    out.mlm_logits = g.reshape(logits, {batch, seq, config.vocab_size});

    if (config.has_nsp()) {
        Var cls = g.take_position(x, 0);
        Var pooled = g.tanh_op(g.add_bias(g.matmul(cls, p("pooler.weight")),
                                          p("pooler.bias")));
        out.nsp_logits = g.add_bias(g.matmul(pooled, p("nsp.weight")), p("nsp.bias"));
    }
    return out;
}

ForwardOutput forward(const ModelParameters& params, const ModelConfig& config,
                      const ForwardInput& input) {
    Graph g;
    ForwardVars vars = forward_on_graph(g, params, config, input);
    ForwardOutput out;
    out.hidden = g.value(vars.hidden);
    out.mlm_logits = g.value(vars.mlm_logits);
    if (vars.nsp_logits.valid()) out.nsp_logits = g.value(vars.nsp_logits);
    return out;
}

namespace {

json config_to_json(const ModelConfig& c) {
    return json{{"flavor", to_string(c.flavor)},
                {"vocab_size", c.vocab_size},
                {"hidden_size", c.hidden_size},
                {"num_layers", c.num_layers},
                {"num_heads", c.num_heads},
                {"feedforward_size", c.feedforward_size},
                {"max_positions", c.max_positions},
                {"num_segment_types", c.num_segment_types},
                {"cased", c.cased},
                {"tie_mlm_head", c.tie_mlm_head}};
}

ModelConfig config_from_json(const json& j) {
    ModelConfig c;
    c.flavor = model_flavor_from_string(j.at("flavor").get<std::string>());
    c.vocab_size = j.at("vocab_size").get<int64_t>();
    c.hidden_size = j.at("hidden_size").get<int64_t>();
    c.num_layers = j.at("num_layers").get<int64_t>();
    c.num_heads = j.at("num_heads").get<int64_t>();
    c.feedforward_size = j.at("feedforward_size").get<int64_t>();
    c.max_positions = j.at("max_positions").get<int64_t>();
    c.num_segment_types = j.at("num_segment_types").get<int64_t>();
    c.cased = j.at("cased").get<bool>();
    c.tie_mlm_head = j.at("tie_mlm_head").get<bool>();
    return c;
}

}  // namespace

void save_checkpoint(const ModelParameters& params, const ModelConfig& config,
                     const std::vector<std::string>& tokenizer_files,
                     const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);

    json manifest;
    manifest["format"] = "lmforge-checkpoint";
    manifest["version"] = 1;
    manifest["config"] = config_to_json(config);
    json tensor_table = json::array();
    int64_t offset = 0;
    for (const auto& [name, t] : params.tensors) {
        tensor_table.push_back(
            {{"name", name}, {"shape", t->shape}, {"offset", offset}});
        offset += t->numel() * static_cast<int64_t>(sizeof(float));
    }
    manifest["tensors"] = tensor_table;
    manifest["total_bytes"] = offset;
    json tok_files = json::array();
    for (const auto& f : tokenizer_files)
        tok_files.push_back(fs::path(f).filename().string());
    manifest["tokenizer_files"] = tok_files;

    std::ofstream weights(fs::path(dir) / "weights.bin",
                          std::ios::binary | std::ios::trunc);
    if (!weights) throw IoError("cannot write weights.bin in " + dir);
    for (const auto& [name, t] : params.tensors)
        weights.write(reinterpret_cast<const char*>(t->data.data()),
                      static_cast<std::streamsize>(t->data.size() * sizeof(float)));
    if (!weights) throw IoError("failed writing weights.bin in " + dir);
    weights.close();

    std::ofstream mf(fs::path(dir) / "manifest.json", std::ios::trunc);
    if (!mf) throw IoError("cannot write manifest.json in " + dir);
    mf << manifest.dump(2) << "\n";
    mf.close();

    for (const auto& f : tokenizer_files) {
        const fs::path src(f);
        if (!fs::exists(src)) throw IoError("tokenizer file missing: " + f);
        fs::copy_file(src, fs::path(dir) / src.filename(),
                      fs::copy_options::overwrite_existing);
    }
}

std::pair<ModelParameters, ModelConfig> load_checkpoint(const std::string& dir) {
    namespace fs = std::filesystem;
    const fs::path manifest_path = fs::path(dir) / "manifest.json";
    if (!fs::exists(manifest_path))
        throw IoError("missing manifest.json in " + dir);
    json manifest;
    try {
        std::ifstream mf(manifest_path);
        mf >> manifest;
    } catch (const std::exception& e) {
        throw CorruptionError("unreadable manifest in " + dir + ": " + e.what());
    }

    ModelConfig config;
    ModelParameters params;
    int64_t total_bytes = 0;
    try {
        config = config_from_json(manifest.at("config"));
        total_bytes = manifest.at("total_bytes").get<int64_t>();
    } catch (const std::exception& e) {
        throw CorruptionError("bad manifest fields in " + dir + ": " + e.what());
    }

    const fs::path weights_path = fs::path(dir) / "weights.bin";
    if (!fs::exists(weights_path)) throw IoError("missing weights.bin in " + dir);
    std::ifstream weights(weights_path, std::ios::binary | std::ios::ate);
    if (!weights) throw IoError("cannot open weights.bin in " + dir);
    const int64_t file_size = static_cast<int64_t>(weights.tellg());
    if (file_size != total_bytes)
        throw CorruptionError("weights.bin holds " + std::to_string(file_size) +
                              " bytes but the manifest declares " +
                              std::to_string(total_bytes));

    for (const auto& entry : manifest.at("tensors")) {
        const std::string name = entry.at("name").get<std::string>();
        const std::vector<int64_t> shape =
            entry.at("shape").get<std::vector<int64_t>>();
        const int64_t offset = entry.at("offset").get<int64_t>();
        const int64_t bytes = numel_of(shape) * static_cast<int64_t>(sizeof(float));
        if (offset < 0 || offset + bytes > total_bytes)
            throw CorruptionError("tensor " + name + " lies outside weights.bin");
        auto t = std::make_shared<Tensor>(shape);
        t->requires_grad = true;
        weights.seekg(offset);
        weights.read(reinterpret_cast<char*>(t->data.data()),
                     static_cast<std::streamsize>(bytes));
        if (!weights)
            throw CorruptionError("short read for tensor " + name + " in " + dir);
        params.tensors.push_back({name, std::move(t)});
    }
    for (const auto& [name, t] : params.tensors) {
        for (float v : t->data)
            if (!std::isfinite(v))
                throw CorruptionError("non-finite value in tensor " + name);
    }
    return {std::move(params), config};
}

std::pair<ModelParameters, ModelConfig> replace_embeddings_for_new_tokenizer(
    const ModelParameters& params, const ModelConfig& config, int64_t new_vocab_size,
    uint64_t seed) {
    if (new_vocab_size <= 5)
        throw UsageError("new vocabulary must exceed the special-token count");
    ModelConfig new_config = config;
    new_config.vocab_size = new_vocab_size;

    Rng rng = Rng::with_stream(seed, 0x7e11);
    ModelParameters out;
    out.tensors.reserve(params.tensors.size());
    for (const auto& [name, t] : params.tensors) {
        if (name == "embeddings.token" ||
            (name == "mlm.decoder.weight" && !config.tie_mlm_head)) {
            auto fresh = std::make_shared<Tensor>(
                std::vector<int64_t>{new_vocab_size, config.hidden_size});
            fresh->requires_grad = true;
            fill_truncated_normal(*fresh, rng);
            out.tensors.push_back({name, std::move(fresh)});
        } else if (name == "mlm.decoder.bias") {
            auto fresh =
                std::make_shared<Tensor>(std::vector<int64_t>{new_vocab_size}, 0.0f);
            fresh->requires_grad = true;
            out.tensors.push_back({name, std::move(fresh)});
        } else {
            out.tensors.push_back({name, std::make_shared<Tensor>(*t)});
        }
    }
    return {std::move(out), new_config};
}

}  // namespace lmforge
