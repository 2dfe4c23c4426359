#include "lmforge/embeddings.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "lmforge/rng.hpp"
#include "lmforge/text.hpp"

namespace lmforge {

namespace {

uint32_t fnv1a(const std::string& s) {
    uint32_t h = 2166136261u;
    for (unsigned char c : s) {
        h ^= c;
        h *= 16777619u;
    }
    return h;
}

std::vector<std::string> whitespace_tokens(const std::string& sentence) {
    std::vector<std::string> tokens;
    std::istringstream in(sentence);
    std::string token;
    while (in >> token) tokens.push_back(token);
    return tokens;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

std::vector<uint32_t> char_ngram_buckets(const std::string& word, int64_t minn,
                                         int64_t maxn, int64_t buckets) {
    std::vector<uint32_t> out;
    if (buckets <= 0) return out;
    const std::u32string delimited = U"<" + text::decode_utf8(word) + U">";
    const int64_t len = static_cast<int64_t>(delimited.size());
    for (int64_t n = minn; n <= maxn; ++n) {
        if (n > len) break;
        for (int64_t start = 0; start + n <= len; ++start) {
            const std::string gram = text::encode_utf8(
                delimited.substr(static_cast<size_t>(start), static_cast<size_t>(n)));
            out.push_back(fnv1a(gram) % static_cast<uint32_t>(buckets));
        }
    }
    return out;
}

StaticEmbeddings train_static_embeddings(const Corpus& corpus,
                                         const EmbeddingTrainConfig& config) {
    if (corpus.sentence_count() == 0) throw UsageError("empty corpus");
    if (config.dim <= 0 || config.window <= 0 || config.negatives <= 0 ||
        config.epochs <= 0 || config.buckets <= 0)
        throw UsageError("embedding hyperparameters must be positive");
    if (config.minn < 1 || config.maxn < config.minn)
        throw UsageError("need 1 <= minn <= maxn");

    // Deterministic vocabulary: sorted words above min_count.
    std::map<std::string, int64_t> freq;
    for (const auto& doc : corpus.documents)
        for (const auto& sentence : doc)
            for (auto& token : whitespace_tokens(sentence)) ++freq[token];

    StaticEmbeddings emb;
    emb.dim = config.dim;
    emb.minn = config.minn;
    emb.maxn = config.maxn;
    emb.buckets = config.buckets;
    std::vector<int64_t> counts;
    for (const auto& [word, count] : freq) {
        if (count < config.min_count) continue;
        emb.word_to_id[word] = static_cast<int32_t>(emb.vocab.size());
        emb.vocab.push_back(word);
        counts.push_back(count);
    }
    if (emb.vocab.empty()) throw UsageError("no words above min_count");
    const int64_t vocab = static_cast<int64_t>(emb.vocab.size());
    const int64_t dim = config.dim;

    Rng rng = Rng::with_stream(config.seed, 0xe3b);
    emb.word_vecs.resize(static_cast<size_t>(vocab * dim));
    emb.ngram_vecs.assign(static_cast<size_t>(config.buckets * dim), 0.0f);
    for (float& v : emb.word_vecs)
        v = static_cast<float>((rng.next_double() - 0.5) / static_cast<double>(dim));
    std::vector<float> ctx_vecs(static_cast<size_t>(vocab * dim), 0.0f);

    // Cached n-gram buckets per vocabulary word.
    std::vector<std::vector<uint32_t>> word_ngrams(static_cast<size_t>(vocab));
    for (int64_t w = 0; w < vocab; ++w)
        word_ngrams[static_cast<size_t>(w)] = char_ngram_buckets(
            emb.vocab[static_cast<size_t>(w)], config.minn, config.maxn,
            config.buckets);

    // Unigram^(3/4) negative-sampling table.
    std::vector<int32_t> neg_table;
    {
        const size_t table_size = 100000;
        double z = 0.0;
        for (int64_t c : counts) z += std::pow(static_cast<double>(c), 0.75);
        neg_table.reserve(table_size);
        for (int64_t w = 0; w < vocab; ++w) {
            const double share =
                std::pow(static_cast<double>(counts[static_cast<size_t>(w)]), 0.75) / z;
            const size_t slots = std::max<size_t>(
                1, static_cast<size_t>(share * static_cast<double>(table_size)));
            for (size_t i = 0; i < slots; ++i)
                neg_table.push_back(static_cast<int32_t>(w));
        }
    }

    // Token streams, one per sentence.
    std::vector<std::vector<int32_t>> sentences;
    for (const auto& doc : corpus.documents)
        for (const auto& sentence : doc) {
            std::vector<int32_t> ids;
            for (const auto& token : whitespace_tokens(sentence)) {
                auto it = emb.word_to_id.find(token);
                if (it != emb.word_to_id.end()) ids.push_back(it->second);
            }
            if (!ids.empty()) sentences.push_back(std::move(ids));
        }

    std::vector<float> input(static_cast<size_t>(dim));
    std::vector<float> input_grad(static_cast<size_t>(dim));
    for (int64_t epoch = 0; epoch < config.epochs; ++epoch) {
        double loss_sum = 0.0;
        int64_t loss_terms = 0;
        for (const auto& sentence : sentences) {
            const int64_t len = static_cast<int64_t>(sentence.size());
            for (int64_t center = 0; center < len; ++center) {
                const int32_t word = sentence[static_cast<size_t>(center)];
                const auto& grams = word_ngrams[static_cast<size_t>(word)];
                // Composed input vector: word vector + n-gram mean.
                const float* wv = emb.word_vecs.data() + word * dim;
                std::fill(input.begin(), input.end(), 0.0f);
                for (uint32_t g : grams) {
                    const float* gv = emb.ngram_vecs.data() +
                                      static_cast<int64_t>(g) * dim;
                    for (int64_t i = 0; i < dim; ++i)
                        input[static_cast<size_t>(i)] += gv[i];
                }
                if (!grams.empty())
                    for (int64_t i = 0; i < dim; ++i)
                        input[static_cast<size_t>(i)] /=
                            static_cast<float>(grams.size());
                for (int64_t i = 0; i < dim; ++i)
                    input[static_cast<size_t>(i)] += wv[i];

                const int64_t reach = rng.uniform_int(1, config.window + 1);
                std::fill(input_grad.begin(), input_grad.end(), 0.0f);
                bool any_pair = false;
                for (int64_t off = -reach; off <= reach; ++off) {
                    const int64_t pos = center + off;
                    if (off == 0 || pos < 0 || pos >= len) continue;
                    any_pair = true;
                    const int32_t target = sentence[static_cast<size_t>(pos)];
                    for (int64_t sample = 0; sample <= config.negatives; ++sample) {
                        int32_t out_word = target;
                        float label = 1.0f;
                        if (sample > 0) {
                            out_word = neg_table[static_cast<size_t>(rng.uniform_int(
                                0, static_cast<int64_t>(neg_table.size())))];
                            if (out_word == target) continue;
                            label = 0.0f;
                        }
                        float* ov = ctx_vecs.data() + out_word * dim;
                        double dot = 0.0;
                        for (int64_t i = 0; i < dim; ++i)
                            dot += static_cast<double>(input[static_cast<size_t>(i)]) *
                                   ov[i];
                        const double pred = sigmoid(dot);
                        loss_sum -= label > 0.5f
                                        ? std::log(std::max(pred, 1e-12))
                                        : std::log(std::max(1.0 - pred, 1e-12));
                        ++loss_terms;
                        const float g =
                            static_cast<float>((pred - label) * config.lr);
                        for (int64_t i = 0; i < dim; ++i) {
                            input_grad[static_cast<size_t>(i)] += g * ov[i];
                            ov[i] -= g * input[static_cast<size_t>(i)];
                        }
                    }
                }
                if (!any_pair) continue;
                float* wv_mut = emb.word_vecs.data() + word * dim;
                for (int64_t i = 0; i < dim; ++i)
                    wv_mut[i] -= input_grad[static_cast<size_t>(i)];
                if (!grams.empty()) {
                    const float scale = 1.0f / static_cast<float>(grams.size());
                    for (uint32_t gbucket : grams) {
                        float* gv = emb.ngram_vecs.data() +
                                    static_cast<int64_t>(gbucket) * dim;
                        for (int64_t i = 0; i < dim; ++i)
                            gv[i] -= scale * input_grad[static_cast<size_t>(i)];
                    }
                }
            }
        }
        emb.epoch_mean_loss.push_back(
            loss_terms ? loss_sum / static_cast<double>(loss_terms) : 0.0);
    }
    return emb;
}

std::vector<float> word_vector(const StaticEmbeddings& emb, const std::string& word) {
    std::vector<float> out(static_cast<size_t>(emb.dim), 0.0f);
    const auto grams = char_ngram_buckets(word, emb.minn, emb.maxn, emb.buckets);
    for (uint32_t g : grams) {
        const float* gv = emb.ngram_vecs.data() + static_cast<int64_t>(g) * emb.dim;
        for (int64_t i = 0; i < emb.dim; ++i) out[static_cast<size_t>(i)] += gv[i];
    }
    if (!grams.empty())
        for (float& v : out) v /= static_cast<float>(grams.size());
    auto it = emb.word_to_id.find(word);
    if (it != emb.word_to_id.end()) {
        const float* wv = emb.word_vecs.data() + it->second * emb.dim;
        for (int64_t i = 0; i < emb.dim; ++i) out[static_cast<size_t>(i)] += wv[i];
    }
    return out;
}

void save_embeddings_text(const StaticEmbeddings& emb, const std::string& path) {
    std::ostringstream os;
    os << emb.vocab.size() << ' ' << emb.dim << '\n';
    char buf[32];
    for (const auto& word : emb.vocab) {
        os << word;
        const auto vec = word_vector(emb, word);
        for (float v : vec) {
            std::snprintf(buf, sizeof(buf), " %.8g", v);
            os << buf;
        }
        os << '\n';
    }
    write_text_file(path, os.str());
}

std::optional<std::vector<float>> VectorTable::lookup(const std::string& word) const {
    auto it = word_to_id.find(word);
    if (it == word_to_id.end()) return std::nullopt;
    return std::vector<float>(
        vecs.begin() + static_cast<int64_t>(it->second) * dim,
        vecs.begin() + (static_cast<int64_t>(it->second) + 1) * dim);
}

VectorTable load_embeddings_text(const std::string& path) {
    std::istringstream in(read_text_file(path));
    VectorTable table;
    int64_t count = 0;
    if (!(in >> count >> table.dim) || count < 0 || table.dim <= 0)
        throw ParseError("bad embedding header in " + path, 1);
    table.vecs.reserve(static_cast<size_t>(count * table.dim));
    for (int64_t w = 0; w < count; ++w) {
        std::string word;
        if (!(in >> word))
            throw ParseError("truncated embedding file " + path,
                             static_cast<size_t>(w + 2));
        table.word_to_id[word] = static_cast<int32_t>(table.words.size());
        table.words.push_back(word);
        for (int64_t i = 0; i < table.dim; ++i) {
            float v = 0.0f;
            if (!(in >> v))
                throw ParseError("truncated embedding row in " + path,
                                 static_cast<size_t>(w + 2));
            table.vecs.push_back(v);
        }
    }
    return table;
}

void save_embeddings_binary(const StaticEmbeddings& emb, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path);
    const char magic[8] = {'L', 'M', 'F', 'G', 'E', 'M', 'B', '1'};
    out.write(magic, 8);
    auto write_i64 = [&out](int64_t v) {
        out.write(reinterpret_cast<const char*>(&v), sizeof(v));
    };
    write_i64(emb.dim);
    write_i64(emb.minn);
    write_i64(emb.maxn);
    write_i64(emb.buckets);
    write_i64(static_cast<int64_t>(emb.vocab.size()));
    for (const auto& word : emb.vocab) {
        write_i64(static_cast<int64_t>(word.size()));
        out.write(word.data(), static_cast<std::streamsize>(word.size()));
    }
    out.write(reinterpret_cast<const char*>(emb.word_vecs.data()),
              static_cast<std::streamsize>(emb.word_vecs.size() * sizeof(float)));
    out.write(reinterpret_cast<const char*>(emb.ngram_vecs.data()),
              static_cast<std::streamsize>(emb.ngram_vecs.size() * sizeof(float)));
    if (!out) throw IoError("failed writing " + path);
}

StaticEmbeddings load_embeddings_binary(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, "LMFGEMB1", 8) != 0)
        throw CorruptionError("not an embedding model file: " + path);
    auto read_i64 = [&in, &path]() {
        int64_t v = 0;
        in.read(reinterpret_cast<char*>(&v), sizeof(v));
        if (!in) throw CorruptionError("truncated embedding model: " + path);
        return v;
    };
    StaticEmbeddings emb;
    emb.dim = read_i64();
    emb.minn = read_i64();
    emb.maxn = read_i64();
    emb.buckets = read_i64();
    const int64_t vocab = read_i64();
    if (emb.dim <= 0 || emb.buckets <= 0 || vocab < 0)
        throw CorruptionError("bad embedding model header: " + path);
    for (int64_t w = 0; w < vocab; ++w) {
        const int64_t len = read_i64();
        std::string word(static_cast<size_t>(len), '\0');
        in.read(word.data(), len);
        if (!in) throw CorruptionError("truncated embedding model: " + path);
        emb.word_to_id[word] = static_cast<int32_t>(emb.vocab.size());
        emb.vocab.push_back(std::move(word));
    }
    emb.word_vecs.resize(static_cast<size_t>(vocab * emb.dim));
    emb.ngram_vecs.resize(static_cast<size_t>(emb.buckets * emb.dim));
    in.read(reinterpret_cast<char*>(emb.word_vecs.data()),
            static_cast<std::streamsize>(emb.word_vecs.size() * sizeof(float)));
    in.read(reinterpret_cast<char*>(emb.ngram_vecs.data()),
            static_cast<std::streamsize>(emb.ngram_vecs.size() * sizeof(float)));
    if (!in) throw CorruptionError("truncated embedding model: " + path);
    return emb;
}

}  // namespace lmforge
