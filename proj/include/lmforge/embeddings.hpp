#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "lmforge/corpus.hpp"

namespace lmforge {

struct EmbeddingTrainConfig {
    int64_t dim = 64;
    int64_t window = 5;
    int64_t negatives = 5;
    int64_t epochs = 5;
    int64_t minn = 3;
    int64_t maxn = 6;
    int64_t buckets = 200000;
    int64_t min_count = 1;
    double lr = 0.05;
    uint64_t seed = 0;
};

// Subword skip-gram embeddings: a word's representation is its word vector
// plus the mean of its hashed character-n-gram bucket vectors, trained with
// negative sampling.
struct StaticEmbeddings {
    int64_t dim = 0;
    int64_t minn = 3;
    int64_t maxn = 6;
    int64_t buckets = 0;

    std::vector<std::string> vocab;
    std::unordered_map<std::string, int32_t> word_to_id;
    std::vector<float> word_vecs;   // vocab x dim
    std::vector<float> ngram_vecs;  // buckets x dim

    std::vector<double> epoch_mean_loss;  // negative-sampling objective
};

// FNV-1a bucket ids of the character n-grams of "<word>". Lengths count
// code points; the delimited whole word is included when it fits maxn.
std::vector<uint32_t> char_ngram_buckets(const std::string& word, int64_t minn,
                                         int64_t maxn, int64_t buckets);

StaticEmbeddings train_static_embeddings(const Corpus& corpus,
                                         const EmbeddingTrainConfig& config);

// Composed vector: word vector + n-gram mean for in-vocabulary words,
// n-gram mean alone for OOV words, zeros when no n-grams are extractable.
std::vector<float> word_vector(const StaticEmbeddings& embeddings,
                               const std::string& word);

// Text format: "count dim" header, then "word v1 ... vdim" rows holding the
// composed vectors.
void save_embeddings_text(const StaticEmbeddings& embeddings,
                          const std::string& path);

struct VectorTable {
    int64_t dim = 0;
    std::vector<std::string> words;
    std::unordered_map<std::string, int32_t> word_to_id;
    std::vector<float> vecs;

    std::optional<std::vector<float>> lookup(const std::string& word) const;
};

VectorTable load_embeddings_text(const std::string& path);

// Full-model binary round trip (word vectors plus n-gram buckets).
void save_embeddings_binary(const StaticEmbeddings& embeddings,
                            const std::string& path);
StaticEmbeddings load_embeddings_binary(const std::string& path);

}  // namespace lmforge
