#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "lmforge/corpus.hpp"

namespace lmforge {

// Count-based language model with add-k smoothing. Sentences are padded
// with n-1 start symbols and close with one end symbol, so conditional
// distributions over D ∪ {unk, end} sum to one for every context.
struct NGramModel {
    int64_t order = 2;
    double add_k = 1.0;

    static constexpr int32_t kUnkId = 0;
    static constexpr int32_t kStartId = 1;
    static constexpr int32_t kEndId = 2;
    static constexpr int32_t kFirstWordId = 3;

    std::vector<std::string> vocab;  // content words, sorted
    std::unordered_map<std::string, int32_t> word_to_id;

    // Occurrence counts for every k-gram with k <= order, over padded
    // sentences; keys are id sequences.
    std::map<std::vector<int32_t>, int64_t> kgram_counts;
    // Times each (order-1)-context emitted a next token.
    std::map<std::vector<int32_t>, int64_t> context_totals;

    // Model with the given vocabulary and no observations (every context
    // unseen); with add_k > 0 all conditionals are uniform.
    static NGramModel with_vocabulary(const std::vector<std::string>& words,
                                      int64_t order, double add_k);

    int32_t id_of(const std::string& word) const;
    // |D| + unk + end: the size of every conditional's outcome space.
    int64_t outcome_count() const { return static_cast<int64_t>(vocab.size()) + 2; }

    // P(next | context); context is truncated to the last order-1 ids.
    double conditional(const std::vector<int32_t>& context, int32_t next) const;
};

NGramModel train_ngram(const Corpus& corpus, int64_t order, double add_k);

// Sum of log conditionals including the end symbol; -inf when an event has
// zero probability under add_k = 0.
double sentence_logprob(const NGramModel& model, const std::string& sentence);

// exp(-mean token log-probability); the end symbol counts once per sentence.
double perplexity(const NGramModel& model, const Corpus& corpus);

void save_ngram(const NGramModel& model, const std::string& path);
NGramModel load_ngram(const std::string& path);

}  // namespace lmforge
