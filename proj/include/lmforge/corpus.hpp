#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "lmforge/errors.hpp"

namespace lmforge {

enum class CasingPolicy { kCased, kUncased };

const char* to_string(CasingPolicy policy);
CasingPolicy casing_policy_from_string(const std::string& name);

// Normalized monolingual text: documents of sentences, one casing policy.
struct Corpus {
    std::vector<std::vector<std::string>> documents;
    CasingPolicy casing = CasingPolicy::kCased;
    std::string source_name;

    int64_t document_count() const { return static_cast<int64_t>(documents.size()); }
    int64_t sentence_count() const;
    // One sentence per line, blank line between documents (the load format).
    std::string serialize() const;
};

struct WordSimRow {
    std::string word1;
    std::string word2;
    double human_score = 0.0;  // in [0, 10]
};

struct WordSimDataset {
    std::vector<WordSimRow> rows;
};

enum class SentimentLabel { kPositive, kNegative };

struct SentimentRow {
    std::string text;
    SentimentLabel label = SentimentLabel::kPositive;
};

struct SentimentDataset {
    std::vector<SentimentRow> rows;
    int64_t count(SentimentLabel label) const;
};

struct SentencePair {
    std::string sentence_a;
    std::string sentence_b;
    bool is_next = false;
};

// Reads UTF-8 text, one sentence per line, blank line = document boundary.
// Sentences are NFC-normalized, lowercased under the uncased policy, and
// stripped of trailing whitespace. Empty documents never appear.
Corpus load_corpus(const std::string& path, CasingPolicy casing);
Corpus corpus_from_string(const std::string& content, CasingPolicy casing,
                          const std::string& source_name = "<memory>");

// Document-granularity split, deterministic under the seed. Both sides are
// non-empty whenever the corpus has two or more documents.
std::pair<Corpus, Corpus> split_train_valid(const Corpus& corpus, double valid_fraction,
                                            uint64_t seed);

// Draws `count` pairs with round(count * positive_fraction) adjacent
// positives; negatives take sentence_b from a different document, or from a
// non-adjacent position when only one document exists.
std::vector<SentencePair> sample_sentence_pairs(const Corpus& corpus, int64_t count,
                                                double positive_fraction,
                                                uint64_t seed);

// Three tab-separated columns: word1, word2, score in [0, 10]. Lines starting
// with '#' are comments.
WordSimDataset load_wordsim(const std::string& path);

// Two tab-separated columns: text, label in {positive, negative}.
SentimentDataset load_sentiment(const std::string& path);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

}  // namespace lmforge
