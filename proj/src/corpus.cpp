#include "lmforge/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "lmforge/rng.hpp"
#include "lmforge/text.hpp"

namespace lmforge {

const char* to_string(CasingPolicy policy) {
    return policy == CasingPolicy::kCased ? "cased" : "uncased";
}

CasingPolicy casing_policy_from_string(const std::string& name) {
    if (name == "cased") return CasingPolicy::kCased;
    if (name == "uncased") return CasingPolicy::kUncased;
    throw UsageError("unknown casing policy: " + name);
}

int64_t Corpus::sentence_count() const {
    int64_t n = 0;
    for (const auto& doc : documents) n += static_cast<int64_t>(doc.size());
    return n;
}

std::string Corpus::serialize() const {
    std::string out;
    for (size_t d = 0; d < documents.size(); ++d) {
        if (d) out += '\n';
        for (const auto& sentence : documents[d]) {
            out += sentence;
            out += '\n';
        }
    }
    return out;
}

int64_t SentimentDataset::count(SentimentLabel label) const {
    int64_t n = 0;
    for (const auto& row : rows) n += (row.label == label);
    return n;
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    if (in.bad()) throw IoError("failed reading file: " + path);
    return buf.str();
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open file for writing: " + path);
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw IoError("failed writing file: " + path);
}

Corpus corpus_from_string(const std::string& content, CasingPolicy casing,
                          const std::string& source_name) {
    Corpus corpus;
    corpus.casing = casing;
    corpus.source_name = source_name;

    std::vector<std::string> current;
    size_t pos = 0;
    while (pos <= content.size()) {
        size_t eol = content.find('\n', pos);
        const bool last = eol == std::string::npos;
        std::string_view line(content.data() + pos,
                              (last ? content.size() : eol) - pos);
        if (last && line.empty()) break;
        std::string normalized =
            text::normalize_line(line, casing == CasingPolicy::kUncased);
        if (normalized.empty()) {
            if (!current.empty()) {
                corpus.documents.push_back(std::move(current));
                current.clear();
            }
        } else {
            current.push_back(std::move(normalized));
        }
        if (last) break;
        pos = eol + 1;
    }
    if (!current.empty()) corpus.documents.push_back(std::move(current));
    return corpus;
}

Corpus load_corpus(const std::string& path, CasingPolicy casing) {
    return corpus_from_string(read_text_file(path), casing, path);
}

std::pair<Corpus, Corpus> split_train_valid(const Corpus& corpus, double valid_fraction,
                                            uint64_t seed) {
    if (!(valid_fraction > 0.0 && valid_fraction < 1.0))
        throw UsageError("valid_fraction must lie strictly between 0 and 1");
    const int64_t docs = corpus.document_count();
    if (docs == 0) throw UsageError("cannot split an empty corpus");
    int64_t valid_docs =
        static_cast<int64_t>(std::floor(valid_fraction * static_cast<double>(docs)));
    if (docs >= 2) valid_docs = std::clamp<int64_t>(valid_docs, 1, docs - 1);
    if (valid_docs == 0 || valid_docs == docs)
        throw UsageError("split would leave one side empty");

    std::vector<size_t> order(static_cast<size_t>(docs));
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng = Rng::with_stream(seed, 0x5e17);
    rng.shuffle(order);

    Corpus train, valid;
    train.casing = valid.casing = corpus.casing;
    train.source_name = corpus.source_name + "#train";
    valid.source_name = corpus.source_name + "#valid";
    for (size_t i = 0; i < order.size(); ++i) {
        auto& side = (static_cast<int64_t>(i) < valid_docs) ? valid : train;
        side.documents.push_back(corpus.documents[order[i]]);
    }
    return {std::move(train), std::move(valid)};
}

std::vector<SentencePair> sample_sentence_pairs(const Corpus& corpus, int64_t count,
                                                double positive_fraction,
                                                uint64_t seed) {
    if (count <= 0) throw UsageError("pair count must be positive");
    if (positive_fraction < 0.0 || positive_fraction > 1.0)
        throw UsageError("positive_fraction must lie in [0, 1]");

    // Documents that can host an adjacent (positive) pair.
    std::vector<size_t> multi_sentence_docs;
    for (size_t d = 0; d < corpus.documents.size(); ++d)
        if (corpus.documents[d].size() >= 2) multi_sentence_docs.push_back(d);
    const int64_t positives =
        static_cast<int64_t>(std::llround(positive_fraction * static_cast<double>(count)));
    if (positives > 0 && multi_sentence_docs.empty())
        throw UsageError("corpus has no document with two or more sentences");
    const bool single_doc = corpus.document_count() == 1;
    if (positives < count) {
        if (single_doc && corpus.documents[0].size() < 3)
            throw UsageError("cannot draw negative pairs from this corpus");
        if (corpus.document_count() == 0) throw UsageError("empty corpus");
    }

    Rng rng = Rng::with_stream(seed, 0x9a1f);
    std::vector<SentencePair> pairs;
    pairs.reserve(static_cast<size_t>(count));

    // Lay out which slots are positive, then shuffle the slot order.
    std::vector<char> is_positive(static_cast<size_t>(count), 0);
    for (int64_t i = 0; i < positives; ++i) is_positive[static_cast<size_t>(i)] = 1;
    rng.shuffle(is_positive);

    for (int64_t i = 0; i < count; ++i) {
        SentencePair pair;
        if (is_positive[static_cast<size_t>(i)]) {
            const size_t d = multi_sentence_docs[static_cast<size_t>(
                rng.uniform_int(0, static_cast<int64_t>(multi_sentence_docs.size())))];
            const auto& doc = corpus.documents[d];
            const size_t s = static_cast<size_t>(
                rng.uniform_int(0, static_cast<int64_t>(doc.size()) - 1));
            pair.sentence_a = doc[s];
            pair.sentence_b = doc[s + 1];
            pair.is_next = true;
        } else {
            const size_t da = static_cast<size_t>(
                rng.uniform_int(0, corpus.document_count()));
            const auto& doc_a = corpus.documents[da];
            const size_t sa = static_cast<size_t>(
                rng.uniform_int(0, static_cast<int64_t>(doc_a.size())));
            pair.sentence_a = doc_a[sa];
            if (!single_doc) {
                size_t db = da;
                while (db == da)
                    db = static_cast<size_t>(
                        rng.uniform_int(0, corpus.document_count()));
                const auto& doc_b = corpus.documents[db];
                pair.sentence_b = doc_b[static_cast<size_t>(
                    rng.uniform_int(0, static_cast<int64_t>(doc_b.size())))];
            } else {
                // Single document: pick any sentence that does not follow a.
                size_t sb = sa;
                while (sb == sa + 1 || sb == sa)
                    sb = static_cast<size_t>(
                        rng.uniform_int(0, static_cast<int64_t>(doc_a.size())));
                pair.sentence_b = doc_a[sb];
            }
            pair.is_next = false;
        }
        pairs.push_back(std::move(pair));
    }
    return pairs;
}

namespace {

std::vector<std::string> split_tab(const std::string& line) {
    std::vector<std::string> cols;
    size_t pos = 0;
    while (true) {
        size_t tab = line.find('\t', pos);
        if (tab == std::string::npos) {
            cols.push_back(line.substr(pos));
            break;
        }
        cols.push_back(line.substr(pos, tab - pos));
        pos = tab + 1;
    }
    return cols;
}

template <typename Fn>
void for_each_data_line(const std::string& path, Fn&& fn) {
    const std::string content = read_text_file(path);
    (void)text::decode_utf8(content);  // reject non-UTF-8 input up front
    size_t pos = 0;
    size_t line_no = 0;
    while (pos < content.size()) {
        size_t eol = content.find('\n', pos);
        if (eol == std::string::npos) eol = content.size();
        std::string line = content.substr(pos, eol - pos);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        ++line_no;
        if (!line.empty() && line[0] != '#') fn(line, line_no);
        pos = eol + 1;
    }
}

}  // namespace

WordSimDataset load_wordsim(const std::string& path) {
    WordSimDataset dataset;
    std::set<std::pair<std::string, std::string>> seen;
    for_each_data_line(path, [&](const std::string& line, size_t line_no) {
        const auto cols = split_tab(line);
        if (cols.size() != 3)
            throw ParseError("wordsim row needs 3 tab-separated columns, got " +
                                 std::to_string(cols.size()) + " at line " +
                                 std::to_string(line_no),
                             line_no);
        WordSimRow row;
        row.word1 = cols[0];
        row.word2 = cols[1];
        try {
            size_t used = 0;
            row.human_score = std::stod(cols[2], &used);
            if (used != cols[2].size()) throw std::invalid_argument("trailing junk");
        } catch (const std::exception&) {
            throw ParseError("wordsim score is not a number at line " +
                                 std::to_string(line_no),
                             line_no);
        }
        if (row.human_score < 0.0 || row.human_score > 10.0)
            throw ValidationError("wordsim score " + std::to_string(row.human_score) +
                                  " outside [0, 10] at line " + std::to_string(line_no));
        auto key = std::minmax(row.word1, row.word2);
        if (!seen.insert({key.first, key.second}).second)
            throw ValidationError("duplicate word pair at line " +
                                  std::to_string(line_no));
        dataset.rows.push_back(std::move(row));
    });
    return dataset;
}

SentimentDataset load_sentiment(const std::string& path) {
    SentimentDataset dataset;
    for_each_data_line(path, [&](const std::string& line, size_t line_no) {
        const auto cols = split_tab(line);
        if (cols.size() != 2)
            throw ParseError("sentiment row needs 2 tab-separated columns at line " +
                                 std::to_string(line_no),
                             line_no);
        SentimentRow row;
        row.text = cols[0];
        if (cols[1] == "positive") {
            row.label = SentimentLabel::kPositive;
        } else if (cols[1] == "negative") {
            row.label = SentimentLabel::kNegative;
        } else {
            throw ValidationError("sentiment label must be positive|negative at line " +
                                  std::to_string(line_no));
        }
        dataset.rows.push_back(std::move(row));
    });
    if (!dataset.rows.empty()) {
        if (dataset.count(SentimentLabel::kPositive) == 0 ||
            dataset.count(SentimentLabel::kNegative) == 0)
            throw ValidationError("sentiment dataset must contain both labels");
    }
    return dataset;
}

}  // namespace lmforge
