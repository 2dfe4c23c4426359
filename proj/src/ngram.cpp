#include "lmforge/ngram.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

namespace lmforge {

namespace {

std::vector<std::string> whitespace_tokens(const std::string& sentence) {
    std::vector<std::string> tokens;
    std::istringstream in(sentence);
    std::string token;
    while (in >> token) tokens.push_back(token);
    return tokens;
}

}  // namespace

NGramModel NGramModel::with_vocabulary(const std::vector<std::string>& words,
                                       int64_t order, double add_k) {
    if (order < 1) throw UsageError("n-gram order must be at least 1");
    if (add_k < 0.0) throw UsageError("add_k must be non-negative");
    NGramModel model;
    model.order = order;
    model.add_k = add_k;
    std::set<std::string> unique(words.begin(), words.end());
    model.vocab.assign(unique.begin(), unique.end());
    for (size_t i = 0; i < model.vocab.size(); ++i)
        model.word_to_id[model.vocab[i]] =
            kFirstWordId + static_cast<int32_t>(i);
    return model;
}

int32_t NGramModel::id_of(const std::string& word) const {
    auto it = word_to_id.find(word);
    return it == word_to_id.end() ? kUnkId : it->second;
}

double NGramModel::conditional(const std::vector<int32_t>& context,
                               int32_t next) const {
    std::vector<int32_t> h = context;
    if (static_cast<int64_t>(h.size()) > order - 1)
        h.erase(h.begin(), h.end() - (order - 1));

    auto total_it = context_totals.find(h);
    const double total =
        total_it == context_totals.end() ? 0.0 : static_cast<double>(total_it->second);
    std::vector<int32_t> ngram = h;
    ngram.push_back(next);
    auto count_it = kgram_counts.find(ngram);
    const double count =
        count_it == kgram_counts.end() ? 0.0 : static_cast<double>(count_it->second);

    const double denom = total + add_k * static_cast<double>(outcome_count());
    if (denom == 0.0) return 0.0;
    return (count + add_k) / denom;
}

NGramModel train_ngram(const Corpus& corpus, int64_t order, double add_k) {
    if (corpus.sentence_count() == 0)
        throw UsageError("cannot train an n-gram model on an empty corpus");

    std::vector<std::string> words;
    for (const auto& doc : corpus.documents)
        for (const auto& sentence : doc)
            for (auto& token : whitespace_tokens(sentence)) words.push_back(token);
    NGramModel model = NGramModel::with_vocabulary(words, order, add_k);

    for (const auto& doc : corpus.documents) {
        for (const auto& sentence : doc) {
            std::vector<int32_t> seq(static_cast<size_t>(order - 1),
                                     NGramModel::kStartId);
            for (const auto& token : whitespace_tokens(sentence))
                seq.push_back(model.id_of(token));
            seq.push_back(NGramModel::kEndId);

            for (int64_t k = 1; k <= order; ++k)
                for (size_t i = 0; i + static_cast<size_t>(k) <= seq.size(); ++i)
                    ++model.kgram_counts[std::vector<int32_t>(
                        seq.begin() + static_cast<long>(i),
                        seq.begin() + static_cast<long>(i) + k)];
            // Every emitted token (words and the end symbol) counts for its
            // preceding context.
            for (size_t pos = static_cast<size_t>(order - 1); pos < seq.size(); ++pos)
                ++model.context_totals[std::vector<int32_t>(
                    seq.begin() + static_cast<long>(pos) - (order - 1),
                    seq.begin() + static_cast<long>(pos))];
        }
    }
    return model;
}

double sentence_logprob(const NGramModel& model, const std::string& sentence) {
    std::vector<int32_t> context(static_cast<size_t>(model.order - 1),
                                 NGramModel::kStartId);
    double logprob = 0.0;
    auto step = [&](int32_t next) {
        const double p = model.conditional(context, next);
        logprob += p > 0.0 ? std::log(p) : -HUGE_VAL;
        context.push_back(next);
        if (static_cast<int64_t>(context.size()) > model.order - 1)
            context.erase(context.begin());
    };
    for (const auto& token : whitespace_tokens(sentence)) step(model.id_of(token));
    step(NGramModel::kEndId);
    return logprob;
}

double perplexity(const NGramModel& model, const Corpus& corpus) {
    double total_logprob = 0.0;
    int64_t tokens = 0;
    for (const auto& doc : corpus.documents) {
        for (const auto& sentence : doc) {
            const double lp = sentence_logprob(model, sentence);
            if (!std::isfinite(lp))
                throw EvaluationError(
                    "zero-probability event; use add_k > 0 for held-out text");
            total_logprob += lp;
            tokens += static_cast<int64_t>(whitespace_tokens(sentence).size()) + 1;
        }
    }
    if (tokens == 0) throw EvaluationError("empty evaluation corpus");
    return std::exp(-total_logprob / static_cast<double>(tokens));
}

void save_ngram(const NGramModel& model, const std::string& path) {
    std::ostringstream os;
    os << "lmforge-ngram 1\n";
    os << model.order << ' ' << model.add_k << '\n';
    os << model.vocab.size() << '\n';
    for (const auto& w : model.vocab) os << w << '\n';
    os << model.kgram_counts.size() << '\n';
    for (const auto& [gram, count] : model.kgram_counts) {
        for (size_t i = 0; i < gram.size(); ++i) os << gram[i] << ' ';
        os << count << '\n';
    }
    os << model.context_totals.size() << '\n';
    for (const auto& [ctx, count] : model.context_totals) {
        os << ctx.size();
        for (int32_t id : ctx) os << ' ' << id;
        os << ' ' << count << '\n';
    }
    write_text_file(path, os.str());
}

NGramModel load_ngram(const std::string& path) {
    std::istringstream in(read_text_file(path));
    std::string magic;
    int version = 0;
    in >> magic >> version;
    if (magic != "lmforge-ngram" || version != 1)
        throw ParseError("not an n-gram model file: " + path, 1);
    NGramModel model;
    size_t vocab_size = 0;
    in >> model.order >> model.add_k >> vocab_size;
    model.vocab.resize(vocab_size);
    for (auto& w : model.vocab) in >> w;
    for (size_t i = 0; i < model.vocab.size(); ++i)
        model.word_to_id[model.vocab[i]] =
            NGramModel::kFirstWordId + static_cast<int32_t>(i);
    size_t ngrams = 0;
    in >> ngrams;
    for (size_t i = 0; i < ngrams; ++i) {
        // k-grams were written with k ids then the count; length is implied
        // by the line, so re-read via the remainder of the line.
        std::string line;
        std::getline(in >> std::ws, line);
        std::istringstream ls(line);
        std::vector<int64_t> nums;
        int64_t x = 0;
        while (ls >> x) nums.push_back(x);
        if (nums.size() < 2) throw ParseError("bad k-gram row in " + path, i + 5);
        std::vector<int32_t> gram(nums.begin(), nums.end() - 1);
        model.kgram_counts[gram] = nums.back();
    }
    size_t contexts = 0;
    in >> contexts;
    for (size_t i = 0; i < contexts; ++i) {
        size_t len = 0;
        in >> len;
        std::vector<int32_t> ctx(len);
        for (auto& id : ctx) in >> id;
        int64_t count = 0;
        in >> count;
        model.context_totals[ctx] = count;
    }
    if (!in) throw ParseError("truncated n-gram model file: " + path, 0);
    return model;
}

}  // namespace lmforge
