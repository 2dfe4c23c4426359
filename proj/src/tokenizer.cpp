#include "lmforge/tokenizer.hpp"

#include <algorithm>
#include <filesystem>
#include <map>
#include <set>

#include "lmforge/text.hpp"

namespace lmforge {

namespace {

constexpr const char* kWordPieceSpecials[] = {"[PAD]", "[UNK]", "[CLS]", "[SEP]",
                                              "[MASK]"};
constexpr const char* kBpeSpecials[] = {"<pad>", "<unk>", "<s>", "</s>", "<mask>"};
constexpr const char* kContinuation = "##";

bool has_continuation_prefix(const std::string& s) {
    return s.size() >= 2 && s[0] == '#' && s[1] == '#';
}

// Word frequency table with deterministic (sorted) iteration.
std::map<std::string, int64_t> count_words(const Corpus& corpus) {
    std::map<std::string, int64_t> freq;
    for (const auto& doc : corpus.documents)
        for (const auto& sentence : doc)
            for (const auto& word : pretokenize(sentence, false)) ++freq[word];
    return freq;
}

using SymbolSeq = std::vector<std::string>;
using Pair = std::pair<std::string, std::string>;

// Iterative highest-frequency pair merging over per-word symbol sequences.
// Ties break on the lexicographically smallest (left, right) pair. `join`
// builds the merged symbol from its two halves.
template <typename JoinFn>
std::vector<Pair> learn_merges(std::vector<std::pair<SymbolSeq, int64_t>>& words,
                               int64_t budget, int64_t min_frequency,
                               std::set<std::string>& vocab_symbols, JoinFn&& join) {
    std::vector<Pair> merges;
    while (budget > 0) {
        std::map<Pair, int64_t> counts;
        for (const auto& [seq, freq] : words)
            for (size_t i = 0; i + 1 < seq.size(); ++i)
                counts[{seq[i], seq[i + 1]}] += freq;
        const Pair* best = nullptr;
        int64_t best_count = 0;
        for (const auto& [pair, count] : counts) {
            if (count > best_count) {  // map order already breaks ties low
                best = &pair;
                best_count = count;
            }
        }
        if (!best || best_count < std::max<int64_t>(min_frequency, 1)) break;
        const Pair chosen = *best;
        const std::string merged = join(chosen.first, chosen.second);
        merges.push_back(chosen);
        vocab_symbols.insert(merged);
        for (auto& [seq, freq] : words) {
            SymbolSeq next;
            next.reserve(seq.size());
            size_t i = 0;
            while (i < seq.size()) {
                if (i + 1 < seq.size() && seq[i] == chosen.first &&
                    seq[i + 1] == chosen.second) {
                    next.push_back(merged);
                    i += 2;
                } else {
                    next.push_back(seq[i]);
                    ++i;
                }
            }
            seq = std::move(next);
        }
        --budget;
    }
    return merges;
}

}  // namespace

const char* to_string(TokenizerAlgo algo) {
    return algo == TokenizerAlgo::kWordPiece ? "wordpiece" : "bpe";
}

TokenizerAlgo tokenizer_algo_from_string(const std::string& name) {
    if (name == "wordpiece") return TokenizerAlgo::kWordPiece;
    if (name == "bpe") return TokenizerAlgo::kBpe;
    throw UsageError("unknown tokenizer algorithm: " + name);
}

int32_t WordPieceModel::id_of(const std::string& token) const {
    auto it = token_to_id.find(token);
    return it == token_to_id.end() ? -1 : it->second;
}

int32_t BpeModel::id_of(const std::string& token) const {
    auto it = token_to_id.find(token);
    return it == token_to_id.end() ? -1 : it->second;
}

std::vector<std::string> pretokenize(const std::string& text, bool lowercase,
                                     const std::vector<std::string>& protect) {
    std::vector<std::string> words;
    size_t pos = 0;
    std::string plain;
    auto flush_plain = [&]() {
        if (plain.empty()) return;
        const std::u32string cps =
            text::compose_nfc(text::decode_utf8(plain));
        std::string word;
        for (char32_t cp_raw : cps) {
            const char32_t cp = lowercase ? text::simple_lowercase(cp_raw) : cp_raw;
            if (text::is_whitespace(cp)) {
                if (!word.empty()) {
                    words.push_back(std::move(word));
                    word.clear();
                }
            } else if (text::is_punctuation(cp)) {
                if (!word.empty()) {
                    words.push_back(std::move(word));
                    word.clear();
                }
                words.push_back(text::encode_utf8(cp));
            } else {
                word += text::encode_utf8(cp);
            }
        }
        if (!word.empty()) words.push_back(std::move(word));
        plain.clear();
    };
    while (pos < text.size()) {
        bool matched = false;
        for (const auto& literal : protect) {
            if (!literal.empty() && text.compare(pos, literal.size(), literal) == 0) {
                flush_plain();
                words.push_back(literal);
                pos += literal.size();
                matched = true;
                break;
            }
        }
        if (!matched) plain += text[pos++];
    }
    flush_plain();
    return words;
}

WordPieceModel train_wordpiece(const Corpus& corpus, int64_t vocab_size,
                               int64_t min_frequency) {
    const auto freq = count_words(corpus);
    if (freq.empty()) throw UsageError("cannot train a tokenizer on an empty corpus");

    std::set<std::string> alphabet;
    std::vector<std::pair<SymbolSeq, int64_t>> words;
    words.reserve(freq.size());
    for (const auto& [word, count] : freq) {
        const std::u32string cps = text::decode_utf8(word);
        SymbolSeq seq;
        seq.reserve(cps.size());
        for (size_t i = 0; i < cps.size(); ++i) {
            const std::string ch = text::encode_utf8(cps[i]);
            seq.push_back(i == 0 ? ch : kContinuation + ch);
            alphabet.insert(ch);
            alphabet.insert(kContinuation + ch);
        }
        words.push_back({std::move(seq), count});
    }

    const int64_t reserved =
        WordPieceModel::kSpecialCount + static_cast<int64_t>(alphabet.size());
    if (vocab_size <= reserved)
        throw UsageError("vocab_size " + std::to_string(vocab_size) +
                         " must exceed specials + alphabet = " +
                         std::to_string(reserved));

    std::set<std::string> merged_symbols;
    auto merges = learn_merges(
        words, vocab_size - reserved, min_frequency, merged_symbols,
        [](const std::string& left, const std::string& right) {
            return left +
                   (has_continuation_prefix(right) ? right.substr(2) : right);
        });

    WordPieceModel model;
    for (const char* s : kWordPieceSpecials) model.id_to_token.push_back(s);
    for (const auto& sym : alphabet) model.id_to_token.push_back(sym);
    // Merge products in creation order, skipping symbols already present.
    std::set<std::string> seen(model.id_to_token.begin(), model.id_to_token.end());
    for (const auto& [left, right] : merges) {
        const std::string sym =
            left + (has_continuation_prefix(right) ? right.substr(2) : right);
        if (seen.insert(sym).second) model.id_to_token.push_back(sym);
    }
    for (size_t i = 0; i < model.id_to_token.size(); ++i)
        model.token_to_id[model.id_to_token[i]] = static_cast<int32_t>(i);
    return model;
}

BpeModel train_bpe(const Corpus& corpus, int64_t vocab_size, int64_t min_frequency) {
    const auto freq = count_words(corpus);
    if (freq.empty()) throw UsageError("cannot train a tokenizer on an empty corpus");

    std::set<std::string> alphabet;
    alphabet.insert(BpeModel::kEndOfWord);
    std::vector<std::pair<SymbolSeq, int64_t>> words;
    for (const auto& [word, count] : freq) {
        SymbolSeq seq;
        for (char32_t cp : text::decode_utf8(word)) {
            seq.push_back(text::encode_utf8(cp));
            alphabet.insert(seq.back());
        }
        seq.push_back(BpeModel::kEndOfWord);
        words.push_back({std::move(seq), count});
    }

    const int64_t reserved =
        BpeModel::kSpecialCount + static_cast<int64_t>(alphabet.size());
    if (vocab_size <= reserved)
        throw UsageError("vocab_size " + std::to_string(vocab_size) +
                         " must exceed specials + alphabet = " +
                         std::to_string(reserved));

    std::set<std::string> merged_symbols;
    auto merges = learn_merges(words, vocab_size - reserved, min_frequency,
                               merged_symbols,
                               [](const std::string& left, const std::string& right) {
                                   return left + right;
                               });

    BpeModel model;
    model.merges = std::move(merges);
    for (const char* s : kBpeSpecials) model.id_to_token.push_back(s);
    for (const auto& sym : alphabet) model.id_to_token.push_back(sym);
    std::set<std::string> seen(model.id_to_token.begin(), model.id_to_token.end());
    for (const auto& [left, right] : model.merges) {
        const std::string sym = left + right;
        if (seen.insert(sym).second) model.id_to_token.push_back(sym);
    }
    for (size_t i = 0; i < model.id_to_token.size(); ++i)
        model.token_to_id[model.id_to_token[i]] = static_cast<int32_t>(i);
    return model;
}

TokenizerAlgo Tokenizer::algo() const {
    return std::holds_alternative<WordPieceModel>(model_) ? TokenizerAlgo::kWordPiece
                                                          : TokenizerAlgo::kBpe;
}

int64_t Tokenizer::vocab_size() const {
    return algo() == TokenizerAlgo::kWordPiece
               ? static_cast<int64_t>(wordpiece().id_to_token.size())
               : static_cast<int64_t>(bpe().id_to_token.size());
}

const std::string& Tokenizer::token_of(int32_t id) const {
    const auto& table = algo() == TokenizerAlgo::kWordPiece ? wordpiece().id_to_token
                                                            : bpe().id_to_token;
    if (id < 0 || id >= static_cast<int32_t>(table.size()))
        throw UsageError("token id " + std::to_string(id) + " out of range");
    return table[static_cast<size_t>(id)];
}

const std::string& Tokenizer::mask_token_string() const {
    return token_of(mask_token_id());
}

namespace {

void encode_wordpiece_word(const WordPieceModel& model, const std::string& word,
                           std::vector<int32_t>& ids,
                           std::vector<std::string>& tokens) {
    const int32_t direct = model.id_of(word);
    if (direct >= 0 && direct < WordPieceModel::kSpecialCount) {
        ids.push_back(direct);
        tokens.push_back(word);
        return;
    }
    const std::u32string cps = text::decode_utf8(word);
    if (static_cast<int64_t>(cps.size()) > model.max_word_chars) {
        ids.push_back(WordPieceModel::kUnkId);
        tokens.push_back(model.id_to_token[WordPieceModel::kUnkId]);
        return;
    }
    std::vector<int32_t> piece_ids;
    std::vector<std::string> piece_tokens;
    size_t start = 0;
    while (start < cps.size()) {
        int32_t found = -1;
        size_t found_len = 0;
        for (size_t len = cps.size() - start; len >= 1; --len) {
            std::string candidate = start == 0 ? "" : kContinuation;
            candidate += text::encode_utf8(cps.substr(start, len));
            const int32_t id = model.id_of(candidate);
            if (id >= WordPieceModel::kSpecialCount) {
                found = id;
                found_len = len;
                break;
            }
        }
        if (found < 0) {
            ids.push_back(WordPieceModel::kUnkId);
            tokens.push_back(model.id_to_token[WordPieceModel::kUnkId]);
            return;
        }
        piece_ids.push_back(found);
        piece_tokens.push_back(model.id_to_token[static_cast<size_t>(found)]);
        start += found_len;
    }
    ids.insert(ids.end(), piece_ids.begin(), piece_ids.end());
    tokens.insert(tokens.end(), piece_tokens.begin(), piece_tokens.end());
}

void encode_bpe_word(const BpeModel& model, const std::string& word,
                     std::vector<int32_t>& ids, std::vector<std::string>& tokens) {
    const int32_t direct = model.id_of(word);
    if (direct >= 0 && direct < BpeModel::kSpecialCount) {
        ids.push_back(direct);
        tokens.push_back(word);
        return;
    }
    SymbolSeq seq;
    for (char32_t cp : text::decode_utf8(word)) seq.push_back(text::encode_utf8(cp));
    seq.push_back(BpeModel::kEndOfWord);

    std::map<Pair, size_t> rank;
    for (size_t i = 0; i < model.merges.size(); ++i) rank[model.merges[i]] = i;
    while (seq.size() >= 2) {
        size_t best_rank = model.merges.size();
        for (size_t i = 0; i + 1 < seq.size(); ++i) {
            auto it = rank.find({seq[i], seq[i + 1]});
            if (it != rank.end() && it->second < best_rank) best_rank = it->second;
        }
        if (best_rank == model.merges.size()) break;
        const auto& [left, right] = model.merges[best_rank];
        SymbolSeq next;
        size_t i = 0;
        while (i < seq.size()) {
            if (i + 1 < seq.size() && seq[i] == left && seq[i + 1] == right) {
                next.push_back(left + right);
                i += 2;
            } else {
                next.push_back(seq[i]);
                ++i;
            }
        }
        seq = std::move(next);
    }
    for (const auto& sym : seq) {
        const int32_t id = model.id_of(sym);
        if (id >= 0) {
            ids.push_back(id);
            tokens.push_back(sym);
        } else {
            ids.push_back(BpeModel::kUnkId);
            tokens.push_back(model.id_to_token[BpeModel::kUnkId]);
        }
    }
}

}  // namespace

Encoding Tokenizer::encode(const std::string& text_in, bool add_special_tokens,
                           const std::optional<std::string>& pair,
                           bool lowercase) const {
    std::vector<std::string> protect;
    for (int32_t id = 0; id < 5; ++id) protect.push_back(token_of(id));

    auto encode_words = [&](const std::string& txt, std::vector<int32_t>& ids,
                            std::vector<std::string>& tokens) {
        for (const auto& word : pretokenize(txt, lowercase, protect)) {
            if (algo() == TokenizerAlgo::kWordPiece)
                encode_wordpiece_word(wordpiece(), word, ids, tokens);
            else
                encode_bpe_word(bpe(), word, ids, tokens);
        }
    };

    std::vector<int32_t> ids_a, ids_b;
    std::vector<std::string> tok_a, tok_b;
    encode_words(text_in, ids_a, tok_a);
    if (pair) encode_words(*pair, ids_b, tok_b);

    Encoding out;
    auto push = [&out](int32_t id, const std::string& token, int32_t segment) {
        out.ids.push_back(id);
        out.tokens.push_back(token);
        out.segment_ids.push_back(segment);
    };
    if (add_special_tokens) {
        push(begin_id(), token_of(begin_id()), 0);
        for (size_t i = 0; i < ids_a.size(); ++i) push(ids_a[i], tok_a[i], 0);
        push(end_id(), token_of(end_id()), 0);
        if (pair) {
            for (size_t i = 0; i < ids_b.size(); ++i) push(ids_b[i], tok_b[i], 1);
            push(end_id(), token_of(end_id()), 1);
        }
    } else {
        for (size_t i = 0; i < ids_a.size(); ++i) push(ids_a[i], tok_a[i], 0);
        for (size_t i = 0; i < ids_b.size(); ++i) push(ids_b[i], tok_b[i], 1);
    }
    if (!pair || algo() == TokenizerAlgo::kBpe) out.segment_ids.clear();
    out.attention_mask.assign(out.ids.size(), 1);
    return out;
}

std::string Tokenizer::decode(const std::vector<int32_t>& ids) const {
    std::string out;
    if (algo() == TokenizerAlgo::kWordPiece) {
        for (int32_t id : ids) {
            const std::string& token = token_of(id);  // validates range
            if (is_special(id)) continue;
            if (has_continuation_prefix(token)) {
                out += token.substr(2);
            } else {
                if (!out.empty()) out += ' ';
                out += token;
            }
        }
        return out;
    }
    for (int32_t id : ids) {
        const std::string& token = token_of(id);
        if (is_special(id)) continue;
        out += token;
    }
    // End-of-word markers become spaces.
    std::string spaced;
    size_t pos = 0;
    const std::string eow = BpeModel::kEndOfWord;
    while (pos < out.size()) {
        const size_t hit = out.find(eow, pos);
        if (hit == std::string::npos) {
            spaced += out.substr(pos);
            break;
        }
        spaced += out.substr(pos, hit - pos);
        spaced += ' ';
        pos = hit + eow.size();
    }
    while (!spaced.empty() && spaced.back() == ' ') spaced.pop_back();
    return spaced;
}

void Tokenizer::save(const std::string& dir) const {
    std::filesystem::create_directories(dir);
    std::string vocab;
    const auto& table = algo() == TokenizerAlgo::kWordPiece ? wordpiece().id_to_token
                                                            : bpe().id_to_token;
    for (const auto& token : table) {
        vocab += token;
        vocab += '\n';
    }
    write_text_file(dir + "/vocab.txt", vocab);
    if (algo() == TokenizerAlgo::kBpe) {
        std::string merges = "#version: 1\n";
        for (const auto& [left, right] : bpe().merges)
            merges += left + " " + right + "\n";
        write_text_file(dir + "/merges.txt", merges);
    }
}

Tokenizer Tokenizer::load(const std::string& dir) {
    const std::string vocab_raw = read_text_file(dir + "/vocab.txt");
    std::vector<std::string> tokens;
    size_t pos = 0;
    while (pos < vocab_raw.size()) {
        size_t eol = vocab_raw.find('\n', pos);
        if (eol == std::string::npos) eol = vocab_raw.size();
        tokens.push_back(vocab_raw.substr(pos, eol - pos));
        pos = eol + 1;
    }
    while (!tokens.empty() && tokens.back().empty()) tokens.pop_back();
    if (tokens.size() < 5) throw CorruptionError("vocab file too small: " + dir);

    const bool is_bpe = std::filesystem::exists(dir + "/merges.txt");
    const char* const* specials = is_bpe ? kBpeSpecials : kWordPieceSpecials;
    for (int i = 0; i < 5; ++i)
        if (tokens[static_cast<size_t>(i)] != specials[i])
            throw CorruptionError("vocab file does not start with the special tokens");

    if (!is_bpe) {
        WordPieceModel model;
        model.id_to_token = std::move(tokens);
        for (size_t i = 0; i < model.id_to_token.size(); ++i)
            model.token_to_id[model.id_to_token[i]] = static_cast<int32_t>(i);
        return Tokenizer(std::move(model));
    }
    BpeModel model;
    model.id_to_token = std::move(tokens);
    for (size_t i = 0; i < model.id_to_token.size(); ++i)
        model.token_to_id[model.id_to_token[i]] = static_cast<int32_t>(i);
    const std::string merges_raw = read_text_file(dir + "/merges.txt");
    size_t line_no = 0;
    pos = 0;
    while (pos < merges_raw.size()) {
        size_t eol = merges_raw.find('\n', pos);
        if (eol == std::string::npos) eol = merges_raw.size();
        std::string line = merges_raw.substr(pos, eol - pos);
        pos = eol + 1;
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        const size_t space = line.find(' ');
        if (space == std::string::npos || space + 1 >= line.size())
            throw ParseError("merge rule needs two symbols at line " +
                                 std::to_string(line_no),
                             line_no);
        model.merges.push_back({line.substr(0, space), line.substr(space + 1)});
    }
    return Tokenizer(std::move(model));
}

}  // namespace lmforge
