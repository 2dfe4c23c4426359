#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <variant>
#include <vector>

#include "lmforge/corpus.hpp"

namespace lmforge {

enum class TokenizerAlgo { kWordPiece, kBpe };

const char* to_string(TokenizerAlgo algo);
TokenizerAlgo tokenizer_algo_from_string(const std::string& name);

struct Encoding {
    std::vector<int32_t> ids;
    std::vector<std::string> tokens;
    std::vector<int32_t> attention_mask;  // all ones before padding
    std::vector<int32_t> segment_ids;     // empty unless a pair was encoded
};

// Greedy longest-match subword vocabulary with "##" continuation pieces.
// Specials occupy ids 0..4: [PAD] [UNK] [CLS] [SEP] [MASK].
struct WordPieceModel {
    static constexpr int32_t kPadId = 0, kUnkId = 1, kClsId = 2, kSepId = 3,
                             kMaskId = 4;
    static constexpr int32_t kSpecialCount = 5;

    std::vector<std::string> id_to_token;
    std::unordered_map<std::string, int32_t> token_to_id;
    int64_t max_word_chars = 100;

    int32_t id_of(const std::string& token) const;  // -1 when absent
};

// Byte-pair vocabulary over word characters plus an end-of-word symbol.
// Specials occupy ids 0..4: <pad> <unk> <s> </s> <mask>.
struct BpeModel {
    static constexpr int32_t kPadId = 0, kUnkId = 1, kBosId = 2, kEosId = 3,
                             kMaskId = 4;
    static constexpr int32_t kSpecialCount = 5;
    static constexpr const char* kEndOfWord = "</w>";

    std::vector<std::string> id_to_token;
    std::unordered_map<std::string, int32_t> token_to_id;
    // Highest priority first; rank = index.
    std::vector<std::pair<std::string, std::string>> merges;

    int32_t id_of(const std::string& token) const;
};

// Whitespace split plus punctuation isolation, applied to NFC-normalized
// (optionally lowercased) text. Special token literals pass through intact.
std::vector<std::string> pretokenize(const std::string& text, bool lowercase,
                                     const std::vector<std::string>& protect = {});

WordPieceModel train_wordpiece(const Corpus& corpus, int64_t vocab_size,
                               int64_t min_frequency);
BpeModel train_bpe(const Corpus& corpus, int64_t vocab_size, int64_t min_frequency);

// One trained tokenizer of either flavor.
class Tokenizer {
public:
    Tokenizer() = default;
    explicit Tokenizer(WordPieceModel model) : model_(std::move(model)) {}
    explicit Tokenizer(BpeModel model) : model_(std::move(model)) {}

    TokenizerAlgo algo() const;
    const WordPieceModel& wordpiece() const { return std::get<WordPieceModel>(model_); }
    const BpeModel& bpe() const { return std::get<BpeModel>(model_); }

    int64_t vocab_size() const;
    int32_t pad_id() const { return 0; }
    int32_t unk_id() const { return 1; }
    int32_t begin_id() const { return 2; }  // [CLS] / <s>
    int32_t end_id() const { return 3; }    // [SEP] / </s>
    int32_t mask_token_id() const { return 4; }
    bool is_special(int32_t id) const { return id >= 0 && id < 5; }
    const std::string& token_of(int32_t id) const;
    // The literal a user writes to stand for the mask: "[MASK]" or "<mask>".
    const std::string& mask_token_string() const;

    Encoding encode(const std::string& text, bool add_special_tokens,
                    const std::optional<std::string>& pair = std::nullopt,
                    bool lowercase = false) const;
    std::string decode(const std::vector<int32_t>& ids) const;

    // vocab.txt (one token per line, id = line number); BPE also writes
    // merges.txt ("#version" header, then one "left right" pair per line).
    void save(const std::string& dir) const;
    static Tokenizer load(const std::string& dir);

private:
    std::variant<WordPieceModel, BpeModel> model_;
};

}  // namespace lmforge
