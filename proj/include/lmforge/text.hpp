#pragma once

#include <string>
#include <string_view>

namespace lmforge::text {

// Strict UTF-8 decode. Rejects overlong forms, surrogates and truncated
// sequences with an EncodingError carrying the byte offset.
std::u32string decode_utf8(std::string_view bytes);

std::string encode_utf8(const std::u32string& cps);
std::string encode_utf8(char32_t cp);

// Unicode simple lowercase mapping for the scripts this toolkit handles:
// ASCII, Latin-1, Latin Extended-A, the Latin Extended-B / IPA letters used
// by African orthographies, Greek and Cyrillic. Unknown code points map to
// themselves.
char32_t simple_lowercase(char32_t cp);

bool is_whitespace(char32_t cp);
bool is_punctuation(char32_t cp);

// Canonical composition of base letter + combining mark pairs where a
// precomposed Latin character exists (NFC for the character repertoire of
// the bundled corpora). Sequences without a precomposed form are kept as-is.
std::u32string compose_nfc(const std::u32string& cps);

// NFC + optional lowercasing + trailing-whitespace strip, returning UTF-8.
std::string normalize_line(std::string_view line, bool lowercase);

std::string lowercase_utf8(std::string_view s);

}  // namespace lmforge::text
