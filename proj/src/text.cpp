#include "lmforge/text.hpp"

#include <array>
#include <unordered_map>

#include "lmforge/errors.hpp"

namespace lmforge::text {

std::u32string decode_utf8(std::string_view bytes) {
    std::u32string out;
    out.reserve(bytes.size());
    size_t i = 0;
    const auto fail = [&](const char* why, size_t at) -> char32_t {
        throw EncodingError(std::string("invalid UTF-8: ") + why + " at byte " +
                                std::to_string(at),
                            at);
    };
    while (i < bytes.size()) {
        const size_t start = i;
        const unsigned char b0 = static_cast<unsigned char>(bytes[i]);
        char32_t cp = 0;
        int extra = 0;
        if (b0 < 0x80) {
            cp = b0;
        } else if ((b0 & 0xE0) == 0xC0) {
            cp = b0 & 0x1F;
            extra = 1;
        } else if ((b0 & 0xF0) == 0xE0) {
            cp = b0 & 0x0F;
            extra = 2;
        } else if ((b0 & 0xF8) == 0xF0) {
            cp = b0 & 0x07;
            extra = 3;
        } else {
            fail("bad leading byte", start);
        }
        ++i;
        for (int k = 0; k < extra; ++k, ++i) {
            if (i >= bytes.size()) fail("truncated sequence", start);
            const unsigned char bc = static_cast<unsigned char>(bytes[i]);
            if ((bc & 0xC0) != 0x80) fail("bad continuation byte", start);
            cp = (cp << 6) | (bc & 0x3F);
        }
        static constexpr char32_t kMin[4] = {0, 0x80, 0x800, 0x10000};
        if (extra > 0 && cp < kMin[extra]) fail("overlong encoding", start);
        if (cp >= 0xD800 && cp <= 0xDFFF) fail("surrogate code point", start);
        if (cp > 0x10FFFF) fail("code point out of range", start);
        out.push_back(cp);
    }
    return out;
}

std::string encode_utf8(char32_t cp) {
    std::string out;
    if (cp < 0x80) {
        out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
        out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else if (cp < 0x10000) {
        out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
        out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
    return out;
}

std::string encode_utf8(const std::u32string& cps) {
    std::string out;
    out.reserve(cps.size());
    for (char32_t cp : cps) out += encode_utf8(cp);
    return out;
}

char32_t simple_lowercase(char32_t cp) {
    // ASCII.
    if (cp >= U'A' && cp <= U'Z') return cp + 32;
    if (cp < 0xC0) return cp;
    // Latin-1 Supplement (0xD7 is the multiplication sign).
    if (cp >= 0xC0 && cp <= 0xDE && cp != 0xD7) return cp + 32;
    // Latin Extended-A: mostly alternating upper/lower pairs.
    if (cp >= 0x0100 && cp <= 0x0137) {
        if (cp == 0x0130) return 0x0069;  // dotted capital I
        return (cp % 2 == 0) ? cp + 1 : cp;
    }
    if (cp >= 0x0139 && cp <= 0x0148) return (cp % 2 == 1) ? cp + 1 : cp;
    if (cp >= 0x014A && cp <= 0x0177) return (cp % 2 == 0) ? cp + 1 : cp;
    if (cp == 0x0178) return 0x00FF;
    if (cp >= 0x0179 && cp <= 0x017E) return (cp % 2 == 1) ? cp + 1 : cp;
    // Latin Extended-B letters common in African orthographies.
    switch (cp) {
        case 0x0181: return 0x0253;  // B hook
        case 0x0186: return 0x0254;  // open O
        case 0x018A: return 0x0257;  // D hook
        case 0x018E: return 0x01DD;  // reversed E
        case 0x0190: return 0x025B;  // open E
        case 0x0191: return 0x0192;  // F hook
        case 0x0193: return 0x0260;  // G hook
        case 0x0194: return 0x0263;  // gamma
        case 0x0196: return 0x0269;  // iota
        case 0x0197: return 0x0268;  // barred I
        case 0x019D: return 0x0272;  // N left hook
        case 0x01A9: return 0x0283;  // esh
        case 0x01B1: return 0x028A;  // upsilon
        case 0x01B2: return 0x028B;  // V hook
        case 0x01B3: return 0x01B4;  // Y hook
        default: break;
    }
    if (cp >= 0x01CD && cp <= 0x01DC) return (cp % 2 == 1) ? cp + 1 : cp;
    if (cp >= 0x01DE && cp <= 0x01EF) return (cp % 2 == 0) ? cp + 1 : cp;
    if (cp >= 0x01F8 && cp <= 0x021F) return (cp % 2 == 0) ? cp + 1 : cp;
    if (cp >= 0x0222 && cp <= 0x0233) return (cp % 2 == 0) ? cp + 1 : cp;
    // Greek.
    if (cp >= 0x0391 && cp <= 0x03A9 && cp != 0x03A2) return cp + 32;
    // Cyrillic.
    if (cp >= 0x0410 && cp <= 0x042F) return cp + 32;
    if (cp >= 0x0400 && cp <= 0x040F) return cp + 80;
    return cp;
}

bool is_whitespace(char32_t cp) {
    switch (cp) {
        case U' ':
        case U'\t':
        case U'\n':
        case U'\r':
        case 0x0B:
        case 0x0C:
        case 0x00A0:  // no-break space
        case 0x2028:
        case 0x2029:
        case 0x3000:
            return true;
        default:
            return cp >= 0x2000 && cp <= 0x200A;
    }
}

bool is_punctuation(char32_t cp) {
    if (cp < 0x80) {
        return (cp >= 0x21 && cp <= 0x2F) || (cp >= 0x3A && cp <= 0x40) ||
               (cp >= 0x5B && cp <= 0x60) || (cp >= 0x7B && cp <= 0x7E);
    }
    switch (cp) {
        case 0x00A1:  // inverted exclamation
        case 0x00AB:  // left guillemet
        case 0x00BB:  // right guillemet
        case 0x00BF:  // inverted question
        case 0x2010:
        case 0x2011:
        case 0x2012:
        case 0x2013:  // en dash
        case 0x2014:  // em dash
        case 0x2018:
        case 0x2019:
        case 0x201C:
        case 0x201D:
        case 0x2026:  // ellipsis
        case 0x2039:
        case 0x203A:
            return true;
        default:
            return false;
    }
}

namespace {

// (base << 21) | combining mark -> precomposed character. Covers the Latin
// precomposed repertoire for the marks that occur in the bundled data.
const std::unordered_map<uint64_t, char32_t>& composition_table() {
    static const std::unordered_map<uint64_t, char32_t> table = [] {
        std::unordered_map<uint64_t, char32_t> t;
        auto add = [&t](char32_t base, char32_t mark, char32_t composed) {
            t[(static_cast<uint64_t>(base) << 21) | mark] = composed;
        };
        // 0x300 grave, 0x301 acute, 0x302 circumflex, 0x303 tilde,
        // 0x304 macron, 0x306 breve, 0x307 dot above, 0x308 diaeresis,
        // 0x30A ring, 0x30C caron, 0x327 cedilla.
        struct Row {
            char32_t base, mark, composed;
        };
        static constexpr Row rows[] = {
            {U'A', 0x300, 0xC0},   {U'A', 0x301, 0xC1},   {U'A', 0x302, 0xC2},
            {U'A', 0x303, 0xC3},   {U'A', 0x308, 0xC4},   {U'A', 0x30A, 0xC5},
            {U'C', 0x327, 0xC7},   {U'E', 0x300, 0xC8},   {U'E', 0x301, 0xC9},
            {U'E', 0x302, 0xCA},   {U'E', 0x308, 0xCB},   {U'I', 0x300, 0xCC},
            {U'I', 0x301, 0xCD},   {U'I', 0x302, 0xCE},   {U'I', 0x308, 0xCF},
            {U'N', 0x303, 0xD1},   {U'O', 0x300, 0xD2},   {U'O', 0x301, 0xD3},
            {U'O', 0x302, 0xD4},   {U'O', 0x303, 0xD5},   {U'O', 0x308, 0xD6},
            {U'U', 0x300, 0xD9},   {U'U', 0x301, 0xDA},   {U'U', 0x302, 0xDB},
            {U'U', 0x308, 0xDC},   {U'Y', 0x301, 0xDD},   {U'a', 0x300, 0xE0},
            {U'a', 0x301, 0xE1},   {U'a', 0x302, 0xE2},   {U'a', 0x303, 0xE3},
            {U'a', 0x308, 0xE4},   {U'a', 0x30A, 0xE5},   {U'c', 0x327, 0xE7},
            {U'e', 0x300, 0xE8},   {U'e', 0x301, 0xE9},   {U'e', 0x302, 0xEA},
            {U'e', 0x308, 0xEB},   {U'i', 0x300, 0xEC},   {U'i', 0x301, 0xED},
            {U'i', 0x302, 0xEE},   {U'i', 0x308, 0xEF},   {U'n', 0x303, 0xF1},
            {U'o', 0x300, 0xF2},   {U'o', 0x301, 0xF3},   {U'o', 0x302, 0xF4},
            {U'o', 0x303, 0xF5},   {U'o', 0x308, 0xF6},   {U'u', 0x300, 0xF9},
            {U'u', 0x301, 0xFA},   {U'u', 0x302, 0xFB},   {U'u', 0x308, 0xFC},
            {U'y', 0x301, 0xFD},   {U'y', 0x308, 0xFF},   {U'A', 0x304, 0x100},
            {U'a', 0x304, 0x101},  {U'A', 0x306, 0x102},  {U'a', 0x306, 0x103},
            {U'C', 0x301, 0x106},  {U'c', 0x301, 0x107},  {U'C', 0x30C, 0x10C},
            {U'c', 0x30C, 0x10D},  {U'E', 0x304, 0x112},  {U'e', 0x304, 0x113},
            {U'E', 0x30C, 0x11A},  {U'e', 0x30C, 0x11B},  {U'G', 0x306, 0x11E},
            {U'g', 0x306, 0x11F},  {U'I', 0x304, 0x12A},  {U'i', 0x304, 0x12B},
            {U'N', 0x301, 0x143},  {U'n', 0x301, 0x144},  {U'O', 0x304, 0x14C},
            {U'o', 0x304, 0x14D},  {U'S', 0x301, 0x15A},  {U's', 0x301, 0x15B},
            {U'S', 0x30C, 0x160},  {U's', 0x30C, 0x161},  {U'U', 0x304, 0x16A},
            {U'u', 0x304, 0x16B},  {U'Z', 0x301, 0x179},  {U'z', 0x301, 0x17A},
            {U'Z', 0x307, 0x17B},  {U'z', 0x307, 0x17C},  {U'Z', 0x30C, 0x17D},
            {U'z', 0x30C, 0x17E},
        };
        for (const Row& r : rows) add(r.base, r.mark, r.composed);
        return t;
    }();
    return table;
}

bool is_combining_mark(char32_t cp) { return cp >= 0x0300 && cp <= 0x036F; }

}  // namespace

std::u32string compose_nfc(const std::u32string& cps) {
    std::u32string out;
    out.reserve(cps.size());
    const auto& table = composition_table();
    for (char32_t cp : cps) {
        if (!out.empty() && is_combining_mark(cp)) {
            const uint64_t key = (static_cast<uint64_t>(out.back()) << 21) | cp;
            auto it = table.find(key);
            if (it != table.end()) {
                out.back() = it->second;
                continue;
            }
        }
        out.push_back(cp);
    }
    return out;
}

std::string normalize_line(std::string_view line, bool lowercase) {
    std::u32string cps = compose_nfc(decode_utf8(line));
    if (lowercase) {
        for (char32_t& cp : cps) cp = simple_lowercase(cp);
    }
    size_t end = cps.size();
    while (end > 0 && is_whitespace(cps[end - 1])) --end;
    cps.resize(end);
    return encode_utf8(cps);
}

std::string lowercase_utf8(std::string_view s) {
    std::u32string cps = decode_utf8(s);
    for (char32_t& cp : cps) cp = simple_lowercase(cp);
    return encode_utf8(cps);
}

}  // namespace lmforge::text
