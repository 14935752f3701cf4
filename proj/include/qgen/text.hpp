#pragma once

// Shared token definitions: whitespace tokenization (used by chunking) and
// normalization (used by metrics and attribution so scores and highlights agree).

#include <algorithm>
#include <array>
#include <string>
#include <string_view>
#include <vector>

#include "qgen/util.hpp"

namespace qgen {

struct Token {
    std::string text;
    Span span; // code-point offsets into the input
};

/// Splits on Unicode whitespace.
inline std::vector<Token> tokenize_ws(std::string_view text) {
    std::vector<Token> tokens;
    const auto cps = utf8::decode(text);
    std::size_t i = 0;
    while (i < cps.size()) {
        if (is_unicode_space(cps[i].value)) {
            ++i;
            continue;
        }
        const std::size_t start = i;
        while (i < cps.size() && !is_unicode_space(cps[i].value)) {
            ++i;
        }
        const auto from = cps[start].byte_offset;
        const auto to = cps[i - 1].byte_offset + cps[i - 1].byte_length;
        tokens.push_back({std::string(text.substr(from, to - from)), {start, i}});
    }
    return tokens;
}

inline std::size_t count_tokens(std::string_view text) { return tokenize_ws(text).size(); }

inline bool is_punctuation(char32_t c) {
    if (c < 0x80) {
        return (c >= 0x21 && c <= 0x2F) || (c >= 0x3A && c <= 0x40) || (c >= 0x5B && c <= 0x60) ||
               (c >= 0x7B && c <= 0x7E);
    }
    switch (c) {
    case 0xA1: case 0xA7: case 0xAB: case 0xB6: case 0xB7: case 0xBB: case 0xBF:
        return true;
    default:
        break;
    }
    return (c >= 0x2010 && c <= 0x2027) || (c >= 0x2030 && c <= 0x205E) || (c >= 0x3001 && c <= 0x3003) ||
           (c >= 0x3008 && c <= 0x3011);
}

/// Lowercases ASCII, Latin-1, Latin Extended-A, Greek and basic Cyrillic letters.
inline char32_t to_lower(char32_t c) {
    if (c >= 'A' && c <= 'Z') {
        return c + 0x20;
    }
    if (c >= 0xC0 && c <= 0xDE && c != 0xD7) {
        return c + 0x20;
    }
    if (c >= 0x100 && c <= 0x137 && c != 0x130 && (c % 2) == 0) {
        return c + 1;
    }
    if (c >= 0x139 && c <= 0x148 && (c % 2) == 1) {
        return c + 1;
    }
    if (c >= 0x14A && c <= 0x177 && (c % 2) == 0) {
        return c + 1;
    }
    if (c == 0x178) {
        return 0xFF;
    }
    if (c >= 0x179 && c <= 0x17E && (c % 2) == 1) {
        return c + 1;
    }
    if (c >= 0x391 && c <= 0x3A9 && c != 0x3A2) {
        return c + 0x20;
    }
    if (c >= 0x410 && c <= 0x42F) {
        return c + 0x20;
    }
    if (c >= 0x400 && c <= 0x40F) {
        return c + 0x50;
    }
    return c;
}

inline bool is_upper(char32_t c) { return to_lower(c) != c; }

struct NormToken {
    std::string norm;
    Span span; // span of the kept core (edge punctuation excluded) in the input
};

/// Lowercase, whitespace-tokenize, strip punctuation from token edges; empty results dropped.
inline std::vector<NormToken> normalize(std::string_view text) {
    std::vector<NormToken> out;
    for (const auto &tok : tokenize_ws(text)) {
        const auto cps = utf8::decode(tok.text);
        std::size_t b = 0;
        std::size_t e = cps.size();
        while (b < e && is_punctuation(cps[b].value)) {
            ++b;
        }
        while (e > b && is_punctuation(cps[e - 1].value)) {
            --e;
        }
        if (b == e) {
            continue;
        }
        std::string norm;
        for (std::size_t k = b; k < e; ++k) {
            utf8::append(norm, to_lower(cps[k].value));
        }
        out.push_back({std::move(norm), {tok.span.start + b, tok.span.start + e}});
    }
    return out;
}

inline std::vector<std::string> normalized_words(std::string_view text) {
    std::vector<std::string> words;
    for (auto &t : normalize(text)) {
        words.push_back(std::move(t.norm));
    }
    return words;
}

inline constexpr std::array<std::string_view, 50> kStopwords = {
    "a",     "an",   "the",  "and",   "or",    "but",   "if",    "of",   "in",    "on",
    "at",    "to",   "for",  "from",  "by",    "with",  "as",    "is",   "are",   "was",
    "were",  "be",   "been", "being", "it",    "its",   "this",  "that", "these", "those",
    "what",  "which", "who", "whom",  "whose", "when",  "where", "why",  "how",   "do",
    "does",  "did",  "not",  "no",    "so",    "than",  "then",  "there", "their", "they",
};

inline bool is_stopword(std::string_view normalized) {
    return std::find(kStopwords.begin(), kStopwords.end(), normalized) != kStopwords.end();
}

/// Normalized, not a stopword, at least two code points.
inline bool is_content_token(std::string_view normalized) {
    return utf8::length(normalized) >= 2 && !is_stopword(normalized);
}

} // namespace qgen
