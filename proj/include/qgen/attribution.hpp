#pragma once

// Sentence splitting, question/answer token highlighting in a chunk, and
// selection of the sentence a QA pair most likely came from.

#include <algorithm>
#include <array>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "qgen/text.hpp"

namespace qgen {

struct Sentence {
    std::string text;
    Span span;
};

inline constexpr std::array<std::string_view, 7> kAbbreviations = {"e.g.", "i.e.", "Dr.", "Mr.",
                                                                  "Ms.", "vs.", "etc."};

/// Splits at '.', '!' or '?' followed by whitespace and an uppercase letter, or by end of text.
/// Spans are code-point offsets and exclude the whitespace between sentences.
inline std::vector<Sentence> split_sentences(std::string_view text) {
    const auto cps = utf8::decode(text);
    const std::size_t n = cps.size();
    std::vector<Span> spans;

    auto is_terminator = [](char32_t c) { return c == '.' || c == '!' || c == '?'; };
    auto is_closer = [](char32_t c) {
        return c == '"' || c == '\'' || c == ')' || c == ']' || c == 0x201D || c == 0x2019;
    };

    std::size_t start = 0;
    while (start < n && is_unicode_space(cps[start].value)) {
        ++start;
    }
    std::size_t i = start;
    while (i < n) {
        if (!is_terminator(cps[i].value)) {
            ++i;
            continue;
        }
        const std::size_t term = i;
        std::size_t e = i + 1;
        while (e < n && (is_terminator(cps[e].value) || is_closer(cps[e].value))) {
            ++e;
        }
        std::size_t next = e;
        while (next < n && is_unicode_space(cps[next].value)) {
            ++next;
        }
        const bool boundary = next == n || (next > e && is_upper(cps[next].value));
        bool abbreviation = false;
        if (boundary && cps[term].value == '.' && e == term + 1) {
            std::size_t w = term;
            while (w > start && !is_unicode_space(cps[w - 1].value)) {
                --w;
            }
            const auto from = cps[w].byte_offset;
            const auto to = cps[term].byte_offset + 1;
            const auto word = text.substr(from, to - from);
            abbreviation =
                std::find(kAbbreviations.begin(), kAbbreviations.end(), word) != kAbbreviations.end();
        }
        if (boundary && !abbreviation) {
            spans.push_back({start, e});
            start = next;
            i = next;
        } else {
            i = e;
        }
    }
    if (start < n) {
        std::size_t end = n;
        while (end > start && is_unicode_space(cps[end - 1].value)) {
            --end;
        }
        spans.push_back({start, end});
    }

    std::vector<Sentence> out;
    out.reserve(spans.size());
    for (const auto &s : spans) {
        const auto from = cps[s.start].byte_offset;
        const auto to = cps[s.end - 1].byte_offset + cps[s.end - 1].byte_length;
        out.push_back({std::string(text.substr(from, to - from)), s});
    }
    return out;
}

enum class HighlightSource { Question, Answer, Both };

inline std::string_view to_string(HighlightSource s) {
    switch (s) {
    case HighlightSource::Question: return "question";
    case HighlightSource::Answer: return "answer";
    case HighlightSource::Both: return "both";
    }
    return "both";
}

NLOHMANN_JSON_SERIALIZE_ENUM(HighlightSource, {{HighlightSource::Question, "question"},
                                               {HighlightSource::Answer, "answer"},
                                               {HighlightSource::Both, "both"}})

struct Highlight {
    Span span; // code points into the chunk text
    HighlightSource source = HighlightSource::Both;
    friend bool operator==(const Highlight &, const Highlight &) = default;
};

inline void to_json(nlohmann::json &j, const Highlight &h) {
    j = {{"char_span", h.span}, {"source", h.source}};
}
inline void from_json(const nlohmann::json &j, Highlight &h) {
    j.at("char_span").get_to(h.span);
    j.at("source").get_to(h.source);
}

inline std::set<std::string> content_tokens(std::string_view text) {
    std::set<std::string> out;
    for (auto &t : normalize(text)) {
        if (is_content_token(t.norm)) {
            out.insert(std::move(t.norm));
        }
    }
    return out;
}

/// Highlights chunk tokens that match content tokens of the question and/or answer.
/// Consecutive tokens with the same source merge into one span.
inline std::vector<Highlight> highlight_spans(std::string_view chunk_text, std::string_view question,
                                              std::string_view answer) {
    const auto qset = content_tokens(question);
    const auto aset = content_tokens(answer);
    const auto tokens = normalize(chunk_text);

    std::vector<Highlight> out;
    std::size_t last_index = 0;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        const auto &t = tokens[i];
        if (!is_content_token(t.norm)) {
            continue;
        }
        const bool in_q = qset.contains(t.norm);
        const bool in_a = aset.contains(t.norm);
        if (!in_q && !in_a) {
            continue;
        }
        const auto source = in_q && in_a ? HighlightSource::Both
                            : in_a      ? HighlightSource::Answer
                                        : HighlightSource::Question;
        if (!out.empty() && out.back().source == source && last_index + 1 == i) {
            out.back().span.end = t.span.end;
        } else {
            out.push_back({t.span, source});
        }
        last_index = i;
    }
    return out;
}

struct Attribution {
    std::size_t sentence_index = 0;
    Span sentence_span;
    double score = 0.0;
    double runner_up_score = 0.0;
    friend bool operator==(const Attribution &, const Attribution &) = default;
};

inline void to_json(nlohmann::json &j, const Attribution &a) {
    j = {{"sentence_index", a.sentence_index},
         {"sentence_span", a.sentence_span},
         {"score", a.score},
         {"runner_up_score", a.runner_up_score}};
}
inline void from_json(const nlohmann::json &j, Attribution &a) {
    j.at("sentence_index").get_to(a.sentence_index);
    j.at("sentence_span").get_to(a.sentence_span);
    j.at("score").get_to(a.score);
    j.at("runner_up_score").get_to(a.runner_up_score);
}

inline constexpr double kAnswerWeight = 2.0;
inline constexpr double kQuestionWeight = 1.0;

inline std::size_t overlap(const std::set<std::string> &a, const std::set<std::string> &b) {
    std::size_t n = 0;
    for (const auto &t : a) {
        n += b.contains(t) ? 1 : 0;
    }
    return n;
}

/// score(s) = 2 * |answer ∩ s| + |question ∩ s| over content tokens; earliest sentence wins ties.
inline Attribution best_sentence(std::string_view chunk_text, std::string_view question,
                                 std::string_view answer) {
    const auto sentences = split_sentences(chunk_text);
    if (sentences.empty()) {
        fail(ErrorCode::EmptyChunk, "chunk has no sentences");
    }
    const auto qset = content_tokens(question);
    const auto aset = content_tokens(answer);

    std::vector<double> scores;
    scores.reserve(sentences.size());
    for (const auto &s : sentences) {
        const auto sset = content_tokens(s.text);
        scores.push_back(kAnswerWeight * static_cast<double>(overlap(aset, sset)) +
                         kQuestionWeight * static_cast<double>(overlap(qset, sset)));
    }
    std::size_t best = 0;
    for (std::size_t i = 1; i < scores.size(); ++i) {
        if (scores[i] > scores[best]) {
            best = i;
        }
    }
    double runner_up = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (i != best) {
            runner_up = std::max(runner_up, scores[i]);
        }
    }
    return {best, sentences[best].span, scores[best], runner_up};
}

} // namespace qgen
