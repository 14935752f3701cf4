#pragma once

// Corpus hierarchy (groups, documents, elements) and ingestion parsers.
// Element spans are code-point offsets into the canonical text, which is the
// element texts joined by "\n\n".

#include <string>
#include <string_view>
#include <vector>

#include "qgen/text.hpp"

namespace qgen {

inline constexpr std::string_view kCanonicalJoin = "\n\n";

enum class SourceKind { StructuredJson, Markdown, PlainText, PreConverted };

NLOHMANN_JSON_SERIALIZE_ENUM(SourceKind, {{SourceKind::StructuredJson, "structured-json"},
                                          {SourceKind::Markdown, "markdown"},
                                          {SourceKind::PlainText, "plain-text"},
                                          {SourceKind::PreConverted, "pre-converted"}})

inline SourceKind parse_source_kind(std::string_view s) {
    if (s == "structured-json") return SourceKind::StructuredJson;
    if (s == "markdown") return SourceKind::Markdown;
    if (s == "plain-text") return SourceKind::PlainText;
    if (s == "pre-converted") return SourceKind::PreConverted;
    fail(ErrorCode::InvalidArgument, "unknown source_kind '" + std::string(s) + "'");
}

enum class ElementKind { Heading, Paragraph };

NLOHMANN_JSON_SERIALIZE_ENUM(ElementKind, {{ElementKind::Heading, "heading"}, {ElementKind::Paragraph, "paragraph"}})

struct Element {
    std::string element_id;
    ElementKind kind = ElementKind::Paragraph;
    int level = 0; // 0 for paragraphs
    std::string text;
    Span char_span;
    friend bool operator==(const Element &, const Element &) = default;
};

struct Document {
    std::string doc_id;
    std::string group_id;
    std::string title;
    SourceKind source_kind = SourceKind::Markdown;
    std::vector<Element> elements;
    std::string created_at;
    friend bool operator==(const Document &, const Document &) = default;
};

struct DocumentGroup {
    std::string group_id;
    std::string name;
    std::string created_at;
    std::vector<std::string> document_ids;
    friend bool operator==(const DocumentGroup &, const DocumentGroup &) = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(Element, element_id, kind, level, text, char_span)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(Document, doc_id, group_id, title, source_kind, elements, created_at)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(DocumentGroup, group_id, name, created_at, document_ids)

/// Element before ids and spans are assigned.
struct ElementDraft {
    ElementKind kind = ElementKind::Paragraph;
    int level = 0;
    std::string text;
};

namespace detail {

inline std::vector<std::string_view> split_lines(std::string_view s) {
    std::vector<std::string_view> lines;
    std::size_t pos = 0;
    while (pos <= s.size()) {
        auto nl = s.find('\n', pos);
        if (nl == std::string_view::npos) {
            nl = s.size();
        }
        auto line = s.substr(pos, nl - pos);
        if (!line.empty() && line.back() == '\r') {
            line.remove_suffix(1);
        }
        lines.push_back(line);
        pos = nl + 1;
    }
    return lines;
}

inline bool is_blank(std::string_view line) { return trim(line).empty(); }

// Returns heading depth 1-6 when the line is "#{1,6} text", else 0.
inline int heading_level(std::string_view line) {
    int n = 0;
    while (static_cast<std::size_t>(n) < line.size() && line[static_cast<std::size_t>(n)] == '#') {
        ++n;
    }
    if (n < 1 || n > 6 || static_cast<std::size_t>(n) >= line.size() || line[static_cast<std::size_t>(n)] != ' ') {
        return 0;
    }
    return n;
}

inline std::size_t line_of_offset(std::string_view s, std::size_t offset) {
    std::size_t line = 1;
    for (std::size_t i = 0; i < offset && i < s.size(); ++i) {
        line += s[i] == '\n' ? 1 : 0;
    }
    return line;
}

} // namespace detail

/// Headings are "#{1,6} " lines; maximal runs of other non-blank lines form one paragraph.
inline std::vector<ElementDraft> parse_markdown(std::string_view text) {
    utf8::decode(text);
    std::vector<ElementDraft> out;
    std::string paragraph;
    auto flush = [&] {
        if (!paragraph.empty()) {
            out.push_back({ElementKind::Paragraph, 0, std::move(paragraph)});
            paragraph.clear();
        }
    };
    for (auto line : detail::split_lines(text)) {
        if (detail::is_blank(line)) {
            flush();
            continue;
        }
        if (const int level = detail::heading_level(line); level > 0) {
            flush();
            auto body = trim(line.substr(static_cast<std::size_t>(level)));
            if (!body.empty()) {
                out.push_back({ElementKind::Heading, level, std::move(body)});
            }
            continue;
        }
        if (!paragraph.empty()) {
            paragraph.push_back('\n');
        }
        paragraph += trim(line);
    }
    flush();
    return out;
}

/// Blank-line separated paragraphs, no headings.
inline std::vector<ElementDraft> parse_plain_text(std::string_view text) {
    utf8::decode(text);
    std::vector<ElementDraft> out;
    std::string paragraph;
    for (auto line : detail::split_lines(text)) {
        if (detail::is_blank(line)) {
            if (!paragraph.empty()) {
                out.push_back({ElementKind::Paragraph, 0, std::move(paragraph)});
                paragraph.clear();
            }
            continue;
        }
        if (!paragraph.empty()) {
            paragraph.push_back('\n');
        }
        paragraph += trim(line);
    }
    if (!paragraph.empty()) {
        out.push_back({ElementKind::Paragraph, 0, std::move(paragraph)});
    }
    return out;
}

/// JSON array of {"kind": "heading"|"paragraph", "level": int >= 1 (headings only), "text": string}.
inline std::vector<ElementDraft> parse_structured_json(std::string_view payload) {
    utf8::decode(payload);
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(payload);
    } catch (const nlohmann::json::parse_error &e) {
        fail(ErrorCode::ParseError, e.what(),
             {{"offset", e.byte}, {"line", detail::line_of_offset(payload, e.byte)}});
    }
    if (!doc.is_array()) {
        fail(ErrorCode::ParseError, "structured-json payload must be an array", {{"offset", 0}, {"line", 1}});
    }
    std::vector<ElementDraft> out;
    for (std::size_t i = 0; i < doc.size(); ++i) {
        const auto &rec = doc[i];
        auto bad = [i](const std::string &why) {
            fail(ErrorCode::ParseError, "record " + std::to_string(i) + ": " + why, {{"record", i}});
        };
        if (!rec.is_object()) bad("not an object");
        if (!rec.contains("kind") || !rec["kind"].is_string()) bad("missing string 'kind'");
        if (!rec.contains("text") || !rec["text"].is_string()) bad("missing string 'text'");
        const auto kind = rec["kind"].get<std::string>();
        auto text = rec["text"].get<std::string>();
        if (trim(text).empty()) bad("empty 'text'");
        if (kind == "heading") {
            if (!rec.contains("level") || !rec["level"].is_number_integer() || rec["level"].get<int>() < 1) {
                bad("heading requires integer 'level' >= 1");
            }
            out.push_back({ElementKind::Heading, rec["level"].get<int>(), std::move(text)});
        } else if (kind == "paragraph") {
            if (rec.contains("level")) bad("'level' is only allowed on headings");
            out.push_back({ElementKind::Paragraph, 0, std::move(text)});
        } else {
            bad("unknown kind '" + kind + "'");
        }
    }
    return out;
}

inline std::vector<ElementDraft> parse_payload(SourceKind kind, std::string_view payload) {
    switch (kind) {
    case SourceKind::StructuredJson:
    case SourceKind::PreConverted:
        return parse_structured_json(payload);
    case SourceKind::Markdown:
        return parse_markdown(payload);
    case SourceKind::PlainText:
        return parse_plain_text(payload);
    }
    fail(ErrorCode::InvalidArgument, "unknown source kind");
}

/// Assigns "{doc_id}-e{ordinal}" ids and canonical-text spans.
inline std::vector<Element> assign_elements(const std::string &doc_id, std::vector<ElementDraft> drafts) {
    std::vector<Element> out;
    out.reserve(drafts.size());
    std::size_t offset = 0;
    const std::size_t join_len = utf8::length(kCanonicalJoin);
    for (std::size_t i = 0; i < drafts.size(); ++i) {
        if (i > 0) {
            offset += join_len;
        }
        const auto len = utf8::length(drafts[i].text);
        out.push_back({doc_id + "-e" + std::to_string(i), drafts[i].kind, drafts[i].level,
                       std::move(drafts[i].text), {offset, offset + len}});
        offset += len;
    }
    return out;
}

inline std::string canonical_text(const Document &doc) {
    std::string out;
    for (std::size_t i = 0; i < doc.elements.size(); ++i) {
        if (i > 0) {
            out += kCanonicalJoin;
        }
        out += doc.elements[i].text;
    }
    return out;
}

} // namespace qgen
