#pragma once

// Token-bounded chunking of documents. Tokens are whitespace-separated units.

#include <optional>
#include <string>
#include <vector>

#include "qgen/attribution.hpp"
#include "qgen/corpus.hpp"

namespace qgen {

struct ChunkConfig {
    std::size_t max_tokens = 300;
    std::size_t overlap_tokens = 30;
    bool include_headings = true;

    void validate() const {
        if (max_tokens == 0) {
            fail(ErrorCode::InvalidArgument, "max_tokens must be > 0");
        }
        if (overlap_tokens >= max_tokens) {
            fail(ErrorCode::InvalidArgument, "overlap_tokens must be < max_tokens");
        }
    }
    friend bool operator==(const ChunkConfig &, const ChunkConfig &) = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ChunkConfig, max_tokens, overlap_tokens, include_headings)

struct Chunk {
    std::string chunk_id;
    std::string doc_id;
    std::vector<std::string> element_ids;
    std::string text;
    std::size_t token_count = 0;
    Span char_span;        // body region in the document's canonical text
    bool windowed = false; // piece of a paragraph too long for one chunk
    friend bool operator==(const Chunk &, const Chunk &) = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(Chunk, chunk_id, doc_id, element_ids, text, token_count, char_span, windowed)

namespace detail {

// Token counts after which a sentence ends, for a paragraph's token list.
inline std::vector<std::size_t> sentence_boundaries(const std::string &text, const std::vector<Token> &tokens) {
    std::vector<std::size_t> out;
    std::size_t t = 0;
    for (const auto &s : split_sentences(text)) {
        while (t < tokens.size() && tokens[t].span.end <= s.span.end) {
            ++t;
        }
        out.push_back(t);
    }
    return out;
}

class ChunkBuilder {
  public:
    ChunkBuilder(const Document &doc, const ChunkConfig &cfg) : doc_(doc), cfg_(cfg) {}

    std::vector<Chunk> run() {
        for (const auto &el : doc_.elements) {
            if (el.kind == ElementKind::Heading) {
                flush();
                heading_ = &el;
                continue;
            }
            add_paragraph(el);
        }
        flush();
        return std::move(chunks_);
    }

  private:
    const Document &doc_;
    const ChunkConfig &cfg_;
    const Element *heading_ = nullptr;
    std::vector<const Element *> pending_;
    std::size_t pending_tokens_ = 0;
    std::vector<Chunk> chunks_;

    // Heading tokens charged to the budget; a heading that leaves no room for body text is not prefixed.
    std::size_t prefix_tokens() const {
        if (!cfg_.include_headings || heading_ == nullptr) {
            return 0;
        }
        const auto n = count_tokens(heading_->text);
        return n < cfg_.max_tokens ? n : 0;
    }

    std::size_t body_budget() const { return cfg_.max_tokens - prefix_tokens(); }

    void add_paragraph(const Element &el) {
        const auto n = count_tokens(el.text);
        const auto budget = body_budget();
        if (n <= budget) {
            if (!pending_.empty() && pending_tokens_ + n > budget) {
                flush();
            }
            pending_.push_back(&el);
            pending_tokens_ += n;
            return;
        }
        flush();
        split_paragraph(el, budget);
    }

    void flush() {
        if (pending_.empty()) {
            return;
        }
        std::vector<std::string> ids;
        std::string body;
        for (const auto *el : pending_) {
            ids.push_back(el->element_id);
            if (!body.empty()) {
                body += kCanonicalJoin;
            }
            body += el->text;
        }
        emit(std::move(ids), std::move(body), pending_tokens_,
             {pending_.front()->char_span.start, pending_.back()->char_span.end}, false);
        pending_.clear();
        pending_tokens_ = 0;
    }

    // Sliding window of `budget` tokens stepping back `overlap` tokens; a window end
    // snaps to the last sentence boundary inside it when that still advances.
    void split_paragraph(const Element &el, std::size_t budget) {
        const auto tokens = tokenize_ws(el.text);
        const auto boundaries = sentence_boundaries(el.text, tokens);
        const std::size_t n = tokens.size();
        const std::size_t overlap = std::min(cfg_.overlap_tokens, budget - 1);
        std::size_t start = 0;
        while (true) {
            const std::size_t limit = std::min(start + budget, n);
            std::size_t cut = limit;
            if (limit < n) {
                for (auto b : boundaries) {
                    if (b > start + overlap && b <= limit) {
                        cut = b;
                    }
                }
            }
            const Span local{tokens[start].span.start, tokens[cut - 1].span.end};
            emit({el.element_id}, utf8::substr(el.text, local), cut - start,
                 {el.char_span.start + local.start, el.char_span.start + local.end}, true);
            if (cut >= n) {
                break;
            }
            start = cut - overlap;
        }
    }

    void emit(std::vector<std::string> element_ids, std::string body, std::size_t body_tokens, Span span,
              bool windowed) {
        Chunk c;
        c.chunk_id = doc_.doc_id + "-c" + std::to_string(chunks_.size());
        c.doc_id = doc_.doc_id;
        c.token_count = body_tokens;
        if (const auto prefix = prefix_tokens(); prefix > 0) {
            c.element_ids.push_back(heading_->element_id);
            c.text = heading_->text;
            c.text += kCanonicalJoin;
            c.token_count += prefix;
        }
        c.element_ids.insert(c.element_ids.end(), element_ids.begin(), element_ids.end());
        c.text += body;
        c.char_span = span;
        c.windowed = windowed;
        chunks_.push_back(std::move(c));
    }
};

} // namespace detail

/// Greedy packing of whole paragraphs; headings close the running chunk and, when
/// include_headings is set, prefix the chunks of their section.
inline std::vector<Chunk> chunk_document(const Document &doc, const ChunkConfig &cfg) {
    cfg.validate();
    if (doc.elements.empty()) {
        fail(ErrorCode::EmptyDocument, "document " + doc.doc_id + " has no elements");
    }
    return detail::ChunkBuilder(doc, cfg).run();
}

} // namespace qgen
