#pragma once

// Side-by-side inference of one question against two providers over a document.

#include <chrono>
#include <future>
#include <optional>
#include <string>

#include "qgen/corpus_service.hpp"
#include "qgen/llm_gateway.hpp"

namespace qgen {

struct ModelRef {
    std::string provider_id;
    std::optional<std::string> adapter; // informational tag for fine-tuned endpoints
    friend bool operator==(const ModelRef &, const ModelRef &) = default;
};

inline void to_json(nlohmann::json &j, const ModelRef &m) {
    j = {{"provider_id", m.provider_id}};
    if (m.adapter) j["adapter"] = *m.adapter;
}
inline void from_json(const nlohmann::json &j, ModelRef &m) {
    if (j.is_string()) {
        m = {j.get<std::string>(), std::nullopt};
        return;
    }
    j.at("provider_id").get_to(m.provider_id);
    m.adapter = j.contains("adapter") && !j["adapter"].is_null() ? std::optional(j["adapter"].get<std::string>())
                                                                 : std::nullopt;
}

struct CompareOptions {
    bool score = false;
    std::size_t context_tokens = 2000;
    double temperature = 0.0;
    int max_output_tokens = 512;
    ChunkConfig chunk_config; // chunking used to pick the scoring reference
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(CompareOptions, score, context_tokens, temperature, max_output_tokens,
                                                chunk_config)

struct ModelAnswer {
    std::optional<std::string> text;
    std::optional<std::pair<std::string, std::string>> error; // (code, message)
    std::int64_t latency_ms = 0;
    std::optional<MetricReport> metric_report;
    std::optional<std::string> scored_chunk_id;

    [[nodiscard]] bool ok() const { return text.has_value(); }
    friend bool operator==(const ModelAnswer &, const ModelAnswer &) = default;
};

struct ComparisonRecord {
    std::string comparison_id;
    std::string doc_id;
    std::string question;
    ModelRef model_a;
    ModelRef model_b;
    ModelAnswer a;
    ModelAnswer b;
    bool context_truncated = false;
    std::string created_at;
    friend bool operator==(const ComparisonRecord &, const ComparisonRecord &) = default;
};

namespace detail {

inline void put_side(nlohmann::json &j, const std::string &suffix, const ModelAnswer &a) {
    if (a.text) {
        j["answer_" + suffix] = *a.text;
    } else {
        j["answer_" + suffix] = {{"error", {{"code", a.error ? a.error->first : "internal"},
                                            {"message", a.error ? a.error->second : ""}}}};
    }
    j["latency_" + suffix] = a.latency_ms;
    if (a.metric_report) j["metric_report_" + suffix] = *a.metric_report;
    if (a.scored_chunk_id) j["scored_chunk_" + suffix] = *a.scored_chunk_id;
}

inline ModelAnswer get_side(const nlohmann::json &j, const std::string &suffix) {
    ModelAnswer a;
    const auto &ans = j.at("answer_" + suffix);
    if (ans.is_string()) {
        a.text = ans.get<std::string>();
    } else {
        const auto &e = ans.at("error");
        a.error = std::make_pair(e.at("code").get<std::string>(), e.at("message").get<std::string>());
    }
    j.at("latency_" + suffix).get_to(a.latency_ms);
    if (j.contains("metric_report_" + suffix)) a.metric_report = j["metric_report_" + suffix].get<MetricReport>();
    if (j.contains("scored_chunk_" + suffix)) a.scored_chunk_id = j["scored_chunk_" + suffix].get<std::string>();
    return a;
}

} // namespace detail

inline void to_json(nlohmann::json &j, const ComparisonRecord &r) {
    j = {{"comparison_id", r.comparison_id}, {"doc_id", r.doc_id},
         {"question", r.question},           {"model_a", r.model_a},
         {"model_b", r.model_b},             {"context_truncated", r.context_truncated},
         {"created_at", r.created_at}};
    detail::put_side(j, "a", r.a);
    detail::put_side(j, "b", r.b);
}

inline void from_json(const nlohmann::json &j, ComparisonRecord &r) {
    j.at("comparison_id").get_to(r.comparison_id);
    j.at("doc_id").get_to(r.doc_id);
    j.at("question").get_to(r.question);
    j.at("model_a").get_to(r.model_a);
    j.at("model_b").get_to(r.model_b);
    j.at("context_truncated").get_to(r.context_truncated);
    j.at("created_at").get_to(r.created_at);
    r.a = detail::get_side(j, "a");
    r.b = detail::get_side(j, "b");
}

template <>
struct RecordTraits<ComparisonRecord> {
    static constexpr std::string_view kind = "comparisons";
    static std::string id(const ComparisonRecord &r) { return r.comparison_id; }
};

/// First `max_tokens` whitespace tokens of `text`, original spacing kept.
inline std::pair<std::string, bool> truncate_tokens(const std::string &text, std::size_t max_tokens) {
    const auto tokens = tokenize_ws(text);
    if (tokens.size() <= max_tokens) {
        return {text, false};
    }
    if (max_tokens == 0) {
        return {std::string{}, true};
    }
    return {utf8::substr(text, {0, tokens[max_tokens - 1].span.end}), true};
}

inline constexpr std::string_view kAnsweringSystemPrompt =
    "Answer the user's question using only the provided document. If the document does not "
    "contain the answer, say so briefly.";

inline ChatRequest build_answer_prompt(const std::string &context, bool truncated, const std::string &question,
                                       const CompareOptions &opts) {
    std::string user = "Document:\n<<<\n" + context + "\n>>>\n";
    if (truncated) {
        user += "(The document was truncated to its first " + std::to_string(opts.context_tokens) + " words.)\n";
    }
    user += "\nQuestion: " + question;
    ChatRequest req;
    req.messages = {{"system", std::string(kAnsweringSystemPrompt)}, {"user", std::move(user)}};
    req.temperature = opts.temperature;
    req.max_output_tokens = opts.max_output_tokens;
    return req;
}

class ModelExplorer {
  public:
    ModelExplorer(Workspace &ws, LlmGateway &gateway) : ws_(ws), corpus_(ws), gateway_(gateway) {}

    /// Both providers are queried concurrently; one failing side does not fail the other.
    ComparisonRecord compare(const std::string &doc_id, const std::string &question, const ModelRef &model_a,
                             const ModelRef &model_b, const CompareOptions &opts = {}) {
        const auto q = trim(question);
        if (q.empty()) {
            fail(ErrorCode::InvalidArgument, "question must be nonempty");
        }
        const auto doc = corpus_.get_document(doc_id);
        for (const auto *m : {&model_a, &model_b}) {
            if (!gateway_.registry().contains(m->provider_id)) {
                fail(ErrorCode::ProviderNotFound, "provider '" + m->provider_id + "' is not registered");
            }
        }
        const auto [context, truncated] = truncate_tokens(canonical_text(doc), opts.context_tokens);
        const auto req = build_answer_prompt(context, truncated, q, opts);

        auto run = [this, &req](const std::string &provider_id) {
            ModelAnswer out;
            const auto start = std::chrono::steady_clock::now();
            try {
                out.text = gateway_.chat(provider_id, req).text;
            } catch (const Error &e) {
                out.error = std::make_pair(std::string(to_string(e.code())), std::string(e.what()));
            } catch (const std::exception &e) {
                out.error = std::make_pair(std::string("internal"), std::string(e.what()));
            }
            out.latency_ms =
                std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start)
                    .count();
            return out;
        };
        auto fut_a = std::async(std::launch::async, run, model_a.provider_id);
        auto fut_b = std::async(std::launch::async, run, model_b.provider_id);

        ComparisonRecord rec;
        rec.doc_id = doc_id;
        rec.question = q;
        rec.model_a = model_a;
        rec.model_b = model_b;
        rec.a = fut_a.get();
        rec.b = fut_b.get();
        rec.context_truncated = truncated;
        if (!rec.a.ok() && !rec.b.ok()) {
            fail(ErrorCode::BothModelsFailed, "both models failed",
                 {{"a", rec.a.error->first}, {"b", rec.b.error->first}});
        }
        if (opts.score) {
            score_side(doc, q, rec.a, opts);
            score_side(doc, q, rec.b, opts);
        }
        rec.created_at = utc_now_iso();
        return ws_.mutate([&] {
            rec.comparison_id = short_id("compare:" + doc_id, ws_.next_counter());
            ws_.save(rec);
            return rec;
        });
    }

    [[nodiscard]] std::vector<ComparisonRecord> list() const { return ws_.list<ComparisonRecord>(); }

  private:
    Workspace &ws_;
    CorpusService corpus_;
    LlmGateway &gateway_;

    // Reference chunk = the one whose best sentence scores highest for (question, answer).
    static void score_side(const Document &doc, const std::string &question, ModelAnswer &side,
                           const CompareOptions &opts) {
        if (!side.ok() || normalized_words(*side.text).empty()) {
            return;
        }
        const auto chunks = chunk_document(doc, opts.chunk_config);
        if (chunks.empty()) {
            return;
        }
        std::vector<std::string> texts;
        for (const auto &c : chunks) texts.push_back(c.text);
        std::size_t best = 0;
        double best_score = -1.0;
        for (std::size_t i = 0; i < chunks.size(); ++i) {
            const auto s = best_sentence(chunks[i].text, question, *side.text).score;
            if (s > best_score) {
                best_score = s;
                best = i;
            }
        }
        try {
            side.metric_report =
                score_pair(question, *side.text, chunks[best].text, CorpusStats::from_texts(texts), all_metrics());
            side.scored_chunk_id = chunks[best].chunk_id;
        } catch (const Error &) {
            side.metric_report.reset();
        }
    }
};

} // namespace qgen
