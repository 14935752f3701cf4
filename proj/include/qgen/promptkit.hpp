#pragma once

// Zero-/few-shot generation prompts and tolerant parsing of model output.

#include <algorithm>
#include <string>
#include <string_view>
#include <vector>

#include "qgen/chat.hpp"
#include "qgen/chunker.hpp"
#include "qgen/metrics.hpp"

namespace qgen {

inline constexpr std::string_view kPromptTemplateVersion = "qa-json-v1";

struct ExamplePair {
    std::string example_id;
    std::string doc_id;
    std::string question;
    std::string answer;
    friend bool operator==(const ExamplePair &, const ExamplePair &) = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(ExamplePair, example_id, doc_id, question, answer)

enum class PromptMode { ZeroShot, FewShot };

NLOHMANN_JSON_SERIALIZE_ENUM(PromptMode, {{PromptMode::ZeroShot, "zero-shot"}, {PromptMode::FewShot, "few-shot"}})

struct GenerationConfig {
    std::string provider_id;
    ChunkConfig chunk_config;
    int questions_per_chunk = 3;
    PromptMode prompt_mode = PromptMode::ZeroShot;
    int num_examples = 0;
    double temperature = 0.2;
    std::vector<std::string> metrics = {"all"};
    std::uint64_t seed = 0;
    int max_output_tokens = 1024;

    void validate() const {
        if (provider_id.empty()) {
            fail(ErrorCode::InvalidArgument, "provider_id is required");
        }
        chunk_config.validate();
        if (questions_per_chunk < 1) {
            fail(ErrorCode::InvalidArgument, "questions_per_chunk must be >= 1");
        }
        if (num_examples < 0) {
            fail(ErrorCode::InvalidArgument, "num_examples must be >= 0");
        }
        if (prompt_mode == PromptMode::FewShot && num_examples < 1) {
            fail(ErrorCode::InvalidArgument, "few-shot prompts need num_examples >= 1");
        }
        if (!(temperature >= 0.0)) {
            fail(ErrorCode::InvalidArgument, "temperature must be >= 0");
        }
        if (max_output_tokens <= 0) {
            fail(ErrorCode::InvalidArgument, "max_output_tokens must be > 0");
        }
        parse_metric_set(metrics);
    }

    [[nodiscard]] MetricSet metric_set() const { return parse_metric_set(metrics); }
    friend bool operator==(const GenerationConfig &, const GenerationConfig &) = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(GenerationConfig, provider_id, chunk_config, questions_per_chunk,
                                                prompt_mode, num_examples, temperature, metrics, seed,
                                                max_output_tokens)

struct RawQAPair {
    std::string question;
    std::string answer;
    friend bool operator==(const RawQAPair &, const RawQAPair &) = default;
};

inline constexpr std::string_view kGenerationSystemPrompt =
    "You write question-answer pairs for a reading-comprehension dataset. "
    "Every question must be answerable from the context passage alone, and every answer must be "
    "supported by the passage. Respond with only a JSON array of objects, each with exactly two "
    "string fields: \"question\" and \"answer\". Do not add commentary.";

/// Few-shot examples are taken from the chunk's document, ordered by example_id, truncated to num_examples.
inline ChatRequest build_prompt(const Chunk &chunk, const GenerationConfig &cfg, std::vector<ExamplePair> examples) {
    std::string user;
    if (cfg.prompt_mode == PromptMode::FewShot) {
        std::erase_if(examples, [&](const ExamplePair &e) { return e.doc_id != chunk.doc_id; });
        if (examples.empty()) {
            fail(ErrorCode::NoExamples, "few-shot prompt requested but document " + chunk.doc_id +
                                            " has no example pairs");
        }
        std::stable_sort(examples.begin(), examples.end(),
                         [](const ExamplePair &a, const ExamplePair &b) { return a.example_id < b.example_id; });
        if (examples.size() > static_cast<std::size_t>(cfg.num_examples)) {
            examples.resize(static_cast<std::size_t>(cfg.num_examples));
        }
        auto rendered = nlohmann::json::array();
        for (const auto &e : examples) {
            rendered.push_back({{"question", e.question}, {"answer", e.answer}});
        }
        user += "Examples of the expected style:\n";
        user += rendered.dump(2);
        user += "\n\n";
    }
    user += "Context:\n<<<\n";
    user += chunk.text;
    user += "\n>>>\n\n";
    user += "Write " + std::to_string(cfg.questions_per_chunk) +
            " question-answer pairs about the context above. Output the JSON array only.";

    ChatRequest req;
    req.messages = {{"system", std::string(kGenerationSystemPrompt)}, {"user", std::move(user)}};
    req.temperature = cfg.temperature;
    req.max_output_tokens = cfg.max_output_tokens;
    return req;
}

struct ParsedResponse {
    std::vector<RawQAPair> pairs;
    std::size_t dropped = 0; // candidates rejected for an empty question or answer
};

namespace detail {

// First balanced '[' ... ']' region, skipping brackets inside JSON strings.
inline std::optional<std::string_view> first_bracket_region(std::string_view text) {
    const auto open = text.find('[');
    if (open == std::string_view::npos) {
        return std::nullopt;
    }
    int depth = 0;
    bool in_string = false;
    bool escaped = false;
    for (std::size_t i = open; i < text.size(); ++i) {
        const char c = text[i];
        if (in_string) {
            if (escaped) {
                escaped = false;
            } else if (c == '\\') {
                escaped = true;
            } else if (c == '"') {
                in_string = false;
            }
            continue;
        }
        if (c == '"') {
            in_string = true;
        } else if (c == '[') {
            ++depth;
        } else if (c == ']' && --depth == 0) {
            return text.substr(open, i - open + 1);
        }
    }
    return std::nullopt;
}

inline ParsedResponse parse_json_pairs(std::string_view text) {
    ParsedResponse out;
    const auto region = first_bracket_region(text);
    if (!region) {
        return out;
    }
    const auto j = nlohmann::json::parse(*region, nullptr, false);
    if (j.is_discarded() || !j.is_array()) {
        return out;
    }
    for (const auto &item : j) {
        if (!item.is_object()) {
            continue;
        }
        const auto q = item.contains("question") && item["question"].is_string() ? trim(item["question"].get<std::string>()) : "";
        const auto a = item.contains("answer") && item["answer"].is_string() ? trim(item["answer"].get<std::string>()) : "";
        if (q.empty() || a.empty()) {
            ++out.dropped;
            continue;
        }
        out.pairs.push_back({q, a});
    }
    return out;
}

// Strips list markers such as "1.", "2)", "-", "*".
inline std::string_view strip_list_marker(std::string_view line) {
    std::size_t i = 0;
    while (i < line.size() && std::isdigit(static_cast<unsigned char>(line[i]))) {
        ++i;
    }
    if (i > 0 && i < line.size() && (line[i] == '.' || line[i] == ')')) {
        line.remove_prefix(i + 1);
    } else if (!line.empty() && (line[0] == '-' || line[0] == '*')) {
        line.remove_prefix(1);
    }
    while (!line.empty() && (line.front() == ' ' || line.front() == '\t')) {
        line.remove_prefix(1);
    }
    return line;
}

inline std::optional<std::string_view> after_label(std::string_view line, std::initializer_list<std::string_view> labels) {
    for (auto label : labels) {
        if (line.size() >= label.size()) {
            bool same = true;
            for (std::size_t i = 0; i < label.size(); ++i) {
                if (std::tolower(static_cast<unsigned char>(line[i])) != label[i]) {
                    same = false;
                    break;
                }
            }
            if (same) {
                return line.substr(label.size());
            }
        }
    }
    return std::nullopt;
}

// "Q: ..." / "A: ..." lines; continuation lines extend the open field until a blank line.
inline ParsedResponse parse_line_pairs(std::string_view text) {
    ParsedResponse out;
    std::string question;
    std::string answer;
    enum class Open { None, Question, Answer } open = Open::None;
    auto finish = [&] {
        if (open == Open::Answer || (!question.empty() && !answer.empty())) {
            auto q = trim(question);
            auto a = trim(answer);
            if (q.empty() || a.empty()) {
                ++out.dropped;
            } else {
                out.pairs.push_back({std::move(q), std::move(a)});
            }
            question.clear();
            answer.clear();
        }
        open = Open::None;
    };
    for (auto raw : split_lines(text)) {
        const auto stripped = trim(raw);
        if (stripped.empty()) {
            if (open == Open::Answer) {
                finish();
            }
            continue;
        }
        const auto line = std::string(strip_list_marker(stripped));
        if (auto rest = after_label(line, {"q:", "question:"})) {
            if (open == Open::Answer) {
                finish();
            } else if (open == Open::Question) {
                ++out.dropped;
            }
            question = std::string(*rest);
            answer.clear();
            open = Open::Question;
        } else if (auto rest = after_label(line, {"a:", "answer:"})) {
            if (open == Open::Question) {
                answer = std::string(*rest);
                open = Open::Answer;
            }
        } else if (open == Open::Question) {
            question += " " + line;
        } else if (open == Open::Answer) {
            answer += " " + line;
        }
    }
    if (open == Open::Answer) {
        finish();
    } else if (open == Open::Question) {
        ++out.dropped;
    }
    return out;
}

} // namespace detail

/// JSON array first (first balanced bracket region), then "Q:"/"A:" lines.
inline ParsedResponse parse_response(std::string_view text) {
    auto parsed = detail::parse_json_pairs(text);
    if (parsed.pairs.empty()) {
        auto fallback = detail::parse_line_pairs(text);
        fallback.dropped += parsed.dropped;
        parsed = std::move(fallback);
    }
    if (parsed.pairs.empty()) {
        fail(ErrorCode::UnparseableResponse, "model output contains no question-answer pairs",
             {{"dropped", parsed.dropped}});
    }
    return parsed;
}

} // namespace qgen
