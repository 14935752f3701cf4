#pragma once

// Mock provider behaviour for generation runs: two QA pairs per chunk, where each
// answer is the last word of one sentence in the chunk.

#include <string>

#include "qgen/attribution.hpp"
#include "qgen/text.hpp"
#include "support/mock_llm.hpp"

namespace testing_support {

inline std::string chunk_from_prompt(const std::string &prompt) {
    const auto open = prompt.find("<<<\n");
    const auto close = prompt.rfind("\n>>>");
    if (open == std::string::npos || close == std::string::npos || close < open) return {};
    return prompt.substr(open + 4, close - open - 4);
}

/// Last content word of a sentence, without edge punctuation.
inline std::string answer_token(const std::string &sentence) {
    const auto words = qgen::normalize(sentence);
    for (auto it = words.rbegin(); it != words.rend(); ++it) {
        if (qgen::is_content_token(it->norm)) return qgen::utf8::substr(sentence, it->span);
    }
    return words.empty() ? sentence : qgen::utf8::substr(sentence, words.back().span);
}

/// Chunks whose text contains `garbage_marker` get a reply with no parseable pairs.
inline MockLlm::Script two_pairs_per_chunk(std::string garbage_marker = "") {
    return [garbage_marker](const nlohmann::json &req, int) {
        const auto chunk = chunk_from_prompt(user_prompt(req));
        if (!garbage_marker.empty() && chunk.find(garbage_marker) != std::string::npos) {
            return MockReply{200, chat_body("Sorry, I have nothing useful to say.")};
        }
        const auto sentences = qgen::split_sentences(chunk);
        auto pairs = nlohmann::json::array();
        for (int k = 0; k < 2; ++k) {
            const auto &s = sentences.empty() ? chunk : sentences[std::min<std::size_t>(k, sentences.size() - 1)].text;
            const auto ans = answer_token(s);
            pairs.push_back({{"question", "Which word ends this part?"}, {"answer", ans}});
        }
        return MockReply{200, chat_body("Here are the pairs:\n" + pairs.dump())};
    };
}

inline qgen::ProviderConfig mock_provider(const std::string &id, const MockLlm &mock, int max_retries = 2) {
    qgen::ProviderConfig p;
    p.provider_id = id;
    p.base_url = mock.base_url();
    p.model_name = "mock-model";
    p.max_retries = max_retries;
    p.backoff_base_ms = 1;
    p.timeout_ms = 5000;
    return p;
}

} // namespace testing_support
