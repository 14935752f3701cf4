#pragma once

// Chat request/response and provider configuration types shared by the gateway,
// prompt construction, and the explorer.

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "qgen/util.hpp"

namespace qgen {

struct ChatMessage {
    std::string role; // system | user | assistant
    std::string content;
    friend bool operator==(const ChatMessage &, const ChatMessage &) = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(ChatMessage, role, content)

struct ChatRequest {
    std::vector<ChatMessage> messages;
    double temperature = 0.0;
    int max_output_tokens = 1024;

    void validate() const {
        if (messages.empty()) {
            fail(ErrorCode::InvalidArgument, "chat request has no messages");
        }
        if (messages.front().role != "system" && messages.front().role != "user") {
            fail(ErrorCode::InvalidArgument, "first message must be system or user");
        }
        for (const auto &m : messages) {
            if (m.role != "system" && m.role != "user" && m.role != "assistant") {
                fail(ErrorCode::InvalidArgument, "invalid message role '" + m.role + "'");
            }
        }
        if (!(temperature >= 0.0)) {
            fail(ErrorCode::InvalidArgument, "temperature must be >= 0");
        }
        if (max_output_tokens <= 0) {
            fail(ErrorCode::InvalidArgument, "max_output_tokens must be > 0");
        }
    }
    friend bool operator==(const ChatRequest &, const ChatRequest &) = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(ChatRequest, messages, temperature, max_output_tokens)

struct ChatResponse {
    std::string text;
    std::string finish_reason;
    std::int64_t latency_ms = 0;
    int attempts = 0;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(ChatResponse, text, finish_reason, latency_ms, attempts)

enum class WireDialect { ChatCompletions, TextCompletion };

NLOHMANN_JSON_SERIALIZE_ENUM(WireDialect, {{WireDialect::ChatCompletions, "chat-completions"},
                                           {WireDialect::TextCompletion, "text-completion"}})

struct AuthHeader {
    std::string name;
    std::string secret; // never serialized
};

struct ParsedUrl {
    std::string scheme;
    std::string host;
    int port = 0;
    std::string path_prefix; // no trailing slash

    [[nodiscard]] std::string origin() const { return scheme + "://" + host + ":" + std::to_string(port); }
};

inline ParsedUrl parse_base_url(std::string_view url) {
    ParsedUrl out;
    const auto sep = url.find("://");
    if (sep == std::string_view::npos) {
        fail(ErrorCode::InvalidArgument, "base_url must include a scheme");
    }
    out.scheme = std::string(url.substr(0, sep));
    if (out.scheme != "http" && out.scheme != "https") {
        fail(ErrorCode::InvalidArgument, "base_url scheme must be http or https");
    }
    auto rest = url.substr(sep + 3);
    const auto slash = rest.find('/');
    auto authority = rest.substr(0, slash);
    if (slash != std::string_view::npos) {
        out.path_prefix = std::string(rest.substr(slash));
        while (!out.path_prefix.empty() && out.path_prefix.back() == '/') {
            out.path_prefix.pop_back();
        }
    }
    out.port = out.scheme == "https" ? 443 : 80;
    if (const auto colon = authority.rfind(':'); colon != std::string_view::npos && authority.front() != '[') {
        const auto port_text = std::string(authority.substr(colon + 1));
        authority = authority.substr(0, colon);
        try {
            std::size_t used = 0;
            out.port = std::stoi(port_text, &used);
            if (used != port_text.size() || out.port <= 0 || out.port > 65535) {
                throw std::out_of_range(port_text);
            }
        } catch (const std::exception &) {
            fail(ErrorCode::InvalidArgument, "base_url has an invalid port");
        }
    }
    out.host = std::string(authority);
    if (out.host.empty() || out.host.find_first_of(" \t?#@") != std::string::npos) {
        fail(ErrorCode::InvalidArgument, "base_url has an invalid host");
    }
    return out;
}

struct ProviderConfig {
    std::string provider_id;
    std::string base_url;
    std::optional<AuthHeader> auth_header;
    std::optional<std::string> secret_env; // environment variable holding the header value
    std::string model_name;
    WireDialect wire_dialect = WireDialect::ChatCompletions;
    int timeout_ms = 60000;
    int max_retries = 2;
    int backoff_base_ms = 500;
    int max_concurrency = 4;

    void validate() const {
        if (trim(provider_id).empty()) {
            fail(ErrorCode::InvalidArgument, "provider_id must be nonempty");
        }
        parse_base_url(base_url);
        if (model_name.empty()) {
            fail(ErrorCode::InvalidArgument, "model_name must be nonempty");
        }
        if (timeout_ms <= 0) {
            fail(ErrorCode::InvalidArgument, "timeout_ms must be > 0");
        }
        if (max_retries < 0) {
            fail(ErrorCode::InvalidArgument, "max_retries must be >= 0");
        }
        if (backoff_base_ms < 0) {
            fail(ErrorCode::InvalidArgument, "backoff_base_ms must be >= 0");
        }
        if (max_concurrency <= 0) {
            fail(ErrorCode::InvalidArgument, "max_concurrency must be > 0");
        }
        if (auth_header && auth_header->name.empty()) {
            fail(ErrorCode::InvalidArgument, "auth_header.name must be nonempty");
        }
    }

    /// Header value to send, if any: inline secret first, then the environment.
    [[nodiscard]] std::optional<std::pair<std::string, std::string>> resolved_auth() const {
        if (!auth_header) {
            return std::nullopt;
        }
        if (!auth_header->secret.empty()) {
            return std::make_pair(auth_header->name, auth_header->secret);
        }
        if (secret_env) {
            if (const char *v = std::getenv(secret_env->c_str())) {
                return std::make_pair(auth_header->name, std::string(v));
            }
        }
        return std::nullopt;
    }
};

inline void to_json(nlohmann::json &j, const ProviderConfig &p) {
    j = {{"provider_id", p.provider_id},         {"base_url", p.base_url},
         {"model_name", p.model_name},           {"wire_dialect", p.wire_dialect},
         {"timeout_ms", p.timeout_ms},           {"max_retries", p.max_retries},
         {"backoff_base_ms", p.backoff_base_ms}, {"max_concurrency", p.max_concurrency}};
    if (p.auth_header) {
        j["auth_header"] = {{"name", p.auth_header->name}};
    }
    if (p.secret_env) {
        j["secret_env"] = *p.secret_env;
    }
}

/// Accepts {"auth_header": {"name", "secret"?}}; the secret is kept in memory only.
inline void from_json(const nlohmann::json &j, ProviderConfig &p) {
    p = ProviderConfig{};
    j.at("provider_id").get_to(p.provider_id);
    j.at("base_url").get_to(p.base_url);
    j.at("model_name").get_to(p.model_name);
    p.wire_dialect = j.value("wire_dialect", WireDialect::ChatCompletions);
    p.timeout_ms = j.value("timeout_ms", p.timeout_ms);
    p.max_retries = j.value("max_retries", p.max_retries);
    p.backoff_base_ms = j.value("backoff_base_ms", p.backoff_base_ms);
    p.max_concurrency = j.value("max_concurrency", p.max_concurrency);
    if (j.contains("auth_header") && !j["auth_header"].is_null()) {
        const auto &a = j["auth_header"];
        p.auth_header = AuthHeader{a.at("name").get<std::string>(), a.value("secret", std::string{})};
    }
    if (j.contains("secret_env") && !j["secret_env"].is_null()) {
        p.secret_env = j["secret_env"].get<std::string>();
    }
}

} // namespace qgen
