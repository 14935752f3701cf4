#pragma once

// HTTP client for chat-completions style endpoints: provider registry, per-provider
// request caps, and retry with exponential full-jitter backoff.

#include <algorithm>
#include <chrono>
#include <condition_variable>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <random>
#include <shared_mutex>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>

#include "qgen/chat.hpp"

namespace qgen {

namespace detail {

// Counting gate bounding in-flight requests for one provider.
class RequestGate {
  public:
    explicit RequestGate(int capacity) : capacity_(capacity) {}

    void acquire() {
        std::unique_lock lk(mu_);
        cv_.wait(lk, [&] { return in_flight_ < capacity_; });
        ++in_flight_;
    }
    void release() {
        {
            std::lock_guard lk(mu_);
            --in_flight_;
        }
        cv_.notify_one();
    }

  private:
    std::mutex mu_;
    std::condition_variable cv_;
    int capacity_;
    int in_flight_ = 0;
};

inline std::string render_text_prompt(const std::vector<ChatMessage> &messages) {
    std::string prompt;
    for (const auto &m : messages) {
        std::string label = m.role;
        label[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(label[0])));
        prompt += label + ": " + m.content + "\n\n";
    }
    prompt += "Assistant:";
    return prompt;
}

} // namespace detail

/// Request body for a provider's wire dialect.
inline nlohmann::json wire_body(const ProviderConfig &p, const ChatRequest &req) {
    if (p.wire_dialect == WireDialect::TextCompletion) {
        return {{"model", p.model_name},
                {"prompt", detail::render_text_prompt(req.messages)},
                {"temperature", req.temperature},
                {"max_tokens", req.max_output_tokens}};
    }
    return {{"model", p.model_name},
            {"messages", req.messages},
            {"temperature", req.temperature},
            {"max_tokens", req.max_output_tokens}};
}

inline std::string wire_path(const ProviderConfig &p) {
    const auto url = parse_base_url(p.base_url);
    return url.path_prefix + (p.wire_dialect == WireDialect::TextCompletion ? "/completions" : "/chat/completions");
}

/// Extracts (text, finish_reason) of the first choice; throws ProtocolError.
inline std::pair<std::string, std::string> parse_wire_response(WireDialect dialect, const std::string &body) {
    try {
        const auto j = nlohmann::json::parse(body);
        const auto &choice = j.at("choices").at(0);
        std::string text = dialect == WireDialect::TextCompletion
                               ? choice.at("text").get<std::string>()
                               : choice.at("message").at("content").get<std::string>();
        std::string finish;
        if (choice.contains("finish_reason") && choice["finish_reason"].is_string()) {
            finish = choice["finish_reason"].get<std::string>();
        }
        return {std::move(text), std::move(finish)};
    } catch (const nlohmann::json::exception &e) {
        fail(ErrorCode::ProtocolError, std::string("unparseable completion body: ") + e.what());
    }
}

class ProviderRegistry {
  public:
    void register_provider(ProviderConfig cfg) {
        cfg.validate();
        std::unique_lock lk(mu_);
        if (entries_.contains(cfg.provider_id)) {
            fail(ErrorCode::DuplicateProvider, "provider '" + cfg.provider_id + "' already registered");
        }
        auto gate = std::make_shared<detail::RequestGate>(cfg.max_concurrency);
        const auto id = cfg.provider_id;
        entries_.emplace(id, Entry{std::move(cfg), std::move(gate)});
    }

    [[nodiscard]] bool contains(const std::string &id) const {
        std::shared_lock lk(mu_);
        return entries_.contains(id);
    }

    [[nodiscard]] ProviderConfig get(const std::string &id) const { return entry(id).config; }

    [[nodiscard]] std::vector<ProviderConfig> list() const {
        std::shared_lock lk(mu_);
        std::vector<ProviderConfig> out;
        for (const auto &[id, e] : entries_) {
            out.push_back(e.config);
        }
        return out;
    }

    [[nodiscard]] std::vector<std::string> list_ids() const {
        std::shared_lock lk(mu_);
        std::vector<std::string> out;
        for (const auto &[id, e] : entries_) {
            out.push_back(id);
        }
        return out;
    }

    [[nodiscard]] std::shared_ptr<detail::RequestGate> gate(const std::string &id) const { return entry(id).gate; }

  private:
    struct Entry {
        ProviderConfig config;
        std::shared_ptr<detail::RequestGate> gate;
    };
    mutable std::shared_mutex mu_;
    std::map<std::string, Entry> entries_;

    Entry entry(const std::string &id) const {
        std::shared_lock lk(mu_);
        const auto it = entries_.find(id);
        if (it == entries_.end()) {
            fail(ErrorCode::ProviderNotFound, "provider '" + id + "' is not registered");
        }
        return it->second;
    }
};

class LlmGateway {
  public:
    using Sleeper = std::function<void(std::chrono::milliseconds)>;

    explicit LlmGateway(Sleeper sleeper = {}) : sleeper_(std::move(sleeper)) {
        if (!sleeper_) {
            sleeper_ = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
        }
    }

    ProviderRegistry &registry() { return registry_; }
    const ProviderRegistry &registry() const { return registry_; }

    /// Calls a registered provider, honoring its concurrency cap.
    ChatResponse chat(const std::string &provider_id, const ChatRequest &req) {
        const auto cfg = registry_.get(provider_id);
        const auto gate = registry_.gate(provider_id);
        gate->acquire();
        struct Release {
            detail::RequestGate &g;
            ~Release() { g.release(); }
        } release{*gate};
        return chat(cfg, req);
    }

    /// At most 1 + max_retries attempts. Retries 429, 5xx and transport failures only.
    ChatResponse chat(const ProviderConfig &cfg, const ChatRequest &req) {
        cfg.validate();
        req.validate();
        const auto url = parse_base_url(cfg.base_url);
        const auto path = wire_path(cfg);
        const auto body = wire_body(cfg, req).dump();
        const auto started = std::chrono::steady_clock::now();

        httplib::Headers headers;
        if (auto auth = cfg.resolved_auth()) {
            headers.emplace(auth->first, auth->second);
        }

        for (int attempt = 0;; ++attempt) {
            const bool last = attempt >= cfg.max_retries;
            httplib::Client client(url.origin());
            const auto timeout = std::chrono::milliseconds(cfg.timeout_ms);
            client.set_connection_timeout(timeout);
            client.set_read_timeout(timeout);
            client.set_write_timeout(timeout);
            auto res = client.Post(path, headers, body, "application/json");

            if (!res) {
                const auto err = res.error();
                const bool timed_out = err == httplib::Error::ConnectionTimeout || err == httplib::Error::Read ||
                                       err == httplib::Error::Write;
                if (last) {
                    fail(timed_out ? ErrorCode::Timeout : ErrorCode::UpstreamError,
                         "provider '" + cfg.provider_id + "': " + httplib::to_string(err),
                         {{"attempts", attempt + 1}});
                }
                backoff(cfg, attempt);
                continue;
            }

            const int status = res->status;
            if (status >= 200 && status < 300) {
                auto [text, finish] = parse_wire_response(cfg.wire_dialect, res->body);
                ChatResponse out;
                out.text = std::move(text);
                out.finish_reason = std::move(finish);
                out.latency_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                                     std::chrono::steady_clock::now() - started)
                                     .count();
                out.attempts = attempt + 1;
                return out;
            }
            const nlohmann::json details{{"status", status}, {"attempts", attempt + 1}};
            if (status == 401 || status == 403) {
                fail(ErrorCode::AuthError, "provider '" + cfg.provider_id + "' rejected credentials", details);
            }
            if (status == 429 || status >= 500) {
                if (last) {
                    fail(status == 429 ? ErrorCode::RateLimited : ErrorCode::UpstreamError,
                         "provider '" + cfg.provider_id + "' returned HTTP " + std::to_string(status), details);
                }
                backoff(cfg, attempt);
                continue;
            }
            fail(ErrorCode::UpstreamError,
                 "provider '" + cfg.provider_id + "' returned HTTP " + std::to_string(status), details);
        }
    }

    /// Full jitter: uniform in [0, base * 2^attempt].
    std::chrono::milliseconds backoff_delay(const ProviderConfig &cfg, int attempt) {
        const auto cap = static_cast<std::int64_t>(cfg.backoff_base_ms) << std::min(attempt, 20);
        std::lock_guard lk(rng_mu_);
        std::uniform_int_distribution<std::int64_t> dist(0, cap);
        return std::chrono::milliseconds(dist(rng_));
    }

  private:
    ProviderRegistry registry_;
    Sleeper sleeper_;
    std::mutex rng_mu_;
    std::mt19937_64 rng_{std::random_device{}()};

    void backoff(const ProviderConfig &cfg, int attempt) { sleeper_(backoff_delay(cfg, attempt)); }
};

} // namespace qgen
