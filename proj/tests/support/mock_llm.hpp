#pragma once

// Scripted OpenAI-style completion server for tests.

#include <atomic>
#include <functional>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

namespace testing_support {

struct MockReply {
    int status = 200;
    std::string body;
};

inline std::string chat_body(const std::string &content) {
    return nlohmann::json{{"choices", {{{"index", 0},
                                        {"message", {{"role", "assistant"}, {"content", content}}},
                                        {"finish_reason", "stop"}}}}}
        .dump();
}

inline std::string text_body(const std::string &content) {
    return nlohmann::json{{"choices", {{{"index", 0}, {"text", content}, {"finish_reason", "stop"}}}}}.dump();
}

class MockLlm {
  public:
    using Script = std::function<MockReply(const nlohmann::json &request, int call_index)>;

    explicit MockLlm(Script script) : script_(std::move(script)) {
        auto handler = [this](const httplib::Request &req, httplib::Response &res) {
            const int idx = calls_.fetch_add(1);
            auto body = nlohmann::json::parse(req.body, nullptr, false);
            {
                std::lock_guard lk(mu_);
                requests_.push_back(body);
                paths_.push_back(req.path);
                auth_.push_back(req.get_header_value("Authorization"));
            }
            const auto reply = script_(body, idx);
            res.status = reply.status;
            res.set_content(reply.body, "application/json");
        };
        server_.Post(R"(/.*)", handler);
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }

    /// Replies with the given statuses in order; 200 entries carry `ok_content`.
    static Script sequence(std::vector<int> statuses, std::string ok_content = "ok") {
        return [statuses = std::move(statuses), ok_content](const nlohmann::json &, int idx) {
            const int s = idx < static_cast<int>(statuses.size()) ? statuses[idx] : statuses.back();
            return MockReply{s, s == 200 ? chat_body(ok_content) : R"({"error":"scripted"})"};
        };
    }

    ~MockLlm() {
        server_.stop();
        if (thread_.joinable()) thread_.join();
    }

    MockLlm(const MockLlm &) = delete;
    MockLlm &operator=(const MockLlm &) = delete;

    [[nodiscard]] int port() const { return port_; }
    [[nodiscard]] std::string base_url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1"; }
    [[nodiscard]] int calls() const { return calls_.load(); }
    std::vector<nlohmann::json> requests() {
        std::lock_guard lk(mu_);
        return requests_;
    }
    std::vector<std::string> paths() {
        std::lock_guard lk(mu_);
        return paths_;
    }
    std::vector<std::string> auth_headers() {
        std::lock_guard lk(mu_);
        return auth_;
    }

  private:
    Script script_;
    httplib::Server server_;
    std::thread thread_;
    int port_ = 0;
    std::atomic<int> calls_{0};
    std::mutex mu_;
    std::vector<nlohmann::json> requests_;
    std::vector<std::string> paths_;
    std::vector<std::string> auth_;
};

/// Last user message of a chat request (the prompt carrying the chunk).
inline std::string user_prompt(const nlohmann::json &req) {
    if (!req.contains("messages")) return req.value("prompt", "");
    std::string out;
    for (const auto &m : req["messages"]) {
        if (m.value("role", "") == "user") out = m.value("content", "");
    }
    return out;
}

} // namespace testing_support
