#pragma once

// JSON HTTP API over a Studio. Long-running generation returns 202 with a run id
// that clients poll; training jobs are polled through /api/v1/jobs/{id}.

#include <condition_variable>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>

#include "qgen/studio.hpp"

namespace qgen {

#ifndef QGEN_VERSION
#define QGEN_VERSION "0.0.0"
#endif

inline constexpr std::string_view kVersion = QGEN_VERSION;

struct ListenAddress {
    std::string host = "127.0.0.1";
    int port = 8080;
};

inline ListenAddress parse_listen(std::string_view text) {
    const auto colon = text.rfind(':');
    if (colon == std::string_view::npos) {
        fail(ErrorCode::InvalidArgument, "listen address must be HOST:PORT");
    }
    ListenAddress a;
    a.host = std::string(text.substr(0, colon));
    try {
        a.port = std::stoi(std::string(text.substr(colon + 1)));
    } catch (const std::exception &) {
        fail(ErrorCode::InvalidArgument, "listen port is not a number");
    }
    if (a.host.empty() || a.port < 0 || a.port > 65535) {
        fail(ErrorCode::InvalidArgument, "invalid listen address");
    }
    return a;
}

namespace detail {

// Fixed-size pool for background generation runs.
class TaskPool {
  public:
    explicit TaskPool(std::size_t workers) {
        for (std::size_t i = 0; i < std::max<std::size_t>(workers, 1); ++i) {
            threads_.emplace_back([this] { loop(); });
        }
    }
    ~TaskPool() {
        {
            std::lock_guard lk(mu_);
            stopping_ = true;
        }
        cv_.notify_all();
        for (auto &t : threads_) t.join();
    }
    void submit(std::function<void()> task) {
        {
            std::lock_guard lk(mu_);
            tasks_.push_back(std::move(task));
        }
        cv_.notify_one();
    }

  private:
    std::mutex mu_;
    std::condition_variable cv_;
    std::deque<std::function<void()>> tasks_;
    std::vector<std::thread> threads_;
    bool stopping_ = false;

    void loop() {
        while (true) {
            std::function<void()> task;
            {
                std::unique_lock lk(mu_);
                cv_.wait(lk, [&] { return stopping_ || !tasks_.empty(); });
                if (tasks_.empty()) return;
                task = std::move(tasks_.front());
                tasks_.pop_front();
            }
            task();
        }
    }
};

inline nlohmann::json parse_body(const httplib::Request &req) {
    if (req.body.empty()) {
        return nlohmann::json::object();
    }
    auto j = nlohmann::json::parse(req.body, nullptr, false);
    if (j.is_discarded()) {
        fail(ErrorCode::InvalidArgument, "request body is not valid JSON");
    }
    if (!j.is_object()) {
        fail(ErrorCode::InvalidArgument, "request body must be a JSON object");
    }
    return j;
}

inline std::string require_string(const nlohmann::json &body, const char *key) {
    if (!body.contains(key) || !body[key].is_string()) {
        fail(ErrorCode::InvalidArgument, std::string("field '") + key + "' must be a string");
    }
    return body[key].get<std::string>();
}

} // namespace detail

struct RunInfo {
    std::string run_id;
    std::string group_id;
    RunProgress progress;
    std::mutex mu;
    std::optional<std::string> dataset_id;
    std::optional<nlohmann::json> error;

    nlohmann::json to_json() {
        auto j = progress.snapshot();
        j["run_id"] = run_id;
        j["group_id"] = group_id;
        std::lock_guard lk(mu);
        j["dataset_id"] = dataset_id ? nlohmann::json(*dataset_id) : nlohmann::json(nullptr);
        if (error) j["error"] = *error;
        return j;
    }
};

class ApiServer {
  public:
    explicit ApiServer(Studio &studio, std::size_t parallel_runs = 2) : studio_(studio), pool_(parallel_runs) {
        // SO_REUSEPORT would let a second server share a busy port silently
        http_.set_socket_options([](socket_t sock) {
            int yes = 1;
            setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
        });
        routes();
    }

    ~ApiServer() { stop(); }

    ApiServer(const ApiServer &) = delete;
    ApiServer &operator=(const ApiServer &) = delete;

    /// Binds; port 0 picks a free port. Returns the bound port.
    int bind(const ListenAddress &addr) {
        const int port = addr.port == 0 ? http_.bind_to_any_port(addr.host) : addr.port;
        if (addr.port != 0 && !http_.bind_to_port(addr.host, addr.port)) {
            fail(ErrorCode::BindError, "cannot listen on " + addr.host + ":" + std::to_string(addr.port));
        }
        if (port < 0) {
            fail(ErrorCode::BindError, "cannot listen on " + addr.host);
        }
        port_ = port;
        return port;
    }

    /// Serves until stop(); blocks.
    void run() { http_.listen_after_bind(); }

    void start_background() {
        thread_ = std::thread([this] { run(); });
        http_.wait_until_ready();
    }

    void stop() {
        http_.stop();
        if (thread_.joinable()) thread_.join();
    }

    [[nodiscard]] int port() const { return port_; }
    httplib::Server &http() { return http_; }

  private:
    Studio &studio_;
    httplib::Server http_;
    detail::TaskPool pool_;
    std::thread thread_;
    int port_ = 0;
    std::mutex runs_mu_;
    std::map<std::string, std::shared_ptr<RunInfo>> runs_;
    std::uint64_t run_counter_ = 0; // guarded by runs_mu_

    using Handler = std::function<void(const httplib::Request &, httplib::Response &)>;

    static void reply(httplib::Response &res, int status, const nlohmann::json &body) {
        res.status = status;
        res.set_content(body.dump(), "application/json");
    }

    static Handler guarded(Handler h) {
        return [h = std::move(h)](const httplib::Request &req, httplib::Response &res) {
            try {
                h(req, res);
            } catch (const Error &e) {
                reply(res, http_status(e.code()), e.to_json());
            } catch (const nlohmann::json::exception &e) {
                reply(res, 422, Error(ErrorCode::InvalidArgument, e.what()).to_json());
            } catch (const std::exception &e) {
                reply(res, 500, Error(ErrorCode::Internal, e.what()).to_json());
            }
        };
    }

    void get(const std::string &pattern, Handler h) { http_.Get(pattern, guarded(std::move(h))); }
    void post(const std::string &pattern, Handler h) { http_.Post(pattern, guarded(std::move(h))); }
    void del(const std::string &pattern, Handler h) { http_.Delete(pattern, guarded(std::move(h))); }

    void routes() {
        http_.set_error_handler([](const httplib::Request &, httplib::Response &res) {
            if (res.body.empty()) {
                const auto code = res.status == 404 ? ErrorCode::NotFound : ErrorCode::Internal;
                reply(res, res.status, Error(code, res.status == 404 ? "no such route" : "request failed").to_json());
            }
        });

        get("/healthz", [this](const httplib::Request &, httplib::Response &res) {
            if (!studio_.workspace().healthy()) {
                reply(res, 503, Error(ErrorCode::WorkspaceUnavailable, "workspace is not accessible",
                                      {{"workspace", studio_.workspace().root().string()}})
                                    .to_json());
                return;
            }
            reply(res, 200, {{"status", "ok"},
                             {"workspace", studio_.workspace().root().string()},
                             {"version", std::string(kVersion)}});
        });

        corpus_routes();
        example_routes();
        generation_routes();
        dataset_routes();
        provider_routes();
        training_routes();
        explorer_routes();
    }

    void corpus_routes() {
        auto &corpus = studio_.corpus();
        get("/api/v1/groups", [&](const httplib::Request &, httplib::Response &res) {
            reply(res, 200, corpus.list_groups());
        });
        post("/api/v1/groups", [&](const httplib::Request &req, httplib::Response &res) {
            const auto body = detail::parse_body(req);
            const auto name = body.contains("name") && body["name"].is_string() ? body["name"].get<std::string>() : "";
            reply(res, 201, corpus.create_group(name));
        });
        get(R"(/api/v1/groups/([^/]+))", [&](const httplib::Request &req, httplib::Response &res) {
            reply(res, 200, corpus.get_group(req.matches[1]));
        });
        del(R"(/api/v1/groups/([^/]+))", [&](const httplib::Request &req, httplib::Response &res) {
            corpus.delete_group(req.matches[1]);
            reply(res, 200, {{"deleted", req.matches[1].str()}});
        });
        get(R"(/api/v1/groups/([^/]+)/documents)", [&](const httplib::Request &req, httplib::Response &res) {
            reply(res, 200, corpus.list_documents(req.matches[1]));
        });
        post(R"(/api/v1/groups/([^/]+)/documents)", [&](const httplib::Request &req, httplib::Response &res) {
            const auto body = detail::parse_body(req);
            const auto title = detail::require_string(body, "title");
            const auto kind = parse_source_kind(body.value("source_kind", std::string("markdown")));
            const auto payload = detail::require_string(body, "payload");
            reply(res, 201, corpus.ingest_document(req.matches[1], title, kind, payload));
        });
        get(R"(/api/v1/groups/([^/]+)/documents/([^/]+))", [&](const httplib::Request &req, httplib::Response &res) {
            auto doc = corpus.get_document(req.matches[2]);
            if (doc.group_id != req.matches[1]) {
                fail(ErrorCode::DocNotFound, "document not in group");
            }
            reply(res, 200, doc);
        });
        del(R"(/api/v1/groups/([^/]+)/documents/([^/]+))", [&](const httplib::Request &req, httplib::Response &res) {
            if (corpus.get_document(req.matches[2]).group_id != req.matches[1]) {
                fail(ErrorCode::DocNotFound, "document not in group");
            }
            corpus.delete_document(req.matches[2]);
            reply(res, 200, {{"deleted", req.matches[2].str()}});
        });
        get(R"(/api/v1/documents/([^/]+)/text)", [&](const httplib::Request &req, httplib::Response &res) {
            reply(res, 200, {{"doc_id", req.matches[1].str()}, {"text", corpus.canonical_text(req.matches[1])}});
        });
    }

    void example_routes() {
        auto &corpus = studio_.corpus();
        get(R"(/api/v1/documents/([^/]+)/examples)", [&](const httplib::Request &req, httplib::Response &res) {
            reply(res, 200, corpus.list_examples(req.matches[1]));
        });
        post(R"(/api/v1/documents/([^/]+)/examples)", [&](const httplib::Request &req, httplib::Response &res) {
            const auto body = detail::parse_body(req);
            reply(res, 201,
                  corpus.add_example(req.matches[1], detail::require_string(body, "question"),
                                     detail::require_string(body, "answer")));
        });
        get(R"(/api/v1/documents/([^/]+)/examples/([^/]+))", [&](const httplib::Request &req, httplib::Response &res) {
            for (const auto &ex : corpus.list_examples(req.matches[1])) {
                if (ex.example_id == req.matches[2]) {
                    reply(res, 200, ex);
                    return;
                }
            }
            fail(ErrorCode::NotFound, "example '" + req.matches[2].str() + "' not found");
        });
        del(R"(/api/v1/documents/([^/]+)/examples/([^/]+))", [&](const httplib::Request &req, httplib::Response &res) {
            corpus.delete_example(req.matches[1], req.matches[2]);
            reply(res, 200, {{"deleted", req.matches[2].str()}});
        });
    }

    void generation_routes() {
        post("/api/v1/generate", [&](const httplib::Request &req, httplib::Response &res) {
            const auto body = detail::parse_body(req);
            const auto group_id = detail::require_string(body, "group_id");
            auto cfg_json = body;
            cfg_json.erase("group_id");
            const auto cfg = cfg_json.get<GenerationConfig>();
            cfg.validate();
            const auto group = studio_.corpus().get_group(group_id);
            if (group.document_ids.empty()) {
                fail(ErrorCode::EmptyGroup, "group '" + group_id + "' has no documents");
            }
            if (!studio_.gateway().registry().contains(cfg.provider_id)) {
                fail(ErrorCode::ProviderNotFound, "provider '" + cfg.provider_id + "' is not registered");
            }
            auto run = std::make_shared<RunInfo>();
            run->group_id = group_id;
            {
                // Run ids are process-local so polling does not consume workspace counters.
                std::lock_guard lk(runs_mu_);
                run->run_id = short_id("run:" + group_id, ++run_counter_);
                runs_[run->run_id] = run;
            }
            pool_.submit([this, run, cfg] {
                try {
                    const auto d = studio_.generator().generate_for_group(run->group_id, cfg, &run->progress);
                    std::lock_guard lk(run->mu);
                    run->dataset_id = d.dataset_id;
                } catch (const Error &e) {
                    std::lock_guard lk(run->mu);
                    run->error = e.to_json();
                } catch (const std::exception &e) {
                    std::lock_guard lk(run->mu);
                    run->error = Error(ErrorCode::Internal, e.what()).to_json();
                }
            });
            reply(res, 202, {{"run_id", run->run_id}});
        });
        get(R"(/api/v1/runs/([^/]+))", [&](const httplib::Request &req, httplib::Response &res) {
            std::shared_ptr<RunInfo> run;
            {
                std::lock_guard lk(runs_mu_);
                if (auto it = runs_.find(req.matches[1]); it != runs_.end()) run = it->second;
            }
            if (!run) {
                fail(ErrorCode::NotFound, "run '" + req.matches[1].str() + "' not found");
            }
            reply(res, 200, run->to_json());
        });
    }

    void dataset_routes() {
        get("/api/v1/datasets", [&](const httplib::Request &, httplib::Response &res) {
            auto out = nlohmann::json::array();
            for (const auto &d : studio_.list_datasets()) out.push_back(dataset_summary(d));
            reply(res, 200, out);
        });
        get(R"(/api/v1/datasets/([^/]+))", [&](const httplib::Request &req, httplib::Response &res) {
            reply(res, 200, studio_.load_dataset(req.matches[1]));
        });
        get(R"(/api/v1/datasets/([^/]+)/pairs)", [&](const httplib::Request &req, httplib::Response &res) {
            MetricFilter f;
            const auto filter = req.get_param_value("filter");
            const auto sort = req.get_param_value("sort");
            f.predicates = parse_predicates(filter);
            if (!sort.empty()) f.sort = parse_sort_key(sort);
            const auto pairs = studio_.query_pairs(req.matches[1], f);
            reply(res, 200, {{"dataset_id", req.matches[1].str()},
                             {"filter", filter},
                             {"sort", sort},
                             {"count", pairs.size()},
                             {"pairs", pairs}});
        });
        get(R"(/api/v1/pairs/([^/]+)/attribution)", [&](const httplib::Request &req, httplib::Response &res) {
            reply(res, 200, studio_.pair_attribution(req.matches[1]));
        });
        post(R"(/api/v1/datasets/([^/]+)/export)", [&](const httplib::Request &req, httplib::Response &res) {
            const auto spec = detail::parse_body(req).get<SplitSpec>();
            spec.validate();
            const auto result = studio_.export_dataset(req.matches[1], spec);
            auto body = result.manifest;
            body["export_dir"] = result.dir.string();
            body["export_id"] = result.dir.filename().string();
            reply(res, 200, body);
        });
    }

    void provider_routes() {
        get("/api/v1/providers", [&](const httplib::Request &, httplib::Response &res) {
            reply(res, 200, studio_.list_providers());
        });
        post("/api/v1/providers", [&](const httplib::Request &req, httplib::Response &res) {
            const auto cfg = detail::parse_body(req).get<ProviderConfig>();
            reply(res, 201, studio_.register_provider(cfg));
        });
    }

    void training_routes() {
        post("/api/v1/train", [&](const httplib::Request &req, httplib::Response &res) {
            const auto body = detail::parse_body(req);
            const auto export_ref = body.contains("export_dir") ? detail::require_string(body, "export_dir")
                                                                : detail::require_string(body, "export_id");
            const auto params = body.at("params").get<TrainingParams>();
            std::optional<std::string> tpl;
            if (body.contains("command_template")) tpl = detail::require_string(body, "command_template");
            const auto job = studio_.launch_training(export_ref, params, tpl);
            reply(res, 202, {{"job_id", job.job_id}, {"state", job.state}});
        });
        get("/api/v1/jobs", [&](const httplib::Request &, httplib::Response &res) {
            reply(res, 200, studio_.jobs().list());
        });
        get(R"(/api/v1/jobs/([^/]+))", [&](const httplib::Request &req, httplib::Response &res) {
            reply(res, 200, studio_.jobs().status(req.matches[1]));
        });
        del(R"(/api/v1/jobs/([^/]+))", [&](const httplib::Request &req, httplib::Response &res) {
            reply(res, 200, studio_.jobs().cancel(req.matches[1]));
        });
    }

    void explorer_routes() {
        post("/api/v1/compare", [&](const httplib::Request &req, httplib::Response &res) {
            const auto body = detail::parse_body(req);
            const auto doc_id = detail::require_string(body, "doc_id");
            const auto question = detail::require_string(body, "question");
            const auto a = body.at("model_a").get<ModelRef>();
            const auto b = body.at("model_b").get<ModelRef>();
            const auto opts = body.value("opts", nlohmann::json::object()).get<CompareOptions>();
            reply(res, 200, studio_.explorer().compare(doc_id, question, a, b, opts));
        });
        get("/api/v1/comparisons", [&](const httplib::Request &, httplib::Response &res) {
            reply(res, 200, studio_.explorer().list());
        });
    }
};

} // namespace qgen
