#include <array>
#include <cstdio>
#include <fstream>
#include <sys/wait.h>
#include <thread>

#include <gtest/gtest.h>

#include "qgen/server.hpp"
#include "support/fixtures.hpp"
#include "support/qa_mock.hpp"

using namespace qgen;
using namespace std::chrono_literals;
using nlohmann::json;
using testing_support::MockLlm;
using testing_support::TempDir;

namespace {

const char *kDocMd = "# Rivers\n\n"
                     "The Nile flows north through Egypt. Its delta feeds Cairo. Farmers rely on annual floods.\n\n"
                     "## Mountains\n\n"
                     "Everest rises above Nepal. Climbers need bottled oxygen. Storms arrive quickly.";

struct ApiFixture {
    TempDir dir;
    std::unique_ptr<Studio> studio;
    std::unique_ptr<ApiServer> server;
    std::unique_ptr<httplib::Client> client;

    explicit ApiFixture(WorkspaceOptions wopts = {}) {
        StudioConfig cfg;
        cfg.workspace = dir.path() / "ws";
        cfg.workspace_options = wopts;
        cfg.supervisor_options.cancel_grace = 300ms;
        cfg.train_cmd = "true --data {data}";
        studio = std::make_unique<Studio>(cfg);
        server = std::make_unique<ApiServer>(*studio);
        const int port = server->bind({"127.0.0.1", 0});
        server->start_background();
        client = std::make_unique<httplib::Client>("127.0.0.1", port);
        client->set_read_timeout(10, 0);
    }
    ~ApiFixture() {
        server->stop();
        server.reset();
        studio.reset();
    }

    std::pair<int, json> get(const std::string &path) {
        auto res = client->Get(path);
        if (!res) return {0, {}};
        return {res->status, json::parse(res->body, nullptr, false)};
    }
    std::pair<int, json> post(const std::string &path, const json &body) {
        auto res = client->Post(path, body.dump(), "application/json");
        if (!res) return {0, {}};
        return {res->status, json::parse(res->body, nullptr, false)};
    }
    std::pair<int, json> post_raw(const std::string &path, const std::string &body) {
        auto res = client->Post(path, body, "application/json");
        if (!res) return {0, {}};
        return {res->status, json::parse(res->body, nullptr, false)};
    }
    std::pair<int, json> del(const std::string &path) {
        auto res = client->Delete(path);
        if (!res) return {0, {}};
        return {res->status, json::parse(res->body, nullptr, false)};
    }

    json poll(const std::string &path, const std::set<std::string> &terminal) {
        for (int i = 0; i < 500; ++i) {
            const auto [status, body] = get(path);
            if (status == 200 && terminal.contains(body.value("state", ""))) return body;
            std::this_thread::sleep_for(20ms);
        }
        ADD_FAILURE() << "timed out polling " << path;
        return {};
    }
};

json provider_json(const MockLlm &mock, const std::string &id) {
    return {{"provider_id", id},
            {"base_url", mock.base_url()},
            {"model_name", "mock-model"},
            {"backoff_base_ms", 1},
            {"auth_header", {{"name", "Authorization"}, {"secret", "Bearer do-not-leak"}}}};
}

} // namespace

TEST(Api, BasicsAndErrors) {
    ApiFixture fx;
    auto [s, body] = fx.get("/api/v1/groups");
    EXPECT_EQ(s, 200);
    EXPECT_EQ(body, json::array());

    std::tie(s, body) = fx.get("/api/v1/nothing-here");
    EXPECT_EQ(s, 404);
    EXPECT_EQ(body["code"], "not_found");

    std::tie(s, body) = fx.post("/api/v1/groups", {{"name", ""}});
    EXPECT_EQ(s, 422);
    EXPECT_EQ(body["code"], "empty_name");

    std::tie(s, body) = fx.post_raw("/api/v1/groups", "{not json");
    EXPECT_EQ(s, 422);
    EXPECT_EQ(body["code"], "invalid_argument");

    std::tie(s, body) = fx.post("/api/v1/groups", {{"name", "A"}});
    EXPECT_EQ(s, 201);
    std::tie(s, body) = fx.post("/api/v1/groups", {{"name", "A"}});
    EXPECT_EQ(s, 409);
    EXPECT_EQ(body["code"], "duplicate_name");

    std::tie(s, body) = fx.get("/api/v1/groups/unknown");
    EXPECT_EQ(s, 404);
    EXPECT_EQ(body["code"], "group_not_found");
}

TEST(Api, Healthz) {
    ApiFixture fx;
    auto [s, body] = fx.get("/healthz");
    EXPECT_EQ(s, 200);
    EXPECT_EQ(body["status"], "ok");
    EXPECT_EQ(body["version"], QGEN_VERSION);
    EXPECT_EQ(body["workspace"], (fx.dir.path() / "ws").string());
    std::filesystem::remove_all(fx.dir.path() / "ws");
    std::tie(s, body) = fx.get("/healthz");
    EXPECT_EQ(s, 503);
    EXPECT_EQ(body["code"], "workspace_unavailable");
}

TEST(Api, MutationsRejectedWhileLocked) {
    ApiFixture fx(WorkspaceOptions{150ms});
    std::promise<void> holding, release;
    std::thread holder([&] {
        fx.studio->workspace().mutate([&] {
            holding.set_value();
            release.get_future().wait();
            return 0;
        });
    });
    holding.get_future().wait();
    auto [s, body] = fx.post("/api/v1/groups", {{"name", "late"}});
    EXPECT_EQ(s, 409);
    EXPECT_EQ(body["code"], "workspace_locked");
    release.set_value();
    holder.join();
    std::tie(s, body) = fx.post("/api/v1/groups", {{"name", "late"}});
    EXPECT_EQ(s, 201);
}

TEST(Api, BindConflict) {
    ApiFixture fx;
    ApiServer second(*fx.studio);
    try {
        second.bind({"127.0.0.1", fx.server->port()});
        FAIL();
    } catch (const Error &e) {
        EXPECT_EQ(e.code(), ErrorCode::BindError);
    }
}

TEST(Api, FullWorkflow) {
    MockLlm mock(testing_support::two_pairs_per_chunk());
    ApiFixture fx;
    auto [s, g] = fx.post("/api/v1/groups", {{"name", "rivers"}});
    ASSERT_EQ(s, 201);
    const std::string gid = g["group_id"];

    auto [s2, doc] = fx.post("/api/v1/groups/" + gid + "/documents",
                             {{"title", "doc"}, {"source_kind", "markdown"}, {"payload", kDocMd}});
    ASSERT_EQ(s2, 201);
    const std::string did = doc["doc_id"];
    EXPECT_EQ(fx.get("/api/v1/groups/" + gid + "/documents").second.size(), 1u);
    EXPECT_EQ(fx.get("/api/v1/groups/" + gid + "/documents/" + did).second["doc_id"], did);
    EXPECT_EQ(fx.get("/api/v1/documents/" + did + "/text").second["text"],
              canonical_text(doc.get<Document>()));

    auto [s3, ex] = fx.post("/api/v1/documents/" + did + "/examples", {{"question", "Q?"}, {"answer", "A"}});
    ASSERT_EQ(s3, 201);
    EXPECT_EQ(fx.get("/api/v1/documents/" + did + "/examples").second.size(), 1u);
    EXPECT_EQ(fx.get("/api/v1/documents/" + did + "/examples/" + ex["example_id"].get<std::string>()).first, 200);

    auto [s4, prov] = fx.post("/api/v1/providers", provider_json(mock, "mock"));
    ASSERT_EQ(s4, 201);
    EXPECT_EQ(prov.dump().find("do-not-leak"), std::string::npos);
    EXPECT_EQ(fx.get("/api/v1/providers").second.dump().find("do-not-leak"), std::string::npos);

    // validation happens before the run is accepted
    EXPECT_EQ(fx.post("/api/v1/generate", {{"group_id", gid}, {"provider_id", "nope"}}).first, 404);
    EXPECT_EQ(fx.post("/api/v1/generate", {{"group_id", gid}, {"provider_id", "mock"}, {"questions_per_chunk", 0}})
                  .second["code"],
              "invalid_argument");

    auto [s5, run] = fx.post("/api/v1/generate",
                             {{"group_id", gid}, {"provider_id", "mock"}, {"questions_per_chunk", 2}});
    ASSERT_EQ(s5, 202);
    const auto done = fx.poll("/api/v1/runs/" + run["run_id"].get<std::string>(), {"completed", "failed"});
    ASSERT_EQ(done["state"], "completed") << done.dump();
    EXPECT_EQ(done["total"], done["done"]);
    const std::string dsid = done["dataset_id"];

    const auto datasets = fx.get("/api/v1/datasets").second;
    ASSERT_EQ(datasets.size(), 1u);
    EXPECT_TRUE(datasets[0]["pairs"].is_number());
    const auto dataset = fx.get("/api/v1/datasets/" + dsid).second;
    EXPECT_EQ(dataset["pairs"].size(), 2 * dataset["chunk_snapshot"].size());

    auto [s6, filtered] = fx.get("/api/v1/datasets/" + dsid + "/pairs?filter=answer.bleu1%3E%3D0&sort=meteor:desc");
    EXPECT_EQ(s6, 200);
    EXPECT_EQ(filtered["count"], dataset["pairs"].size());
    EXPECT_EQ(fx.get("/api/v1/datasets/" + dsid + "/pairs?filter=answer.bleu1%3E1").second["count"], 0);
    EXPECT_EQ(fx.get("/api/v1/datasets/" + dsid + "/pairs?filter=nope%3E1").second["code"], "unknown_metric");

    const std::string pid = dataset["pairs"][0]["pair_id"];
    auto [s7, attr] = fx.get("/api/v1/pairs/" + pid + "/attribution");
    EXPECT_EQ(s7, 200);
    EXPECT_NE(attr["sentence"].get<std::string>().find(attr["answer"].get<std::string>()), std::string::npos);
    EXPECT_EQ(fx.get("/api/v1/pairs/zzz-p0/attribution").first, 404);

    auto [s8, manifest] = fx.post("/api/v1/datasets/" + dsid + "/export",
                                  {{"test_fraction", 0.25}, {"valid_fraction", 0.25}, {"seed", 3}});
    ASSERT_EQ(s8, 200) << manifest.dump();
    EXPECT_EQ(manifest["counts"]["test"], 1);
    const std::string export_id = manifest["export_id"];

    auto [s9, job] = fx.post("/api/v1/train", {{"export_id", export_id},
                                               {"params", {{"base_model", "m"}, {"adapter_output_dir", (fx.dir / "ad").string()}}}});
    ASSERT_EQ(s9, 202) << job.dump();
    const auto finished = fx.poll("/api/v1/jobs/" + job["job_id"].get<std::string>(), {"completed", "failed", "canceled"});
    EXPECT_EQ(finished["state"], "completed");

    auto [s10, slow] = fx.post("/api/v1/train", {{"export_dir", manifest["export_dir"]},
                                                 {"command_template", "sleep 30"},
                                                 {"params", {{"base_model", "m"}, {"adapter_output_dir", (fx.dir / "ad2").string()}}}});
    ASSERT_EQ(s10, 202);
    auto [s11, canceled] = fx.del("/api/v1/jobs/" + slow["job_id"].get<std::string>());
    EXPECT_EQ(s11, 200);
    EXPECT_EQ(canceled["state"], "canceled");
    EXPECT_EQ(fx.post("/api/v1/train", {{"export_id", "missing"}, {"params", {{"base_model", "m"}, {"adapter_output_dir", "x"}}}})
                  .second["code"],
              "missing_export");

    auto [s12, cmp] = fx.post("/api/v1/compare", {{"doc_id", did},
                                                  {"question", "Where does the Nile flow?"},
                                                  {"model_a", "mock"},
                                                  {"model_b", {{"provider_id", "mock"}}},
                                                  {"opts", {{"score", true}}}});
    EXPECT_EQ(s12, 200) << cmp.dump();
    EXPECT_TRUE(cmp.contains("answer_a"));
    EXPECT_TRUE(cmp.contains("metric_report_b"));
    EXPECT_EQ(fx.get("/api/v1/comparisons").second.size(), 1u);

    EXPECT_EQ(fx.del("/api/v1/documents/" + did + "/examples/" + ex["example_id"].get<std::string>()).first, 200);
    EXPECT_EQ(fx.del("/api/v1/groups/" + gid + "/documents/" + did).first, 200);
    EXPECT_EQ(fx.get("/api/v1/datasets/" + dsid).second["orphaned"], true);
    EXPECT_EQ(fx.del("/api/v1/groups/" + gid + "/documents/" + did).first, 404);
    EXPECT_EQ(fx.del("/api/v1/groups/" + gid).first, 200);
}

// ---- CLI -----------------------------------------------------------------

namespace {

struct CliResult {
    int code = -1;
    std::string out;
    std::string err;
};

std::string shell_quote(const std::string &s) {
    std::string q = "'";
    for (char c : s) q += c == '\'' ? std::string("'\\''") : std::string(1, c);
    return q + "'";
}

CliResult run_cli(const std::vector<std::string> &args, const std::filesystem::path &scratch) {
    std::string cmd = shell_quote(QGEN_CLI);
    for (const auto &a : args) cmd += " " + shell_quote(a);
    const auto out = scratch / "cli.out";
    const auto err = scratch / "cli.err";
    cmd += " >" + shell_quote(out.string()) + " 2>" + shell_quote(err.string());
    const int raw = std::system(cmd.c_str());
    CliResult r;
    r.code = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    r.out = read_file(out);
    r.err = read_file(err);
    return r;
}

void mask(json &j, const std::string &ws_root) {
    static const std::set<std::string> volatile_keys = {"created_at", "started_at", "ended_at", "pid", "latency_ms",
                                                        "latency_a", "latency_b"};
    if (j.is_object()) {
        for (auto it = j.begin(); it != j.end(); ++it) {
            if (volatile_keys.contains(it.key())) {
                it.value() = "<masked>";
            } else {
                mask(it.value(), ws_root);
            }
        }
    } else if (j.is_array()) {
        for (auto &v : j) mask(v, ws_root);
    } else if (j.is_string()) {
        auto s = j.get<std::string>();
        for (auto pos = s.find(ws_root); pos != std::string::npos; pos = s.find(ws_root)) {
            s.replace(pos, ws_root.size(), "<ws>");
        }
        j = s;
    }
}

/// relative path -> masked content for every persisted file except checksums and logs.
std::map<std::string, std::string> snapshot(const std::filesystem::path &root) {
    std::map<std::string, std::string> out;
    for (const auto &e : std::filesystem::recursive_directory_iterator(root)) {
        if (!e.is_regular_file()) continue;
        const auto rel = std::filesystem::relative(e.path(), root).string();
        const auto ext = e.path().extension().string();
        if (ext == ".sha256" || ext == ".log" || ext == ".lock" || rel.starts_with(".")) continue;
        const auto text = read_file(e.path());
        if (ext == ".jsonl") {
            out[rel] = text;
            continue;
        }
        auto j = json::parse(text);
        mask(j, root.string());
        out[rel] = j.dump(2);
    }
    return out;
}

} // namespace

TEST(Cli, IngestAndExitCodes) {
    TempDir dir;
    const auto ws = (dir / "ws").string();
    std::ofstream(dir / "doc.md") << kDocMd;
    auto r = run_cli({"--workspace", ws, "ingest", "--group", "G", "--file", (dir / "doc.md").string()}, dir.path());
    EXPECT_EQ(r.code, 0) << r.err;
    const auto doc = json::parse(r.out);
    EXPECT_EQ(doc["elements"].size(), 4u);
    EXPECT_EQ(doc["source_kind"], "markdown");

    r = run_cli({"--workspace", ws, "ingest", "--group", "G", "--file", (dir / "missing.md").string()}, dir.path());
    EXPECT_EQ(r.code, 1);
    EXPECT_EQ(json::parse(r.err)["code"], "not_found");

    r = run_cli({"--workspace", ws, "frobnicate"}, dir.path());
    EXPECT_EQ(r.code, 2);
    r = run_cli({"--workspace", ws, "ingest", "--group"}, dir.path());
    EXPECT_EQ(r.code, 2);
    r = run_cli({"ingest", "--group", "G", "--file", "x"}, dir.path());
    EXPECT_EQ(r.code, 2);

    r = run_cli({"--workspace", ws, "chunk", "--doc", doc["doc_id"], "--max-tokens", "8", "--overlap-tokens", "2"},
                dir.path());
    EXPECT_EQ(r.code, 0) << r.err;
    EXPECT_GT(json::parse(r.out).size(), 2u);

    r = run_cli({"--workspace", ws, "score", "--question", "the cat sat", "--answer", "a cat sat", "--context",
                 "the cat sat on the mat", "--metrics", "bleu2,rougeL_f"},
                dir.path());
    EXPECT_EQ(r.code, 0) << r.err;
    const auto rep = json::parse(r.out);
    EXPECT_NEAR(rep["question"]["bleu2"].get<double>(), 0.36787944117144233, 1e-12);
    EXPECT_NEAR(rep["question"]["rougeL_f"].get<double>(), 2.0 / 3.0, 1e-12);
    EXPECT_FALSE(rep["question"].contains("meteor"));

    const auto outfile = dir / "groups.json";
    r = run_cli({"--workspace", ws, "--output", outfile.string(), "groups"}, dir.path());
    EXPECT_EQ(r.code, 0);
    EXPECT_TRUE(r.out.empty());
    EXPECT_EQ(json::parse(read_file(outfile)).size(), 1u);

    setenv("QGEN_WORKSPACE", ws.c_str(), 1);
    r = run_cli({"groups"}, dir.path());
    unsetenv("QGEN_WORKSPACE");
    EXPECT_EQ(r.code, 0);
}

TEST(Cli, MatchesHttpRecords) {
    MockLlm mock(testing_support::two_pairs_per_chunk());
    TempDir dir;
    std::ofstream(dir / "doc.md") << kDocMd;
    std::ofstream(dir / "provider.json") << provider_json(mock, "mock").dump();

    // CLI path
    const auto cli_ws = (dir / "cli-ws").string();
    auto cli = [&](std::vector<std::string> args) {
        args.insert(args.begin(), {"--workspace", cli_ws, "--train-cmd", "true --data {data}"});
        auto r = run_cli(args, dir.path());
        EXPECT_EQ(r.code, 0) << r.err;
        return r.code == 0 ? json::parse(r.out) : json();
    };
    const auto doc = cli({"ingest", "--group", "rivers", "--file", (dir / "doc.md").string(), "--title", "doc"});
    cli({"examples", "--doc", doc["doc_id"], "--question", "Where is the Nile?", "--answer", "Egypt"});
    cli({"providers", "--add", (dir / "provider.json").string()});
    const auto dataset = cli({"generate", "--group", "rivers", "--provider", "mock", "--questions-per-chunk", "2",
                              "--prompt-mode", "few-shot", "--num-examples", "1"});
    const auto manifest = cli({"export", "--dataset", dataset["dataset_id"], "--test", "0.25", "--valid", "0.25",
                               "--seed", "7"});
    EXPECT_EQ(cli({"export", "--dataset", dataset["dataset_id"], "--test", "0.25", "--valid", "0.25", "--seed", "7"}),
              manifest);
    const auto job = cli({"train", "--export", manifest["export_id"], "--base-model", "m", "--adapter-output-dir",
                          (dir / "adapters").string()});
    EXPECT_EQ(job["state"], "completed");
    cli({"compare", "--doc", doc["doc_id"], "--question", "Where?", "--model-a", "mock", "--model-b", "mock"});

    // HTTP path
    {
        StudioConfig cfg;
        cfg.workspace = dir / "http-ws";
        cfg.train_cmd = "true --data {data}";
        Studio studio(cfg);
        ApiServer server(studio);
        const int port = server.bind({"127.0.0.1", 0});
        server.start_background();
        httplib::Client c("127.0.0.1", port);
        auto post = [&](const std::string &path, const json &body) {
            auto res = c.Post(path, body.dump(), "application/json");
            EXPECT_TRUE(res && res->status < 300) << path << " " << (res ? res->body : "");
            return res ? json::parse(res->body) : json();
        };
        auto get = [&](const std::string &path) { return json::parse(c.Get(path)->body); };
        const auto g = post("/api/v1/groups", {{"name", "rivers"}});
        const auto d = post("/api/v1/groups/" + g["group_id"].get<std::string>() + "/documents",
                            {{"title", "doc"}, {"source_kind", "markdown"}, {"payload", std::string(kDocMd)}});
        post("/api/v1/documents/" + d["doc_id"].get<std::string>() + "/examples",
             {{"question", "Where is the Nile?"}, {"answer", "Egypt"}});
        post("/api/v1/providers", provider_json(mock, "mock"));
        const auto run = post("/api/v1/generate", {{"group_id", g["group_id"]},
                                                   {"provider_id", "mock"},
                                                   {"questions_per_chunk", 2},
                                                   {"prompt_mode", "few-shot"},
                                                   {"num_examples", 1}});
        json state;
        for (int i = 0; i < 500; ++i) {
            state = get("/api/v1/runs/" + run["run_id"].get<std::string>());
            if (state["state"] != "running" && state["state"] != "pending") break;
            std::this_thread::sleep_for(20ms);
        }
        ASSERT_EQ(state["state"], "completed");
        const auto m = post("/api/v1/datasets/" + state["dataset_id"].get<std::string>() + "/export",
                            {{"test_fraction", 0.25}, {"valid_fraction", 0.25}, {"seed", 7}});
        const auto j = post("/api/v1/train",
                            {{"export_id", m["export_id"]},
                             {"params", {{"base_model", "m"}, {"adapter_output_dir", (dir / "adapters").string()}}}});
        for (int i = 0; i < 500 && get("/api/v1/jobs/" + j["job_id"].get<std::string>())["state"] == "running"; ++i) {
            std::this_thread::sleep_for(20ms);
        }
        post("/api/v1/compare", {{"doc_id", d["doc_id"]}, {"question", "Where?"}, {"model_a", "mock"}, {"model_b", "mock"}});
        server.stop();
    }

    const auto a = snapshot(cli_ws);
    const auto b = snapshot(dir / "http-ws");
    ASSERT_FALSE(a.empty());
    std::vector<std::string> ka, kb;
    for (const auto &[k, v] : a) ka.push_back(k);
    for (const auto &[k, v] : b) kb.push_back(k);
    EXPECT_EQ(ka, kb);
    for (const auto &[k, v] : a) {
        if (b.contains(k)) EXPECT_EQ(v, b.at(k)) << k;
    }
}
