#include <chrono>
#include <fstream>
#include <future>
#include <set>
#include <thread>

#include <gtest/gtest.h>

#include "qgen/server.hpp"
#include "support/fixtures.hpp"
#include "support/qa_mock.hpp"

using namespace qgen;
using namespace std::chrono_literals;
using testing_support::MockLlm;
using testing_support::MockReply;
using testing_support::TempDir;

namespace {

template <class F>
ErrorCode error_of(F &&f) {
    try {
        f();
    } catch (const Error &e) {
        return e.code();
    }
    ADD_FAILURE() << "expected an error";
    return ErrorCode::Internal;
}

const char *kDocMd = "# Rivers\n\n"
                     "The Nile flows north through Egypt. Its delta feeds Cairo. Farmers rely on annual floods.\n\n"
                     "## Mountains\n\n"
                     "Everest rises above Nepal. Climbers need bottled oxygen. Storms arrive quickly.";

StudioConfig studio_config(const TempDir &dir) {
    StudioConfig cfg;
    cfg.workspace = dir.path() / "ws";
    cfg.supervisor_options.cancel_grace = 300ms;
    return cfg;
}

std::string slurp(const std::filesystem::path &p) { return read_file(p); }

} // namespace

// ---- workspace ----------------------------------------------------------

TEST(Workspace, RoundTripAndListing) {
    TempDir dir;
    Workspace ws(dir.path());
    DocumentGroup g{"abc123", "Group", "2026-01-01T00:00:00.000Z", {"d1", "d2"}};
    ws.save(g);
    EXPECT_TRUE(ws.exists<DocumentGroup>("abc123"));
    EXPECT_EQ(ws.load<DocumentGroup>("abc123"), g);
    EXPECT_EQ(ws.list_ids<DocumentGroup>(), (std::vector<std::string>{"abc123"}));
    const auto bytes = slurp(dir.path() / "groups" / "abc123.json");
    ws.save(ws.load<DocumentGroup>("abc123"));
    EXPECT_EQ(slurp(dir.path() / "groups" / "abc123.json"), bytes);
    EXPECT_TRUE(std::filesystem::exists(dir.path() / "groups" / "abc123.sha256"));
    EXPECT_TRUE(std::filesystem::exists(dir.path() / "groups" / "index.json"));
    ws.remove<DocumentGroup>("abc123");
    EXPECT_EQ(error_of([&] { ws.remove<DocumentGroup>("abc123"); }), ErrorCode::NotFound);
    EXPECT_EQ(error_of([&] { (void)ws.load<DocumentGroup>("nope"); }), ErrorCode::NotFound);
    EXPECT_EQ(error_of([&] { (void)ws.load<DocumentGroup>("../x"); }), ErrorCode::NotFound);
}

TEST(Workspace, CorruptionIsDetected) {
    TempDir dir;
    Workspace ws(dir.path());
    ws.save(DocumentGroup{"g1", "G", "t", {}});
    const auto path = dir.path() / "groups" / "g1.json";
    auto body = slurp(path);
    std::ofstream(path, std::ios::trunc) << body.substr(0, body.size() / 2);
    try {
        (void)ws.load<DocumentGroup>("g1");
        FAIL();
    } catch (const Error &e) {
        EXPECT_EQ(e.code(), ErrorCode::CorruptRecord);
        EXPECT_EQ(e.details().value("path", ""), path.string());
    }
}

TEST(Workspace, FloatBitsSurvive) {
    TempDir dir;
    Workspace ws(dir.path());
    DatasetRecord d;
    d.dataset_id = "ds";
    MetricReport r;
    r.set(Field::Answer, Metric::Meteor, 0.1 + 0.2);
    r.set(Field::Answer, Metric::Bleu2, std::exp(-1.0) * std::sqrt(1.0 / 3.0));
    QAPair p;
    p.pair_id = "ds-p0";
    p.metric_report = r;
    d.pairs.push_back(p);
    ws.save(d);
    EXPECT_EQ(ws.load<DatasetRecord>("ds"), d);
}

TEST(Workspace, WriterLockTimesOut) {
    TempDir dir;
    Workspace ws(dir.path(), WorkspaceOptions{100ms});
    std::promise<void> holding;
    std::promise<void> release;
    std::thread holder([&] {
        ws.mutate([&] {
            holding.set_value();
            release.get_future().wait();
            return 0;
        });
    });
    holding.get_future().wait();
    EXPECT_EQ(error_of([&] { ws.save(DocumentGroup{"g", "G", "t", {}}); }), ErrorCode::WorkspaceLocked);
    release.set_value();
    holder.join();
    ws.save(DocumentGroup{"g", "G", "t", {}});
    // a second workspace object on the same directory sees the file lock
    Workspace other(dir.path(), WorkspaceOptions{100ms});
    std::promise<void> h2, r2;
    std::thread t2([&] {
        ws.mutate([&] {
            h2.set_value();
            r2.get_future().wait();
            return 0;
        });
    });
    h2.get_future().wait();
    EXPECT_EQ(error_of([&] { other.next_counter(); }), ErrorCode::WorkspaceLocked);
    r2.set_value();
    t2.join();
}

// ---- corpus service ------------------------------------------------------

TEST(CorpusService, GroupsAndDocuments) {
    TempDir dir;
    Workspace ws(dir.path());
    CorpusService corpus(ws);
    const auto g = corpus.create_group("  clinical-notes ");
    EXPECT_EQ(g.name, "clinical-notes");
    EXPECT_EQ(g.group_id.size(), 12u);
    EXPECT_TRUE(g.document_ids.empty());
    EXPECT_EQ(error_of([&] { corpus.create_group("   "); }), ErrorCode::EmptyName);
    EXPECT_EQ(error_of([&] { corpus.create_group("clinical-notes"); }), ErrorCode::DuplicateName);
    EXPECT_EQ(error_of([&] { corpus.ingest_document("missing", "t", SourceKind::Markdown, "x"); }),
              ErrorCode::GroupNotFound);
    EXPECT_EQ(error_of([&] { corpus.ingest_document(g.group_id, "t", SourceKind::Markdown, "\n\n"); }),
              ErrorCode::EmptyDocument);
    EXPECT_EQ(error_of([&] { corpus.ingest_document(g.group_id, "t", SourceKind::StructuredJson, "{"); }),
              ErrorCode::ParseError);

    const auto a = corpus.ingest_document(g.group_id, "same", SourceKind::Markdown, kDocMd);
    const auto b = corpus.ingest_document(g.group_id, "same", SourceKind::Markdown, kDocMd);
    EXPECT_NE(a.doc_id, b.doc_id);
    ASSERT_EQ(a.elements.size(), b.elements.size());
    for (std::size_t i = 0; i < a.elements.size(); ++i) {
        EXPECT_EQ(a.elements[i].text, b.elements[i].text);
        EXPECT_NE(a.elements[i].element_id, b.elements[i].element_id);
    }
    EXPECT_EQ(corpus.get_group(g.group_id).document_ids, (std::vector<std::string>{a.doc_id, b.doc_id}));
    EXPECT_EQ(corpus.canonical_text(a.doc_id), canonical_text(a));

    corpus.delete_document(a.doc_id);
    EXPECT_EQ(error_of([&] { (void)corpus.get_document(a.doc_id); }), ErrorCode::DocNotFound);
    EXPECT_EQ(error_of([&] { corpus.delete_document(a.doc_id); }), ErrorCode::DocNotFound);
    EXPECT_EQ(corpus.get_group(g.group_id).document_ids, (std::vector<std::string>{b.doc_id}));
}

TEST(CorpusService, Examples) {
    TempDir dir;
    Workspace ws(dir.path());
    CorpusService corpus(ws);
    const auto g = corpus.create_group("g");
    const auto d = corpus.ingest_document(g.group_id, "t", SourceKind::PlainText, "Hello there.");
    const auto e1 = corpus.add_example(d.doc_id, "Q1?", "A1");
    const auto e2 = corpus.add_example(d.doc_id, "Q2?", "A2");
    EXPECT_LT(e1.example_id, e2.example_id);
    EXPECT_EQ(corpus.list_examples(d.doc_id), (std::vector<ExamplePair>{e1, e2}));
    EXPECT_EQ(error_of([&] { corpus.add_example(d.doc_id, " ", "A"); }), ErrorCode::InvalidArgument);
    corpus.delete_example(d.doc_id, e1.example_id);
    EXPECT_EQ(corpus.list_examples(d.doc_id).size(), 1u);
    corpus.delete_document(d.doc_id);
    EXPECT_FALSE(ws.exists<ExamplePair>(e2.example_id));
}

// ---- gateway -------------------------------------------------------------

namespace {

ChatRequest hello() {
    ChatRequest r;
    r.messages = {{"system", "be brief"}, {"user", "hi"}};
    return r;
}

} // namespace

TEST(Gateway, ExtractsCannedText) {
    MockLlm mock([](const nlohmann::json &, int) { return MockReply{200, testing_support::chat_body("OK")}; });
    LlmGateway gw;
    auto cfg = testing_support::mock_provider("p", mock);
    cfg.auth_header = AuthHeader{"Authorization", "Bearer sekrit"};
    const auto res = gw.chat(cfg, hello());
    EXPECT_EQ(res.text, "OK");
    EXPECT_EQ(res.finish_reason, "stop");
    EXPECT_EQ(res.attempts, 1);
    EXPECT_EQ(mock.paths().at(0), "/v1/chat/completions");
    EXPECT_EQ(mock.auth_headers().at(0), "Bearer sekrit");
    const auto body = mock.requests().at(0);
    EXPECT_EQ(body["model"], "mock-model");
    EXPECT_EQ(body["messages"].size(), 2u);
    EXPECT_TRUE(body.contains("max_tokens"));
}

TEST(Gateway, RetryContract) {
    struct Case {
        std::vector<int> statuses;
        int calls;
        std::optional<ErrorCode> error;
    };
    const std::vector<Case> cases = {{{429, 200}, 2, {}},
                                     {{500, 500, 200}, 3, {}},
                                     {{401}, 1, ErrorCode::AuthError},
                                     {{403}, 1, ErrorCode::AuthError},
                                     {{404}, 1, ErrorCode::UpstreamError},
                                     {{400}, 1, ErrorCode::UpstreamError},
                                     {{503, 503, 503, 200}, 3, ErrorCode::UpstreamError},
                                     {{429, 429, 429}, 3, ErrorCode::RateLimited}};
    for (const auto &c : cases) {
        MockLlm mock(MockLlm::sequence(c.statuses));
        std::vector<std::chrono::milliseconds> sleeps;
        LlmGateway gw([&](std::chrono::milliseconds d) { sleeps.push_back(d); });
        auto cfg = testing_support::mock_provider("p", mock, 2);
        cfg.backoff_base_ms = 500;
        if (c.error) {
            EXPECT_EQ(error_of([&] { gw.chat(cfg, hello()); }), *c.error);
        } else {
            EXPECT_EQ(gw.chat(cfg, hello()).text, "ok");
        }
        EXPECT_EQ(mock.calls(), c.calls) << c.statuses.front();
        ASSERT_LE(sleeps.size(), 2u);
        for (std::size_t i = 0; i < sleeps.size(); ++i) {
            EXPECT_LE(sleeps[i].count(), 500 << i);
            EXPECT_GE(sleeps[i].count(), 0);
        }
    }
}

TEST(Gateway, BackoffIsFullJitter) {
    LlmGateway gw;
    ProviderConfig cfg;
    cfg.backoff_base_ms = 500;
    std::set<long> seen;
    for (int i = 0; i < 200; ++i) {
        const auto d = gw.backoff_delay(cfg, 1).count();
        EXPECT_LE(d, 1000);
        seen.insert(d);
    }
    EXPECT_GT(seen.size(), 20u);
}

TEST(Gateway, ProtocolAndTimeoutErrors) {
    MockLlm garbage([](const nlohmann::json &, int) { return MockReply{200, "not json"}; });
    LlmGateway gw([](std::chrono::milliseconds) {});
    EXPECT_EQ(error_of([&] { gw.chat(testing_support::mock_provider("p", garbage), hello()); }),
              ErrorCode::ProtocolError);

    MockLlm slow([](const nlohmann::json &, int) {
        std::this_thread::sleep_for(400ms);
        return MockReply{200, testing_support::chat_body("late")};
    });
    auto cfg = testing_support::mock_provider("p", slow, 1);
    cfg.timeout_ms = 100;
    try {
        gw.chat(cfg, hello());
        FAIL();
    } catch (const Error &e) {
        EXPECT_EQ(e.code(), ErrorCode::Timeout);
        EXPECT_EQ(slow.calls(), 2);
    }

    auto dead = cfg;
    dead.base_url = "http://127.0.0.1:1/v1";
    dead.max_retries = 0;
    const auto code = error_of([&] { gw.chat(dead, hello()); });
    EXPECT_TRUE(code == ErrorCode::UpstreamError || code == ErrorCode::Timeout);
}

TEST(Gateway, TextCompletionDialect) {
    MockLlm mock([](const nlohmann::json &, int) { return MockReply{200, testing_support::text_body("done")}; });
    LlmGateway gw;
    auto cfg = testing_support::mock_provider("p", mock);
    cfg.wire_dialect = WireDialect::TextCompletion;
    EXPECT_EQ(gw.chat(cfg, hello()).text, "done");
    EXPECT_EQ(mock.paths().at(0), "/v1/completions");
    const auto prompt = mock.requests().at(0).value("prompt", "");
    EXPECT_NE(prompt.find("be brief"), std::string::npos);
    EXPECT_NE(prompt.find("hi"), std::string::npos);
}

TEST(Gateway, RegistryAndConcurrencyCap) {
    std::atomic<int> inflight{0}, peak{0};
    MockLlm mock([&](const nlohmann::json &, int) {
        const int now = ++inflight;
        int prev = peak.load();
        while (now > prev && !peak.compare_exchange_weak(prev, now)) {
        }
        std::this_thread::sleep_for(50ms);
        --inflight;
        return MockReply{200, testing_support::chat_body("x")};
    });
    LlmGateway gw;
    EXPECT_TRUE(gw.registry().list().empty());
    auto cfg = testing_support::mock_provider("p", mock);
    cfg.max_concurrency = 2;
    gw.registry().register_provider(cfg);
    EXPECT_EQ(error_of([&] { gw.registry().register_provider(cfg); }), ErrorCode::DuplicateProvider);
    EXPECT_EQ(error_of([&] { gw.chat("nope", hello()); }), ErrorCode::ProviderNotFound);
    EXPECT_EQ(gw.registry().list_ids(), (std::vector<std::string>{"p"}));
    std::vector<std::future<ChatResponse>> fs;
    for (int i = 0; i < 6; ++i) fs.push_back(std::async(std::launch::async, [&] { return gw.chat("p", hello()); }));
    for (auto &f : fs) EXPECT_EQ(f.get().text, "x");
    EXPECT_LE(peak.load(), 2);
}

TEST(Gateway, ProviderJsonHasNoSecret) {
    ProviderConfig cfg;
    cfg.provider_id = "p";
    cfg.base_url = "https://api.example.com/v1";
    cfg.model_name = "m";
    cfg.auth_header = AuthHeader{"Authorization", "Bearer topsecret"};
    const nlohmann::json j = cfg;
    EXPECT_EQ(j.dump().find("topsecret"), std::string::npos);
    EXPECT_EQ(j["auth_header"]["name"], "Authorization");
}

// ---- generation ------------------------------------------------------------

namespace {

struct GenFixture {
    TempDir dir;
    Studio studio;
    std::string group_id;
    std::string doc_id;
    explicit GenFixture(const MockLlm &mock) : studio(studio_config(dir)) {
        group_id = studio.corpus().create_group("G").group_id;
        doc_id = studio.corpus().ingest_document(group_id, "doc", SourceKind::Markdown, kDocMd).doc_id;
        studio.register_provider(testing_support::mock_provider("mock", mock));
    }
    GenerationConfig config(std::size_t max_tokens = 300) const {
        GenerationConfig cfg;
        cfg.provider_id = "mock";
        cfg.chunk_config = {max_tokens, 0, true};
        cfg.questions_per_chunk = 2;
        return cfg;
    }
};

} // namespace

TEST(Generator, TwoPairsPerChunk) {
    MockLlm mock(testing_support::two_pairs_per_chunk());
    GenFixture fx(mock);
    RunProgress prog;
    const auto d = fx.studio.generator().generate_for_group(fx.group_id, fx.config(), &prog);
    EXPECT_EQ(d.chunk_snapshot.size(), 2u);
    EXPECT_EQ(d.pairs.size(), 4u);
    EXPECT_TRUE(d.failures.empty());
    EXPECT_EQ(mock.calls(), 2);
    EXPECT_EQ(prog.state.load(), RunState::Completed);
    EXPECT_EQ(prog.done.load(), 2u);
    EXPECT_EQ(d.corpus_stats.n, d.chunk_snapshot.size());
    EXPECT_EQ(d.prompt_template_version, kPromptTemplateVersion);
    EXPECT_EQ(d.config_snapshot, fx.config());
    for (const auto &p : d.pairs) {
        const auto *chunk = d.find_chunk(p.chunk_id);
        ASSERT_NE(chunk, nullptr);
        EXPECT_EQ(p.doc_id, fx.doc_id);
        EXPECT_TRUE(p.metric_report.get(Field::Answer, Metric::Meteor).has_value());
        const auto sentence = utf8::substr(chunk->text, p.attribution.sentence_span);
        EXPECT_NE(sentence.find(p.answer), std::string::npos) << sentence << " / " << p.answer;
        EXPECT_FALSE(p.highlights.empty());
    }
    EXPECT_EQ(fx.studio.load_dataset(d.dataset_id), d);
}

TEST(Generator, GarbageChunkIsIsolated) {
    MockLlm mock(testing_support::two_pairs_per_chunk("Everest"));
    GenFixture fx(mock);
    const auto d = fx.studio.generator().generate_for_group(fx.group_id, fx.config());
    EXPECT_EQ(d.pairs.size(), 2u);
    ASSERT_EQ(d.failures.size(), 1u);
    EXPECT_EQ(d.failures[0].code, "unparseable_response");
    EXPECT_EQ(d.failures[0].chunk_id, d.chunk_snapshot[1].chunk_id);
}

TEST(Generator, PreconditionsFailBeforeAnyCall) {
    MockLlm mock(testing_support::two_pairs_per_chunk());
    GenFixture fx(mock);
    auto cfg = fx.config();
    EXPECT_EQ(error_of([&] { fx.studio.generator().generate_for_group("nope", cfg); }), ErrorCode::GroupNotFound);
    const auto empty = fx.studio.corpus().create_group("empty").group_id;
    EXPECT_EQ(error_of([&] { fx.studio.generator().generate_for_group(empty, cfg); }), ErrorCode::EmptyGroup);
    cfg.provider_id = "unknown";
    EXPECT_EQ(error_of([&] { fx.studio.generator().generate_for_group(fx.group_id, cfg); }),
              ErrorCode::ProviderNotFound);
    cfg = fx.config();
    cfg.prompt_mode = PromptMode::FewShot;
    cfg.num_examples = 1;
    EXPECT_EQ(error_of([&] { fx.studio.generator().generate_for_group(fx.group_id, cfg); }), ErrorCode::NoExamples);
    EXPECT_EQ(mock.calls(), 0);
}

TEST(Generator, AllChunksFailing) {
    MockLlm mock([](const nlohmann::json &, int) { return MockReply{200, testing_support::chat_body("no")}; });
    GenFixture fx(mock);
    EXPECT_EQ(error_of([&] { fx.studio.generator().generate_for_group(fx.group_id, fx.config()); }),
              ErrorCode::AllChunksFailed);
}

TEST(Generator, FewShotSendsExamples) {
    MockLlm mock(testing_support::two_pairs_per_chunk());
    GenFixture fx(mock);
    fx.studio.corpus().add_example(fx.doc_id, "Where is the Nile?", "Egypt");
    auto cfg = fx.config();
    cfg.prompt_mode = PromptMode::FewShot;
    cfg.num_examples = 2;
    fx.studio.generator().generate_for_group(fx.group_id, cfg);
    for (const auto &r : mock.requests()) {
        EXPECT_NE(testing_support::user_prompt(r).find("Where is the Nile?"), std::string::npos);
    }
}

TEST(Generator, DeletingADocumentOrphansDatasets) {
    MockLlm mock(testing_support::two_pairs_per_chunk());
    GenFixture fx(mock);
    const auto d = fx.studio.generator().generate_for_group(fx.group_id, fx.config());
    EXPECT_FALSE(d.orphaned);
    fx.studio.corpus().delete_document(fx.doc_id);
    EXPECT_TRUE(fx.studio.load_dataset(d.dataset_id).orphaned);
}

TEST(Generator, SecretsNeverPersisted) {
    MockLlm mock(testing_support::two_pairs_per_chunk());
    TempDir dir;
    Studio studio(studio_config(dir));
    const auto g = studio.corpus().create_group("G").group_id;
    studio.corpus().ingest_document(g, "doc", SourceKind::Markdown, kDocMd);
    auto p = testing_support::mock_provider("mock", mock);
    p.auth_header = AuthHeader{"Authorization", "Bearer hunter2-secret"};
    studio.register_provider(p);
    GenerationConfig cfg;
    cfg.provider_id = "mock";
    const auto d = studio.generator().generate_for_group(g, cfg);
    studio.export_dataset(d.dataset_id, SplitSpec{0.0, 0.0, false, 0, true});
    EXPECT_EQ(mock.auth_headers().at(0), "Bearer hunter2-secret");
    for (const auto &entry : std::filesystem::recursive_directory_iterator(dir.path())) {
        if (!entry.is_regular_file()) continue;
        EXPECT_EQ(slurp(entry.path()).find("hunter2"), std::string::npos) << entry.path();
    }
    // reopening restores the provider, minus its secret
    Studio reopened(studio_config(dir));
    EXPECT_EQ(reopened.list_providers().size(), 1u);
    EXPECT_FALSE(reopened.list_providers()[0].auth_header.has_value() &&
                 !reopened.list_providers()[0].auth_header->secret.empty());
}

// ---- export ------------------------------------------------------------

namespace {

DatasetRecord synthetic_dataset(std::size_t n) {
    DatasetRecord d;
    d.dataset_id = "ds" + std::to_string(n);
    d.chunk_snapshot.push_back(Chunk{"c0", "doc", {"doc-e0"}, "chunk text", 2, {0, 10}, false});
    for (std::size_t i = 0; i < n; ++i) {
        QAPair p;
        p.pair_id = d.dataset_id + "-p" + std::to_string(i);
        p.chunk_id = "c0";
        p.question = "Question " + std::to_string(i) + "?";
        p.answer = "Answer " + std::to_string(i);
        d.pairs.push_back(p);
    }
    return d;
}

std::vector<std::string> lines_of(const std::filesystem::path &p) {
    std::vector<std::string> out;
    std::ifstream in(p);
    for (std::string line; std::getline(in, line);) out.push_back(line);
    return out;
}

} // namespace

TEST(Export, FilesAndManifest) {
    TempDir dir;
    Workspace ws(dir.path());
    const auto d = synthetic_dataset(11);
    const auto r = export_training(ws, d, SplitSpec{0.1, 0.1, true, 7, false});
    EXPECT_EQ(lines_of(r.dir / "test.jsonl").size(), 1u);
    EXPECT_EQ(lines_of(r.dir / "valid.jsonl").size(), 1u);
    EXPECT_EQ(lines_of(r.dir / "train.jsonl").size(), 9u);
    EXPECT_EQ(r.manifest["counts"], (nlohmann::json{{"train", 9}, {"valid", 1}, {"test", 1}}));
    EXPECT_EQ(r.manifest["dataset_id"], d.dataset_id);
    EXPECT_TRUE(r.manifest.contains("created_at"));
    EXPECT_EQ(nlohmann::json::parse(slurp(r.dir / "manifest.json")), r.manifest);
    const auto line = nlohmann::json::parse(lines_of(r.dir / "train.jsonl").at(0));
    EXPECT_TRUE(line.at("text").get<std::string>().starts_with("Q: Question "));
    EXPECT_NE(line.at("text").get<std::string>().find("\nA: Answer "), std::string::npos);

    const auto ctx = export_training(ws, d, SplitSpec{0.1, 0.1, true, 7, true});
    const auto cline = nlohmann::json::parse(lines_of(ctx.dir / "train.jsonl").at(0))["text"].get<std::string>();
    EXPECT_TRUE(cline.starts_with("Context: chunk text\nQ: "));
}

TEST(Export, SeedsAndPartition) {
    TempDir dir;
    Workspace ws(dir.path());
    const auto d = synthetic_dataset(40);
    auto all_lines = [](const ExportResult &r) {
        std::vector<std::string> all;
        for (const auto *f : {"train.jsonl", "valid.jsonl", "test.jsonl"}) {
            const auto l = lines_of(r.dir / f);
            all.insert(all.end(), l.begin(), l.end());
        }
        return all;
    };
    const auto a = export_training(ws, d, SplitSpec{0.2, 0.1, true, 1, false});
    const auto a_bytes = slurp(a.dir / "train.jsonl") + slurp(a.dir / "manifest.json");
    const auto a2 = export_training(ws, d, SplitSpec{0.2, 0.1, true, 1, false});
    EXPECT_EQ(slurp(a2.dir / "train.jsonl") + slurp(a2.dir / "manifest.json"), a_bytes);
    const auto b = export_training(ws, d, SplitSpec{0.2, 0.1, true, 2, false});
    auto la = all_lines(a), lb = all_lines(b);
    EXPECT_NE(la, lb);
    std::sort(la.begin(), la.end());
    std::sort(lb.begin(), lb.end());
    EXPECT_EQ(la, lb);
    EXPECT_EQ(std::set<std::string>(la.begin(), la.end()).size(), 40u);
}

TEST(Export, TooFewPairs) {
    TempDir dir;
    Workspace ws(dir.path());
    EXPECT_EQ(error_of([&] { export_training(ws, synthetic_dataset(0), SplitSpec{}); }), ErrorCode::TooFewPairs);
    EXPECT_EQ(error_of([&] { export_training(ws, synthetic_dataset(2), SplitSpec{}); }), ErrorCode::TooFewPairs);
    EXPECT_NO_THROW(export_training(ws, synthetic_dataset(2), SplitSpec{0.5, 0.0, true, 0, false}));
    Studio studio(StudioConfig{dir.path() / "s", "", {}, {}});
    EXPECT_EQ(error_of([&] { studio.export_dataset("nope", SplitSpec{}); }), ErrorCode::DatasetNotFound);
}

// ---- training jobs -------------------------------------------------------

namespace {

struct JobFixture {
    TempDir dir;
    Workspace ws{dir.path() / "ws"};
    std::string export_dir;
    JobFixture() {
        export_dir = (dir.path() / "export").string();
        std::filesystem::create_directories(export_dir);
    }
    TrainingParams params(const std::string &out = "adapters") const {
        return TrainingParams{"base", 1e-5, 10, 4, 1, (dir.path() / out).string()};
    }
};

} // namespace

TEST(Jobs, NoOpTrainerCompletes) {
    JobFixture fx;
    JobSupervisor sup(fx.ws, {1, 300ms});
    const auto job = sup.launch(fx.export_dir, fx.params(), "true --data {data} --lr {lr}");
    EXPECT_EQ(job.state, JobState::Running);
    const auto done = sup.wait(job.job_id, 10s);
    EXPECT_EQ(done.state, JobState::Completed);
    EXPECT_EQ(done.exit_code, 0);
    EXPECT_FALSE(done.ended_at.empty());
    EXPECT_TRUE(std::filesystem::exists(done.log_path));
    EXPECT_EQ(fx.ws.load<TrainingJob>(job.job_id), done);
}

TEST(Jobs, NonZeroExitFails) {
    JobFixture fx;
    JobSupervisor sup(fx.ws, {1, 300ms});
    const auto job = sup.launch(fx.export_dir, fx.params(), "sh -c 'echo training; exit 3'");
    const auto done = sup.wait(job.job_id, 10s);
    EXPECT_EQ(done.state, JobState::Failed);
    EXPECT_EQ(done.exit_code, 3);
    EXPECT_NE(slurp(done.log_path).find("training"), std::string::npos);
}

TEST(Jobs, CancelWhileRunning) {
    JobFixture fx;
    JobSupervisor sup(fx.ws, {1, 300ms});
    const auto job = sup.launch(fx.export_dir, fx.params(), "sleep 30");
    const auto canceled = sup.cancel(job.job_id);
    EXPECT_EQ(canceled.state, JobState::Canceled);
    EXPECT_FALSE(canceled.ended_at.empty());
    EXPECT_EQ(sup.status(job.job_id).state, JobState::Canceled);
    EXPECT_EQ(error_of([&] { sup.cancel(job.job_id); }), ErrorCode::IllegalTransition);
}

TEST(Jobs, CancelEscalatesToKill) {
    JobFixture fx;
    JobSupervisor sup(fx.ws, {1, 200ms});
    const auto job = sup.launch(fx.export_dir, fx.params(), "sh -c 'trap \"\" TERM; sleep 30'");
    std::this_thread::sleep_for(100ms);
    const auto t0 = std::chrono::steady_clock::now();
    EXPECT_EQ(sup.cancel(job.job_id).state, JobState::Canceled);
    EXPECT_LT(std::chrono::steady_clock::now() - t0, 5s);
}

TEST(Jobs, LaunchErrors) {
    JobFixture fx;
    JobSupervisor sup(fx.ws, {2, 300ms});
    EXPECT_EQ(error_of([&] { sup.launch(fx.export_dir, fx.params(), "definitely-not-a-binary-xyz"); }),
              ErrorCode::SpawnError);
    EXPECT_EQ(error_of([&] { sup.launch(fx.export_dir + "/missing", fx.params(), "true"); }),
              ErrorCode::MissingExport);
    EXPECT_EQ(error_of([&] { sup.launch(fx.export_dir, fx.params(), "true {nope}"); }),
              ErrorCode::UnknownPlaceholder);
    auto bad = fx.params();
    bad.learning_rate = 0;
    EXPECT_EQ(error_of([&] { sup.launch(fx.export_dir, bad, "true"); }), ErrorCode::InvalidArgument);
    const auto running = sup.launch(fx.export_dir, fx.params(), "sleep 30");
    EXPECT_EQ(error_of([&] { sup.launch(fx.export_dir, fx.params(), "true"); }), ErrorCode::Conflict);
    const auto other = sup.launch(fx.export_dir, fx.params("other"), "sleep 30");
    EXPECT_EQ(error_of([&] { sup.launch(fx.export_dir, fx.params("third"), "true"); }), ErrorCode::Conflict);
    sup.cancel(running.job_id);
    sup.cancel(other.job_id);
    EXPECT_EQ(error_of([&] { (void)sup.status("missing"); }), ErrorCode::NotFound);
}

TEST(Jobs, RecoveryMarksDeadProcessesFailed) {
    JobFixture fx;
    TrainingJob ghost;
    ghost.job_id = "ghost";
    ghost.dataset_export_dir = fx.export_dir;
    ghost.params = fx.params();
    ghost.command_template = "true";
    ghost.state = JobState::Running;
    ghost.pid = 999999;
    ghost.log_path = (fx.dir.path() / "ghost.log").string();
    fx.ws.save(ghost);
    JobSupervisor sup(fx.ws);
    const auto j = sup.status("ghost");
    EXPECT_EQ(j.state, JobState::Failed);
    EXPECT_EQ(j.exit_code, -1);
}

// ---- explorer --------------------------------------------------------------

TEST(Explorer, SideBySide) {
    MockLlm a([](const nlohmann::json &, int) { return MockReply{200, testing_support::chat_body("X")}; });
    MockLlm b([](const nlohmann::json &, int) { return MockReply{200, testing_support::chat_body("Y")}; });
    TempDir dir;
    Studio studio(studio_config(dir));
    const auto g = studio.corpus().create_group("G").group_id;
    const auto doc = studio.corpus().ingest_document(g, "doc", SourceKind::Markdown, kDocMd).doc_id;
    studio.register_provider(testing_support::mock_provider("a", a));
    studio.register_provider(testing_support::mock_provider("b", b));
    const auto r = studio.explorer().compare(doc, "Where does the Nile flow?", {"a", std::nullopt}, {"b", "lora-1"});
    EXPECT_EQ(r.a.text, "X");
    EXPECT_EQ(r.b.text, "Y");
    EXPECT_FALSE(r.a.metric_report.has_value());
    EXPECT_NE(testing_support::user_prompt(a.requests().at(0)).find("Nile flows north"), std::string::npos);
    EXPECT_NE(testing_support::user_prompt(a.requests().at(0)).find("Where does the Nile flow?"), std::string::npos);
    EXPECT_EQ(studio.explorer().list().size(), 1u);
    EXPECT_EQ(studio.workspace().load<ComparisonRecord>(r.comparison_id), r);

    // same provider on both sides makes two calls
    studio.explorer().compare(doc, "Again?", {"a", std::nullopt}, {"a", std::nullopt});
    EXPECT_EQ(a.calls(), 3);
    EXPECT_EQ(studio.explorer().list().size(), 2u);
}

TEST(Explorer, OneSideFailing) {
    MockLlm ok([](const nlohmann::json &, int) { return MockReply{200, testing_support::chat_body("Egypt")}; });
    MockLlm slow([](const nlohmann::json &, int) {
        std::this_thread::sleep_for(300ms);
        return MockReply{200, testing_support::chat_body("late")};
    });
    TempDir dir;
    Studio studio(studio_config(dir));
    const auto g = studio.corpus().create_group("G").group_id;
    const auto doc = studio.corpus().ingest_document(g, "doc", SourceKind::Markdown, kDocMd).doc_id;
    auto slow_cfg = testing_support::mock_provider("slow", slow, 0);
    slow_cfg.timeout_ms = 50;
    studio.register_provider(slow_cfg);
    studio.register_provider(testing_support::mock_provider("ok", ok));
    CompareOptions opts;
    opts.score = true;
    const auto r = studio.explorer().compare(doc, "Which country does the Nile flow through?", {"slow", std::nullopt},
                                             {"ok", std::nullopt}, opts);
    EXPECT_FALSE(r.a.ok());
    EXPECT_EQ(r.a.error->first, "timeout");
    EXPECT_FALSE(r.a.metric_report.has_value());
    EXPECT_EQ(r.b.text, "Egypt");
    ASSERT_TRUE(r.b.metric_report.has_value());
    EXPECT_TRUE(r.b.scored_chunk_id.has_value());
    const nlohmann::json j = r;
    EXPECT_EQ(j["answer_a"]["error"]["code"], "timeout");
    EXPECT_EQ(j["answer_b"], "Egypt");

    EXPECT_EQ(error_of([&] { studio.explorer().compare(doc, "q", {"slow", std::nullopt}, {"slow", std::nullopt}); }),
              ErrorCode::BothModelsFailed);
    EXPECT_EQ(error_of([&] { studio.explorer().compare("nope", "q", {"ok", std::nullopt}, {"ok", std::nullopt}); }),
              ErrorCode::DocNotFound);
    EXPECT_EQ(error_of([&] { studio.explorer().compare(doc, " ", {"ok", std::nullopt}, {"ok", std::nullopt}); }),
              ErrorCode::InvalidArgument);
}

TEST(Explorer, ContextTruncation) {
    const auto [text, truncated] = truncate_tokens("a b c d e", 3);
    EXPECT_EQ(text, "a b c");
    EXPECT_TRUE(truncated);
    EXPECT_FALSE(truncate_tokens("a b", 3).second);
}
