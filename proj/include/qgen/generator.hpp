#pragma once

// Dataset generation for a document group: chunk -> prompt -> chat -> parse ->
// score -> attribute -> persist. Per-chunk failures are recorded, never fatal.

#include <atomic>
#include <functional>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "qgen/corpus_service.hpp"
#include "qgen/llm_gateway.hpp"

namespace qgen {

enum class RunState { Pending, Running, Completed, Failed };

NLOHMANN_JSON_SERIALIZE_ENUM(RunState, {{RunState::Pending, "pending"},
                                        {RunState::Running, "running"},
                                        {RunState::Completed, "completed"},
                                        {RunState::Failed, "failed"}})

/// Observable counters for a run; safe to read from any thread.
struct RunProgress {
    std::atomic<RunState> state{RunState::Pending};
    std::atomic<std::size_t> done{0};
    std::atomic<std::size_t> failed{0};
    std::atomic<std::size_t> total{0};

    [[nodiscard]] nlohmann::json snapshot() const {
        return {{"state", state.load()}, {"done", done.load()}, {"failed", failed.load()}, {"total", total.load()}};
    }
};

class DatasetGenerator {
  public:
    DatasetGenerator(Workspace &ws, LlmGateway &gateway) : ws_(ws), corpus_(ws), gateway_(gateway) {}

    DatasetRecord generate_for_group(const std::string &group_id, const GenerationConfig &cfg,
                                     RunProgress *progress = nullptr) {
        RunProgress local;
        auto &prog = progress != nullptr ? *progress : local;
        try {
            auto record = run(group_id, cfg, prog);
            prog.state = RunState::Completed;
            return record;
        } catch (...) {
            prog.state = RunState::Failed;
            throw;
        }
    }

  private:
    Workspace &ws_;
    CorpusService corpus_;
    LlmGateway &gateway_;

    struct ChunkOutcome {
        std::vector<QAPair> pairs;
        std::vector<GenerationFailure> failures;
    };

    DatasetRecord run(const std::string &group_id, const GenerationConfig &cfg, RunProgress &prog) {
        cfg.validate();
        const auto metrics = cfg.metric_set();
        const auto group = corpus_.get_group(group_id);
        if (group.document_ids.empty()) {
            fail(ErrorCode::EmptyGroup, "group '" + group_id + "' has no documents");
        }
        const auto provider = gateway_.registry().get(cfg.provider_id);

        std::vector<Chunk> chunks;
        std::map<std::string, std::vector<ExamplePair>> examples;
        for (const auto &doc : corpus_.list_documents(group_id)) {
            auto doc_chunks = chunk_document(doc, cfg.chunk_config);
            chunks.insert(chunks.end(), doc_chunks.begin(), doc_chunks.end());
            if (cfg.prompt_mode == PromptMode::FewShot) {
                auto ex = corpus_.list_examples(doc.doc_id);
                if (ex.empty()) {
                    fail(ErrorCode::NoExamples, "few-shot generation needs example pairs for document " + doc.doc_id,
                         {{"doc_id", doc.doc_id}});
                }
                examples[doc.doc_id] = std::move(ex);
            }
        }
        if (chunks.empty()) {
            fail(ErrorCode::EmptyGroup, "group '" + group_id + "' has no paragraph text to chunk");
        }

        std::vector<std::string> texts;
        texts.reserve(chunks.size());
        for (const auto &c : chunks) {
            texts.push_back(c.text);
        }
        const auto stats = CorpusStats::from_texts(texts);

        prog.total = chunks.size();
        prog.state = RunState::Running;

        const std::vector<ExamplePair> no_examples;
        auto examples_for = [&](const std::string &doc_id) -> const std::vector<ExamplePair> & {
            const auto it = examples.find(doc_id);
            return it == examples.end() ? no_examples : it->second;
        };

        std::vector<ChunkOutcome> outcomes(chunks.size());
        std::atomic<std::size_t> next{0};
        auto worker = [&] {
            for (std::size_t i = next++; i < chunks.size(); i = next++) {
                outcomes[i] = process_chunk(chunks[i], cfg, examples_for(chunks[i].doc_id), stats, metrics);
                if (outcomes[i].pairs.empty()) {
                    ++prog.failed;
                } else {
                    ++prog.done;
                }
            }
        };
        const auto n_workers = std::min<std::size_t>(static_cast<std::size_t>(provider.max_concurrency), chunks.size());
        std::vector<std::thread> threads;
        for (std::size_t w = 1; w < n_workers; ++w) {
            threads.emplace_back(worker);
        }
        worker();
        for (auto &t : threads) {
            t.join();
        }

        DatasetRecord record;
        record.group_id = group_id;
        record.config_snapshot = cfg;
        record.chunk_snapshot = std::move(chunks);
        record.corpus_stats = stats;
        record.prompt_template_version = std::string(kPromptTemplateVersion);
        record.created_at = utc_now_iso();
        for (auto &o : outcomes) {
            for (auto &p : o.pairs) {
                record.pairs.push_back(std::move(p));
            }
            for (auto &f : o.failures) {
                record.failures.push_back(std::move(f));
            }
        }
        if (record.pairs.empty()) {
            fail(ErrorCode::AllChunksFailed, "no chunk produced a usable question-answer pair",
                 {{"failures", record.failures}});
        }
        return ws_.mutate([&] {
            record.dataset_id = short_id("dataset:" + group_id, ws_.next_counter());
            for (std::size_t k = 0; k < record.pairs.size(); ++k) {
                record.pairs[k].dataset_id = record.dataset_id;
                record.pairs[k].pair_id = record.dataset_id + "-p" + std::to_string(k);
            }
            ws_.save(record);
            return record;
        });
    }

    ChunkOutcome process_chunk(const Chunk &chunk, const GenerationConfig &cfg, const std::vector<ExamplePair> &examples,
                               const CorpusStats &stats, const MetricSet &metrics) {
        ChunkOutcome out;
        auto record_failure = [&](std::string code, std::string message) {
            out.failures.push_back({chunk.chunk_id, std::move(code), std::move(message)});
        };
        ParsedResponse parsed;
        try {
            const auto req = build_prompt(chunk, cfg, examples);
            const auto resp = gateway_.chat(cfg.provider_id, req);
            parsed = parse_response(resp.text);
        } catch (const Error &e) {
            record_failure(std::string(to_string(e.code())), e.what());
            return out;
        } catch (const std::exception &e) {
            record_failure("internal", e.what());
            return out;
        }
        if (parsed.pairs.size() > static_cast<std::size_t>(cfg.questions_per_chunk)) {
            parsed.pairs.resize(static_cast<std::size_t>(cfg.questions_per_chunk));
        }
        const auto now = utc_now_iso();
        for (std::size_t k = 0; k < parsed.pairs.size(); ++k) {
            const auto &raw = parsed.pairs[k];
            try {
                QAPair p;
                p.doc_id = chunk.doc_id;
                p.chunk_id = chunk.chunk_id;
                p.ordinal = static_cast<int>(k);
                p.question = raw.question;
                p.answer = raw.answer;
                p.metric_report = score_pair(raw.question, raw.answer, chunk.text, stats, metrics);
                p.attribution = best_sentence(chunk.text, raw.question, raw.answer);
                p.highlights = highlight_spans(chunk.text, raw.question, raw.answer);
                p.created_at = now;
                out.pairs.push_back(std::move(p));
            } catch (const Error &e) {
                record_failure(std::string(to_string(e.code())), "pair " + std::to_string(k) + ": " + e.what());
            }
        }
        return out;
    }
};

} // namespace qgen
