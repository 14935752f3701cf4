#pragma once

// One object owning a workspace and every service over it. The HTTP server and
// the CLI both go through this so they persist identical records.

#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include "qgen/explorer.hpp"
#include "qgen/generator.hpp"
#include "qgen/trainjobs.hpp"

namespace qgen {

struct StudioConfig {
    std::filesystem::path workspace;
    std::string train_cmd; // default command template for training jobs
    WorkspaceOptions workspace_options;
    SupervisorOptions supervisor_options;
};

class Studio {
  public:
    explicit Studio(StudioConfig cfg, LlmGateway::Sleeper sleeper = {})
        : cfg_(std::move(cfg)),
          ws_(cfg_.workspace, cfg_.workspace_options),
          gateway_(std::move(sleeper)),
          corpus_(ws_),
          generator_(ws_, gateway_),
          explorer_(ws_, gateway_),
          jobs_(ws_, cfg_.supervisor_options) {
        for (const auto &id : ws_.list_ids<ProviderConfig>()) {
            gateway_.registry().register_provider(ws_.load<ProviderConfig>(id));
        }
    }

    Workspace &workspace() { return ws_; }
    CorpusService &corpus() { return corpus_; }
    LlmGateway &gateway() { return gateway_; }
    DatasetGenerator &generator() { return generator_; }
    ModelExplorer &explorer() { return explorer_; }
    JobSupervisor &jobs() { return jobs_; }
    [[nodiscard]] const StudioConfig &config() const { return cfg_; }

    /// Registers and persists a provider. The persisted form carries no secret.
    ProviderConfig register_provider(const ProviderConfig &cfg) {
        cfg.validate();
        return ws_.mutate([&] {
            gateway_.registry().register_provider(cfg);
            ws_.save(cfg);
            return cfg;
        });
    }

    [[nodiscard]] std::vector<ProviderConfig> list_providers() const { return gateway_.registry().list(); }

    [[nodiscard]] DatasetRecord load_dataset(const std::string &dataset_id) const {
        if (!ws_.exists<DatasetRecord>(dataset_id)) {
            fail(ErrorCode::DatasetNotFound, "dataset '" + dataset_id + "' not found");
        }
        return ws_.load<DatasetRecord>(dataset_id);
    }

    [[nodiscard]] std::vector<DatasetRecord> list_datasets() const { return ws_.list<DatasetRecord>(); }

    ExportResult export_dataset(const std::string &dataset_id, const SplitSpec &spec) {
        return export_training(ws_, load_dataset(dataset_id), spec);
    }

    /// Accepts an export directory path or an export id under {workspace}/exports.
    [[nodiscard]] std::string resolve_export(const std::string &ref) const {
        if (ref.empty()) {
            fail(ErrorCode::MissingExport, "a dataset export reference is required");
        }
        const auto by_id = ws_.root() / "exports" / ref;
        if (ref.find('/') == std::string::npos && std::filesystem::is_directory(by_id)) {
            return by_id.string();
        }
        if (!std::filesystem::is_directory(ref)) {
            fail(ErrorCode::MissingExport, "dataset export '" + ref + "' does not exist");
        }
        return std::filesystem::absolute(ref).string();
    }

    TrainingJob launch_training(const std::string &export_ref, const TrainingParams &params,
                                const std::optional<std::string> &command_template = std::nullopt) {
        const auto tpl = command_template.value_or(cfg_.train_cmd);
        if (trim(tpl).empty()) {
            fail(ErrorCode::InvalidArgument, "no training command template configured");
        }
        return jobs_.launch(resolve_export(export_ref), params, tpl);
    }

    [[nodiscard]] std::vector<QAPair> query_pairs(const std::string &dataset_id, const MetricFilter &filter) const {
        auto d = load_dataset(dataset_id);
        return filter_sort(std::move(d.pairs), filter, [](const QAPair &p) -> const MetricReport & {
            return p.metric_report;
        });
    }

    /// Chunk text, attributed sentence and highlight spans for one pair.
    [[nodiscard]] nlohmann::json pair_attribution(const std::string &pair_id) const {
        const auto cut = pair_id.rfind("-p");
        if (cut == std::string::npos) {
            fail(ErrorCode::NotFound, "pair '" + pair_id + "' not found");
        }
        const auto dataset_id = pair_id.substr(0, cut);
        if (!ws_.exists<DatasetRecord>(dataset_id)) {
            fail(ErrorCode::NotFound, "pair '" + pair_id + "' not found");
        }
        const auto d = ws_.load<DatasetRecord>(dataset_id);
        for (const auto &p : d.pairs) {
            if (p.pair_id != pair_id) {
                continue;
            }
            const auto *chunk = d.find_chunk(p.chunk_id);
            if (chunk == nullptr) {
                fail(ErrorCode::CorruptRecord, "pair " + pair_id + " references a missing chunk");
            }
            return {{"pair_id", p.pair_id},
                    {"dataset_id", d.dataset_id},
                    {"doc_id", p.doc_id},
                    {"chunk_id", p.chunk_id},
                    {"chunk_text", chunk->text},
                    {"chunk_span", chunk->char_span},
                    {"question", p.question},
                    {"answer", p.answer},
                    {"attribution", p.attribution},
                    {"sentence", utf8::substr(chunk->text, p.attribution.sentence_span)},
                    {"highlights", p.highlights}};
        }
        fail(ErrorCode::NotFound, "pair '" + pair_id + "' not found");
    }

  private:
    StudioConfig cfg_;
    Workspace ws_;
    LlmGateway gateway_;
    CorpusService corpus_;
    DatasetGenerator generator_;
    ModelExplorer explorer_;
    JobSupervisor jobs_;
};

} // namespace qgen
