#pragma once

// Generated dataset records and training-ready exports.

#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <unistd.h>
#include <vector>

#include "qgen/attribution.hpp"
#include "qgen/chunker.hpp"
#include "qgen/metrics.hpp"
#include "qgen/promptkit.hpp"
#include "qgen/workspace.hpp"

namespace qgen {

struct QAPair {
    std::string pair_id;
    std::string dataset_id;
    std::string doc_id;
    std::string chunk_id;
    int ordinal = 0; // position within its chunk's response
    std::string question;
    std::string answer;
    MetricReport metric_report;
    Attribution attribution;
    std::vector<Highlight> highlights;
    std::string created_at;
    friend bool operator==(const QAPair &, const QAPair &) = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(QAPair, pair_id, dataset_id, doc_id, chunk_id, ordinal, question, answer,
                                   metric_report, attribution, highlights, created_at)

struct GenerationFailure {
    std::string chunk_id;
    std::string code;
    std::string message;
    friend bool operator==(const GenerationFailure &, const GenerationFailure &) = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(GenerationFailure, chunk_id, code, message)

struct DatasetRecord {
    std::string dataset_id;
    std::string group_id;
    GenerationConfig config_snapshot;
    std::vector<Chunk> chunk_snapshot;
    CorpusStats corpus_stats;
    std::vector<QAPair> pairs;
    std::vector<GenerationFailure> failures;
    bool orphaned = false;
    std::string prompt_template_version;
    std::string created_at;

    [[nodiscard]] const Chunk *find_chunk(const std::string &chunk_id) const {
        for (const auto &c : chunk_snapshot) {
            if (c.chunk_id == chunk_id) {
                return &c;
            }
        }
        return nullptr;
    }

    [[nodiscard]] bool references_doc(const std::string &doc_id) const {
        return std::any_of(chunk_snapshot.begin(), chunk_snapshot.end(),
                           [&](const Chunk &c) { return c.doc_id == doc_id; });
    }

    friend bool operator==(const DatasetRecord &, const DatasetRecord &) = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(DatasetRecord, dataset_id, group_id, config_snapshot, chunk_snapshot, corpus_stats,
                                   pairs, failures, orphaned, prompt_template_version, created_at)

/// Listing view without pairs and chunks.
inline nlohmann::json dataset_summary(const DatasetRecord &d) {
    return {{"dataset_id", d.dataset_id},
            {"group_id", d.group_id},
            {"pairs", d.pairs.size()},
            {"chunks", d.chunk_snapshot.size()},
            {"failures", d.failures.size()},
            {"orphaned", d.orphaned},
            {"prompt_template_version", d.prompt_template_version},
            {"config", d.config_snapshot},
            {"created_at", d.created_at}};
}

struct SplitSpec {
    double test_fraction = 0.1;
    double valid_fraction = 0.1;
    bool shuffle = true;
    std::uint64_t seed = 0;
    bool include_context = false;

    void validate() const {
        auto in_range = [](double f) { return f >= 0.0 && f < 1.0; };
        if (!in_range(test_fraction) || !in_range(valid_fraction)) {
            fail(ErrorCode::InvalidArgument, "split fractions must lie in [0, 1)");
        }
        if (test_fraction + valid_fraction >= 1.0) {
            fail(ErrorCode::InvalidArgument, "test_fraction + valid_fraction must be < 1");
        }
    }
    friend bool operator==(const SplitSpec &, const SplitSpec &) = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SplitSpec, test_fraction, valid_fraction, shuffle, seed,
                                                include_context)

struct SplitCounts {
    std::size_t train = 0;
    std::size_t valid = 0;
    std::size_t test = 0;
    friend bool operator==(const SplitCounts &, const SplitCounts &) = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(SplitCounts, train, valid, test)

/// floor(n * fraction) for test and valid; train takes the remainder. The 1e-9 slack keeps
/// products such as 100 * 0.29 from flooring one below the exact value.
inline SplitCounts split_counts(std::size_t n, const SplitSpec &spec) {
    auto part = [n](double f) { return static_cast<std::size_t>(std::floor(static_cast<double>(n) * f + 1e-9)); };
    SplitCounts c;
    c.test = part(spec.test_fraction);
    c.valid = part(spec.valid_fraction);
    c.train = n - c.test - c.valid;
    return c;
}

/// Uniform in [0, bound) from a 64-bit engine, without modulo bias.
inline std::uint64_t bounded_draw(std::mt19937_64 &rng, std::uint64_t bound) {
    const std::uint64_t threshold = (0 - bound) % bound;
    while (true) {
        const auto r = rng();
        if (r >= threshold) {
            return r % bound;
        }
    }
}

/// Fisher-Yates over indices 0..n-1 with mt19937_64(seed); identical on every platform.
inline std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) {
        idx[i] = i;
    }
    std::mt19937_64 rng(seed);
    for (std::size_t i = n; i > 1; --i) {
        const auto j = static_cast<std::size_t>(bounded_draw(rng, i));
        std::swap(idx[i - 1], idx[j]);
    }
    return idx;
}

inline std::string training_text(const QAPair &p, const DatasetRecord &d, bool include_context) {
    std::string t;
    if (include_context) {
        const auto *chunk = d.find_chunk(p.chunk_id);
        if (chunk == nullptr) {
            fail(ErrorCode::CorruptRecord, "pair " + p.pair_id + " references unknown chunk " + p.chunk_id);
        }
        t += "Context: " + chunk->text + "\n";
    }
    t += "Q: " + p.question + "\nA: " + p.answer;
    return t;
}

struct ExportResult {
    std::filesystem::path dir;
    nlohmann::json manifest;
};

/// Writes train/valid/test .jsonl ({"text": ...} per line) and manifest.json, then renames
/// the staging directory into exports/{export_id}.
inline ExportResult export_training(const Workspace &ws, const DatasetRecord &dataset, const SplitSpec &spec) {
    spec.validate();
    const auto n = dataset.pairs.size();
    if (n == 0 || (spec.test_fraction > 0.0 && spec.valid_fraction > 0.0 && n < 3)) {
        fail(ErrorCode::TooFewPairs, "dataset " + dataset.dataset_id + " has too few pairs to split",
             {{"pairs", n}});
    }
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) {
        order[i] = i;
    }
    if (spec.shuffle) {
        order = seeded_permutation(n, spec.seed);
    }
    const auto counts = split_counts(n, spec);

    std::string test;
    std::string valid;
    std::string train;
    for (std::size_t k = 0; k < n; ++k) {
        const auto &pair = dataset.pairs[order[k]];
        auto line = nlohmann::json{{"text", training_text(pair, dataset, spec.include_context)}}.dump() + "\n";
        if (k < counts.test) {
            test += line;
        } else if (k < counts.test + counts.valid) {
            valid += line;
        } else {
            train += line;
        }
    }

    const nlohmann::json spec_json = spec;
    const auto export_id = sha256_hex(dataset.dataset_id + "\x1f" + spec_json.dump()).substr(0, 12);
    const auto exports = ws.root() / "exports";
    const auto final_dir = exports / export_id;
    const auto staging = exports / (".staging-" + export_id + "-" + std::to_string(::getpid()));
    std::filesystem::create_directories(staging);

    // Re-exporting identical inputs keeps the first export's timestamp so the bytes do not change.
    auto created_at = utc_now_iso();
    if (std::filesystem::exists(final_dir / "manifest.json")) {
        const auto prior = nlohmann::json::parse(read_file(final_dir / "manifest.json"), nullptr, false);
        if (prior.is_object() && prior.contains("created_at") && prior["created_at"].is_string()) {
            created_at = prior["created_at"].get<std::string>();
        }
    }
    nlohmann::json manifest{{"dataset_id", dataset.dataset_id},
                            {"spec", spec_json},
                            {"counts", counts},
                            {"created_at", created_at}};
    write_file_atomic(staging / "train.jsonl", train);
    write_file_atomic(staging / "valid.jsonl", valid);
    write_file_atomic(staging / "test.jsonl", test);
    write_file_atomic(staging / "manifest.json", manifest.dump(2) + "\n");

    std::error_code ec;
    std::filesystem::remove_all(final_dir, ec);
    std::filesystem::rename(staging, final_dir, ec);
    if (ec) {
        std::filesystem::remove_all(staging);
        fail(ErrorCode::WorkspaceUnavailable, "cannot publish export " + final_dir.string() + ": " + ec.message());
    }
    return {final_dir, manifest};
}

} // namespace qgen
