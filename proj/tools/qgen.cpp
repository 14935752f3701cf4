// qgen: headless access to the dataset pipeline. Every command prints JSON.
//
// Exit codes: 0 success, 1 validated failure (error JSON on stderr), 2 usage error.

#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "qgen/server.hpp"

namespace {

using nlohmann::json;

struct Globals {
    std::string workspace;
    std::string output;
    std::string train_cmd;
};

void emit(const Globals &g, const json &value) {
    const auto text = value.dump(2) + "\n";
    if (g.output.empty()) {
        std::cout << text;
        return;
    }
    std::ofstream out(g.output, std::ios::binary | std::ios::trunc);
    if (!out) {
        qgen::fail(qgen::ErrorCode::InvalidArgument, "cannot write output file " + g.output);
    }
    out << text;
}

qgen::Studio open_studio(const Globals &g) {
    if (g.workspace.empty()) {
        qgen::fail(qgen::ErrorCode::InvalidArgument, "--workspace (or QGEN_WORKSPACE) is required");
    }
    qgen::StudioConfig cfg;
    cfg.workspace = g.workspace;
    cfg.train_cmd = g.train_cmd;
    return qgen::Studio(std::move(cfg));
}

std::string resolve_group(qgen::Studio &studio, const std::string &ref, bool create) {
    if (auto g = studio.corpus().find_group(ref)) {
        return g->group_id;
    }
    if (!create) {
        qgen::fail(qgen::ErrorCode::GroupNotFound, "group '" + ref + "' not found");
    }
    return studio.corpus().create_group(ref).group_id;
}

qgen::SourceKind guess_kind(const std::string &file) {
    const auto ext = std::filesystem::path(file).extension().string();
    if (ext == ".json") return qgen::SourceKind::StructuredJson;
    if (ext == ".md" || ext == ".markdown") return qgen::SourceKind::Markdown;
    return qgen::SourceKind::PlainText;
}

volatile std::sig_atomic_t g_interrupted = 0;

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"qgen: question-answer dataset generation"};
    app.require_subcommand(1);
    Globals g;
    if (const char *env = std::getenv("QGEN_WORKSPACE")) g.workspace = env;
    if (const char *env = std::getenv("QGEN_TRAIN_CMD")) g.train_cmd = env;
    std::string listen = "127.0.0.1:8080";
    if (const char *env = std::getenv("QGEN_LISTEN")) listen = env;

    app.add_option("--workspace", g.workspace, "workspace directory");
    app.add_option("--output", g.output, "write JSON here instead of stdout");
    app.add_option("--train-cmd", g.train_cmd, "training command template");
    app.add_flag_callback("--version", [] {
        std::cout << qgen::kVersion << "\n";
        throw CLI::Success();
    });

    std::function<json(qgen::Studio &)> action;
    bool needs_serve = false;

    // groups
    auto *groups = app.add_subcommand("groups", "list or create document groups");
    std::string group_name;
    groups->add_option("--create", group_name, "create a group with this name");
    groups->callback([&] {
        action = [&](qgen::Studio &s) -> json {
            if (!group_name.empty()) return s.corpus().create_group(group_name);
            return s.corpus().list_groups();
        };
    });

    // ingest
    auto *ingest = app.add_subcommand("ingest", "ingest a document into a group");
    std::string ingest_group, ingest_file, ingest_title, ingest_kind;
    bool no_create = false;
    ingest->add_option("--group", ingest_group, "group id or name")->required();
    ingest->add_option("--file", ingest_file, "document file")->required();
    ingest->add_option("--title", ingest_title, "document title (default: file stem)");
    ingest->add_option("--kind", ingest_kind, "structured-json|markdown|plain-text|pre-converted");
    ingest->add_flag("--no-create", no_create, "fail if the group does not exist");
    ingest->callback([&] {
        action = [&](qgen::Studio &s) -> json {
            const auto payload = qgen::read_file(ingest_file);
            const auto kind = ingest_kind.empty() ? guess_kind(ingest_file) : qgen::parse_source_kind(ingest_kind);
            const auto title =
                ingest_title.empty() ? std::filesystem::path(ingest_file).stem().string() : ingest_title;
            const auto gid = resolve_group(s, ingest_group, !no_create);
            return s.corpus().ingest_document(gid, title, kind, payload);
        };
    });

    // examples
    auto *examples = app.add_subcommand("examples", "list or add few-shot example pairs");
    std::string ex_doc, ex_q, ex_a;
    examples->add_option("--doc", ex_doc, "document id")->required();
    examples->add_option("--question", ex_q);
    examples->add_option("--answer", ex_a);
    examples->callback([&] {
        action = [&](qgen::Studio &s) -> json {
            if (ex_q.empty() && ex_a.empty()) return s.corpus().list_examples(ex_doc);
            return s.corpus().add_example(ex_doc, ex_q, ex_a);
        };
    });

    // providers
    auto *providers = app.add_subcommand("providers", "list or register LLM providers");
    std::string prov_file;
    providers->add_option("--add", prov_file, "ProviderConfig JSON file to register");
    providers->callback([&] {
        action = [&](qgen::Studio &s) -> json {
            if (!prov_file.empty()) {
                return s.register_provider(json::parse(qgen::read_file(prov_file)).get<qgen::ProviderConfig>());
            }
            return s.list_providers();
        };
    });

    // chunk
    auto *chunk = app.add_subcommand("chunk", "chunk a stored document");
    std::string chunk_doc;
    qgen::ChunkConfig chunk_cfg;
    bool chunk_no_headings = false;
    chunk->add_option("--doc", chunk_doc, "document id")->required();
    chunk->add_option("--max-tokens", chunk_cfg.max_tokens);
    chunk->add_option("--overlap-tokens", chunk_cfg.overlap_tokens);
    chunk->add_flag("--no-headings", chunk_no_headings, "do not prefix section headings");
    chunk->callback([&] {
        action = [&](qgen::Studio &s) -> json {
            chunk_cfg.include_headings = !chunk_no_headings;
            return qgen::chunk_document(s.corpus().get_document(chunk_doc), chunk_cfg);
        };
    });

    // generate
    auto *generate = app.add_subcommand("generate", "generate a QA dataset for a group");
    std::string gen_group, gen_mode = "zero-shot", gen_config;
    qgen::GenerationConfig gen;
    bool gen_no_headings = false;
    generate->add_option("--group", gen_group, "group id or name")->required();
    generate->add_option("--config", gen_config, "GenerationConfig JSON file (flags override)");
    generate->add_option("--provider", gen.provider_id);
    generate->add_option("--questions-per-chunk", gen.questions_per_chunk);
    generate->add_option("--prompt-mode", gen_mode)->check(CLI::IsMember({"zero-shot", "few-shot"}));
    generate->add_option("--num-examples", gen.num_examples);
    generate->add_option("--temperature", gen.temperature);
    generate->add_option("--metrics", gen.metrics)->delimiter(',');
    generate->add_option("--seed", gen.seed);
    generate->add_option("--max-output-tokens", gen.max_output_tokens);
    generate->add_option("--max-tokens", gen.chunk_config.max_tokens);
    generate->add_option("--overlap-tokens", gen.chunk_config.overlap_tokens);
    generate->add_flag("--no-headings", gen_no_headings);
    generate->callback([&] {
        action = [&](qgen::Studio &s) -> json {
            auto cfg_json = gen_config.empty() ? json::object() : json::parse(qgen::read_file(gen_config));
            auto merged = qgen::GenerationConfig(cfg_json.get<qgen::GenerationConfig>());
            for (const auto *opt : generate->get_options()) {
                if (opt->count() == 0) continue;
                const auto name = opt->get_name();
                if (name == "--provider") merged.provider_id = gen.provider_id;
                else if (name == "--questions-per-chunk") merged.questions_per_chunk = gen.questions_per_chunk;
                else if (name == "--prompt-mode") merged.prompt_mode = json(gen_mode).get<qgen::PromptMode>();
                else if (name == "--num-examples") merged.num_examples = gen.num_examples;
                else if (name == "--temperature") merged.temperature = gen.temperature;
                else if (name == "--metrics") merged.metrics = gen.metrics;
                else if (name == "--seed") merged.seed = gen.seed;
                else if (name == "--max-output-tokens") merged.max_output_tokens = gen.max_output_tokens;
                else if (name == "--max-tokens") merged.chunk_config.max_tokens = gen.chunk_config.max_tokens;
                else if (name == "--overlap-tokens") merged.chunk_config.overlap_tokens = gen.chunk_config.overlap_tokens;
                else if (name == "--no-headings") merged.chunk_config.include_headings = !gen_no_headings;
            }
            const auto gid = resolve_group(s, gen_group, false);
            return s.generator().generate_for_group(gid, merged);
        };
    });

    // score
    auto *score = app.add_subcommand("score", "score text, or filter and sort a dataset's pairs");
    std::string sc_q, sc_a, sc_ctx, sc_ctx_file, sc_dataset, sc_filter, sc_sort;
    std::vector<std::string> sc_metrics = {"all"};
    score->add_option("--question", sc_q);
    score->add_option("--answer", sc_a);
    score->add_option("--context", sc_ctx, "reference text");
    score->add_option("--context-file", sc_ctx_file);
    score->add_option("--metrics", sc_metrics)->delimiter(',');
    score->add_option("--dataset", sc_dataset, "filter pairs of this dataset instead");
    score->add_option("--filter", sc_filter, "e.g. answer.bleu2>0.8,meteor>=0.3");
    score->add_option("--sort", sc_sort, "e.g. meteor:desc");
    score->callback([&] {
        action = [&](qgen::Studio &s) -> json {
            if (!sc_dataset.empty()) {
                qgen::MetricFilter f;
                f.predicates = qgen::parse_predicates(sc_filter);
                if (!sc_sort.empty()) f.sort = qgen::parse_sort_key(sc_sort);
                const auto pairs = s.query_pairs(sc_dataset, f);
                return {{"dataset_id", sc_dataset}, {"filter", sc_filter}, {"sort", sc_sort},
                        {"count", pairs.size()}, {"pairs", pairs}};
            }
            const auto ctx = sc_ctx_file.empty() ? sc_ctx : qgen::read_file(sc_ctx_file);
            const auto stats = qgen::CorpusStats::from_texts({ctx});
            return qgen::score_pair(sc_q, sc_a, ctx, stats, qgen::parse_metric_set(sc_metrics));
        };
    });

    // export
    auto *exp = app.add_subcommand("export", "export train/valid/test JSONL splits");
    std::string exp_dataset;
    qgen::SplitSpec split;
    bool no_shuffle = false;
    exp->add_option("--dataset", exp_dataset)->required();
    exp->add_option("--test", split.test_fraction);
    exp->add_option("--valid", split.valid_fraction);
    exp->add_option("--seed", split.seed);
    exp->add_flag("--no-shuffle", no_shuffle);
    exp->add_flag("--include-context", split.include_context);
    exp->callback([&] {
        action = [&](qgen::Studio &s) -> json {
            split.shuffle = !no_shuffle;
            split.validate();
            const auto r = s.export_dataset(exp_dataset, split);
            auto out = r.manifest;
            out["export_dir"] = r.dir.string();
            out["export_id"] = r.dir.filename().string();
            return out;
        };
    });

    // train
    auto *train = app.add_subcommand("train", "run the external trainer on an export");
    std::string tr_export, tr_template;
    qgen::TrainingParams tp;
    train->add_option("--export", tr_export, "export id or directory")->required();
    train->add_option("--base-model", tp.base_model)->required();
    train->add_option("--learning-rate", tp.learning_rate);
    train->add_option("--iterations", tp.iterations);
    train->add_option("--lora-layers", tp.lora_layers);
    train->add_option("--batch-size", tp.batch_size);
    train->add_option("--adapter-output-dir", tp.adapter_output_dir)->required();
    train->add_option("--command-template", tr_template);
    train->callback([&] {
        action = [&](qgen::Studio &s) -> json {
            std::optional<std::string> tpl;
            if (!tr_template.empty()) tpl = tr_template;
            const auto job = s.launch_training(tr_export, tp, tpl);
            return s.jobs().wait(job.job_id);
        };
    });

    // jobs
    auto *jobs = app.add_subcommand("jobs", "list training jobs");
    jobs->callback([&] {
        action = [&](qgen::Studio &s) -> json { return s.jobs().list(); };
    });

    // compare
    auto *compare = app.add_subcommand("compare", "ask two models the same question about a document");
    std::string cmp_doc, cmp_q, cmp_a, cmp_b;
    qgen::CompareOptions copts;
    compare->add_option("--doc", cmp_doc)->required();
    compare->add_option("--question", cmp_q)->required();
    compare->add_option("--model-a", cmp_a, "provider id")->required();
    compare->add_option("--model-b", cmp_b, "provider id")->required();
    compare->add_flag("--score", copts.score);
    compare->add_option("--context-tokens", copts.context_tokens);
    compare->add_option("--temperature", copts.temperature);
    compare->add_option("--max-output-tokens", copts.max_output_tokens);
    compare->callback([&] {
        action = [&](qgen::Studio &s) -> json {
            return s.explorer().compare(cmp_doc, cmp_q, qgen::ModelRef{cmp_a, std::nullopt},
                                        qgen::ModelRef{cmp_b, std::nullopt}, copts);
        };
    });

    // serve
    auto *serve = app.add_subcommand("serve", "run the HTTP API");
    serve->add_option("--listen", listen, "HOST:PORT");
    serve->callback([&] { needs_serve = true; });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    if (g.workspace.empty()) {
        std::cerr << qgen::Error(qgen::ErrorCode::InvalidArgument, "--workspace (or QGEN_WORKSPACE) is required")
                         .to_json()
                         .dump()
                  << "\n";
        return 2;
    }
    try {
        auto studio = open_studio(g);
        if (needs_serve) {
            qgen::ApiServer server(studio);
            const auto port = server.bind(qgen::parse_listen(listen));
            std::cerr << json{{"listening", listen.substr(0, listen.rfind(':')) + ":" + std::to_string(port)}}.dump()
                      << std::endl;
            static qgen::ApiServer *active = &server;
            std::signal(SIGINT, [](int) { g_interrupted = 1; active->http().stop(); });
            std::signal(SIGTERM, [](int) { g_interrupted = 1; active->http().stop(); });
            server.run();
            return 0;
        }
        emit(g, action(studio));
        return 0;
    } catch (const qgen::Error &e) {
        std::cerr << e.to_json().dump() << "\n";
        return 1;
    } catch (const nlohmann::json::exception &e) {
        std::cerr << qgen::Error(qgen::ErrorCode::InvalidArgument, e.what()).to_json().dump() << "\n";
        return 1;
    } catch (const std::exception &e) {
        std::cerr << qgen::Error(qgen::ErrorCode::Internal, e.what()).to_json().dump() << "\n";
        return 1;
    }
}
