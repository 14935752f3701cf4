#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "qgen/records.hpp"

namespace qgen {

/// Group, document and example-pair management on top of a workspace.
class CorpusService {
  public:
    explicit CorpusService(Workspace &ws) : ws_(ws) {}

    DocumentGroup create_group(std::string_view name) {
        auto trimmed = trim(name);
        if (trimmed.empty()) {
            fail(ErrorCode::EmptyName, "group name must be nonempty");
        }
        return ws_.mutate([&] {
            for (const auto &g : ws_.list<DocumentGroup>()) {
                if (g.name == trimmed) {
                    fail(ErrorCode::DuplicateName, "a group named '" + trimmed + "' already exists");
                }
            }
            DocumentGroup g;
            g.group_id = short_id(trimmed, ws_.next_counter());
            g.name = std::move(trimmed);
            g.created_at = utc_now_iso();
            ws_.save(g);
            return g;
        });
    }

    [[nodiscard]] DocumentGroup get_group(const std::string &group_id) const {
        if (!ws_.exists<DocumentGroup>(group_id)) {
            fail(ErrorCode::GroupNotFound, "group '" + group_id + "' not found");
        }
        return ws_.load<DocumentGroup>(group_id);
    }

    [[nodiscard]] std::vector<DocumentGroup> list_groups() const { return ws_.list<DocumentGroup>(); }

    /// Group by id, falling back to an exact name match.
    [[nodiscard]] std::optional<DocumentGroup> find_group(const std::string &id_or_name) const {
        if (ws_.exists<DocumentGroup>(id_or_name)) {
            return ws_.load<DocumentGroup>(id_or_name);
        }
        for (auto &g : ws_.list<DocumentGroup>()) {
            if (g.name == id_or_name) {
                return g;
            }
        }
        return std::nullopt;
    }

    /// Removes the group and every document in it.
    void delete_group(const std::string &group_id) {
        ws_.mutate([&] {
            const auto g = get_group(group_id);
            for (const auto &doc_id : g.document_ids) {
                delete_document(doc_id);
            }
            ws_.remove<DocumentGroup>(group_id);
        });
    }

    Document ingest_document(const std::string &group_id, std::string_view title, SourceKind kind,
                             std::string_view payload) {
        auto drafts = parse_payload(kind, payload);
        if (drafts.empty()) {
            fail(ErrorCode::EmptyDocument, "payload produced no elements");
        }
        return ws_.mutate([&] {
            auto group = get_group(group_id);
            Document doc;
            doc.title = trim(title);
            doc.doc_id = short_id(doc.title, ws_.next_counter());
            doc.group_id = group_id;
            doc.source_kind = kind;
            doc.elements = assign_elements(doc.doc_id, std::move(drafts));
            doc.created_at = utc_now_iso();
            ws_.save(doc);
            group.document_ids.push_back(doc.doc_id);
            ws_.save(group);
            return doc;
        });
    }

    [[nodiscard]] Document get_document(const std::string &doc_id) const {
        if (!ws_.exists<Document>(doc_id)) {
            fail(ErrorCode::DocNotFound, "document '" + doc_id + "' not found");
        }
        return ws_.load<Document>(doc_id);
    }

    [[nodiscard]] std::vector<Document> list_documents(const std::string &group_id) const {
        std::vector<Document> out;
        for (const auto &id : get_group(group_id).document_ids) {
            out.push_back(get_document(id));
        }
        return out;
    }

    /// Drops the document, its example pairs and its group membership; datasets built
    /// from it are kept and flagged orphaned.
    void delete_document(const std::string &doc_id) {
        ws_.mutate([&] {
            const auto doc = get_document(doc_id);
            for (const auto &ex : ws_.list<ExamplePair>()) {
                if (ex.doc_id == doc_id) {
                    ws_.remove<ExamplePair>(ex.example_id);
                }
            }
            if (ws_.exists<DocumentGroup>(doc.group_id)) {
                auto g = ws_.load<DocumentGroup>(doc.group_id);
                std::erase(g.document_ids, doc_id);
                ws_.save(g);
            }
            for (auto &d : ws_.list<DatasetRecord>()) {
                if (!d.orphaned && d.references_doc(doc_id)) {
                    d.orphaned = true;
                    ws_.save(d);
                }
            }
            ws_.remove<Document>(doc_id);
        });
    }

    [[nodiscard]] std::string canonical_text(const std::string &doc_id) const {
        return qgen::canonical_text(get_document(doc_id));
    }

    ExamplePair add_example(const std::string &doc_id, std::string_view question, std::string_view answer) {
        ExamplePair ex;
        ex.question = trim(question);
        ex.answer = trim(answer);
        if (ex.question.empty() || ex.answer.empty()) {
            fail(ErrorCode::InvalidArgument, "example question and answer must be nonempty");
        }
        return ws_.mutate([&] {
            static_cast<void>(get_document(doc_id));
            ex.doc_id = doc_id;
            char ordinal[24];
            std::snprintf(ordinal, sizeof ordinal, "%06llu",
                          static_cast<unsigned long long>(ws_.next_counter()));
            ex.example_id = doc_id + "-x" + ordinal;
            ws_.save(ex);
            return ex;
        });
    }

    /// Examples of one document, ordered by example_id.
    [[nodiscard]] std::vector<ExamplePair> list_examples(const std::string &doc_id) const {
        static_cast<void>(get_document(doc_id));
        std::vector<ExamplePair> out;
        for (auto &ex : ws_.list<ExamplePair>()) {
            if (ex.doc_id == doc_id) {
                out.push_back(std::move(ex));
            }
        }
        std::sort(out.begin(), out.end(),
                  [](const ExamplePair &a, const ExamplePair &b) { return a.example_id < b.example_id; });
        return out;
    }

    void delete_example(const std::string &doc_id, const std::string &example_id) {
        ws_.mutate([&] {
            if (!ws_.exists<ExamplePair>(example_id) || ws_.load<ExamplePair>(example_id).doc_id != doc_id) {
                fail(ErrorCode::NotFound, "example '" + example_id + "' not found");
            }
            ws_.remove<ExamplePair>(example_id);
        });
    }

  private:
    Workspace &ws_;
};

} // namespace qgen
