#pragma once

// Storage kinds for the record types persisted in a workspace.

#include "qgen/chat.hpp"
#include "qgen/corpus.hpp"
#include "qgen/dataset.hpp"
#include "qgen/promptkit.hpp"
#include "qgen/workspace.hpp"

namespace qgen {

template <>
struct RecordTraits<DocumentGroup> {
    static constexpr std::string_view kind = "groups";
    static std::string id(const DocumentGroup &r) { return r.group_id; }
};

template <>
struct RecordTraits<Document> {
    static constexpr std::string_view kind = "documents";
    static std::string id(const Document &r) { return r.doc_id; }
};

template <>
struct RecordTraits<ExamplePair> {
    static constexpr std::string_view kind = "examples";
    static std::string id(const ExamplePair &r) { return r.example_id; }
};

template <>
struct RecordTraits<DatasetRecord> {
    static constexpr std::string_view kind = "datasets";
    static std::string id(const DatasetRecord &r) { return r.dataset_id; }
};

template <>
struct RecordTraits<ProviderConfig> {
    static constexpr std::string_view kind = "providers";
    static std::string id(const ProviderConfig &r) { return r.provider_id; }
};

} // namespace qgen
