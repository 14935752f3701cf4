#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

#include <json.hpp>

namespace qgen {

// Stable machine codes. The string form is what the HTTP API and CLI emit.
enum class ErrorCode {
    NotFound,
    EmptyName,
    DuplicateName,
    GroupNotFound,
    DocNotFound,
    DatasetNotFound,
    ProviderNotFound,
    EmptyGroup,
    ParseError,
    EmptyDocument,
    InvalidArgument,
    EmptyCandidate,
    EmptyReference,
    EmptyCorpus,
    EmptyChunk,
    UnknownMetric,
    NoExamples,
    UnparseableResponse,
    AllChunksFailed,
    DuplicateProvider,
    AuthError,
    RateLimited,
    Timeout,
    ProtocolError,
    UpstreamError,
    BothModelsFailed,
    TooFewPairs,
    UnknownPlaceholder,
    MissingExport,
    SpawnError,
    Conflict,
    IllegalTransition,
    CorruptRecord,
    WorkspaceLocked,
    WorkspaceUnavailable,
    BindError,
    Internal,
};

inline std::string_view to_string(ErrorCode c) {
    switch (c) {
    case ErrorCode::NotFound: return "not_found";
    case ErrorCode::EmptyName: return "empty_name";
    case ErrorCode::DuplicateName: return "duplicate_name";
    case ErrorCode::GroupNotFound: return "group_not_found";
    case ErrorCode::DocNotFound: return "doc_not_found";
    case ErrorCode::DatasetNotFound: return "dataset_not_found";
    case ErrorCode::ProviderNotFound: return "provider_not_found";
    case ErrorCode::EmptyGroup: return "empty_group";
    case ErrorCode::ParseError: return "parse_error";
    case ErrorCode::EmptyDocument: return "empty_document";
    case ErrorCode::InvalidArgument: return "invalid_argument";
    case ErrorCode::EmptyCandidate: return "empty_candidate";
    case ErrorCode::EmptyReference: return "empty_reference";
    case ErrorCode::EmptyCorpus: return "empty_corpus";
    case ErrorCode::EmptyChunk: return "empty_chunk";
    case ErrorCode::UnknownMetric: return "unknown_metric";
    case ErrorCode::NoExamples: return "no_examples";
    case ErrorCode::UnparseableResponse: return "unparseable_response";
    case ErrorCode::AllChunksFailed: return "all_chunks_failed";
    case ErrorCode::DuplicateProvider: return "duplicate_provider";
    case ErrorCode::AuthError: return "auth_error";
    case ErrorCode::RateLimited: return "rate_limited";
    case ErrorCode::Timeout: return "timeout";
    case ErrorCode::ProtocolError: return "protocol_error";
    case ErrorCode::UpstreamError: return "upstream_error";
    case ErrorCode::BothModelsFailed: return "both_models_failed";
    case ErrorCode::TooFewPairs: return "too_few_pairs";
    case ErrorCode::UnknownPlaceholder: return "unknown_placeholder";
    case ErrorCode::MissingExport: return "missing_export";
    case ErrorCode::SpawnError: return "spawn_error";
    case ErrorCode::Conflict: return "conflict";
    case ErrorCode::IllegalTransition: return "illegal_transition";
    case ErrorCode::CorruptRecord: return "corrupt_record";
    case ErrorCode::WorkspaceLocked: return "workspace_locked";
    case ErrorCode::WorkspaceUnavailable: return "workspace_unavailable";
    case ErrorCode::BindError: return "bind_error";
    case ErrorCode::Internal: return "internal";
    }
    return "internal";
}

// HTTP status class for each code; 4xx for caller mistakes, 5xx for upstream and storage faults.
inline int http_status(ErrorCode c) {
    switch (c) {
    case ErrorCode::NotFound:
    case ErrorCode::GroupNotFound:
    case ErrorCode::DocNotFound:
    case ErrorCode::DatasetNotFound:
    case ErrorCode::ProviderNotFound:
        return 404;
    case ErrorCode::DuplicateName:
    case ErrorCode::DuplicateProvider:
    case ErrorCode::Conflict:
    case ErrorCode::IllegalTransition:
    case ErrorCode::WorkspaceLocked:
        return 409;
    case ErrorCode::EmptyName:
    case ErrorCode::EmptyGroup:
    case ErrorCode::ParseError:
    case ErrorCode::EmptyDocument:
    case ErrorCode::InvalidArgument:
    case ErrorCode::EmptyCandidate:
    case ErrorCode::EmptyReference:
    case ErrorCode::EmptyCorpus:
    case ErrorCode::EmptyChunk:
    case ErrorCode::UnknownMetric:
    case ErrorCode::NoExamples:
    case ErrorCode::TooFewPairs:
    case ErrorCode::UnknownPlaceholder:
    case ErrorCode::MissingExport:
        return 422;
    case ErrorCode::AuthError:
    case ErrorCode::RateLimited:
    case ErrorCode::ProtocolError:
    case ErrorCode::UpstreamError:
    case ErrorCode::UnparseableResponse:
    case ErrorCode::AllChunksFailed:
    case ErrorCode::BothModelsFailed:
        return 502;
    case ErrorCode::Timeout:
        return 504;
    case ErrorCode::WorkspaceUnavailable:
        return 503;
    case ErrorCode::SpawnError:
    case ErrorCode::BindError:
    case ErrorCode::CorruptRecord:
    case ErrorCode::Internal:
        return 500;
    }
    return 500;
}

class Error : public std::runtime_error {
  public:
    Error(ErrorCode code, const std::string &message, nlohmann::json details = nullptr)
        : std::runtime_error(message), code_(code), details_(std::move(details)) {}

    [[nodiscard]] ErrorCode code() const noexcept { return code_; }
    [[nodiscard]] const nlohmann::json &details() const noexcept { return details_; }

    [[nodiscard]] nlohmann::json to_json() const {
        nlohmann::json j{{"code", std::string(to_string(code_))}, {"message", what()}};
        if (!details_.is_null()) {
            j["details"] = details_;
        }
        return j;
    }

  private:
    ErrorCode code_;
    nlohmann::json details_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string &message,
                              nlohmann::json details = nullptr) {
    throw Error(code, message, std::move(details));
}

} // namespace qgen
