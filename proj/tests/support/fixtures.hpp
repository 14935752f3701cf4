#pragma once

#include <atomic>
#include <filesystem>
#include <random>
#include <string>
#include <unistd.h>

#include "qgen/corpus.hpp"

namespace testing_support {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
  public:
    TempDir() {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("qgen-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir &) = delete;
    TempDir &operator=(const TempDir &) = delete;
    [[nodiscard]] const std::filesystem::path &path() const { return path_; }
    [[nodiscard]] std::filesystem::path operator/(const std::string &s) const { return path_ / s; }

  private:
    std::filesystem::path path_;
};

inline qgen::Document make_doc(const std::string &doc_id, qgen::SourceKind kind, std::string_view payload) {
    qgen::Document d;
    d.doc_id = doc_id;
    d.group_id = "g";
    d.title = doc_id;
    d.source_kind = kind;
    d.elements = qgen::assign_elements(doc_id, qgen::parse_payload(kind, payload));
    return d;
}

inline qgen::Document markdown_doc(const std::string &doc_id, std::string_view md) {
    return make_doc(doc_id, qgen::SourceKind::Markdown, md);
}

/// "w0 w1 ... w{n-1}" with the given prefix.
inline std::string numbered(std::size_t n, const std::string &prefix = "w", std::size_t from = 0) {
    std::string out;
    for (std::size_t i = 0; i < n; ++i) {
        if (i) out += ' ';
        out += prefix + std::to_string(from + i);
    }
    return out;
}

} // namespace testing_support
