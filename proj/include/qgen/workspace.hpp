#pragma once

// File-backed record store. Layout under the workspace root:
//   {kind}/{id}.json     record, pretty-printed JSON with a schema_version field
//   {kind}/{id}.sha256   hex SHA-256 of the .json bytes
//   {kind}/index.json    {"ids": [...]} in insertion order
//   counters.json        monotonically increasing id counter
//   .writer.lock         flock()-ed by whoever is mutating
// Readers never lock; every mutation runs under the writer lock.

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "qgen/util.hpp"

namespace qgen {

inline constexpr int kSchemaVersion = 1;

/// Specialize per record type: `static constexpr std::string_view kind` and `static std::string id(const R&)`.
template <class R>
struct RecordTraits;

struct WorkspaceOptions {
    std::chrono::milliseconds lock_timeout{2000};
};

class Workspace {
  public:
    explicit Workspace(std::filesystem::path root, WorkspaceOptions opts = {})
        : root_(std::move(root)), opts_(opts) {
        std::error_code ec;
        std::filesystem::create_directories(root_, ec);
        if (ec || !std::filesystem::is_directory(root_)) {
            fail(ErrorCode::WorkspaceUnavailable, "cannot create workspace at " + root_.string());
        }
    }

    Workspace(const Workspace &) = delete;
    Workspace &operator=(const Workspace &) = delete;

    ~Workspace() {
        if (lock_fd_ >= 0) {
            ::close(lock_fd_);
        }
    }

    [[nodiscard]] const std::filesystem::path &root() const { return root_; }

    [[nodiscard]] bool healthy() const {
        return ::access(root_.c_str(), R_OK | W_OK | X_OK) == 0 && std::filesystem::is_directory(root_);
    }

    /// Runs `fn` while holding the writer lock. Re-entrant on the owning thread.
    template <class F>
    decltype(auto) mutate(F &&fn) {
        WriterGuard guard(*this);
        return std::forward<F>(fn)();
    }

    template <class R>
    void save(const R &record) {
        mutate([&] {
            const auto dir = kind_dir<R>();
            std::filesystem::create_directories(dir);
            const auto id = RecordTraits<R>::id(record);
            nlohmann::json j = record;
            j["schema_version"] = kSchemaVersion;
            const auto body = j.dump(2) + "\n";
            write_file_atomic(dir / (id + ".json"), body);
            write_file_atomic(dir / (id + ".sha256"), sha256_hex(body) + "\n");
            auto ids = list_ids<R>();
            if (std::find(ids.begin(), ids.end(), id) == ids.end()) {
                ids.push_back(id);
                write_index<R>(ids);
            }
        });
    }

    template <class R>
    [[nodiscard]] bool exists(const std::string &id) const {
        return valid_id(id) && std::filesystem::exists(kind_dir<R>() / (id + ".json"));
    }

    template <class R>
    [[nodiscard]] R load(const std::string &id) const {
        const auto path = kind_dir<R>() / (id + ".json");
        if (!valid_id(id) || !std::filesystem::exists(path)) {
            fail(ErrorCode::NotFound, std::string(RecordTraits<R>::kind) + " '" + id + "' not found");
        }
        const auto body = read_file(path);
        const auto sum_path = kind_dir<R>() / (id + ".sha256");
        std::string expected;
        try {
            expected = trim(read_file(sum_path));
        } catch (const Error &) {
            fail(ErrorCode::CorruptRecord, "missing checksum for " + path.string(), {{"path", path.string()}});
        }
        if (expected != sha256_hex(body)) {
            fail(ErrorCode::CorruptRecord, "checksum mismatch for " + path.string(), {{"path", path.string()}});
        }
        try {
            const auto j = nlohmann::json::parse(body);
            if (j.value("schema_version", 0) != kSchemaVersion) {
                fail(ErrorCode::CorruptRecord, "unsupported schema_version in " + path.string(),
                     {{"path", path.string()}});
            }
            return j.template get<R>();
        } catch (const nlohmann::json::exception &e) {
            fail(ErrorCode::CorruptRecord, "cannot decode " + path.string() + ": " + e.what(),
                 {{"path", path.string()}});
        }
    }

    template <class R>
    [[nodiscard]] std::vector<std::string> list_ids() const {
        const auto index = kind_dir<R>() / "index.json";
        if (!std::filesystem::exists(index)) {
            return {};
        }
        try {
            return nlohmann::json::parse(read_file(index)).at("ids").template get<std::vector<std::string>>();
        } catch (const nlohmann::json::exception &e) {
            fail(ErrorCode::CorruptRecord, "cannot decode " + index.string() + ": " + e.what(),
                 {{"path", index.string()}});
        }
    }

    template <class R>
    [[nodiscard]] std::vector<R> list() const {
        std::vector<R> out;
        for (const auto &id : list_ids<R>()) {
            out.push_back(load<R>(id));
        }
        return out;
    }

    /// Second removal of the same id reports NotFound.
    template <class R>
    void remove(const std::string &id) {
        mutate([&] {
            const auto dir = kind_dir<R>();
            if (!exists<R>(id)) {
                fail(ErrorCode::NotFound, std::string(RecordTraits<R>::kind) + " '" + id + "' not found");
            }
            std::filesystem::remove(dir / (id + ".json"));
            std::filesystem::remove(dir / (id + ".sha256"));
            auto ids = list_ids<R>();
            ids.erase(std::remove(ids.begin(), ids.end(), id), ids.end());
            write_index<R>(ids);
        });
    }

    /// Next value of the persisted creation counter.
    std::uint64_t next_counter() {
        return mutate([&] {
            const auto path = root_ / "counters.json";
            std::uint64_t next = 0;
            if (std::filesystem::exists(path)) {
                next = nlohmann::json::parse(read_file(path)).at("next").get<std::uint64_t>();
            }
            write_file_atomic(path, nlohmann::json{{"next", next + 1}}.dump() + "\n");
            return next;
        });
    }

    template <class R>
    [[nodiscard]] std::filesystem::path kind_dir() const {
        return root_ / std::string(RecordTraits<R>::kind);
    }

  private:
    std::filesystem::path root_;
    WorkspaceOptions opts_;
    std::recursive_timed_mutex mutex_;
    int depth_ = 0;
    int lock_fd_ = -1;

    static bool valid_id(const std::string &id) {
        return !id.empty() && id.find('/') == std::string::npos && id.find('\\') == std::string::npos &&
               id != "." && id != ".." && id != "index";
    }

    template <class R>
    void write_index(const std::vector<std::string> &ids) {
        write_file_atomic(kind_dir<R>() / "index.json", nlohmann::json{{"ids", ids}}.dump(2) + "\n");
    }

    class WriterGuard {
      public:
        explicit WriterGuard(Workspace &ws) : ws_(ws) {
            const auto deadline = std::chrono::steady_clock::now() + ws_.opts_.lock_timeout;
            if (!ws_.mutex_.try_lock_until(deadline)) {
                fail(ErrorCode::WorkspaceLocked, "workspace writer lock is held");
            }
            if (ws_.depth_++ > 0) {
                return;
            }
            try {
                acquire_file_lock(deadline);
            } catch (...) {
                --ws_.depth_;
                ws_.mutex_.unlock();
                throw;
            }
        }

        ~WriterGuard() {
            if (--ws_.depth_ == 0 && ws_.lock_fd_ >= 0) {
                ::flock(ws_.lock_fd_, LOCK_UN);
            }
            ws_.mutex_.unlock();
        }

        WriterGuard(const WriterGuard &) = delete;
        WriterGuard &operator=(const WriterGuard &) = delete;

      private:
        Workspace &ws_;

        void acquire_file_lock(std::chrono::steady_clock::time_point deadline) {
            if (ws_.lock_fd_ < 0) {
                const auto path = ws_.root_ / ".writer.lock";
                ws_.lock_fd_ = ::open(path.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
                if (ws_.lock_fd_ < 0) {
                    fail(ErrorCode::WorkspaceUnavailable, "cannot open " + path.string());
                }
            }
            while (::flock(ws_.lock_fd_, LOCK_EX | LOCK_NB) != 0) {
                if (std::chrono::steady_clock::now() >= deadline) {
                    fail(ErrorCode::WorkspaceLocked, "workspace is locked by another writer");
                }
                std::this_thread::sleep_for(std::chrono::milliseconds(10));
            }
        }
    };
};

} // namespace qgen
