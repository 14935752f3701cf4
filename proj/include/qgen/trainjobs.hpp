#pragma once

// External fine-tuning jobs: command-template rendering, process supervision and
// the Pending -> Running -> {Completed, Failed, Canceled} lifecycle.

#include <fcntl.h>
#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <condition_variable>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "qgen/workspace.hpp"

extern char **environ;

namespace qgen {

struct TrainingParams {
    std::string base_model;
    double learning_rate = 1e-5;
    int iterations = 1000;
    int lora_layers = 16;
    int batch_size = 4;
    std::string adapter_output_dir;

    void validate() const {
        if (base_model.empty()) fail(ErrorCode::InvalidArgument, "base_model is required");
        if (!(learning_rate > 0.0)) fail(ErrorCode::InvalidArgument, "learning_rate must be > 0");
        if (iterations <= 0) fail(ErrorCode::InvalidArgument, "iterations must be > 0");
        if (lora_layers <= 0) fail(ErrorCode::InvalidArgument, "lora_layers must be > 0");
        if (batch_size <= 0) fail(ErrorCode::InvalidArgument, "batch_size must be > 0");
        if (adapter_output_dir.empty()) fail(ErrorCode::InvalidArgument, "adapter_output_dir is required");
    }
    friend bool operator==(const TrainingParams &, const TrainingParams &) = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TrainingParams, base_model, learning_rate, iterations, lora_layers,
                                                batch_size, adapter_output_dir)

enum class JobState { Pending, Running, Completed, Failed, Canceled };

NLOHMANN_JSON_SERIALIZE_ENUM(JobState, {{JobState::Pending, "pending"},
                                        {JobState::Running, "running"},
                                        {JobState::Completed, "completed"},
                                        {JobState::Failed, "failed"},
                                        {JobState::Canceled, "canceled"}})

inline std::string_view to_string(JobState s) {
    switch (s) {
    case JobState::Pending: return "pending";
    case JobState::Running: return "running";
    case JobState::Completed: return "completed";
    case JobState::Failed: return "failed";
    case JobState::Canceled: return "canceled";
    }
    return "failed";
}

enum class JobEvent { Start, Exit, Cancel };

/// The only legal transitions: Pending -Start-> Running; Running -Exit(0)-> Completed;
/// Running -Exit(n != 0)-> Failed; Running -Cancel-> Canceled.
inline std::optional<JobState> next_state(JobState from, JobEvent ev, int exit_code = 0) {
    switch (from) {
    case JobState::Pending:
        if (ev == JobEvent::Start) return JobState::Running;
        return std::nullopt;
    case JobState::Running:
        if (ev == JobEvent::Exit) return exit_code == 0 ? JobState::Completed : JobState::Failed;
        if (ev == JobEvent::Cancel) return JobState::Canceled;
        return std::nullopt;
    default:
        return std::nullopt;
    }
}

struct TrainingJob {
    std::string job_id;
    std::string dataset_export_dir;
    TrainingParams params;
    std::string command_template;
    JobState state = JobState::Pending;
    std::optional<int> exit_code;
    std::vector<std::string> argv;
    std::string log_path;
    int pid = 0;
    std::string created_at;
    std::string started_at;
    std::string ended_at;

    /// Applies a lifecycle event or throws IllegalTransition.
    void apply(JobEvent ev, int code = 0) {
        const auto next = next_state(state, ev, code);
        if (!next) {
            fail(ErrorCode::IllegalTransition, "job " + job_id + " cannot leave state " + std::string(to_string(state)));
        }
        state = *next;
        if (ev == JobEvent::Exit) {
            exit_code = code;
        }
    }
    friend bool operator==(const TrainingJob &, const TrainingJob &) = default;
};

inline void to_json(nlohmann::json &j, const TrainingJob &t) {
    j = {{"job_id", t.job_id},
         {"dataset_export_dir", t.dataset_export_dir},
         {"params", t.params},
         {"command_template", t.command_template},
         {"state", t.state},
         {"exit_code", t.exit_code ? nlohmann::json(*t.exit_code) : nlohmann::json(nullptr)},
         {"argv", t.argv},
         {"log_path", t.log_path},
         {"pid", t.pid},
         {"created_at", t.created_at},
         {"started_at", t.started_at},
         {"ended_at", t.ended_at}};
}

inline void from_json(const nlohmann::json &j, TrainingJob &t) {
    j.at("job_id").get_to(t.job_id);
    j.at("dataset_export_dir").get_to(t.dataset_export_dir);
    j.at("params").get_to(t.params);
    j.at("command_template").get_to(t.command_template);
    j.at("state").get_to(t.state);
    t.exit_code = j.at("exit_code").is_null() ? std::nullopt : std::optional<int>(j.at("exit_code").get<int>());
    j.at("argv").get_to(t.argv);
    j.at("log_path").get_to(t.log_path);
    j.at("pid").get_to(t.pid);
    j.at("created_at").get_to(t.created_at);
    j.at("started_at").get_to(t.started_at);
    j.at("ended_at").get_to(t.ended_at);
}

template <>
struct RecordTraits<TrainingJob> {
    static constexpr std::string_view kind = "jobs";
    static std::string id(const TrainingJob &r) { return r.job_id; }
};

/// Whitespace tokenization with single/double quote grouping; no shell expansion.
inline std::vector<std::string> tokenize_command(std::string_view tpl) {
    std::vector<std::string> out;
    std::string cur;
    bool have = false;
    char quote = 0;
    for (char c : tpl) {
        if (quote != 0) {
            if (c == quote) {
                quote = 0;
            } else {
                cur.push_back(c);
            }
            continue;
        }
        if (c == '\'' || c == '"') {
            quote = c;
            have = true;
        } else if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
            if (have) {
                out.push_back(std::move(cur));
                cur.clear();
                have = false;
            }
        } else {
            cur.push_back(c);
            have = true;
        }
    }
    if (quote != 0) {
        fail(ErrorCode::InvalidArgument, "unterminated quote in command template");
    }
    if (have) {
        out.push_back(std::move(cur));
    }
    return out;
}

inline std::map<std::string, std::string> placeholder_values(const std::string &export_dir, const TrainingParams &p) {
    return {{"data", export_dir},
            {"model", p.base_model},
            {"lr", plain_decimal(p.learning_rate)},
            {"iters", std::to_string(p.iterations)},
            {"lora_layers", std::to_string(p.lora_layers)},
            {"batch", std::to_string(p.batch_size)},
            {"out", p.adapter_output_dir}};
}

/// Substitutes {data} {model} {lr} {iters} {lora_layers} {batch} {out} inside each argv token.
inline std::vector<std::string> render_command(const TrainingJob &job) {
    const auto values = placeholder_values(job.dataset_export_dir, job.params);
    auto argv = tokenize_command(job.command_template);
    if (argv.empty()) {
        fail(ErrorCode::InvalidArgument, "command template is empty");
    }
    for (auto &tok : argv) {
        std::string rendered;
        std::size_t pos = 0;
        while (pos < tok.size()) {
            const auto open = tok.find('{', pos);
            if (open == std::string::npos) {
                rendered += tok.substr(pos);
                break;
            }
            const auto close = tok.find('}', open);
            if (close == std::string::npos) {
                rendered += tok.substr(pos);
                break;
            }
            const auto name = tok.substr(open + 1, close - open - 1);
            const auto it = values.find(name);
            if (it == values.end()) {
                fail(ErrorCode::UnknownPlaceholder, "unknown placeholder {" + name + "}", {{"placeholder", name}});
            }
            rendered += tok.substr(pos, open - pos);
            rendered += it->second;
            pos = close + 1;
        }
        tok = std::move(rendered);
    }
    if (!std::filesystem::is_directory(job.dataset_export_dir)) {
        fail(ErrorCode::MissingExport, "dataset export '" + job.dataset_export_dir + "' does not exist");
    }
    return argv;
}

namespace detail {

inline bool executable_exists(const std::string &prog) {
    if (prog.find('/') != std::string::npos) {
        return ::access(prog.c_str(), X_OK) == 0 && !std::filesystem::is_directory(prog);
    }
    const char *path = std::getenv("PATH");
    std::string_view dirs = path != nullptr ? path : "/usr/bin:/bin";
    while (!dirs.empty()) {
        const auto colon = dirs.find(':');
        const auto dir = dirs.substr(0, colon);
        const auto candidate = std::filesystem::path(dir.empty() ? "." : std::string(dir)) / prog;
        if (::access(candidate.c_str(), X_OK) == 0 && !std::filesystem::is_directory(candidate)) {
            return true;
        }
        if (colon == std::string_view::npos) break;
        dirs.remove_prefix(colon + 1);
    }
    return false;
}

inline void append_log(const std::string &path, const std::string &line) {
    const int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
    if (fd < 0) return;
    const auto text = "[qgen " + utc_now_iso() + "] " + line + "\n";
    [[maybe_unused]] auto n = ::write(fd, text.data(), text.size());
    ::close(fd);
}

inline bool process_alive(int pid) { return pid > 0 && (::kill(pid, 0) == 0 || errno == EPERM); }

} // namespace detail

struct SupervisorOptions {
    std::size_t max_concurrent_jobs = 1;
    std::chrono::milliseconds cancel_grace{5000};
};

/// Spawns and tracks training processes. Running jobs are canceled on destruction.
class JobSupervisor {
  public:
    explicit JobSupervisor(Workspace &ws, SupervisorOptions opts = {}) : ws_(ws), opts_(opts) { recover(); }

    ~JobSupervisor() {
        std::vector<std::string> running;
        {
            std::lock_guard lk(mu_);
            for (const auto &[id, live] : live_) {
                if (!live->finished && !live->recovered) running.push_back(id);
            }
        }
        for (const auto &id : running) {
            try {
                cancel(id);
            } catch (const Error &) {
            }
        }
        std::vector<std::thread> threads;
        {
            std::lock_guard lk(mu_);
            stopping_ = true;
            for (auto &[id, live] : live_) {
                if (live->waiter.joinable()) threads.push_back(std::move(live->waiter));
            }
        }
        cv_.notify_all();
        for (auto &t : threads) t.join();
    }

    JobSupervisor(const JobSupervisor &) = delete;
    JobSupervisor &operator=(const JobSupervisor &) = delete;

    /// Renders, spawns and records a job; returns it in state Running.
    TrainingJob launch(const std::string &dataset_export_dir, const TrainingParams &params,
                       const std::string &command_template) {
        params.validate();
        TrainingJob job;
        job.dataset_export_dir = dataset_export_dir;
        job.params = params;
        job.command_template = command_template;
        job.argv = render_command(job);
        if (!detail::executable_exists(job.argv.front())) {
            fail(ErrorCode::SpawnError, "trainer executable '" + job.argv.front() + "' not found");
        }

        std::unique_lock lk(mu_);
        const auto out_dir = std::filesystem::weakly_canonical(params.adapter_output_dir);
        std::size_t running = 0;
        for (const auto &[id, live] : live_) {
            if (live->finished) continue;
            ++running;
            if (std::filesystem::weakly_canonical(live->job.params.adapter_output_dir) == out_dir) {
                fail(ErrorCode::Conflict, "adapter_output_dir is in use by job " + id, {{"job_id", id}});
            }
        }
        if (running >= opts_.max_concurrent_jobs) {
            fail(ErrorCode::Conflict, "all training job slots are busy");
        }

        job.job_id = short_id("job:" + job.command_template, ws_.next_counter());
        const auto logs = ws_.root() / "logs";
        std::filesystem::create_directories(logs);
        job.log_path = (logs / (job.job_id + ".log")).string();
        job.created_at = utc_now_iso();

        const int pid = spawn(job);
        job.apply(JobEvent::Start);
        job.pid = pid;
        job.started_at = utc_now_iso();
        ws_.save(job);

        auto live = std::make_shared<Live>();
        live->job = job;
        live_[job.job_id] = live;
        live->waiter = std::thread([this, live] { wait_for_exit(live); });
        return job;
    }

    [[nodiscard]] TrainingJob status(const std::string &job_id) const {
        {
            std::lock_guard lk(mu_);
            if (auto it = live_.find(job_id); it != live_.end()) {
                return it->second->job;
            }
        }
        if (!ws_.exists<TrainingJob>(job_id)) {
            fail(ErrorCode::NotFound, "job '" + job_id + "' not found");
        }
        return ws_.load<TrainingJob>(job_id);
    }

    [[nodiscard]] std::vector<TrainingJob> list() const {
        std::vector<TrainingJob> out;
        for (const auto &id : ws_.list_ids<TrainingJob>()) {
            out.push_back(status(id));
        }
        return out;
    }

    /// Blocks until the job leaves Running or the timeout expires.
    TrainingJob wait(const std::string &job_id, std::chrono::milliseconds timeout = std::chrono::hours(24)) {
        std::unique_lock lk(mu_);
        const auto it = live_.find(job_id);
        if (it == live_.end()) {
            lk.unlock();
            return status(job_id);
        }
        auto live = it->second;
        cv_.wait_for(lk, timeout, [&] { return live->finished; });
        return live->job;
    }

    /// SIGTERM to the job's process group, SIGKILL after the grace period; records Canceled.
    TrainingJob cancel(const std::string &job_id) {
        std::shared_ptr<Live> live;
        {
            std::lock_guard lk(mu_);
            const auto it = live_.find(job_id);
            if (it == live_.end() || it->second->finished) {
                const auto job = it == live_.end() ? status(job_id) : it->second->job;
                fail(ErrorCode::IllegalTransition,
                     "job " + job_id + " is " + std::string(to_string(job.state)) + ", not running");
            }
            live = it->second;
            live->cancel_requested = true;
            ::kill(-live->job.pid, SIGTERM);
        }
        std::unique_lock lk(mu_);
        if (!cv_.wait_for(lk, opts_.cancel_grace, [&] { return live->finished; })) {
            ::kill(-live->job.pid, SIGKILL);
            cv_.wait(lk, [&] { return live->finished; });
        }
        return live->job;
    }

  private:
    struct Live {
        TrainingJob job;
        bool cancel_requested = false;
        bool finished = false;
        bool recovered = false; // spawned by an earlier supervisor; not our child
        std::thread waiter;
    };

    Workspace &ws_;
    SupervisorOptions opts_;
    mutable std::mutex mu_;
    std::condition_variable cv_;
    std::map<std::string, std::shared_ptr<Live>> live_;
    bool stopping_ = false;

    static int spawn(const TrainingJob &job) {
        posix_spawn_file_actions_t actions;
        posix_spawn_file_actions_init(&actions);
        posix_spawn_file_actions_addopen(&actions, STDIN_FILENO, "/dev/null", O_RDONLY, 0);
        posix_spawn_file_actions_addopen(&actions, STDOUT_FILENO, job.log_path.c_str(),
                                         O_WRONLY | O_CREAT | O_APPEND, 0644);
        posix_spawn_file_actions_adddup2(&actions, STDOUT_FILENO, STDERR_FILENO);
        posix_spawnattr_t attr;
        posix_spawnattr_init(&attr);
        posix_spawnattr_setflags(&attr, POSIX_SPAWN_SETPGROUP);
        posix_spawnattr_setpgroup(&attr, 0);

        std::vector<char *> args;
        for (const auto &a : job.argv) {
            args.push_back(const_cast<char *>(a.c_str()));
        }
        args.push_back(nullptr);

        std::string cmdline;
        for (const auto &a : job.argv) {
            cmdline += (cmdline.empty() ? "" : " ") + a;
        }
        detail::append_log(job.log_path, "launch: " + cmdline);

        pid_t pid = 0;
        const int rc = posix_spawnp(&pid, args[0], &actions, &attr, args.data(), environ);
        posix_spawn_file_actions_destroy(&actions);
        posix_spawnattr_destroy(&attr);
        if (rc != 0) {
            detail::append_log(job.log_path, std::string("spawn failed: ") + std::strerror(rc));
            fail(ErrorCode::SpawnError, "cannot start '" + job.argv.front() + "': " + std::strerror(rc));
        }
        return pid;
    }

    void wait_for_exit(const std::shared_ptr<Live> &live) {
        int status = 0;
        while (::waitpid(live->job.pid, &status, 0) < 0 && errno == EINTR) {
        }
        const int code = WIFEXITED(status) ? WEXITSTATUS(status) : -(WIFSIGNALED(status) ? WTERMSIG(status) : 1);
        std::lock_guard lk(mu_);
        auto &job = live->job;
        if (live->cancel_requested) {
            job.apply(JobEvent::Cancel);
            detail::append_log(job.log_path, "canceled");
        } else {
            job.apply(JobEvent::Exit, code);
            detail::append_log(job.log_path, "exited with code " + std::to_string(code));
        }
        job.ended_at = utc_now_iso();
        try {
            ws_.save(job);
        } catch (const Error &e) {
            detail::append_log(job.log_path, std::string("cannot persist job state: ") + e.what());
        }
        live->finished = true;
        cv_.notify_all();
    }

    // Jobs left Running by a previous process cannot be waited on: dead ones become
    // Failed(-1) immediately, live ones when their process disappears.
    void recover() {
        for (const auto &id : ws_.list_ids<TrainingJob>()) {
            TrainingJob job;
            try {
                job = ws_.load<TrainingJob>(id);
            } catch (const Error &) {
                continue;
            }
            if (job.state != JobState::Running) continue;
            auto live = std::make_shared<Live>();
            live->job = job;
            live->recovered = true;
            if (!detail::process_alive(job.pid)) {
                finish_recovered(live);
                live_[id] = live;
                continue;
            }
            live_[id] = live;
            live->waiter = std::thread([this, live] {
                std::unique_lock lk(mu_);
                while (!stopping_ && !live->finished) {
                    if (!detail::process_alive(live->job.pid)) {
                        finish_recovered(live);
                        cv_.notify_all();
                        break;
                    }
                    cv_.wait_for(lk, std::chrono::milliseconds(500));
                }
            });
        }
    }

    void finish_recovered(const std::shared_ptr<Live> &live) {
        auto &job = live->job;
        if (live->cancel_requested) {
            job.apply(JobEvent::Cancel);
            detail::append_log(job.log_path, "canceled");
        } else {
            job.apply(JobEvent::Exit, -1);
            detail::append_log(job.log_path,
                               "recovered: process " + std::to_string(job.pid) + " is gone, marking failed");
        }
        job.ended_at = utc_now_iso();
        try {
            ws_.save(job);
        } catch (const Error &) {
        }
        live->finished = true;
    }
};

} // namespace qgen
