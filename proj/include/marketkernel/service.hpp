// Persistence and the HTTP/JSON surface around one Kernel.
//
// Data directory layout:
//   LOCK             advisory lock held while a Service owns the directory
//   events.jsonl     the event log, one JSON record per line (source of truth)
//   snapshots/       snapshot-<seq>.json every `snapshot_every` events
//   tokens.json      bearer token -> participant (never written to the log)

#pragma once

#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>

#include "marketkernel/kernel.hpp"

namespace httplib {
class Server;
}

namespace mk {

struct ServiceConfig {
    std::optional<std::filesystem::path> data_dir;  // nullopt: in-memory only
    KernelConfig kernel;
    std::uint64_t snapshot_every = 100;
};

struct Snapshot {
    std::uint64_t as_of_seq = 0;
    Json state;
    std::string digest;
};

Json to_json(const Snapshot& s);

class Service {
public:
    explicit Service(ServiceConfig config);
    ~Service();
    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    /// Single-writer entry point: applies the command and appends the event
    /// to disk before returning. Rejected commands write nothing.
    Kernel::Applied apply(const Json& command, const ParticipantId& actor);

    struct Registration {
        Kernel::Applied applied;
        std::string token;
    };
    Registration register_participant(const Json& body);

    std::optional<ParticipantId> authenticate(std::string_view bearer_token) const;

    /// Runs `f(const Kernel&)` under a shared lock.
    template <class F>
    auto read(F&& f) const {
        std::shared_lock lock(mutex_);
        return f(kernel_);
    }

    Snapshot snapshot() const;

private:
    void append_to_log(const Event& ev);
    void write_snapshot_locked();
    void save_tokens_locked() const;

    ServiceConfig config_;
    mutable std::shared_mutex mutex_;
    Kernel kernel_;
    std::map<std::string, ParticipantId> tokens_;
    int lock_fd_ = -1;
};

/// Verifies a snapshot file against a replay of `log` up to its as_of_seq.
bool snapshot_matches(const Snapshot& snap, std::span<const Event> log, const KernelConfig& config);

class HttpServer {
public:
    explicit HttpServer(Service& service);
    ~HttpServer();

    /// Binds host:port (port 0 picks a free port). Throws BindFailure.
    int bind(const std::string& host, int port);
    void listen();  // blocks until stop()
    void stop();

private:
    void install_routes();

    Service& service_;
    std::unique_ptr<httplib::Server> server_;
};

}  // namespace mk
