#include "marketkernel/service.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <fstream>
#include <random>
#include <sstream>

#include <httplib.h>

namespace mk {

namespace fs = std::filesystem;

namespace {

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw KernelError(ErrorCode::IoFailure, "cannot read " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file_atomic(const fs::path& p, const std::string& text) {
    const fs::path tmp = p.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw KernelError(ErrorCode::IoFailure, "cannot write " + tmp.string());
        out << text;
        if (!out.flush()) throw KernelError(ErrorCode::IoFailure, "short write " + tmp.string());
    }
    fs::rename(tmp, p);
}

std::string mint_token() {
    std::random_device rd;
    std::uniform_int_distribution<int> nibble(0, 15);
    std::string t;
    for (int i = 0; i < 40; ++i) t += "0123456789abcdef"[nibble(rd)];
    return t;
}

std::optional<Snapshot> latest_snapshot(const fs::path& dir, std::uint64_t max_seq) {
    if (!fs::exists(dir)) return std::nullopt;
    std::optional<Snapshot> best;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.path().extension() != ".json") continue;
        Json j;
        try {
            j = Json::parse(read_file(entry.path()));
        } catch (const std::exception& e) {
            throw KernelError(ErrorCode::CorruptLog, "unreadable snapshot " + entry.path().string());
        }
        Snapshot s{j.at("as_of_seq").get<std::uint64_t>(), j.at("state"), j.at("digest").get<std::string>()};
        if (s.as_of_seq > max_seq) continue;
        if (!best || s.as_of_seq > best->as_of_seq) best = std::move(s);
    }
    return best;
}

}  // namespace

Json to_json(const Snapshot& s) {
    return Json{{"as_of_seq", s.as_of_seq}, {"digest", s.digest}, {"state", s.state}};
}

bool snapshot_matches(const Snapshot& snap, std::span<const Event> log, const KernelConfig& config) {
    if (snap.as_of_seq > log.size()) return false;
    Kernel k = Kernel::replay(log.first(snap.as_of_seq), config);
    return k.state_digest() == snap.digest && sha256_hex(snap.state.dump()) == snap.digest;
}

Service::Service(ServiceConfig config) : config_(std::move(config)), kernel_(config_.kernel) {
    if (!config_.data_dir) return;
    const fs::path dir = *config_.data_dir;
    std::error_code ec;
    fs::create_directories(dir / "snapshots", ec);
    if (ec) throw KernelError(ErrorCode::IoFailure, "cannot create " + dir.string());

    lock_fd_ = ::open((dir / "LOCK").c_str(), O_RDWR | O_CREAT, 0644);
    if (lock_fd_ < 0) throw KernelError(ErrorCode::IoFailure, "cannot open lock file");
    if (::flock(lock_fd_, LOCK_EX | LOCK_NB) != 0) {
        ::close(lock_fd_);
        lock_fd_ = -1;
        throw KernelError(ErrorCode::DataDirLocked, dir.string());
    }

    try {
        const fs::path log_path = dir / "events.jsonl";
        if (fs::exists(log_path)) {
            const auto log = parse_log(read_file(log_path));
            kernel_ = Kernel::replay(log, config_.kernel);
            if (auto snap = latest_snapshot(dir / "snapshots", log.size());
                snap && !snapshot_matches(*snap, log, config_.kernel))
                throw KernelError(ErrorCode::CorruptLog,
                                  "snapshot at seq " + std::to_string(snap->as_of_seq) + " does not match replay");
        }
        if (fs::exists(dir / "tokens.json")) {
            const Json saved = Json::parse(read_file(dir / "tokens.json"));
            for (const auto& [token, who] : saved.items()) tokens_[token] = ParticipantId{who.get<std::string>()};
        }
    } catch (...) {
        ::flock(lock_fd_, LOCK_UN);
        ::close(lock_fd_);
        lock_fd_ = -1;
        throw;
    }
}

Service::~Service() {
    if (lock_fd_ >= 0) {
        ::flock(lock_fd_, LOCK_UN);
        ::close(lock_fd_);
    }
}

Kernel::Applied Service::apply(const Json& command, const ParticipantId& actor) {
    std::unique_lock lock(mutex_);
    auto applied = kernel_.apply_json(command, actor);
    append_to_log(applied.event);
    return applied;
}

Service::Registration Service::register_participant(const Json& body) {
    if (!body.is_object()) throw KernelError(ErrorCode::MalformedCommand, "body must be an object");
    Json command = body;
    command["type"] = "register_participant";
    const auto id = command.contains("id") && command["id"].is_string() ? command["id"].get<std::string>() : "";
    std::unique_lock lock(mutex_);
    auto applied = kernel_.apply_json(command, ParticipantId{id});
    append_to_log(applied.event);
    std::string token = mint_token();
    tokens_[token] = ParticipantId{id};
    save_tokens_locked();
    return Registration{std::move(applied), std::move(token)};
}

std::optional<ParticipantId> Service::authenticate(std::string_view bearer_token) const {
    std::shared_lock lock(mutex_);
    auto it = tokens_.find(std::string(bearer_token));
    if (it == tokens_.end()) return std::nullopt;
    return it->second;
}

Snapshot Service::snapshot() const {
    std::shared_lock lock(mutex_);
    Json state = kernel_.state_json();
    return Snapshot{kernel_.events().size(), state, sha256_hex(state.dump())};
}

void Service::append_to_log(const Event& ev) {
    if (!config_.data_dir) return;
    std::ofstream out(*config_.data_dir / "events.jsonl", std::ios::binary | std::ios::app);
    out << event_line(ev) << '\n';
    out.flush();
    // FIXME: the in-memory state is already committed here; a failed append
    // leaves memory ahead of disk until restart.
    if (!out) throw KernelError(ErrorCode::IoFailure, "event log append failed");
    if (config_.snapshot_every > 0 && ev.seq % config_.snapshot_every == 0) write_snapshot_locked();
}

void Service::write_snapshot_locked() {
    Json state = kernel_.state_json();
    Snapshot s{kernel_.events().size(), state, sha256_hex(state.dump())};
    write_file_atomic(*config_.data_dir / "snapshots" / ("snapshot-" + std::to_string(s.as_of_seq) + ".json"),
                      to_json(s).dump());
}

void Service::save_tokens_locked() const {
    if (!config_.data_dir) return;
    Json j = Json::object();
    for (const auto& [token, who] : tokens_) j[token] = who.value;
    write_file_atomic(*config_.data_dir / "tokens.json", j.dump());
}

// ---------------------------------------------------------------------------
// HTTP

namespace {

int http_status(ErrorCode code) {
    switch (code) {
        case ErrorCode::MalformedCommand:
        case ErrorCode::InvalidParticipantId: return 400;
        case ErrorCode::Unauthorized: return 401;
        case ErrorCode::NotClaimant:
        case ErrorCode::NotRequester:
        case ErrorCode::NotAuthorizedReviewer:
        case ErrorCode::NotParticipant:
        case ErrorCode::SelfClaim: return 403;
        case ErrorCode::UnknownTask:
        case ErrorCode::UnknownParticipant:
        case ErrorCode::UnknownAssetId:
        case ErrorCode::UnknownSkill:
        case ErrorCode::NotFound: return 404;
        default: return 409;
    }
}

void send_json(httplib::Response& res, const Json& body, int status = 200) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, const KernelError& e) {
    std::string detail = e.what();
    const auto code = std::string(to_string(e.code()));
    if (detail.rfind(code + ": ", 0) == 0) detail = detail.substr(code.size() + 2);
    else if (detail == code) detail.clear();
    send_json(res, Json{{"error", code}, {"detail", detail}}, http_status(e.code()));
}

Json parse_body(const httplib::Request& req) {
    if (req.body.empty()) return Json::object();
    try {
        Json j = Json::parse(req.body);
        if (!j.is_object()) throw KernelError(ErrorCode::MalformedCommand, "body must be a JSON object");
        return j;
    } catch (const Json::parse_error& e) {
        throw KernelError(ErrorCode::MalformedCommand, e.what());
    }
}

std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

template <class Handler>
auto guarded(Handler h) {
    return [h](const httplib::Request& req, httplib::Response& res) {
        try {
            h(req, res);
        } catch (const KernelError& e) {
            send_error(res, e);
        } catch (const std::invalid_argument& e) {
            send_error(res, KernelError(ErrorCode::MalformedCommand, e.what()));
        } catch (const std::exception& e) {
            send_json(res, Json{{"error", "Internal"}, {"detail", e.what()}}, 500);
        }
    };
}

}  // namespace

HttpServer::HttpServer(Service& service) : service_(service), server_(std::make_unique<httplib::Server>()) {
    // SO_REUSEADDR only: the library default adds SO_REUSEPORT, which would
    // let a second daemon share the port instead of failing to bind
    server_->set_socket_options([](socket_t sock) {
        int yes = 1;
        ::setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
    });
    install_routes();
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
    if (port == 0) {
        const int p = server_->bind_to_any_port(host);
        if (p < 0) throw KernelError(ErrorCode::BindFailure, host);
        return p;
    }
    if (!server_->bind_to_port(host, port))
        throw KernelError(ErrorCode::BindFailure, host + ":" + std::to_string(port));
    return port;
}

void HttpServer::listen() { server_->listen_after_bind(); }

void HttpServer::stop() {
    if (server_) server_->stop();
}

void HttpServer::install_routes() {
    auto& srv = *server_;
    Service& svc = service_;

    auto actor_of = [&svc](const httplib::Request& req) {
        const auto header = req.get_header_value("Authorization");
        const std::string prefix = "Bearer ";
        if (header.rfind(prefix, 0) != 0) throw KernelError(ErrorCode::Unauthorized, "missing bearer token");
        auto who = svc.authenticate(header.substr(prefix.size()));
        if (!who) throw KernelError(ErrorCode::Unauthorized, "unknown token");
        return *who;
    };

    // POST helper: builds {"type": ..., <body>, <path fields>} and applies it as the caller.
    auto command_route = [&srv, &svc, actor_of](const std::string& pattern, const std::string& type,
                                                const char* path_field, auto shape) {
        srv.Post(pattern, guarded([&svc, actor_of, type, path_field, shape](const httplib::Request& req,
                                                                            httplib::Response& res) {
            const ParticipantId actor = actor_of(req);
            Json body = parse_body(req);
            Json command{{"type", type}};
            if (path_field) command[path_field] = req.matches[1].str();
            for (auto& [k, v] : body.items())
                if (k != "type" && (!path_field || k != path_field)) command[k] = v;
            auto applied = svc.apply(command, actor);
            send_json(res, shape(applied));
        }));
    };
    auto plain = [](const Kernel::Applied& a) {
        Json r = a.result;
        r["seq"] = a.event.seq;
        return r;
    };

    srv.Get("/health", [](const httplib::Request&, httplib::Response& res) { send_json(res, Json{{"ok", true}}); });

    srv.Post("/participants", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
        auto reg = svc.register_participant(parse_body(req));
        Json out = reg.applied.result;
        out["token"] = reg.token;
        out["seq"] = reg.applied.event.seq;
        send_json(res, out, 201);
    }));

    command_route("/tasks", "publish_task", nullptr, plain);
    command_route(R"(/tasks/([^/]+)/claim)", "claim_task", "task", plain);
    command_route(R"(/tasks/([^/]+)/decompose)", "decompose", "task", plain);
    command_route(R"(/tasks/([^/]+)/submit)", "submit_deliverable", "task", plain);
    command_route(R"(/tasks/([^/]+)/review)", "review", "task", plain);
    command_route(R"(/tasks/([^/]+)/cancel)", "cancel_task", "task", plain);
    command_route(R"(/tasks/([^/]+)/admit-assets)", "admit_assets", "task", plain);
    command_route("/assets/propose", "propose_assets", nullptr, plain);
    command_route(R"(/assets/([^/]+)/validate)", "validate_asset", "asset", plain);
    command_route(R"(/assets/([^/]+)/invocations)", "record_invocation", "skill", plain);

    srv.Get("/tasks", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
        std::optional<TaskState> state;
        if (req.has_param("state")) state = task_state_from_string(req.get_param_value("state"));
        const auto requester = req.get_param_value("requester");
        const auto claimant = req.get_param_value("claimant");
        const auto parent = req.get_param_value("parent");
        send_json(res, svc.read([&](const Kernel& k) {
            Json out = Json::array();
            for (const auto& [_, t] : k.state().tasks.all()) {
                if (state && t.state != *state) continue;
                if (!requester.empty() && t.requester.value != requester) continue;
                if (!claimant.empty() && (!t.claimant || t.claimant->value != claimant)) continue;
                if (!parent.empty() && (!t.parent || t.parent->value != parent)) continue;
                out.push_back(to_json(t));
            }
            return out;
        }));
    }));

    srv.Get(R"(/tasks/([^/]+))", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
        const TaskId id{req.matches[1].str()};
        send_json(res, svc.read([&](const Kernel& k) { return to_json(k.state().tasks.get(id)); }));
    }));

    srv.Get(R"(/tasks/([^/]+)/participants)", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
        const TaskId id{req.matches[1].str()};
        send_json(res, svc.read([&](const Kernel& k) { return Json(k.state().tasks.participants_of(id)); }));
    }));

    srv.Get("/assets", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
        const auto status = req.get_param_value("status");
        const auto kind = req.get_param_value("kind");
        send_json(res, svc.read([&](const Kernel& k) {
            Json out = Json::array();
            for (const auto& [_, a] : k.state().assets.all()) {
                if (!status.empty() && to_string(a.status) != status) continue;
                if (!kind.empty() && to_string(a.kind) != kind) continue;
                out.push_back(to_json(a));
            }
            return out;
        }));
    }));

    srv.Get("/assets/graph", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
        if (req.get_param_value("format") == "dot") {
            res.set_content(svc.read([](const Kernel& k) { return k.state().assets.graph_dot(); }),
                            "text/vnd.graphviz");
            return;
        }
        send_json(res, svc.read([](const Kernel& k) { return k.state().assets.graph_json(); }));
    }));

    srv.Get("/assets/score", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
        const auto ids = split_csv(req.get_param_value("candidates"));
        send_json(res, svc.read([&](const Kernel& k) {
            ScoreWeights w = k.config().weights;
            if (req.has_param("weights")) w = parse_score_weights(req.get_param_value("weights"));
            std::set<AssetId> candidates;
            if (ids.empty()) {
                for (const auto& id : k.state().assets.admitted())
                    if (k.state().assets.get(id).kind == AssetKind::skill) candidates.insert(id);
            } else {
                for (const auto& id : ids) candidates.emplace(id);
            }
            Json out = Json::array();
            for (const auto& s : k.state().assets.score_capability(candidates, w))
                out.push_back(Json{{"asset", s.id}, {"score", s.score}});
            return out;
        }));
    }));

    srv.Get(R"(/assets/([^/]+))", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
        const AssetId id{req.matches[1].str()};
        send_json(res, svc.read([&](const Kernel& k) { return to_json(k.state().assets.get(id)); }));
    }));

    srv.Get(R"(/assets/([^/]+)/lineage)", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
        const AssetId id{req.matches[1].str()};
        send_json(res, svc.read([&](const Kernel& k) { return to_json(k.state().assets.lineage(id)); }));
    }));

    srv.Get("/ledger/summary", guarded([&svc](const httplib::Request&, httplib::Response& res) {
        send_json(res, svc.read([](const Kernel& k) { return to_json(k.state().ledger.balance_report()); }));
    }));

    srv.Get(R"(/ledger/([^/]+))", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
        const ParticipantId who{req.matches[1].str()};
        send_json(res, svc.read([&](const Kernel& k) {
            const auto& ledger = k.state().ledger;
            Json entries = Json::array();
            for (const auto& e : ledger.entries())
                if (e.debit == who.value || e.credit == who.value) entries.push_back(to_json(e));
            return Json{{"account", to_json(ledger.account(who))}, {"entries", entries}};
        }));
    }));

    srv.Get("/events", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
        std::uint64_t from = 1;
        if (req.has_param("from")) from = std::stoull(req.get_param_value("from"));
        send_json(res, svc.read([&](const Kernel& k) {
            Json out = Json::array();
            for (const auto& e : k.events())
                if (e.seq >= from) out.push_back(to_json(e));
            return out;
        }));
    }));

    srv.Get(R"(/deliverables/([0-9a-f]{64}))", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
        const auto digest = req.matches[1].str();
        auto bytes = svc.read([&](const Kernel& k) -> std::optional<std::string> {
            auto it = k.state().blobs.find(digest);
            if (it == k.state().blobs.end()) return std::nullopt;
            return it->second;
        });
        if (!bytes) throw KernelError(ErrorCode::NotFound, digest);
        res.set_content(*bytes, "application/octet-stream");
    }));

    srv.Get("/state/digest", guarded([&svc](const httplib::Request&, httplib::Response& res) {
        send_json(res, svc.read([](const Kernel& k) {
            return Json{{"seq", k.events().size()}, {"digest", k.state_digest()}};
        }));
    }));
}

}  // namespace mk
