// marketd: serves one kernel over HTTP/JSON, persisting to a data directory.

#include <csignal>
#include <iostream>

#include <CLI11.hpp>

#include "marketkernel/service.hpp"

namespace {
mk::HttpServer* g_server = nullptr;

void on_signal(int) {
    if (g_server) g_server->stop();
}
}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"market kernel daemon"};
    std::string data_dir = "./data";
    std::string bind = "127.0.0.1:8080";
    std::string mode = "fee";
    std::string weights;
    std::uint64_t snapshot_every = 100;
    app.add_option("--data-dir", data_dir, "directory holding the event log")->capture_default_str();
    app.add_option("--bind", bind, "host:port to listen on (port 0 picks one)")->capture_default_str();
    app.add_option("--mode", mode, "reuse reward mode")->check(CLI::IsMember({"fee", "mint"}))->capture_default_str();
    app.add_option("--score-weights", weights, "w_s,w_l,w_f,w_a[,latency_scale_ms]");
    app.add_option("--snapshot-every", snapshot_every, "events between snapshots")->capture_default_str();
    CLI11_PARSE(app, argc, argv);

    try {
        mk::ServiceConfig cfg;
        cfg.data_dir = data_dir;
        cfg.kernel.mode = mk::ledger_mode_from_string(mode);
        if (!weights.empty()) cfg.kernel.weights = mk::parse_score_weights(weights);
        cfg.snapshot_every = snapshot_every;

        const auto colon = bind.rfind(':');
        if (colon == std::string::npos) throw mk::KernelError(mk::ErrorCode::BindFailure, "expected host:port, got " + bind);
        const std::string host = bind.substr(0, colon);
        const int port = std::stoi(bind.substr(colon + 1));

        mk::Service service(std::move(cfg));
        mk::HttpServer server(service);
        const int bound = server.bind(host, port);
        g_server = &server;
        std::signal(SIGINT, on_signal);
        std::signal(SIGTERM, on_signal);
        const auto events = service.read([](const mk::Kernel& k) { return k.events().size(); });
        std::cout << "marketd listening on " << host << ':' << bound << " (" << events << " events replayed)"
                  << std::endl;
        server.listen();
        g_server = nullptr;
    } catch (const mk::KernelError& e) {
        std::cerr << "marketd: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "marketd: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
