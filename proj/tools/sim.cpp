// sim: run scenarios, check event logs, and export metrics.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "marketkernel/sim.hpp"

namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw mk::KernelError(mk::ErrorCode::IoFailure, "cannot read " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    out << text;
    if (!out) throw mk::KernelError(mk::ErrorCode::IoFailure, "cannot write " + p.string());
}

int run(const std::string& scenario_path, std::optional<std::uint64_t> seed, std::string out_dir) {
    const auto scenario = mk::sim::load_scenario(scenario_path);
    if (out_dir.empty()) out_dir = "sim-out/" + scenario.name;
    auto result = mk::sim::run_scenario(scenario, seed);
    fs::create_directories(out_dir);
    const fs::path dir{out_dir};
    write_file(dir / "events.jsonl", mk::serialize_log(result.kernel.events()));
    write_file(dir / "report.json", mk::sim::to_json(result.report).dump(2) + "\n");
    mk::sim::emit_metrics_file(result.report, mk::sim::MetricsFormat::csv, (dir / "metrics.csv").string());
    write_file(dir / "run.json",
               mk::Json{{"scenario", scenario.name}, {"seed", result.report.seed}, {"mode", mk::to_string(scenario.mode)}}
                       .dump(2) +
                   "\n");

    const auto& last = result.report.rounds.back();
    std::cout << "scenario " << scenario.name << " seed " << result.report.seed << ": " << result.report.events
              << " events, " << result.report.rounds.size() << " rows\n"
              << "  assets admitted: " << last.asset_count << "\n"
              << "  reuse paid: " << last.reuse_paid.value() << "\n"
              << "  total credits: " << last.total_credits.value() << "\n"
              << "  conservation: " << (result.report.conservation_ok ? "ok" : "VIOLATED") << "\n"
              << "  log digest: " << result.report.log_digest << "\n"
              << "  state digest: " << result.report.state_digest << "\n"
              << "  wrote " << dir.string() << "/{events.jsonl,report.json,metrics.csv,run.json}\n";
    return result.report.conservation_ok ? 0 : 1;
}

int check(const std::string& target, std::string mode) {
    fs::path log_path{target};
    if (fs::is_directory(log_path)) {
        if (mode.empty() && fs::exists(log_path / "run.json"))
            mode = mk::Json::parse(slurp(log_path / "run.json")).value("mode", std::string("fee"));
        log_path /= "events.jsonl";
    }
    mk::KernelConfig cfg;
    cfg.mode = mk::ledger_mode_from_string(mode.empty() ? "fee" : mode);
    const auto log = mk::parse_log(slurp(log_path));
    const auto verdicts = mk::sim::check_properties(log, cfg);
    bool ok = true;
    for (const auto& v : verdicts) {
        std::cout << (v.passed ? "PASS " : "FAIL ") << v.name << ": " << v.detail << '\n';
        ok = ok && v.passed;
    }
    std::cout << log.size() << " events checked, " << (ok ? "all properties hold" : "violations found") << '\n';
    return ok ? 0 : 1;
}

int metrics(const std::string& report_path, const std::string& format, const std::string& out) {
    const auto report = mk::sim::report_from_json(mk::Json::parse(slurp(report_path)));
    const auto fmt = mk::sim::metrics_format_from_string(format);
    if (out.empty()) mk::sim::emit_metrics(report, fmt, std::cout);
    else mk::sim::emit_metrics_file(report, fmt, out);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"market kernel simulator"};
    app.require_subcommand(1);

    auto* run_cmd = app.add_subcommand("run", "run a scenario file");
    std::string scenario_path, out_dir;
    std::optional<std::uint64_t> seed;
    run_cmd->add_option("scenario", scenario_path, "scenario JSON")->required();
    run_cmd->add_option("--seed", seed, "override the scenario seed");
    run_cmd->add_option("--out", out_dir, "output directory (default sim-out/<name>)");

    auto* check_cmd = app.add_subcommand("check", "check properties of an event log");
    std::string log_target, mode;
    check_cmd->add_option("log", log_target, "events.jsonl or a run directory")->required();
    check_cmd->add_option("--mode", mode, "ledger mode the log was produced in")->check(CLI::IsMember({"fee", "mint"}));

    auto* metrics_cmd = app.add_subcommand("metrics", "export a report's per-round series");
    std::string report_path, format = "csv", metrics_out;
    metrics_cmd->add_option("report", report_path, "report.json from sim run")->required();
    metrics_cmd->add_option("--format", format, "csv or json")->check(CLI::IsMember({"csv", "json"}))->capture_default_str();
    metrics_cmd->add_option("--out", metrics_out, "write to a file instead of stdout");

    CLI11_PARSE(app, argc, argv);
    try {
        if (*run_cmd) return run(scenario_path, seed, out_dir);
        if (*check_cmd) return check(log_target, mode);
        if (*metrics_cmd) return metrics(report_path, format, metrics_out);
    } catch (const mk::KernelError& e) {
        std::cerr << "sim: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "sim: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
