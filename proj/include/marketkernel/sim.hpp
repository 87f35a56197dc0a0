// Deterministic scenario runner, property checker and metrics emitter.
//
// A scenario registers its participants, then walks its script: verbatim
// kernel commands and policy blocks that generate commands from one seeded
// pseudo-random stream. The kernel itself holds no randomness, so the same
// (scenario, seed) always yields the same event log.

#pragma once

#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "marketkernel/kernel.hpp"

namespace mk::sim {

inline constexpr int kScenarioSchemaVersion = 1;

struct ScenarioParticipant {
    ParticipantId id;
    ParticipantKind kind = ParticipantKind::agent;
    Credits endowment;
    std::set<std::string> roles;  // requester, solver
};

struct ScriptAction {
    ParticipantId actor;
    Json command;
    std::optional<std::string> expect_error;
};

struct SkillOutcome {
    double success = 0.8;
    std::uint64_t latency_min_ms = 50;
    std::uint64_t latency_max_ms = 500;
};

struct PolicyBlock {
    std::optional<std::uint64_t> rounds;
    double task_arrival_rate = 0.5;
    std::uint64_t bounty_min = 5;
    std::uint64_t bounty_max = 60;
    double decomposition_probability = 0.2;
    double skill_reuse_preference = 0.7;
    double review_strictness = 0.3;
    std::uint64_t max_revisions = 2;
    double cancel_probability = 0.05;
    double new_skill_probability = 0.4;
    double validation_failure_probability = 0.15;
    std::uint64_t invocations_per_task = 2;
    std::map<std::string, SkillOutcome> skill_outcomes;  // by asset name
};

using ScriptEntry = std::variant<ScriptAction, PolicyBlock>;

struct Scenario {
    int schema_version = kScenarioSchemaVersion;
    std::string name;
    std::uint64_t seed = 0;
    LedgerMode mode = LedgerMode::fee;
    std::vector<ScenarioParticipant> participants;
    std::vector<ScriptEntry> script;
    std::uint64_t rounds = 0;  // default for policy blocks without their own
};

/// Throws KernelError(ScenarioParseError).
Scenario parse_scenario(const Json& j);
Scenario load_scenario(const std::string& path);

struct SkillSummary {
    AssetId id;
    double score = 0.0;
    std::uint64_t invocations = 0;
    Credits reuse_income;
};

struct RoundMetrics {
    std::uint64_t round = 0;
    std::map<std::string, std::uint64_t> tasks_by_state;  // all seven state names
    std::uint64_t asset_count = 0;                        // |K|
    Credits reuse_paid;                                   // cumulative
    std::map<ParticipantId, Credits> credits;             // free + locked
    Credits total_credits;
    std::vector<SkillSummary> top_skills;
};

struct SimReport {
    std::string scenario;
    std::uint64_t seed = 0;
    LedgerMode mode = LedgerMode::fee;
    std::vector<RoundMetrics> rounds;
    bool conservation_ok = false;
    std::uint64_t events = 0;
    std::string log_digest;
    std::string state_digest;
};

Json to_json(const SimReport& r);
SimReport report_from_json(const Json& j);

using RoundObserver = std::function<void(const RoundMetrics&, const Kernel&)>;

struct SimRun {
    SimReport report;
    Kernel kernel;
};

SimRun run_scenario(const Scenario& scenario, std::optional<std::uint64_t> seed_override = std::nullopt,
                    const RoundObserver& observer = {});

std::string log_digest(std::span<const Event> log);

struct PropertyVerdict {
    std::string name;
    bool passed = false;
    std::string detail;
};

/// Replays `log` event by event and evaluates the kernel invariants after
/// each step, plus an independent fold of the recorded ledger entries.
/// Throws CorruptLog if the commands themselves cannot be replayed.
std::vector<PropertyVerdict> check_properties(std::span<const Event> log, const KernelConfig& config);

enum class MetricsFormat { csv, json };

MetricsFormat metrics_format_from_string(std::string_view s);

/// Fixed columns first, then one credits:<participant> column per participant.
std::vector<std::string> csv_header(const SimReport& r);
void emit_metrics(const SimReport& r, MetricsFormat format, std::ostream& out);
/// Throws KernelError(IoFailure).
void emit_metrics_file(const SimReport& r, MetricsFormat format, const std::string& path);

/// Random command generator for property tests: mostly plausible commands
/// drawn from live ids, with a share of invalid ones.
struct FuzzWeights {
    double publish = 3, claim = 3, decompose = 2, submit = 3, review = 3, cancel = 1;
    double propose = 1.5, validate = 1.5, admit = 1.5, invoke = 3, nonsense = 0.5;
};

class CommandFuzzer {
public:
    explicit CommandFuzzer(std::uint64_t seed, FuzzWeights weights = {});

    /// The registration commands that open each fuzzing run.
    std::vector<std::pair<ParticipantId, Json>> registrations(std::size_t participants);
    std::pair<ParticipantId, Json> next(const Kernel& kernel);

private:
    std::mt19937_64 rng_;
    FuzzWeights weights_;
    std::uint64_t name_counter_ = 0;
};

}  // namespace mk::sim
