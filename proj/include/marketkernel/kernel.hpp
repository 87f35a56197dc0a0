// The event-sourced kernel: a single writer that validates a command against
// the ledger, task book and asset registry, applies it atomically, and
// appends exactly one event. State is a deterministic fold over the log.
//
// Atomicity comes from undo logs in the state containers: a failing command
// rolls back whatever it touched, so applying costs O(touched state).

#pragma once

#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "marketkernel/assets.hpp"
#include "marketkernel/command.hpp"
#include "marketkernel/core.hpp"
#include "marketkernel/ledger.hpp"
#include "marketkernel/taskflow.hpp"

namespace mk {

struct KernelConfig {
    LedgerMode mode = LedgerMode::fee;
    ScoreWeights weights;
    std::shared_ptr<const SkillExecutor> executor = std::make_shared<TableExecutor>();
};

enum class RewardStatus { paid, unpaid, self_invocation, not_validated };

std::string_view to_string(RewardStatus s);

struct InvocationRecord {
    std::uint64_t ordinal = 0;
    AssetId skill;
    TaskId task;
    ParticipantId invoker;
    bool success = false;
    std::uint64_t latency_ms = 0;
    RewardStatus reward = RewardStatus::not_validated;
    Credits fee;                    // alpha_j charged (paid) or owed (unpaid)
    std::uint64_t reuse_index = 0;  // j for paid invocations
};

Json to_json(const InvocationRecord& r);

struct KernelState {
    KernelState(LedgerMode mode) : ledger(mode) {}

    ParticipantRegistry participants;
    Ledger ledger;
    TaskBoard tasks;
    AssetRegistry assets;
    TxLog<InvocationRecord> invocations;
    TxMap<std::string, std::string> blobs;  // sha256 -> payload bytes
    std::uint64_t next_deliverable = 1;
    std::uint64_t clock = 0;

    // Undo-log transaction spanning every component, one per command.
    void begin_tx();
    void commit();
    void rollback();

private:
    struct Counters {
        std::uint64_t next_deliverable = 1;
        std::uint64_t clock = 0;
    };
    Counters saved_;
};

struct Event {
    std::uint64_t seq = 0;
    std::uint64_t at = 0;
    ParticipantId actor;
    Json command;
    std::vector<LedgerEntry> entries;  // ledger movements caused by the command
};

Json to_json(const Event& e);
/// One JSON Lines record, without the trailing newline.
std::string event_line(const Event& e);
Event event_from_json(const Json& j);

class Kernel {
public:
    explicit Kernel(KernelConfig config = {});

    struct Applied {
        Event event;
        Json result;
    };

    /// Validates and applies one command. On error the state and log are
    /// left untouched and the KernelError propagates.
    Applied apply(const Command& command, const ParticipantId& actor);
    Applied apply_json(const Json& command, const ParticipantId& actor);

    /// Rebuilds state from a gapless log. With `verify_entries` set, the
    /// ledger entries recorded in each event must match the recomputed ones.
    static Kernel replay(std::span<const Event> log, KernelConfig config = {},
                         bool verify_entries = true);

    const KernelState& state() const { return *state_; }
    const std::vector<Event>& events() const { return events_; }
    const KernelConfig& config() const { return config_; }

    Json state_json() const;
    std::string state_digest() const;

    /// Verifies every stored deliverable payload against its digest.
    bool deliverables_intact() const;

private:
    Json dispatch(KernelState& s, const Command& command, const ParticipantId& actor, std::uint64_t at) const;

    KernelConfig config_;
    std::unique_ptr<KernelState> state_;
    std::vector<Event> events_;
};

/// The event log as JSON Lines text.
std::string serialize_log(std::span<const Event> log);
/// Parses JSON Lines; undecodable lines raise CorruptLog.
std::vector<Event> parse_log(std::string_view text);

}  // namespace mk
