// Task lifecycle: publication, claiming, budgeted decomposition, submission,
// review and terminal settlement.
//
//   Published -> Claimed -> InReview -> Accepted
//                   ^           |
//                   |           v
//                   +------ Rejected -> FinallyRejected
//   Published -> Cancelled
//
// A task's escrow is open exactly while the task is non-terminal.

#pragma once

#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "marketkernel/core.hpp"
#include "marketkernel/ledger.hpp"
#include "marketkernel/tx.hpp"

namespace mk {

enum class ParticipantKind { human, agent };

std::string_view to_string(ParticipantKind k);
ParticipantKind participant_kind_from_string(std::string_view s);

struct Participant {
    ParticipantId id;
    ParticipantKind kind = ParticipantKind::agent;
};

/// Registered participants. Ids are restricted to [A-Za-z0-9_.-] so they can
/// double as ledger addresses and URL path segments.
class ParticipantRegistry {
public:
    const Participant& add(const ParticipantId& id, ParticipantKind kind);
    bool contains(const ParticipantId& id) const { return participants_.contains(id); }
    const Participant& get(const ParticipantId& id) const;
    const std::map<ParticipantId, Participant>& all() const { return participants_.raw(); }

    static bool valid_id(std::string_view id);

    void begin_tx() { participants_.begin_tx(); }
    void commit() { participants_.commit(); }
    void rollback() { participants_.rollback(); }

private:
    TxMap<ParticipantId, Participant> participants_;
};

enum class TaskState { Published, Claimed, InReview, Accepted, Rejected, FinallyRejected, Cancelled };

std::string_view to_string(TaskState s);
TaskState task_state_from_string(std::string_view s);
bool is_terminal(TaskState s);

enum class Verdict { accept, reject };

std::string_view to_string(Verdict v);
Verdict verdict_from_string(std::string_view s);

struct Deliverable {
    std::string id;
    std::string payload_digest;
    std::string payload_uri;
    ParticipantId submitted_by;
    std::vector<std::string> evidence;
};

struct ReviewRecord {
    ParticipantId reviewer;
    Verdict verdict = Verdict::reject;
    std::string feedback;
    bool final = false;
    std::uint64_t at = 0;
};

struct Task {
    TaskId id;
    std::string intent;
    ParticipantId requester;
    Credits bounty;
    TaskState state = TaskState::Published;
    std::optional<ParticipantId> claimant;
    std::optional<TaskId> parent;
    std::vector<TaskId> plan;
    std::optional<Deliverable> deliverable;
    std::vector<ReviewRecord> review_history;
    std::set<AssetId> used_skills;
    std::set<AssetId> consulted_assets;
    std::optional<Credits> settled;  // return value of the closing settlement
};

Json to_json(const Task& t);

struct Subplan {
    std::string intent;
    Credits bounty;
};

struct Submission {
    std::string payload_digest;
    std::string payload_uri;
    std::set<AssetId> used_skills;
    std::set<AssetId> consulted;
    std::vector<std::string> evidence;
};

struct ReviewOutcome {
    TaskState state;
    std::optional<Credits> settled;  // set once the task's escrow closed
    std::vector<TaskId> cancelled;   // descendants closed by this review
};

/// The task book. Every mutation that moves credits goes through the ledger
/// passed in by the caller. Failed commands are undone via begin_tx/rollback.
class TaskBoard {
public:
    const Task& publish(Ledger& ledger, const ParticipantRegistry& people,
                        const ParticipantId& requester, std::string intent, Credits bounty,
                        const std::optional<TaskId>& parent);

    const Task& claim(const TaskId& task, const ParticipantId& solver,
                      const ParticipantRegistry& people);

    std::vector<TaskId> decompose(Ledger& ledger, const ParticipantRegistry& people,
                                  const TaskId& task, const ParticipantId& caller,
                                  const std::vector<Subplan>& subplans);

    /// M_t: the claimant plus claimants of directly planned subtasks.
    std::set<ParticipantId> participants_of(const TaskId& task) const;

    const Task& submit(const TaskId& task, const ParticipantId& caller, Submission submission,
                       const std::function<bool(const AssetId&)>& is_admitted,
                       std::string deliverable_id);

    ReviewOutcome review(Ledger& ledger, const TaskId& task, const ParticipantId& reviewer,
                         Verdict verdict, std::string feedback, bool final, std::uint64_t at);

    std::vector<TaskId> cancel(Ledger& ledger, const TaskId& task, const ParticipantId& by);

    /// Applies the ledger settlement for a task already in a terminal state.
    Credits settle(Ledger& ledger, const TaskId& task);

    void note_skill_use(const TaskId& task, const AssetId& skill);

    const Task& get(const TaskId& task) const;
    bool contains(const TaskId& task) const { return tasks_.contains(task); }
    const std::map<TaskId, Task>& all() const { return tasks_.raw(); }

    /// Bounty committed to children of `task`.
    Credits delegated(const TaskId& task) const;

    Json to_json() const;

    void begin_tx() {
        saved_next_ = next_task_;
        tasks_.begin_tx();
    }
    void commit() { tasks_.commit(); }
    void rollback() {
        next_task_ = saved_next_;
        tasks_.rollback();
    }

private:
    Task& get_mut(const TaskId& task);
    std::vector<TaskId> cancel_open_descendants(const TaskId& task);

    TxMap<TaskId, Task> tasks_;
    std::uint64_t next_task_ = 1;
    std::uint64_t saved_next_ = 1;
};

}  // namespace mk
