#include "marketkernel/taskflow.hpp"

#include <algorithm>
#include <stdexcept>

namespace mk {

std::string_view to_string(ParticipantKind k) { return k == ParticipantKind::human ? "human" : "agent"; }

ParticipantKind participant_kind_from_string(std::string_view s) {
    if (s == "human") return ParticipantKind::human;
    if (s == "agent") return ParticipantKind::agent;
    throw KernelError(ErrorCode::MalformedCommand, "participant kind must be human or agent");
}

bool ParticipantRegistry::valid_id(std::string_view id) {
    if (id.empty() || id.size() > 64) return false;
    return std::all_of(id.begin(), id.end(), [](char c) {
        return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
               c == '_' || c == '-' || c == '.';
    });
}

const Participant& ParticipantRegistry::add(const ParticipantId& id, ParticipantKind kind) {
    if (!valid_id(id.value)) throw KernelError(ErrorCode::InvalidParticipantId, id.value);
    if (id.value == std::string(kPlatformAddress) || id.value == "summary")
        throw KernelError(ErrorCode::InvalidParticipantId, id.value + " is reserved");
    if (participants_.contains(id)) throw KernelError(ErrorCode::DuplicateParticipant, id.value);
    return participants_.put(id, Participant{id, kind});
}

const Participant& ParticipantRegistry::get(const ParticipantId& id) const {
    auto it = participants_.find(id);
    if (it == participants_.end()) throw KernelError(ErrorCode::UnknownParticipant, id.value);
    return it->second;
}

std::string_view to_string(TaskState s) {
    switch (s) {
        case TaskState::Published: return "Published";
        case TaskState::Claimed: return "Claimed";
        case TaskState::InReview: return "InReview";
        case TaskState::Accepted: return "Accepted";
        case TaskState::Rejected: return "Rejected";
        case TaskState::FinallyRejected: return "FinallyRejected";
        case TaskState::Cancelled: return "Cancelled";
    }
    return "?";
}

TaskState task_state_from_string(std::string_view s) {
    for (auto st : {TaskState::Published, TaskState::Claimed, TaskState::InReview,
                    TaskState::Accepted, TaskState::Rejected, TaskState::FinallyRejected,
                    TaskState::Cancelled})
        if (to_string(st) == s) return st;
    throw std::invalid_argument("unknown task state: " + std::string(s));
}

bool is_terminal(TaskState s) {
    return s == TaskState::Accepted || s == TaskState::FinallyRejected || s == TaskState::Cancelled;
}

std::string_view to_string(Verdict v) { return v == Verdict::accept ? "accept" : "reject"; }

Verdict verdict_from_string(std::string_view s) {
    if (s == "accept") return Verdict::accept;
    if (s == "reject") return Verdict::reject;
    throw KernelError(ErrorCode::MalformedCommand, "verdict must be accept or reject");
}

const Task& TaskBoard::publish(Ledger& ledger, const ParticipantRegistry& people,
                               const ParticipantId& requester, std::string intent,
                               Credits bounty, const std::optional<TaskId>& parent) {
    people.get(requester);
    if (parent) {
        const Task& p = get(*parent);
        if (p.state != TaskState::Claimed) throw KernelError(ErrorCode::ParentNotClaimed, parent->value);
        if (p.claimant != requester) throw KernelError(ErrorCode::NotClaimant, parent->value);
        if (delegated(*parent) + bounty > p.bounty)
            throw KernelError(ErrorCode::BudgetExceeded,
                              "children would total " +
                                  std::to_string((delegated(*parent) + bounty).value()) + " > " +
                                  std::to_string(p.bounty.value()));
    }

    TaskId id{"t" + std::to_string(next_task_)};
    ledger.lock_bounty(requester, id, bounty,
                       parent ? EscrowSource::parent_advance : EscrowSource::participant_funded,
                       parent);
    ++next_task_;

    Task t;
    t.id = id;
    t.intent = std::move(intent);
    t.requester = requester;
    t.bounty = bounty;
    t.parent = parent;
    if (parent) get_mut(*parent).plan.push_back(id);
    return tasks_.put(id, std::move(t));
}

const Task& TaskBoard::claim(const TaskId& task, const ParticipantId& solver,
                             const ParticipantRegistry& people) {
    people.get(solver);
    Task& t = get_mut(task);
    if (t.state == TaskState::Published) {
        if (solver == t.requester) throw KernelError(ErrorCode::SelfClaim, task.value);
    } else if (t.state == TaskState::Rejected) {
        // revision: only the current claimant may pick a rejected task back up
        if (t.claimant != solver) throw KernelError(ErrorCode::TaskNotClaimable, task.value);
    } else {
        throw KernelError(ErrorCode::TaskNotClaimable,
                          task.value + " is " + std::string(to_string(t.state)));
    }
    t.state = TaskState::Claimed;
    t.claimant = solver;
    return t;
}

std::vector<TaskId> TaskBoard::decompose(Ledger& ledger, const ParticipantRegistry& people,
                                         const TaskId& task, const ParticipantId& caller,
                                         const std::vector<Subplan>& subplans) {
    const Task& t = get(task);
    if (t.claimant != caller) throw KernelError(ErrorCode::NotClaimant, task.value);
    if (t.state != TaskState::Claimed) throw KernelError(ErrorCode::TaskNotClaimed, task.value);
    Credits requested;
    for (const auto& s : subplans) requested += s.bounty;
    if (delegated(task) + requested > t.bounty)
        throw KernelError(ErrorCode::BudgetExceeded,
                          "children would total " + std::to_string((delegated(task) + requested).value()) +
                              " > " + std::to_string(t.bounty.value()));
    std::vector<TaskId> created;
    for (const auto& s : subplans)
        created.push_back(publish(ledger, people, caller, s.intent, s.bounty, task).id);
    return created;
}

std::set<ParticipantId> TaskBoard::participants_of(const TaskId& task) const {
    const Task& t = get(task);
    if (!t.claimant) throw KernelError(ErrorCode::TaskNotClaimed, task.value);
    std::set<ParticipantId> members{*t.claimant};
    for (const auto& child : t.plan) {
        const Task& c = get(child);
        if (c.claimant) members.insert(*c.claimant);
    }
    return members;
}

const Task& TaskBoard::submit(const TaskId& task, const ParticipantId& caller,
                              Submission submission,
                              const std::function<bool(const AssetId&)>& is_admitted,
                              std::string deliverable_id) {
    Task& t = get_mut(task);
    if (t.claimant != caller) throw KernelError(ErrorCode::NotClaimant, task.value);
    if (t.state != TaskState::Claimed && t.state != TaskState::Rejected)
        throw KernelError(ErrorCode::TaskNotClaimed, task.value);
    for (const auto& s : submission.used_skills)
        if (!is_admitted(s)) throw KernelError(ErrorCode::UnknownAssetId, s.value);
    for (const auto& a : submission.consulted)
        if (!is_admitted(a)) throw KernelError(ErrorCode::UnknownAssetId, a.value);

    t.deliverable = Deliverable{std::move(deliverable_id), std::move(submission.payload_digest),
                                std::move(submission.payload_uri), caller,
                                std::move(submission.evidence)};
    t.used_skills.insert(submission.used_skills.begin(), submission.used_skills.end());
    t.consulted_assets.insert(submission.consulted.begin(), submission.consulted.end());
    t.state = TaskState::InReview;
    return t;
}

ReviewOutcome TaskBoard::review(Ledger& ledger, const TaskId& task, const ParticipantId& reviewer,
                                Verdict verdict, std::string feedback, bool final,
                                std::uint64_t at) {
    Task& t = get_mut(task);
    if (t.state != TaskState::InReview) throw KernelError(ErrorCode::TaskNotInReview, task.value);
    if (reviewer != t.requester) throw KernelError(ErrorCode::NotAuthorizedReviewer, task.value);

    t.review_history.push_back(ReviewRecord{reviewer, verdict, std::move(feedback), final, at});
    ReviewOutcome out;
    if (verdict == Verdict::reject && !final) {
        t.state = TaskState::Rejected;
        out.state = t.state;
        return out;
    }
    t.state = verdict == Verdict::accept ? TaskState::Accepted : TaskState::FinallyRejected;
    out.state = t.state;
    out.cancelled = cancel_open_descendants(task);
    out.settled = settle(ledger, task);
    return out;
}

std::vector<TaskId> TaskBoard::cancel(Ledger& ledger, const TaskId& task, const ParticipantId& by) {
    Task& t = get_mut(task);
    if (t.requester != by) throw KernelError(ErrorCode::NotRequester, task.value);
    if (t.state != TaskState::Published) throw KernelError(ErrorCode::TaskNotCancellable, task.value);
    t.state = TaskState::Cancelled;
    auto cancelled = cancel_open_descendants(task);
    settle(ledger, task);
    return cancelled;
}

Credits TaskBoard::settle(Ledger& ledger, const TaskId& task) {
    Task& t = get_mut(task);
    AcceptanceOutcome outcome;
    switch (t.state) {
        case TaskState::Accepted: outcome = AcceptanceOutcome::accepted; break;
        case TaskState::FinallyRejected: outcome = AcceptanceOutcome::rejected; break;
        case TaskState::Cancelled: outcome = AcceptanceOutcome::cancelled; break;
        default: throw KernelError(ErrorCode::TaskNotTerminal, task.value);
    }
    t.settled = ledger.settle_task(task, outcome, t.claimant);
    return *t.settled;
}

void TaskBoard::note_skill_use(const TaskId& task, const AssetId& skill) {
    get_mut(task).used_skills.insert(skill);
}

const Task& TaskBoard::get(const TaskId& task) const {
    auto it = tasks_.find(task);
    if (it == tasks_.end()) throw KernelError(ErrorCode::UnknownTask, task.value);
    return it->second;
}

Task& TaskBoard::get_mut(const TaskId& task) {
    if (!tasks_.contains(task)) throw KernelError(ErrorCode::UnknownTask, task.value);
    return tasks_.mut(task);
}

Credits TaskBoard::delegated(const TaskId& task) const {
    Credits sum;
    for (const auto& child : get(task).plan) sum += get(child).bounty;
    return sum;
}

// Mirrors Ledger::collapse_children: every non-terminal descendant is closed
// as Cancelled. Accepted descendants keep their state.
std::vector<TaskId> TaskBoard::cancel_open_descendants(const TaskId& task) {
    std::vector<TaskId> closed;
    for (const auto& child : get(task).plan) {
        Task& c = get_mut(child);
        if (is_terminal(c.state)) continue;
        auto below = cancel_open_descendants(child);
        closed.insert(closed.end(), below.begin(), below.end());
        c.state = TaskState::Cancelled;
        c.settled = Credits{0};
        closed.push_back(child);
    }
    return closed;
}

Json to_json(const Task& t) {
    Json j{{"id", t.id},
           {"intent", t.intent},
           {"requester", t.requester},
           {"bounty", t.bounty},
           {"state", to_string(t.state)}};
    j["claimant"] = t.claimant ? Json(t.claimant->value) : Json(nullptr);
    j["parent"] = t.parent ? Json(t.parent->value) : Json(nullptr);
    j["plan"] = t.plan;
    if (t.deliverable) {
        const auto& d = *t.deliverable;
        j["deliverable"] = Json{{"id", d.id},
                                {"payload_digest", d.payload_digest},
                                {"payload_uri", d.payload_uri},
                                {"submitted_by", d.submitted_by},
                                {"evidence", d.evidence}};
    } else {
        j["deliverable"] = nullptr;
    }
    Json reviews = Json::array();
    for (const auto& r : t.review_history)
        reviews.push_back(Json{{"reviewer", r.reviewer},
                               {"verdict", to_string(r.verdict)},
                               {"feedback", r.feedback},
                               {"final", r.final},
                               {"at", r.at}});
    j["review_history"] = reviews;
    j["used_skills"] = t.used_skills;
    j["consulted_assets"] = t.consulted_assets;
    j["settled"] = t.settled ? Json(t.settled->value()) : Json(nullptr);
    return j;
}

Json TaskBoard::to_json() const {
    Json tasks = Json::array();
    for (const auto& [_, t] : tasks_) tasks.push_back(mk::to_json(t));
    return Json{{"next_task", next_task_}, {"tasks", tasks}};
}

}  // namespace mk
