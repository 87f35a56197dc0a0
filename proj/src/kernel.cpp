#include "marketkernel/kernel.hpp"

#include <sstream>

namespace mk {

std::string_view to_string(RewardStatus s) {
    switch (s) {
        case RewardStatus::paid: return "paid";
        case RewardStatus::unpaid: return "unpaid";
        case RewardStatus::self_invocation: return "self";
        case RewardStatus::not_validated: return "not_validated";
    }
    return "?";
}

Json to_json(const InvocationRecord& r) {
    return Json{{"ordinal", r.ordinal},       {"skill", r.skill},
                {"task", r.task},             {"invoker", r.invoker},
                {"success", r.success},       {"latency_ms", r.latency_ms},
                {"reward", to_string(r.reward)}, {"fee", r.fee},
                {"reuse_index", r.reuse_index}};
}

Json to_json(const Event& e) {
    Json j{{"seq", e.seq}, {"at", e.at}, {"actor", e.actor}, {"command", e.command}};
    Json entries = Json::array();
    for (const auto& le : e.entries) entries.push_back(to_json(le));
    j["ledger"] = entries;
    return j;
}

std::string event_line(const Event& e) { return to_json(e).dump(); }

Event event_from_json(const Json& j) {
    Event e;
    e.seq = j.at("seq").get<std::uint64_t>();
    e.at = j.at("at").get<std::uint64_t>();
    e.actor = ParticipantId{j.at("actor").get<std::string>()};
    e.command = j.at("command");
    if (j.contains("ledger"))
        for (const auto& le : j["ledger"]) e.entries.push_back(ledger_entry_from_json(le));
    return e;
}

std::string serialize_log(std::span<const Event> log) {
    std::string out;
    for (const auto& e : log) {
        out += event_line(e);
        out += '\n';
    }
    return out;
}

std::vector<Event> parse_log(std::string_view text) {
    std::vector<Event> out;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            out.push_back(event_from_json(Json::parse(line)));
        } catch (const std::exception& ex) {
            throw KernelError(ErrorCode::CorruptLog, "line " + std::to_string(lineno) + ": " + ex.what());
        }
    }
    return out;
}

Kernel::Kernel(KernelConfig config)
    : config_(std::move(config)), state_(std::make_unique<KernelState>(config_.mode)) {}

void KernelState::begin_tx() {
    saved_ = Counters{next_deliverable, clock};
    participants.begin_tx();
    ledger.begin_tx();
    tasks.begin_tx();
    assets.begin_tx();
    invocations.begin_tx();
    blobs.begin_tx();
}

void KernelState::commit() {
    participants.commit();
    ledger.commit();
    tasks.commit();
    assets.commit();
    invocations.commit();
    blobs.commit();
}

void KernelState::rollback() {
    next_deliverable = saved_.next_deliverable;
    clock = saved_.clock;
    participants.rollback();
    ledger.rollback();
    tasks.rollback();
    assets.rollback();
    invocations.rollback();
    blobs.rollback();
}

Kernel::Applied Kernel::apply_json(const Json& command, const ParticipantId& actor) {
    return apply(command_from_json(command), actor);
}

Kernel::Applied Kernel::apply(const Command& command, const ParticipantId& actor) {
    KernelState& s = *state_;
    const std::uint64_t at = s.clock + 1;
    const std::size_t entries_before = s.ledger.entries().size();

    s.begin_tx();
    Json result;
    try {
        result = dispatch(s, command, actor, at);
    } catch (...) {
        s.rollback();
        throw;
    }
    s.commit();

    s.clock = at;
    Event ev;
    ev.seq = events_.size() + 1;
    ev.at = at;
    ev.actor = actor;
    ev.command = to_json(command);
    const auto& all = s.ledger.entries();
    ev.entries.assign(all.begin() + static_cast<std::ptrdiff_t>(entries_before), all.end());

    events_.push_back(ev);
    return Applied{std::move(ev), std::move(result)};
}

Json Kernel::dispatch(KernelState& s, const Command& command, const ParticipantId& actor,
                      std::uint64_t at) const {
    if (actor.empty()) throw KernelError(ErrorCode::MalformedCommand, "empty actor");
    if (!std::holds_alternative<cmd::RegisterParticipant>(command)) s.participants.get(actor);

    if (auto* c = std::get_if<cmd::RegisterParticipant>(&command)) {
        const auto& p = s.participants.add(c->id, c->kind);
        const auto& acct = s.ledger.open_account(c->id, c->endowment);
        return Json{{"participant", Json{{"id", p.id}, {"kind", to_string(p.kind)}}}, {"account", to_json(acct)}};
    }
    if (auto* c = std::get_if<cmd::PublishTask>(&command))
        return to_json(s.tasks.publish(s.ledger, s.participants, actor, c->intent, c->bounty, c->parent));
    if (auto* c = std::get_if<cmd::ClaimTask>(&command)) return to_json(s.tasks.claim(c->task, actor, s.participants));
    if (auto* c = std::get_if<cmd::Decompose>(&command)) {
        Json children = Json::array();
        for (const auto& id : s.tasks.decompose(s.ledger, s.participants, c->task, actor, c->subplans))
            children.push_back(to_json(s.tasks.get(id)));
        return Json{{"task", to_json(s.tasks.get(c->task))}, {"children", children}};
    }
    if (auto* c = std::get_if<cmd::SubmitDeliverable>(&command)) {
        Submission sub;
        sub.payload_digest = sha256_hex(c->payload);
        sub.payload_uri = c->payload_uri.value_or("blob:sha256:" + sub.payload_digest);
        sub.used_skills = {c->used_skills.begin(), c->used_skills.end()};
        sub.consulted = {c->consulted.begin(), c->consulted.end()};
        sub.evidence = c->evidence;
        const std::string digest = sub.payload_digest;
        const auto& t = s.tasks.submit(c->task, actor, std::move(sub),
                                       [&](const AssetId& id) { return s.assets.is_admitted(id); },
                                       "d" + std::to_string(s.next_deliverable));
        ++s.next_deliverable;
        s.blobs.put(digest, c->payload);
        return to_json(t);
    }
    if (auto* c = std::get_if<cmd::Review>(&command)) {
        const auto out = s.tasks.review(s.ledger, c->task, actor, c->verdict, c->feedback, c->final, at);
        const Task& t = s.tasks.get(c->task);
        if (out.state == TaskState::Accepted) s.assets.record_acceptance(t.used_skills);
        Json j{{"task", to_json(t)}};
        j["settled"] = out.settled ? Json(out.settled->value()) : Json(nullptr);
        j["provisional"] = out.state == TaskState::Accepted && t.parent.has_value();
        j["cancelled"] = out.cancelled;
        return j;
    }
    if (auto* c = std::get_if<cmd::CancelTask>(&command)) {
        auto cancelled = s.tasks.cancel(s.ledger, c->task, actor);
        const Task& t = s.tasks.get(c->task);
        return Json{{"task", to_json(t)}, {"refunded", t.bounty}, {"cancelled", cancelled}};
    }
    if (auto* c = std::get_if<cmd::ProposeAssets>(&command)) {
        Json assets = Json::array();
        for (const auto& id : s.assets.propose_candidates(s.tasks, c->task, actor, c->items))
            assets.push_back(to_json(s.assets.get(id)));
        return Json{{"assets", assets}};
    }
    if (auto* c = std::get_if<cmd::ValidateAsset>(&command))
        return to_json(s.assets.validate(c->asset, c->validators, config_.executor.get()));
    if (auto* c = std::get_if<cmd::AdmitAssets>(&command)) {
        s.tasks.get(c->task);
        return Json{{"admitted", s.assets.admit(c->task)}};
    }
    if (auto* c = std::get_if<cmd::RecordInvocation>(&command)) {
        const Task& task = s.tasks.get(c->task);
        if (task.claimant != actor) throw KernelError(ErrorCode::NotClaimant, c->task.value);
        const auto& metrics = s.assets.record_invocation(c->skill, task, c->success, c->latency_ms);
        const Asset& skill = s.assets.get(c->skill);

        InvocationRecord rec;
        rec.ordinal = s.invocations.size() + 1;
        rec.skill = c->skill;
        rec.task = c->task;
        rec.invoker = actor;
        rec.success = c->success;
        rec.latency_ms = c->latency_ms;
        if (!c->success) {
            rec.reward = RewardStatus::not_validated;
        } else if (skill.creator == actor) {
            rec.reward = RewardStatus::self_invocation;
        } else {
            rec.fee = skill.reward_schedule.alpha_j(s.ledger.next_reuse_index(c->skill));
            try {
                rec.reuse_index = s.ledger.accrue_reuse_reward(c->skill, skill.creator, actor, true, rec.fee).reuse_index;
                rec.reward = RewardStatus::paid;
            } catch (const KernelError& e) {
                if (e.code() != ErrorCode::InsufficientCredits) throw;
                rec.reward = RewardStatus::unpaid;
            }
        }
        s.tasks.note_skill_use(c->task, c->skill);
        s.invocations.push_back(rec);
        return Json{{"metrics", to_json(metrics)}, {"invocation", to_json(rec)}};
    }
    throw KernelError(ErrorCode::MalformedCommand, "unhandled command");
}

Kernel Kernel::replay(std::span<const Event> log, KernelConfig config, bool verify_entries) {
    Kernel k(std::move(config));
    std::uint64_t last_at = 0;
    for (std::size_t i = 0; i < log.size(); ++i) {
        const Event& ev = log[i];
        if (ev.seq != i + 1)
            throw KernelError(ErrorCode::CorruptLog, "expected seq " + std::to_string(i + 1) + ", found " +
                                                         std::to_string(ev.seq));
        if (ev.at <= last_at) throw KernelError(ErrorCode::CorruptLog, "non-monotone logical time at seq " + std::to_string(ev.seq));
        last_at = ev.at;
        Applied applied;
        try {
            applied = k.apply_json(ev.command, ev.actor);
        } catch (const KernelError& e) {
            throw KernelError(ErrorCode::CorruptLog, "seq " + std::to_string(ev.seq) + ": " + e.what());
        }
        if (applied.event.at != ev.at)
            throw KernelError(ErrorCode::CorruptLog, "logical time diverges at seq " + std::to_string(ev.seq));
        if (verify_entries) {
            Json recorded = Json::array(), recomputed = Json::array();
            for (const auto& le : ev.entries) recorded.push_back(to_json(le));
            for (const auto& le : applied.event.entries) recomputed.push_back(to_json(le));
            if (recorded != recomputed)
                throw KernelError(ErrorCode::CorruptLog, "ledger entries diverge at seq " + std::to_string(ev.seq));
        }
    }
    return k;
}

Json Kernel::state_json() const {
    const KernelState& s = *state_;
    Json participants = Json::array();
    for (const auto& [id, p] : s.participants.all())
        participants.push_back(Json{{"id", id}, {"kind", to_string(p.kind)}});
    Json invocations = Json::array();
    for (const auto& r : s.invocations) invocations.push_back(to_json(r));
    Json blobs = Json::object();
    for (const auto& [digest, bytes] : s.blobs) blobs[digest] = bytes.size();
    return Json{{"clock", s.clock},
                {"participants", participants},
                {"ledger", s.ledger.to_json()},
                {"tasks", s.tasks.to_json()},
                {"assets", s.assets.to_json()},
                {"invocations", invocations},
                {"blobs", blobs},
                {"next_deliverable", s.next_deliverable}};
}

std::string Kernel::state_digest() const { return sha256_hex(state_json().dump()); }

bool Kernel::deliverables_intact() const {
    for (const auto& [_, t] : state_->tasks.all()) {
        if (!t.deliverable) continue;
        auto it = state_->blobs.find(t.deliverable->payload_digest);
        if (it == state_->blobs.end() || sha256_hex(it->second) != t.deliverable->payload_digest) return false;
    }
    return true;
}

}  // namespace mk
