#include "marketkernel/ledger.hpp"

#include <stdexcept>

namespace mk {

std::string_view to_string(LedgerMode m) { return m == LedgerMode::fee ? "fee" : "mint"; }

LedgerMode ledger_mode_from_string(std::string_view s) {
    if (s == "fee") return LedgerMode::fee;
    if (s == "mint") return LedgerMode::mint;
    throw std::invalid_argument("unknown ledger mode: " + std::string(s));
}

std::string_view to_string(EntryKind k) {
    switch (k) {
        case EntryKind::endowment: return "endowment";
        case EntryKind::lock: return "lock";
        case EntryKind::settle: return "settle";
        case EntryKind::refund: return "refund";
        case EntryKind::reuse_fee: return "reuse_fee";
        case EntryKind::hold: return "hold";
        case EntryKind::release: return "release";
    }
    return "?";
}

EntryKind entry_kind_from_string(std::string_view s) {
    for (auto k : {EntryKind::endowment, EntryKind::lock, EntryKind::settle, EntryKind::refund,
                   EntryKind::reuse_fee, EntryKind::hold, EntryKind::release})
        if (to_string(k) == s) return k;
    throw std::invalid_argument("unknown ledger entry kind: " + std::string(s));
}

std::string escrow_address(const EscrowId& id) { return "escrow:" + id.value; }
std::string hold_address(const EscrowId& id) { return "hold:" + id.value; }

const Account& Ledger::open_account(const ParticipantId& participant, Credits endowment) {
    if (accounts_.contains(participant))
        throw KernelError(ErrorCode::DuplicateParticipant, participant.value);
    auto& acct = accounts_.slot(participant);
    acct.participant = participant;
    acct.free = endowment;
    endowed_ += endowment;
    record(EntryKind::endowment, std::string(kPlatformAddress), participant.value, endowment,
           std::nullopt);
    return acct;
}

const Escrow& Ledger::lock_bounty(const ParticipantId& requester, const TaskId& task,
                                  Credits amount, EscrowSource source,
                                  const std::optional<TaskId>& parent_task) {
    if (escrow_by_task_.contains(task))
        throw KernelError(ErrorCode::EscrowAlreadyExists, task.value);
    auto acct = accounts_.find(requester);
    if (acct == accounts_.end()) throw KernelError(ErrorCode::UnknownParticipant, requester.value);

    Escrow escrow;
    escrow.id = EscrowId{"e" + std::to_string(next_escrow_)};
    escrow.task = task;
    escrow.funder = requester;
    escrow.amount = amount;
    escrow.balance = amount;
    escrow.source = source;

    std::string debit;
    if (source == EscrowSource::participant_funded) {
        if (acct->second.free < amount)
            throw KernelError(ErrorCode::InsufficientCredits,
                              requester.value + " has " + std::to_string(acct->second.free.value()) +
                                  " free, needs " + std::to_string(amount.value()));
        Account& payer = accounts_.mut(requester);
        payer.free -= amount;
        payer.locked += amount;
        debit = requester.value;
    } else {
        if (!parent_task) throw KernelError(ErrorCode::UnknownTask, "parent-advance without parent");
        auto pit = escrow_by_task_.find(*parent_task);
        if (pit == escrow_by_task_.end()) throw KernelError(ErrorCode::UnknownTask, parent_task->value);
        Escrow& parent = escrow_mut(pit->second);
        if (parent.status != EscrowStatus::open)
            throw KernelError(ErrorCode::EscrowNotOpen, parent.id.value);
        if (parent.balance < amount)
            throw KernelError(ErrorCode::InsufficientCredits, "parent escrow headroom exhausted");
        debit_escrow(parent, amount);
        parent.children.push_back(escrow.id);
        escrow.parent = parent.id;
        debit = escrow_address(parent.id);
    }

    ++next_escrow_;
    const EscrowId id = escrow.id;
    escrow_by_task_.put(task, id);
    const Escrow& stored = escrows_.put(id, std::move(escrow));
    record(EntryKind::lock, debit, escrow_address(id), amount, task);
    return stored;
}

Credits Ledger::settle_task(const TaskId& task, AcceptanceOutcome outcome,
                            const std::optional<ParticipantId>& lead_solver) {
    auto found = escrow_by_task_.find(task);
    if (found == escrow_by_task_.end()) throw KernelError(ErrorCode::UnknownTask, task.value);
    Escrow& e = escrow_mut(found->second);
    if (e.status != EscrowStatus::open) throw KernelError(ErrorCode::EscrowNotOpen, e.id.value);

    const bool accepted = outcome == AcceptanceOutcome::accepted;
    if (accepted) {
        if (!lead_solver || !accounts_.contains(*lead_solver))
            throw std::logic_error("accepted settlement needs a registered lead solver");
    }

    collapse_children(e, accepted);

    if (!accepted) {
        if (e.source == EscrowSource::participant_funded) {
            const Credits amt = e.balance;
            debit_escrow(e, amt);
            accounts_.mut(e.funder).free += amt;
            record(EntryKind::refund, escrow_address(e.id), e.funder.value, amt, task);
        } else {
            refund_into_parent_container(e);
        }
        e.status = EscrowStatus::refunded;
        return Credits{0};
    }

    if (!e.parent) {
        for (const auto& cid : e.children) {
            const Escrow& c = escrows_.at(cid);
            if (c.status == EscrowStatus::settled) release_hold_subtree(cid);
        }
        const Credits amt = e.balance;
        debit_escrow(e, amt);
        accounts_.mut(*lead_solver).free += amt;
        record(EntryKind::settle, escrow_address(e.id), lead_solver->value, amt, task);
    } else {
        const Credits amt = e.balance;
        debit_escrow(e, amt);
        holds_.put(e.id, Hold{e.id, *lead_solver, amt, HoldStatus::held});
        record(EntryKind::hold, escrow_address(e.id), hold_address(e.id), amt, task);
    }
    e.status = EscrowStatus::settled;
    return e.amount;
}

ReuseAccrual Ledger::accrue_reuse_reward(const AssetId& skill, const ParticipantId& creator,
                                         const ParticipantId& payer, bool validated, Credits fee) {
    if (!validated) throw KernelError(ErrorCode::InvocationNotValidated, skill.value);
    auto cit = accounts_.find(creator);
    if (cit == accounts_.end()) throw KernelError(ErrorCode::UnknownParticipant, creator.value);

    const std::uint64_t j = next_reuse_index(skill);
    std::string debit;
    if (mode_ == LedgerMode::fee) {
        auto pit = accounts_.find(payer);
        if (pit == accounts_.end()) throw KernelError(ErrorCode::UnknownParticipant, payer.value);
        if (pit->second.free < fee)
            throw KernelError(ErrorCode::InsufficientCredits, "reuse fee for " + skill.value);
        accounts_.mut(payer).free -= fee;
        debit = payer.value;
    } else {
        minted_ += fee;
        debit = std::string(kPlatformAddress);
    }
    accounts_.mut(creator).free += fee;
    ++paid_reuses_.slot(skill);
    reuse_income_.slot(skill) += fee;
    record(EntryKind::reuse_fee, debit, creator.value, fee, std::nullopt, skill, j);
    return ReuseAccrual{fee, j};
}

std::uint64_t Ledger::next_reuse_index(const AssetId& skill) const {
    auto it = paid_reuses_.find(skill);
    return (it == paid_reuses_.end() ? 0 : it->second) + 1;
}

Credits Ledger::reuse_income(const AssetId& skill) const {
    auto it = reuse_income_.find(skill);
    return it == reuse_income_.end() ? Credits{0} : it->second;
}

LedgerSnapshot Ledger::balance_report() const {
    LedgerSnapshot s;
    for (const auto& [_, a] : accounts_) {
        s.accounts.push_back(a);
        s.total_free += a.free;
        s.total_locked += a.locked;
    }
    for (const auto& [_, e] : escrows_) {
        if (e.status != EscrowStatus::open) continue;
        s.open_escrows.push_back(e);
        if (e.source == EscrowSource::parent_advance) s.total_open_escrow += e.balance;
    }
    for (const auto& [_, h] : holds_) {
        if (h.status != HoldStatus::held) continue;
        s.active_holds.push_back(h);
        s.total_open_escrow += h.amount;
    }
    s.total = s.total_free + s.total_locked + s.total_open_escrow;
    s.endowed = endowed_;
    s.minted = minted_;
    return s;
}

const Account& Ledger::account(const ParticipantId& p) const {
    auto it = accounts_.find(p);
    if (it == accounts_.end()) throw KernelError(ErrorCode::UnknownParticipant, p.value);
    return it->second;
}

const Escrow* Ledger::escrow_for(const TaskId& task) const {
    auto it = escrow_by_task_.find(task);
    return it == escrow_by_task_.end() ? nullptr : &escrows_.at(it->second);
}

const Hold* Ledger::hold_for(const EscrowId& escrow) const {
    auto it = holds_.find(escrow);
    return it == holds_.end() ? nullptr : &it->second;
}

void Ledger::begin_tx() {
    saved_ = Counters{next_escrow_, endowed_, minted_};
    accounts_.begin_tx();
    escrows_.begin_tx();
    escrow_by_task_.begin_tx();
    holds_.begin_tx();
    paid_reuses_.begin_tx();
    reuse_income_.begin_tx();
    entries_.begin_tx();
}

void Ledger::commit() {
    saved_.reset();
    accounts_.commit();
    escrows_.commit();
    escrow_by_task_.commit();
    holds_.commit();
    paid_reuses_.commit();
    reuse_income_.commit();
    entries_.commit();
}

void Ledger::rollback() {
    if (saved_) {
        next_escrow_ = saved_->next_escrow;
        endowed_ = saved_->endowed;
        minted_ = saved_->minted;
    }
    saved_.reset();
    accounts_.rollback();
    escrows_.rollback();
    escrow_by_task_.rollback();
    holds_.rollback();
    paid_reuses_.rollback();
    reuse_income_.rollback();
    entries_.rollback();
}

Escrow& Ledger::escrow_mut(const EscrowId& id) { return escrows_.mut(id); }

void Ledger::record(EntryKind kind, std::string debit, std::string credit, Credits amount,
                    const std::optional<TaskId>& task, const std::optional<AssetId>& skill,
                    std::optional<std::uint64_t> reuse_index) {
    LedgerEntry e;
    e.seq = entries_.size() + 1;
    e.kind = kind;
    e.debit = std::move(debit);
    e.credit = std::move(credit);
    e.amount = amount;
    e.task = task;
    e.skill = skill;
    e.reuse_index = reuse_index;
    entries_.push_back(std::move(e));
}

void Ledger::debit_escrow(Escrow& e, Credits amount) {
    e.balance -= amount;
    if (e.source == EscrowSource::participant_funded) accounts_.mut(e.funder).locked -= amount;
}

// Open children are cancelled into `escrow`; settled children keep their
// holds only when `keep_holds` is set.
void Ledger::collapse_children(Escrow& escrow, bool keep_holds) {
    for (const auto& cid : escrow.children) {
        Escrow& c = escrow_mut(cid);
        if (c.status == EscrowStatus::open) {
            collapse_children(c, false);
            refund_into_parent_container(c);
            c.status = EscrowStatus::refunded;
        } else if (c.status == EscrowStatus::settled && !keep_holds) {
            return_hold_subtree(cid);
        }
    }
}

void Ledger::refund_into_parent_container(Escrow& child) {
    const Credits amt = child.balance;
    debit_escrow(child, amt);
    credit_container_of(child, amt, EntryKind::refund, escrow_address(child.id));
}

void Ledger::credit_container_of(Escrow& child, Credits amount, EntryKind kind,
                                 const std::string& debit) {
    Escrow& parent = escrow_mut(*child.parent);
    if (parent.status == EscrowStatus::open) {
        parent.balance += amount;
        if (parent.source == EscrowSource::participant_funded)
            accounts_.mut(parent.funder).locked += amount;
        record(kind, debit, escrow_address(parent.id), amount, child.task);
        return;
    }
    auto h = holds_.find(parent.id);
    if (parent.status == EscrowStatus::settled && h != holds_.end() &&
        h->second.status == HoldStatus::held) {
        holds_.mut(parent.id).amount += amount;
        record(kind, debit, hold_address(parent.id), amount, child.task);
        return;
    }
    throw std::logic_error("no open container above escrow " + child.id.value);
}

void Ledger::return_hold_subtree(const EscrowId& id) {
    Escrow& c = escrow_mut(id);
    Hold& h = holds_.mut(id);
    if (h.status != HoldStatus::held) return;
    for (const auto& gid : c.children)
        if (escrows_.at(gid).status == EscrowStatus::settled) return_hold_subtree(gid);
    const Credits amt = h.amount;
    h.status = HoldStatus::returned;
    credit_container_of(c, amt, EntryKind::refund, hold_address(id));
}

void Ledger::release_hold_subtree(const EscrowId& id) {
    Hold& h = holds_.mut(id);
    if (h.status != HoldStatus::held) return;
    h.status = HoldStatus::released;
    accounts_.mut(h.beneficiary).free += h.amount;
    record(EntryKind::release, hold_address(id), h.beneficiary.value, h.amount,
           escrows_.at(id).task);
    for (const auto& gid : escrows_.at(id).children)
        if (escrows_.at(gid).status == EscrowStatus::settled) release_hold_subtree(gid);
}

namespace {

std::string_view to_string(EscrowSource s) {
    return s == EscrowSource::participant_funded ? "participant-funded" : "parent-advance";
}

std::string_view to_string(EscrowStatus s) {
    switch (s) {
        case EscrowStatus::open: return "open";
        case EscrowStatus::settled: return "settled";
        case EscrowStatus::refunded: return "refunded";
    }
    return "?";
}

std::string_view to_string(HoldStatus s) {
    switch (s) {
        case HoldStatus::held: return "held";
        case HoldStatus::released: return "released";
        case HoldStatus::returned: return "returned";
    }
    return "?";
}

Json hold_json(const Hold& h) {
    return Json{{"escrow", h.escrow},
                {"beneficiary", h.beneficiary},
                {"amount", h.amount},
                {"status", to_string(h.status)}};
}

}  // namespace

Json to_json(const LedgerEntry& e) {
    Json j{{"seq", e.seq},
           {"kind", to_string(e.kind)},
           {"debit", e.debit},
           {"credit", e.credit},
           {"amount", e.amount}};
    if (e.task) j["task"] = *e.task;
    if (e.skill) j["skill"] = *e.skill;
    if (e.reuse_index) j["reuse_index"] = *e.reuse_index;
    return j;
}

LedgerEntry ledger_entry_from_json(const Json& j) {
    LedgerEntry e;
    e.seq = j.at("seq").get<std::uint64_t>();
    e.kind = entry_kind_from_string(j.at("kind").get<std::string>());
    e.debit = j.at("debit").get<std::string>();
    e.credit = j.at("credit").get<std::string>();
    e.amount = j.at("amount").get<Credits>();
    if (j.contains("task")) e.task = j["task"].get<TaskId>();
    if (j.contains("skill")) e.skill = j["skill"].get<AssetId>();
    if (j.contains("reuse_index")) e.reuse_index = j["reuse_index"].get<std::uint64_t>();
    return e;
}

Json to_json(const Account& a) {
    return Json{{"participant", a.participant}, {"free", a.free}, {"locked", a.locked}};
}

Json to_json(const Escrow& e) {
    Json j{{"escrow_id", e.id},
           {"task", e.task},
           {"funder", e.funder},
           {"amount", e.amount},
           {"balance", e.balance},
           {"source", to_string(e.source)},
           {"status", to_string(e.status)}};
    if (e.parent) j["parent"] = *e.parent;
    j["children"] = e.children;
    return j;
}

Json to_json(const LedgerSnapshot& s) {
    Json accounts = Json::array();
    for (const auto& a : s.accounts) accounts.push_back(to_json(a));
    Json escrows = Json::array();
    for (const auto& e : s.open_escrows) escrows.push_back(to_json(e));
    Json holds = Json::array();
    for (const auto& h : s.active_holds) holds.push_back(hold_json(h));
    return Json{{"accounts", accounts},
                {"open_escrows", escrows},
                {"active_holds", holds},
                {"total_free", s.total_free},
                {"total_locked", s.total_locked},
                {"total_open_escrow", s.total_open_escrow},
                {"total", s.total},
                {"endowed", s.endowed},
                {"minted", s.minted}};
}

Json Ledger::to_json() const {
    Json accounts = Json::array();
    for (const auto& [_, a] : accounts_) accounts.push_back(mk::to_json(a));
    Json escrows = Json::array();
    for (const auto& [_, e] : escrows_) escrows.push_back(mk::to_json(e));
    Json holds = Json::array();
    for (const auto& [_, h] : holds_) holds.push_back(hold_json(h));
    Json reuse = Json::object();
    for (const auto& [skill, n] : paid_reuses_)
        reuse[skill.value] = Json{{"paid", n}, {"income", reuse_income_.at(skill)}};
    Json entries = Json::array();
    for (const auto& e : entries_) entries.push_back(mk::to_json(e));
    return Json{{"mode", to_string(mode_)},
                {"endowed", endowed_},
                {"minted", minted_},
                {"accounts", accounts},
                {"escrows", escrows},
                {"holds", holds},
                {"reuse", reuse},
                {"entries", entries}};
}

}  // namespace mk
