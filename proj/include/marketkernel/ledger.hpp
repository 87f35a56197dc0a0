// Credit accounts, bounty escrow, verified settlement and reuse rewards.
//
// Value lives in exactly one of four kinds of holder at any time:
//   - an account's free balance,
//   - an account's locked balance (balance of open escrows it funded directly),
//   - an open parent-advance escrow (a subtask's bounty drawn from its parent),
//   - a provisional hold (an accepted subtask waiting on its root task).
// Every LedgerEntry moves value between two holders, so the sum over all
// holders only changes through endowments (and minted reuse fees in mint mode).

#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "marketkernel/core.hpp"
#include "marketkernel/tx.hpp"

namespace mk {

enum class LedgerMode { fee, mint };

std::string_view to_string(LedgerMode m);
LedgerMode ledger_mode_from_string(std::string_view s);

struct Account {
    ParticipantId participant;
    Credits free;
    Credits locked;
};

enum class EscrowSource { participant_funded, parent_advance };
enum class EscrowStatus { open, settled, refunded };

struct Escrow {
    EscrowId id;
    TaskId task;
    ParticipantId funder;
    Credits amount;   // b_t, fixed at lock time
    Credits balance;  // amount still held here (amount - advances + returns)
    EscrowSource source = EscrowSource::participant_funded;
    EscrowStatus status = EscrowStatus::open;
    std::optional<EscrowId> parent;
    std::vector<EscrowId> children;
};

enum class HoldStatus { held, released, returned };

struct Hold {
    EscrowId escrow;
    ParticipantId beneficiary;
    Credits amount;
    HoldStatus status = HoldStatus::held;
};

enum class EntryKind { endowment, lock, settle, refund, reuse_fee, hold, release };

std::string_view to_string(EntryKind k);
EntryKind entry_kind_from_string(std::string_view s);

/// One double-entry movement. `debit` and `credit` are holder addresses:
/// a bare participant id, "escrow:<id>", "hold:<escrow id>" or "platform".
struct LedgerEntry {
    std::uint64_t seq = 0;
    EntryKind kind = EntryKind::endowment;
    std::string debit;
    std::string credit;
    Credits amount;
    std::optional<TaskId> task;
    std::optional<AssetId> skill;
    std::optional<std::uint64_t> reuse_index;  // j in the reward schedule
};

inline constexpr std::string_view kPlatformAddress = "platform";
std::string escrow_address(const EscrowId& id);
std::string hold_address(const EscrowId& id);

enum class AcceptanceOutcome { accepted, rejected, cancelled };

struct ReuseAccrual {
    Credits fee;
    std::uint64_t reuse_index = 0;
};

struct LedgerSnapshot {
    std::vector<Account> accounts;
    std::vector<Escrow> open_escrows;
    std::vector<Hold> active_holds;
    Credits total_free;
    Credits total_locked;
    Credits total_open_escrow;  // parent-advance escrows plus provisional holds
    Credits total;
    Credits endowed;
    Credits minted;
};

class Ledger {
public:
    explicit Ledger(LedgerMode mode = LedgerMode::fee) : mode_(mode) {}

    LedgerMode mode() const { return mode_; }

    const Account& open_account(const ParticipantId& participant, Credits endowment);

    /// Locks a bounty for `task`. Participant-funded escrows draw on the
    /// requester's free balance; parent-advance escrows draw on the open
    /// escrow of `parent_task`.
    const Escrow& lock_bounty(const ParticipantId& requester, const TaskId& task, Credits amount,
                              EscrowSource source,
                              const std::optional<TaskId>& parent_task = std::nullopt);

    /// Closes the escrow of `task`. Returns b_t when accepted and 0 otherwise.
    ///
    /// Open descendant escrows are refunded into their parents first. On
    /// acceptance of a root escrow every provisional hold beneath it is
    /// released to its beneficiary and the remaining balance goes to
    /// `lead_solver`; on acceptance of a subtask escrow the balance becomes a
    /// provisional hold for `lead_solver`. Any other outcome returns holds up
    /// the chain and refunds the balance to the funder.
    Credits settle_task(const TaskId& task, AcceptanceOutcome outcome,
                        const std::optional<ParticipantId>& lead_solver);

    /// Pays `fee` from `payer` (fee mode) or the platform (mint mode) to the
    /// skill's creator as the next reuse event j of `skill`. Throws
    /// InsufficientCredits, leaving the ledger untouched, when the payer
    /// cannot cover the fee.
    ReuseAccrual accrue_reuse_reward(const AssetId& skill, const ParticipantId& creator,
                                     const ParticipantId& payer, bool validated, Credits fee);

    /// Index j of the next paid reuse of `skill`.
    std::uint64_t next_reuse_index(const AssetId& skill) const;
    Credits reuse_income(const AssetId& skill) const;

    LedgerSnapshot balance_report() const;

    bool has_account(const ParticipantId& p) const { return accounts_.contains(p); }
    const Account& account(const ParticipantId& p) const;
    const Escrow* escrow_for(const TaskId& task) const;
    const Hold* hold_for(const EscrowId& escrow) const;
    const std::vector<LedgerEntry>& entries() const { return entries_.raw(); }
    const std::map<ParticipantId, Account>& accounts() const { return accounts_.raw(); }
    const std::map<EscrowId, Escrow>& escrows() const { return escrows_.raw(); }
    Credits endowed() const { return endowed_; }
    Credits minted() const { return minted_; }

    Json to_json() const;

    // Undo-log transaction around one kernel command.
    void begin_tx();
    void commit();
    void rollback();

private:
    Escrow& escrow_mut(const EscrowId& id);
    void record(EntryKind kind, std::string debit, std::string credit, Credits amount,
                const std::optional<TaskId>& task, const std::optional<AssetId>& skill = std::nullopt,
                std::optional<std::uint64_t> reuse_index = std::nullopt);

    void collapse_children(Escrow& escrow, bool keep_holds);
    void refund_into_parent_container(Escrow& child);
    void return_hold_subtree(const EscrowId& id);
    void release_hold_subtree(const EscrowId& id);
    void credit_container_of(Escrow& child, Credits amount, EntryKind kind, const std::string& debit);
    void debit_escrow(Escrow& e, Credits amount);

    LedgerMode mode_;
    TxMap<ParticipantId, Account> accounts_;
    TxMap<EscrowId, Escrow> escrows_;
    TxMap<TaskId, EscrowId> escrow_by_task_;
    TxMap<EscrowId, Hold> holds_;
    TxMap<AssetId, std::uint64_t> paid_reuses_;
    TxMap<AssetId, Credits> reuse_income_;
    TxLog<LedgerEntry> entries_;
    std::uint64_t next_escrow_ = 1;
    Credits endowed_;
    Credits minted_;

    struct Counters {
        std::uint64_t next_escrow;
        Credits endowed;
        Credits minted;
    };
    std::optional<Counters> saved_;
};

Json to_json(const LedgerEntry& e);
LedgerEntry ledger_entry_from_json(const Json& j);
Json to_json(const Account& a);
Json to_json(const Escrow& e);
Json to_json(const LedgerSnapshot& s);

}  // namespace mk
