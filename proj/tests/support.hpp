// Shared fixtures for the doctest suites.

#pragma once

#include <doctest.h>

#include <string>

#include "marketkernel/kernel.hpp"

namespace testing {

using mk::Json;

/// Runs `f` and checks that it throws KernelError with `code`.
template <class F>
void expect_error(mk::ErrorCode code, F&& f) {
    try {
        f();
    } catch (const mk::KernelError& e) {
        CHECK_MESSAGE(e.code() == code, "got " << std::string(e.what()) << ", wanted " << mk::to_string(code));
        return;
    }
    FAIL("expected " << mk::to_string(code));
}

inline bool conserved(const mk::Ledger& l) {
    const auto r = l.balance_report();
    return r.total == r.endowed + r.minted;
}

/// A kernel plus terse command helpers. Every helper goes through apply so
/// the event log stays complete.
struct World {
    mk::Kernel k;

    explicit World(mk::LedgerMode mode = mk::LedgerMode::fee) : k(mk::KernelConfig{mode, {}, std::make_shared<mk::TableExecutor>()}) {}

    Json run(const std::string& actor, Json cmd) { return k.apply_json(cmd, mk::ParticipantId{actor}).result; }

    void reg(const std::string& id, std::uint64_t endowment, const std::string& kind = "agent") {
        run(id, Json{{"type", "register_participant"}, {"id", id}, {"kind", kind}, {"endowment", endowment}});
    }
    std::string publish(const std::string& who, std::uint64_t bounty, const std::string& parent = "") {
        Json c{{"type", "publish_task"}, {"intent", "work"}, {"bounty", bounty}};
        if (!parent.empty()) c["parent"] = parent;
        return run(who, c)["id"].get<std::string>();
    }
    void claim(const std::string& who, const std::string& task) {
        run(who, Json{{"type", "claim_task"}, {"task", task}});
    }
    std::vector<std::string> decompose(const std::string& who, const std::string& task,
                                       std::vector<std::uint64_t> bounties) {
        Json plans = Json::array();
        for (auto b : bounties) plans.push_back(Json{{"intent", "sub"}, {"bounty", b}});
        std::vector<std::string> ids;
        const Json out = run(who, Json{{"type", "decompose"}, {"task", task}, {"subplans", plans}});
        for (const auto& c : out["children"])
            ids.push_back(c["id"].get<std::string>());
        return ids;
    }
    void submit(const std::string& who, const std::string& task, Json used = Json::array(),
                const std::string& payload = "result") {
        run(who, Json{{"type", "submit_deliverable"}, {"task", task}, {"payload", payload}, {"used_skills", used}});
    }
    Json review(const std::string& who, const std::string& task, bool accept, bool final = false,
                const std::string& feedback = "") {
        return run(who, Json{{"type", "review"},
                             {"task", task},
                             {"verdict", accept ? "accept" : "reject"},
                             {"feedback", feedback},
                             {"final", final}});
    }
    void cancel(const std::string& who, const std::string& task) {
        run(who, Json{{"type", "cancel_task"}, {"task", task}});
    }
    /// publish -> claim -> submit -> accept; returns the task id.
    std::string complete(const std::string& requester, const std::string& solver, std::uint64_t bounty) {
        const auto t = publish(requester, bounty);
        claim(solver, t);
        submit(solver, t);
        review(requester, t, true);
        return t;
    }
    Json invoke(const std::string& who, const std::string& skill, const std::string& task, bool success = true,
                std::uint64_t latency = 100) {
        return run(who, Json{{"type", "record_invocation"},
                             {"skill", skill},
                             {"task", task},
                             {"success", success},
                             {"latency_ms", latency}});
    }

    const mk::Account& acct(const std::string& p) const { return k.state().ledger.account(mk::ParticipantId{p}); }
    std::uint64_t free(const std::string& p) const { return acct(p).free.value(); }
    std::uint64_t locked(const std::string& p) const { return acct(p).locked.value(); }
    const mk::Task& task(const std::string& t) const { return k.state().tasks.get(mk::TaskId{t}); }
    const mk::Asset& asset(const std::string& a) const { return k.state().assets.get(mk::AssetId{a}); }
};

/// Manifest for a skill whose single test vector passes (or fails when `broken`).
inline Json skill_item(const std::string& name, Json deps = Json::array(), bool broken = false,
                       Json schedule = nullptr) {
    Json item{{"kind", "skill"},
              {"manifest",
               Json{{"name", name},
                    {"interface", Json{{"input", "x"}, {"output", "y"}}},
                    {"test_vectors", Json::array({Json{{"input", "in"}, {"expected", "out"}}})},
                    {"behavior", Json::array({Json{{"input", "in"}, {"output", broken ? "nope" : "out"}}})}}},
              {"payload", "code of " + name},
              {"dependencies", deps}};
    if (!schedule.is_null()) item["reward_schedule"] = schedule;
    return item;
}

/// Harvests `items` from accepted task `task` (proposed by `who`), validates
/// each with the mandatory checks and admits. Returns admitted ids.
inline std::vector<std::string> harvest(World& w, const std::string& who, const std::string& task, Json items) {
    const Json proposed = w.run(who, Json{{"type", "propose_assets"}, {"task", task}, {"items", items}});
    for (const auto& a : proposed["assets"]) w.run(who, Json{{"type", "validate_asset"}, {"asset", a["id"]}});
    std::vector<std::string> out;
    const Json admitted = w.run(who, Json{{"type", "admit_assets"}, {"task", task}});
    for (const auto& id : admitted["admitted"])
        out.push_back(id.get<std::string>());
    return out;
}

}  // namespace testing
