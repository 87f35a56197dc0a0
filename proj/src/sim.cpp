#include "marketkernel/sim.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>

namespace mk::sim {

namespace {

[[noreturn]] void parse_error(const std::string& what) { throw KernelError(ErrorCode::ScenarioParseError, what); }

double probability(const Json& j, const char* key, double fallback) {
    if (!j.contains(key)) return fallback;
    if (!j[key].is_number()) parse_error(std::string(key) + " must be a number");
    const double p = j[key].get<double>();
    if (!(p >= 0.0 && p <= 1.0)) parse_error(std::string(key) + " must lie in [0, 1]");
    return p;
}

std::uint64_t count(const Json& j, const char* key, std::uint64_t fallback) {
    if (!j.contains(key)) return fallback;
    if (!is_non_negative_integer(j[key])) parse_error(std::string(key) + " must be a non-negative integer");
    return j[key].get<std::uint64_t>();
}

PolicyBlock parse_policy(const Json& j) {
    if (!j.is_object()) parse_error("policy must be an object");
    PolicyBlock p;
    if (j.contains("rounds")) p.rounds = count(j, "rounds", 0);
    p.task_arrival_rate = probability(j, "task_arrival_rate", p.task_arrival_rate);
    if (j.contains("bounty_range")) {
        const Json& r = j["bounty_range"];
        if (!r.is_array() || r.size() != 2 || !is_non_negative_integer(r[0]) || !is_non_negative_integer(r[1]))
            parse_error("bounty_range must be [min, max]");
        p.bounty_min = r[0].get<std::uint64_t>();
        p.bounty_max = r[1].get<std::uint64_t>();
        if (p.bounty_min > p.bounty_max) parse_error("bounty_range min exceeds max");
    }
    p.decomposition_probability = probability(j, "decomposition_probability", p.decomposition_probability);
    p.skill_reuse_preference = probability(j, "skill_reuse_preference", p.skill_reuse_preference);
    p.review_strictness = probability(j, "review_strictness", p.review_strictness);
    p.max_revisions = count(j, "max_revisions", p.max_revisions);
    if (p.max_revisions == 0) parse_error("max_revisions must be at least 1");
    p.cancel_probability = probability(j, "cancel_probability", p.cancel_probability);
    p.new_skill_probability = probability(j, "new_skill_probability", p.new_skill_probability);
    p.validation_failure_probability =
        probability(j, "validation_failure_probability", p.validation_failure_probability);
    p.invocations_per_task = count(j, "invocations_per_task", p.invocations_per_task);
    if (j.contains("skill_outcomes")) {
        if (!j["skill_outcomes"].is_object()) parse_error("skill_outcomes must map asset names to outcomes");
        for (const auto& [name, o] : j["skill_outcomes"].items()) {
            SkillOutcome so;
            so.success = probability(o, "success", so.success);
            so.latency_min_ms = count(o, "latency_min_ms", so.latency_min_ms);
            so.latency_max_ms = count(o, "latency_max_ms", so.latency_max_ms);
            if (so.latency_min_ms > so.latency_max_ms) parse_error("latency range of " + name + " is inverted");
            p.skill_outcomes[name] = so;
        }
    }
    return p;
}

}  // namespace

Scenario parse_scenario(const Json& j) {
    if (!j.is_object()) parse_error("scenario must be a JSON object");
    Scenario s;
    s.schema_version = static_cast<int>(count(j, "schema_version", 0));
    if (s.schema_version != kScenarioSchemaVersion)
        parse_error("unsupported schema_version " + std::to_string(s.schema_version));
    if (!j.contains("name") || !j["name"].is_string()) parse_error("scenario needs a name");
    s.name = j["name"].get<std::string>();
    s.seed = count(j, "seed", 0);
    s.rounds = count(j, "rounds", 0);
    if (j.contains("mode") && !j["mode"].is_string()) parse_error("mode must be a string");
    try {
        s.mode = ledger_mode_from_string(j.value("mode", std::string("fee")));
    } catch (const std::invalid_argument& e) {
        parse_error(e.what());
    }

    if (!j.contains("participants") || !j["participants"].is_array()) parse_error("participants must be an array");
    std::set<ParticipantId> seen;
    for (const auto& p : j["participants"]) {
        if (!p.is_object() || !p.contains("id") || !p["id"].is_string()) parse_error("participant needs an id");
        ScenarioParticipant sp;
        sp.id = ParticipantId{p["id"].get<std::string>()};
        if (!ParticipantRegistry::valid_id(sp.id.value)) parse_error("invalid participant id " + sp.id.value);
        if (!seen.insert(sp.id).second) parse_error("duplicate participant " + sp.id.value);
        try {
            sp.kind = participant_kind_from_string(p.value("kind", std::string("agent")));
        } catch (const KernelError& e) {
            parse_error(e.detail());
        }
        sp.endowment = Credits{count(p, "endowment", 0)};
        if (p.contains("roles")) {
            if (!p["roles"].is_array()) parse_error("roles must be an array");
            for (const auto& r : p["roles"]) {
                if (!r.is_string() || (r != "requester" && r != "solver"))
                    parse_error("roles may only contain requester and solver");
                sp.roles.insert(r.get<std::string>());
            }
        }
        s.participants.push_back(std::move(sp));
    }

    for (const auto& step : j.value("script", Json::array())) {
        if (!step.is_object()) parse_error("script steps must be objects");
        if (step.contains("policy")) {
            s.script.emplace_back(parse_policy(step["policy"]));
            continue;
        }
        ScriptAction a;
        if (!step.contains("actor") || !step["actor"].is_string()) parse_error("script action needs an actor");
        if (!step.contains("command") || !step["command"].is_object()) parse_error("script action needs a command");
        a.actor = ParticipantId{step["actor"].get<std::string>()};
        a.command = step["command"];
        try {
            command_from_json(a.command);
        } catch (const KernelError& e) {
            parse_error("bad command for " + a.actor.value + ": " + e.detail());
        }
        if (step.contains("expect_error")) {
            if (!step["expect_error"].is_string()) parse_error("expect_error must be an error code");
            a.expect_error = step["expect_error"].get<std::string>();
        }
        s.script.emplace_back(std::move(a));
    }
    return s;
}

Scenario load_scenario(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw KernelError(ErrorCode::IoFailure, "cannot read " + path);
    Json j;
    try {
        j = Json::parse(in);
    } catch (const Json::parse_error& e) {
        parse_error(path + ": " + e.what());
    }
    return parse_scenario(j);
}

std::string log_digest(std::span<const Event> log) { return sha256_hex(serialize_log(log)); }

// ---------------------------------------------------------------------------
// Report serialization

namespace {

const std::vector<TaskState> kAllStates{TaskState::Published, TaskState::Claimed,  TaskState::InReview,
                                        TaskState::Accepted,  TaskState::Rejected, TaskState::FinallyRejected,
                                        TaskState::Cancelled};

Json to_json(const RoundMetrics& r) {
    Json top = Json::array();
    for (const auto& s : r.top_skills)
        top.push_back(Json{{"asset", s.id}, {"score", s.score}, {"invocations", s.invocations},
                           {"reuse_income", s.reuse_income}});
    Json credits = Json::object();
    for (const auto& [p, c] : r.credits) credits[p.value] = c;
    Json states = Json::object();
    for (const auto& [name, n] : r.tasks_by_state) states[name] = n;
    return Json{{"round", r.round},           {"tasks", states},
                {"assets", r.asset_count},    {"reuse_paid", r.reuse_paid},
                {"credits", credits},         {"total_credits", r.total_credits},
                {"top_skills", top}};
}

RoundMetrics round_from_json(const Json& j) {
    RoundMetrics r;
    r.round = j.at("round").get<std::uint64_t>();
    for (const auto& [name, n] : j.at("tasks").items()) r.tasks_by_state[name] = n.get<std::uint64_t>();
    r.asset_count = j.at("assets").get<std::uint64_t>();
    r.reuse_paid = j.at("reuse_paid").get<Credits>();
    for (const auto& [p, c] : j.at("credits").items()) r.credits[ParticipantId{p}] = c.get<Credits>();
    r.total_credits = j.at("total_credits").get<Credits>();
    for (const auto& s : j.at("top_skills"))
        r.top_skills.push_back(SkillSummary{s.at("asset").get<AssetId>(), s.at("score").get<double>(),
                                            s.at("invocations").get<std::uint64_t>(),
                                            s.at("reuse_income").get<Credits>()});
    return r;
}

}  // namespace

Json to_json(const SimReport& r) {
    Json rounds = Json::array();
    for (const auto& row : r.rounds) rounds.push_back(to_json(row));
    return Json{{"schema_version", kScenarioSchemaVersion},
                {"scenario", r.scenario},
                {"seed", r.seed},
                {"mode", to_string(r.mode)},
                {"events", r.events},
                {"conservation_ok", r.conservation_ok},
                {"log_digest", r.log_digest},
                {"state_digest", r.state_digest},
                {"rounds", rounds}};
}

SimReport report_from_json(const Json& j) {
    try {
        SimReport r;
        r.scenario = j.at("scenario").get<std::string>();
        r.seed = j.at("seed").get<std::uint64_t>();
        r.mode = ledger_mode_from_string(j.at("mode").get<std::string>());
        r.events = j.at("events").get<std::uint64_t>();
        r.conservation_ok = j.at("conservation_ok").get<bool>();
        r.log_digest = j.at("log_digest").get<std::string>();
        r.state_digest = j.at("state_digest").get<std::string>();
        for (const auto& row : j.at("rounds")) r.rounds.push_back(round_from_json(row));
        return r;
    } catch (const Json::exception& e) {
        throw KernelError(ErrorCode::ScenarioParseError, std::string("bad report: ") + e.what());
    }
}

// ---------------------------------------------------------------------------
// Runner

namespace {

class Runner {
public:
    Runner(const Scenario& sc, std::uint64_t seed, const RoundObserver& observer)
        : scenario_(sc), kernel_(KernelConfig{sc.mode, {}, std::make_shared<TableExecutor>()}), rng_(seed),
          observer_(observer) {
        report_.scenario = sc.name;
        report_.seed = seed;
        report_.mode = sc.mode;
        report_.conservation_ok = true;
        for (const auto& p : sc.participants) {
            const bool human = p.kind == ParticipantKind::human;
            if (p.roles.empty() ? human : p.roles.contains("requester")) requesters_.push_back(p.id);
            if (p.roles.empty() ? !human : p.roles.contains("solver")) solvers_.push_back(p.id);
        }
    }

    SimRun run() {
        for (const auto& p : scenario_.participants)
            kernel_.apply(cmd::RegisterParticipant{p.id, p.kind, p.endowment}, p.id);

        bool pending_actions = false;
        for (const auto& entry : scenario_.script) {
            if (const auto* a = std::get_if<ScriptAction>(&entry)) {
                run_action(*a);
                pending_actions = true;
                continue;
            }
            if (pending_actions) record_round();
            pending_actions = false;
            const auto& policy = std::get<PolicyBlock>(entry);
            const std::uint64_t rounds = policy.rounds.value_or(scenario_.rounds);
            for (std::uint64_t r = 0; r < rounds; ++r) {
                policy_round(policy);
                record_round();
            }
        }
        if (pending_actions || report_.rounds.empty()) record_round();

        report_.events = kernel_.events().size();
        report_.log_digest = log_digest(kernel_.events());
        report_.state_digest = kernel_.state_digest();
        return SimRun{std::move(report_), std::move(kernel_)};
    }

private:
    const KernelState& st() const { return kernel_.state(); }

    void run_action(const ScriptAction& a) {
        try {
            kernel_.apply_json(a.command, a.actor);
        } catch (const KernelError& e) {
            if (a.expect_error && *a.expect_error == to_string(e.code())) return;
            throw KernelError(ErrorCode::PolicyPreconditionViolation,
                              "scripted " + a.command.value("type", std::string("command")) + " by " +
                                  a.actor.value + " failed: " + e.what());
        }
        if (a.expect_error)
            throw KernelError(ErrorCode::PolicyPreconditionViolation,
                              "scripted " + a.command.value("type", std::string("command")) + " by " +
                                  a.actor.value + " succeeded, expected " + *a.expect_error);
    }

    std::optional<Json> attempt(const Command& c, const ParticipantId& actor) {
        try {
            return kernel_.apply(c, actor).result;
        } catch (const KernelError&) {
            return std::nullopt;
        }
    }

    bool chance(double p) { return std::bernoulli_distribution(p)(rng_); }
    std::uint64_t uniform(std::uint64_t lo, std::uint64_t hi) {
        return std::uniform_int_distribution<std::uint64_t>(lo, hi)(rng_);
    }
    template <class T>
    const T& pick(const std::vector<T>& v) {
        return v[uniform(0, v.size() - 1)];
    }

    std::vector<TaskId> tasks_in(TaskState s) const {
        std::vector<TaskId> out;
        for (const auto& [id, t] : st().tasks.all())
            if (t.state == s) out.push_back(id);
        return out;
    }

    std::vector<AssetId> admitted_skills() const {
        std::vector<AssetId> out;
        for (const auto& id : st().assets.admitted())
            if (st().assets.get(id).kind == AssetKind::skill) out.push_back(id);
        return out;
    }

    const SkillOutcome& outcome_for(const PolicyBlock& policy, const Asset& skill) {
        if (auto it = policy.skill_outcomes.find(skill.name); it != policy.skill_outcomes.end()) return it->second;
        auto it = drawn_.find(skill.name);
        if (it == drawn_.end()) {
            SkillOutcome o;
            o.success = std::uniform_real_distribution<double>(0.5, 0.95)(rng_);
            o.latency_min_ms = uniform(20, 400);
            o.latency_max_ms = o.latency_min_ms + uniform(0, 2000);
            it = drawn_.emplace(skill.name, o).first;
        }
        return it->second;
    }

    void policy_round(const PolicyBlock& p) {
        ++round_no_;
        // arrivals
        for (const auto& r : requesters_) {
            if (!chance(p.task_arrival_rate)) continue;
            const Credits bounty{uniform(p.bounty_min, p.bounty_max)};
            if (st().ledger.account(r).free < bounty) continue;
            attempt(cmd::PublishTask{"round " + std::to_string(round_no_) + " request from " + r.value, bounty,
                                     std::nullopt},
                    r);
        }
        // withdrawals of untouched root tasks
        for (const auto& id : tasks_in(TaskState::Published)) {
            const Task& t = st().tasks.get(id);
            if (!t.parent && chance(p.cancel_probability)) attempt(cmd::CancelTask{id}, ParticipantId{t.requester});
        }
        // claims and revisions
        for (const auto& id : tasks_in(TaskState::Published)) {
            std::vector<ParticipantId> eligible;
            for (const auto& s : solvers_)
                if (s != st().tasks.get(id).requester) eligible.push_back(s);
            if (!eligible.empty()) attempt(cmd::ClaimTask{id}, pick(eligible));
        }
        for (const auto& id : tasks_in(TaskState::Rejected))
            attempt(cmd::ClaimTask{id}, *st().tasks.get(id).claimant);
        // work
        for (const auto& id : tasks_in(TaskState::Claimed)) work_on(p, id);
        // reviews
        std::vector<TaskId> accepted;
        for (const auto& id : tasks_in(TaskState::InReview)) {
            const Task& t = st().tasks.get(id);
            const ParticipantId reviewer = t.requester;
            const auto rejections = static_cast<std::uint64_t>(std::count_if(
                t.review_history.begin(), t.review_history.end(),
                [](const ReviewRecord& r) { return r.verdict == Verdict::reject; }));
            if (chance(p.review_strictness)) {
                const bool final = rejections + 1 >= p.max_revisions;
                attempt(cmd::Review{id, Verdict::reject, final ? "not acceptable" : "needs revision", final},
                        reviewer);
            } else if (attempt(cmd::Review{id, Verdict::accept, "accepted", false}, reviewer)) {
                accepted.push_back(id);
            }
        }
        for (const auto& id : accepted)
            if (st().tasks.get(id).state == TaskState::Accepted && chance(p.new_skill_probability)) harvest(p, id);
    }

    void work_on(const PolicyBlock& p, const TaskId& id) {
        const Task task = st().tasks.get(id);
        const ParticipantId solver = *task.claimant;
        if (!task.parent && task.plan.empty() && task.bounty.value() >= 2 && chance(p.decomposition_probability)) {
            const std::uint64_t k = uniform(1, 2);
            std::vector<Subplan> plans;
            for (std::uint64_t i = 0; i < k; ++i)
                plans.push_back(Subplan{"part " + std::to_string(i + 1) + " of " + id.value,
                                        Credits{uniform(1, task.bounty.value() / (k + 1))}});
            if (attempt(cmd::Decompose{id, plans}, solver)) return;
        }
        if (!task.plan.empty()) {
            const bool open = std::any_of(task.plan.begin(), task.plan.end(), [&](const TaskId& c) {
                return !is_terminal(st().tasks.get(c).state);
            });
            if (open && !chance(0.2)) return;
        }

        std::set<AssetId> used;
        for (std::uint64_t i = 0; i < p.invocations_per_task; ++i) {
            const auto skills = admitted_skills();
            if (skills.empty()) break;
            AssetId chosen;
            if (chance(p.skill_reuse_preference)) {
                const std::set<AssetId> all(skills.begin(), skills.end());
                chosen = st().assets.score_capability(all, kernel_.config().weights).front().id;
            } else {
                chosen = pick(skills);
            }
            const SkillOutcome o = outcome_for(p, st().assets.get(chosen));
            const bool ok = chance(o.success);
            const std::uint64_t latency = uniform(o.latency_min_ms, o.latency_max_ms);
            if (attempt(cmd::RecordInvocation{chosen, id, ok, latency}, solver) && ok) used.insert(chosen);
        }
        cmd::SubmitDeliverable sub;
        sub.task = id;
        sub.payload = "deliverable for " + id.value + " in round " + std::to_string(round_no_) + " revision " +
                      std::to_string(task.review_history.size());
        sub.used_skills.assign(used.begin(), used.end());
        attempt(sub, solver);
    }

    void harvest(const PolicyBlock& p, const TaskId& id) {
        const ParticipantId solver = *st().tasks.get(id).claimant;
        const auto skills = admitted_skills();
        const auto everything = st().assets.admitted();

        std::string name;
        if (!skills.empty() && chance(0.2)) name = st().assets.get(pick(skills)).name;
        else name = "skill-" + std::to_string(++skill_counter_);

        CandidateItem skill;
        skill.kind = AssetKind::skill;
        const bool broken = chance(p.validation_failure_probability);
        const std::string in = "input-" + name;
        const std::string out = "output-" + name;
        skill.manifest = Json{{"name", name},
                              {"interface", Json{{"input", "string"}, {"output", "string"}}},
                              {"test_vectors", Json::array({Json{{"input", in}, {"expected", out}}})},
                              {"behavior", Json::array({Json{{"input", in}, {"output", broken ? "wrong" : out}}})}};
        skill.payload = "implementation of " + name + " harvested from " + id.value;
        if (chance(0.5)) skill.reward_schedule = RewardSchedule::constant(uniform(0, 3));
        else skill.reward_schedule = RewardSchedule::decaying(uniform(2, 6), 0.5 + 0.1 * static_cast<double>(uniform(0, 4)));
        const auto deps = everything.empty() ? 0 : uniform(0, std::min<std::uint64_t>(2, everything.size()));
        std::set<AssetId> chosen;
        for (std::uint64_t i = 0; i < deps; ++i) {
            const AssetId& d = pick(everything);
            if (!chosen.insert(d).second) continue;
            static constexpr Relation kRel[] = {Relation::depends, Relation::derives, Relation::composes};
            skill.dependencies.push_back(DependencyClaim{d, kRel[uniform(0, 2)]});
        }
        std::vector<CandidateItem> items{skill};
        if (chance(0.5)) {
            CandidateItem exp;
            exp.kind = AssetKind::experience;
            exp.manifest = Json{{"name", "notes-" + id.value}, {"summary", "what worked on " + id.value}};
            exp.payload = "experience record for " + id.value;
            items.push_back(exp);
        }
        const auto proposed = attempt(cmd::ProposeAssets{id, items}, solver);
        if (!proposed) return;
        for (const auto& a : (*proposed)["assets"])
            attempt(cmd::ValidateAsset{a["id"].get<AssetId>(), {}}, solver);
        attempt(cmd::AdmitAssets{id}, solver);
    }

    void record_round() {
        RoundMetrics m;
        m.round = report_.rounds.size();
        for (auto s : kAllStates) m.tasks_by_state[std::string(to_string(s))] = 0;
        for (const auto& [_, t] : st().tasks.all()) ++m.tasks_by_state[std::string(to_string(t.state))];
        m.asset_count = st().assets.admitted_count();
        for (const auto& [id, a] : st().assets.all())
            if (a.kind == AssetKind::skill) m.reuse_paid += st().ledger.reuse_income(id);
        for (const auto& [p, acct] : st().ledger.accounts()) m.credits[p] = acct.free + acct.locked;
        const auto report = st().ledger.balance_report();
        m.total_credits = report.total;
        if (report.total != report.endowed + report.minted) report_.conservation_ok = false;
        const auto skills = admitted_skills();
        const auto ranked = skills.empty() ? std::vector<ScoredSkill>{}
                                           : st().assets.score_capability({skills.begin(), skills.end()},
                                                                          kernel_.config().weights);
        for (std::size_t i = 0; i < ranked.size() && i < 5; ++i) {
            const Asset& a = st().assets.get(ranked[i].id);
            m.top_skills.push_back(SkillSummary{a.id, ranked[i].score, a.metrics.invocation_count,
                                                st().ledger.reuse_income(a.id)});
        }
        if (observer_) observer_(m, kernel_);
        report_.rounds.push_back(std::move(m));
    }

    const Scenario& scenario_;
    Kernel kernel_;
    std::mt19937_64 rng_;
    const RoundObserver& observer_;
    SimReport report_;
    std::vector<ParticipantId> requesters_;
    std::vector<ParticipantId> solvers_;
    std::map<std::string, SkillOutcome> drawn_;
    std::uint64_t round_no_ = 0;
    std::uint64_t skill_counter_ = 0;
};

}  // namespace

SimRun run_scenario(const Scenario& scenario, std::optional<std::uint64_t> seed_override,
                    const RoundObserver& observer) {
    return Runner(scenario, seed_override.value_or(scenario.seed), observer).run();
}

// ---------------------------------------------------------------------------
// Property checks

std::vector<PropertyVerdict> check_properties(std::span<const Event> log, const KernelConfig& config) {
    PropertyVerdict replay{"replay", true, ""};
    PropertyVerdict conservation{"conservation", true, ""};
    PropertyVerdict budget{"budget_bound", true, ""};
    PropertyVerdict acyclic{"acyclicity", true, ""};
    PropertyVerdict monotone{"monotone_assets", true, ""};
    PropertyVerdict reuse{"reuse_sum", true, ""};
    PropertyVerdict settlement{"settlement", true, ""};
    PropertyVerdict admission{"admission_filter", true, ""};
    PropertyVerdict integrity{"deliverable_integrity", true, ""};
    auto fail = [](PropertyVerdict& v, const std::string& why) {
        if (v.passed) v.detail = why;
        v.passed = false;
    };

    try {
        Kernel::replay(log, config, true);
    } catch (const KernelError& e) {
        fail(replay, e.what());
    }

    Kernel k(config);
    std::map<std::string, std::int64_t> journal;  // holder address -> folded balance
    std::set<AssetId> prev_admitted;
    for (const Event& ev : log) {
        try {
            k.apply_json(ev.command, ev.actor);
        } catch (const KernelError& e) {
            throw KernelError(ErrorCode::CorruptLog, "seq " + std::to_string(ev.seq) + ": " + e.what());
        }
        const std::string at = "seq " + std::to_string(ev.seq) + ": ";
        const KernelState& s = k.state();

        for (const LedgerEntry& le : ev.entries) {
            const auto amount = static_cast<std::int64_t>(le.amount.value());
            if (le.debit != kPlatformAddress) {
                journal[le.debit] -= amount;
                if (journal[le.debit] < 0) fail(conservation, at + le.debit + " overdrawn by " + std::string(to_string(le.kind)) + " entry");
            }
            if (le.credit == kPlatformAddress) fail(conservation, at + "value paid back to the platform");
            else journal[le.credit] += amount;
            if (le.kind == EntryKind::settle && le.task &&
                (!s.tasks.contains(*le.task) || s.tasks.get(*le.task).state != TaskState::Accepted))
                fail(settlement, at + "settle entry for a task that is not Accepted");
        }

        const auto report = s.ledger.balance_report();
        if (report.total != report.endowed + report.minted)
            fail(conservation, at + "holdings " + std::to_string(report.total.value()) + " != endowed + minted " +
                                   std::to_string((report.endowed + report.minted).value()));
        std::int64_t folded = 0;
        for (const auto& [_, v] : journal) folded += v;
        if (folded != static_cast<std::int64_t>(report.total.value()))
            fail(conservation, at + "journal total " + std::to_string(folded) + " != kernel total " +
                                   std::to_string(report.total.value()));

        // delegation only grows through decompose (task) or a child publish (parent)
        for (const char* key : {"task", "parent"}) {
            const auto it = ev.command.find(key);
            if (it == ev.command.end() || !it->is_string()) continue;
            const TaskId id{it->get<std::string>()};
            if (s.tasks.contains(id) && s.tasks.delegated(id) > s.tasks.get(id).bounty)
                fail(budget, at + id.value + " delegates more than its bounty");
        }

        // only admission adds nodes or edges
        if (ev.command.value("type", std::string()) != "admit_assets") continue;
        if (!s.assets.is_acyclic()) fail(acyclic, at + "dependency graph has a cycle");

        const auto now = s.assets.admitted();
        const std::set<AssetId> now_set(now.begin(), now.end());
        for (const auto& a : prev_admitted)
            if (!now_set.contains(a)) fail(monotone, at + a.value + " left the admitted set");
        prev_admitted = now_set;
    }

    const KernelState& s = k.state();
    for (const auto& [id, t] : s.tasks.all())
        if (s.tasks.delegated(id) > t.bounty) fail(budget, id.value + " delegates more than its bounty");
    for (const auto& [p, acct] : s.ledger.accounts()) {
        const auto it = journal.find(p.value);
        const std::int64_t v = it == journal.end() ? 0 : it->second;
        if (v != static_cast<std::int64_t>(acct.free.value()))
            fail(conservation, p.value + " journal balance " + std::to_string(v) + " != free " +
                                   std::to_string(acct.free.value()));
    }
    for (const auto& [id, e] : s.ledger.escrows()) {
        const auto it = journal.find(escrow_address(id));
        const std::int64_t v = it == journal.end() ? 0 : it->second;
        const std::uint64_t expect = e.status == EscrowStatus::open ? e.balance.value() : 0;
        if (v != static_cast<std::int64_t>(expect))
            fail(conservation, escrow_address(id) + " journal balance " + std::to_string(v) + " != " +
                                   std::to_string(expect));
    }

    std::map<AssetId, std::vector<const LedgerEntry*>> fees;
    for (const Event& ev : log)
        for (const auto& le : ev.entries)
            if (le.kind == EntryKind::reuse_fee && le.skill) fees[*le.skill].push_back(&le);
    for (const auto& [id, a] : s.assets.all()) {
        if (a.kind != AssetKind::skill) continue;
        const auto& paid = fees[id];
        Credits expected, recorded;
        for (std::size_t j = 1; j <= paid.size(); ++j) {
            expected += a.reward_schedule.alpha_j(j);
            recorded += paid[j - 1]->amount;
            if (paid[j - 1]->reuse_index != j) fail(reuse, id.value + " reuse indices are not 1..n");
        }
        if (recorded != expected || s.ledger.reuse_income(id) != expected)
            fail(reuse, id.value + " reuse income " + std::to_string(recorded.value()) + " != schedule sum " +
                            std::to_string(expected.value()));
        if (a.metrics.success_count < paid.size()) fail(reuse, id.value + " paid more reuses than successes");
        if (a.metrics.invocation_count != a.metrics.success_count + a.metrics.failure_count)
            fail(reuse, id.value + " invocation counters disagree");
    }

    for (const auto& id : s.assets.admitted()) {
        const Asset& a = s.assets.get(id);
        if (!a.report || !a.report->verdict) fail(admission, id.value + " admitted without a passing report");
    }
    if (!k.deliverables_intact()) fail(integrity, "a stored deliverable does not match its digest");

    if (replay.passed) replay.detail = "state digest " + k.state_digest();
    for (auto* v : {&conservation, &budget, &acyclic, &monotone, &reuse, &settlement, &admission, &integrity})
        if (v->passed) v->detail = "ok";
    return {replay, conservation, budget, acyclic, monotone, reuse, settlement, admission, integrity};
}

// ---------------------------------------------------------------------------
// Metrics emission

MetricsFormat metrics_format_from_string(std::string_view s) {
    if (s == "csv") return MetricsFormat::csv;
    if (s == "json") return MetricsFormat::json;
    throw KernelError(ErrorCode::MalformedCommand, "unknown metrics format: " + std::string(s));
}

namespace {

std::set<ParticipantId> participants_in(const SimReport& r) {
    std::set<ParticipantId> out;
    for (const auto& row : r.rounds)
        for (const auto& [p, _] : row.credits) out.insert(p);
    return out;
}

std::string fixed(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

}  // namespace

std::vector<std::string> csv_header(const SimReport& r) {
    std::vector<std::string> h{"round"};
    for (auto s : kAllStates) h.emplace_back(to_string(s));
    for (const char* c : {"assets", "reuse_paid", "total_credits", "top_skill", "top_score"}) h.emplace_back(c);
    for (const auto& p : participants_in(r)) h.push_back("credits:" + p.value);
    return h;
}

void emit_metrics(const SimReport& r, MetricsFormat format, std::ostream& out) {
    if (format == MetricsFormat::json) {
        out << to_json(r).dump(2) << '\n';
        return;
    }
    const auto header = csv_header(r);
    for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
    out << '\n';
    const auto people = participants_in(r);
    for (const auto& row : r.rounds) {
        out << row.round;
        for (auto s : kAllStates) {
            const auto it = row.tasks_by_state.find(std::string(to_string(s)));
            out << ',' << (it == row.tasks_by_state.end() ? 0 : it->second);
        }
        out << ',' << row.asset_count << ',' << row.reuse_paid.value() << ',' << row.total_credits.value();
        if (row.top_skills.empty()) out << ",,";
        else out << ',' << row.top_skills.front().id.value << ',' << fixed(row.top_skills.front().score);
        for (const auto& p : people) {
            const auto it = row.credits.find(p);
            out << ',' << (it == row.credits.end() ? 0 : it->second.value());
        }
        out << '\n';
    }
}

void emit_metrics_file(const SimReport& r, MetricsFormat format, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw KernelError(ErrorCode::IoFailure, "cannot write " + path);
    emit_metrics(r, format, out);
    if (!out) throw KernelError(ErrorCode::IoFailure, "write failed for " + path);
}

// ---------------------------------------------------------------------------
// Fuzzer

CommandFuzzer::CommandFuzzer(std::uint64_t seed, FuzzWeights weights) : rng_(seed), weights_(weights) {}

std::vector<std::pair<ParticipantId, Json>> CommandFuzzer::registrations(std::size_t participants) {
    std::vector<std::pair<ParticipantId, Json>> out;
    for (std::size_t i = 0; i < participants; ++i) {
        const std::string id = "p" + std::to_string(i);
        const auto endowment = std::uniform_int_distribution<std::uint64_t>(0, 200)(rng_);
        out.emplace_back(ParticipantId{id}, Json{{"type", "register_participant"},
                                                 {"id", id},
                                                 {"kind", i % 2 ? "agent" : "human"},
                                                 {"endowment", endowment}});
    }
    return out;
}

std::pair<ParticipantId, Json> CommandFuzzer::next(const Kernel& kernel) {
    const KernelState& s = kernel.state();
    auto uniform = [&](std::uint64_t lo, std::uint64_t hi) {
        return std::uniform_int_distribution<std::uint64_t>(lo, hi)(rng_);
    };
    auto chance = [&](double p) { return std::bernoulli_distribution(p)(rng_); };
    auto pick_from = [&](const auto& v) { return v[uniform(0, v.size() - 1)]; };

    std::vector<ParticipantId> people;
    for (const auto& [id, _] : s.participants.all()) people.push_back(id);
    if (people.empty()) {
        const std::string id = "p" + std::to_string(name_counter_++);
        return {ParticipantId{id}, Json{{"type", "register_participant"}, {"id", id}, {"endowment", 100}}};
    }
    auto tasks_where = [&](auto pred) {
        std::vector<TaskId> out;
        for (const auto& [id, t] : s.tasks.all())
            if (pred(t)) out.push_back(id);
        return out;
    };
    auto some_task = [&](const std::vector<TaskId>& preferred) {
        if (!preferred.empty() && chance(0.85)) return pick_from(preferred);
        if (!s.tasks.all().empty() && chance(0.9)) return std::next(s.tasks.all().begin(), uniform(0, s.tasks.all().size() - 1))->first;
        return TaskId{"t" + std::to_string(uniform(0, 999))};
    };
    auto actor_or = [&](const std::optional<ParticipantId>& likely) {
        if (likely && chance(0.85)) return *likely;
        return pick_from(people);
    };
    const auto admitted = s.assets.admitted();

    std::discrete_distribution<int> category({weights_.publish, weights_.claim, weights_.decompose, weights_.submit,
                                              weights_.review, weights_.cancel, weights_.propose,
                                              weights_.validate, weights_.admit, weights_.invoke,
                                              weights_.nonsense});
    switch (category(rng_)) {
        case 1: {
            const auto open = tasks_where([](const Task& t) {
                return t.state == TaskState::Published || t.state == TaskState::Rejected;
            });
            const TaskId id = some_task(open);
            std::optional<ParticipantId> likely;
            if (s.tasks.contains(id) && s.tasks.get(id).state == TaskState::Rejected) likely = s.tasks.get(id).claimant;
            return {actor_or(likely), Json{{"type", "claim_task"}, {"task", id}}};
        }
        case 2: {
            const TaskId id = some_task(tasks_where([](const Task& t) { return t.state == TaskState::Claimed; }));
            std::optional<ParticipantId> likely;
            std::uint64_t cap = 20;
            if (s.tasks.contains(id)) {
                likely = s.tasks.get(id).claimant;
                cap = s.tasks.get(id).bounty.value() / 2 + 1;
            }
            Json plans = Json::array();
            for (std::uint64_t i = 0, n = uniform(1, 3); i < n; ++i)
                plans.push_back(Json{{"intent", "sub " + std::to_string(i)}, {"bounty", uniform(0, cap)}});
            return {actor_or(likely), Json{{"type", "decompose"}, {"task", id}, {"subplans", plans}}};
        }
        case 3: {
            const TaskId id = some_task(tasks_where([](const Task& t) {
                return t.state == TaskState::Claimed || t.state == TaskState::Rejected;
            }));
            Json used = Json::array();
            if (!admitted.empty() && chance(0.5)) used.push_back(pick_from(admitted));
            if (chance(0.05)) used.push_back("missing@1");
            return {actor_or(s.tasks.contains(id) ? s.tasks.get(id).claimant : std::nullopt),
                    Json{{"type", "submit_deliverable"},
                         {"task", id},
                         {"payload", "payload " + std::to_string(uniform(0, 1u << 20))},
                         {"used_skills", used}}};
        }
        case 4: {
            const TaskId id = some_task(tasks_where([](const Task& t) { return t.state == TaskState::InReview; }));
            std::optional<ParticipantId> likely;
            if (s.tasks.contains(id)) likely = s.tasks.get(id).requester;
            return {actor_or(likely), Json{{"type", "review"},
                                           {"task", id},
                                           {"verdict", chance(0.6) ? "accept" : "reject"},
                                           {"feedback", "fuzz"},
                                           {"final", chance(0.3)}}};
        }
        case 5: {
            const TaskId id = some_task(tasks_where([](const Task& t) { return t.state == TaskState::Published; }));
            std::optional<ParticipantId> likely;
            if (s.tasks.contains(id)) likely = s.tasks.get(id).requester;
            return {actor_or(likely), Json{{"type", "cancel_task"}, {"task", id}}};
        }
        case 6: {
            const TaskId id = some_task(tasks_where([](const Task& t) { return t.state == TaskState::Accepted; }));
            Json items = Json::array();
            for (std::uint64_t i = 0, n = uniform(1, 2); i < n; ++i) {
                const std::string name = chance(0.3) && !admitted.empty()
                                             ? s.assets.get(pick_from(admitted)).name
                                             : "fz-" + std::to_string(name_counter_++);
                Json deps = Json::array();
                if (!admitted.empty() && chance(0.6))
                    deps.push_back(Json{{"asset", pick_from(admitted)}, {"relation", chance(0.5) ? "depends" : "derives"}});
                if (chance(0.05)) deps.push_back(Json{{"asset", "ghost@1"}});
                Json item{{"payload", "body of " + name}, {"dependencies", deps}};
                switch (uniform(0, 3)) {
                    case 0:
                        item["kind"] = "skill";
                        item["manifest"] = Json{{"name", name},
                                                {"interface", Json::object()},
                                                {"test_vectors", Json::array({Json{{"input", 1}, {"expected", 2}}})},
                                                {"behavior", Json::array({Json{{"input", 1}, {"output", chance(0.8) ? 2 : 3}}})}};
                        if (chance(0.5))
                            item["reward_schedule"] = chance(0.5) ? Json{{"type", "constant"}, {"alpha", uniform(0, 5)}}
                                                                  : Json{{"type", "decaying"}, {"alpha0", uniform(0, 9)}, {"rate", 0.5}};
                        break;
                    case 1:
                        item["kind"] = "workflow";
                        item["manifest"] = Json{{"name", name}, {"steps", Json::array({"a", "b"})}};
                        break;
                    case 2:
                        item["kind"] = "trace";
                        item["manifest"] = Json{{"name", name}, {"events", Json::array()}};
                        break;
                    default:
                        item["kind"] = "experience";
                        item["manifest"] = Json{{"name", name}, {"summary", chance(0.9) ? "lesson" : ""}};
                }
                items.push_back(item);
            }
            return {actor_or(s.tasks.contains(id) ? s.tasks.get(id).claimant : std::nullopt),
                    Json{{"type", "propose_assets"}, {"task", id}, {"items", items}}};
        }
        case 7: {
            std::vector<AssetId> candidates;
            for (const auto& [id, a] : s.assets.all())
                if (a.status == AssetStatus::candidate) candidates.push_back(id);
            const AssetId id = !candidates.empty() ? pick_from(candidates) : AssetId{"ghost@1"};
            Json validators = Json::array();
            if (chance(0.3)) validators.push_back(Json{{"name", "manual_review"}, {"approved", chance(0.7)}});
            if (chance(0.1)) validators.push_back("test_vectors");
            if (chance(0.03)) validators.push_back("bogus");
            return {pick_from(people), Json{{"type", "validate_asset"}, {"asset", id}, {"validators", validators}}};
        }
        case 8: {
            std::vector<TaskId> with_candidates;
            for (const auto& [_, a] : s.assets.all())
                if (a.status == AssetStatus::candidate) with_candidates.push_back(a.origin_task);
            return {pick_from(people), Json{{"type", "admit_assets"}, {"task", some_task(with_candidates)}}};
        }
        case 9: {
            const TaskId id = some_task(tasks_where([](const Task& t) {
                return t.state == TaskState::Claimed || t.state == TaskState::InReview;
            }));
            AssetId skill{"ghost@1"};
            if (!admitted.empty() && chance(0.95)) skill = pick_from(admitted);
            return {actor_or(s.tasks.contains(id) ? s.tasks.get(id).claimant : std::nullopt),
                    Json{{"type", "record_invocation"},
                         {"skill", skill},
                         {"task", id},
                         {"success", chance(0.75)},
                         {"latency_ms", uniform(0, 3000)}}};
        }
        case 10: {
            switch (uniform(0, 3)) {
                case 0: return {pick_from(people), Json{{"type", "publish_task"}, {"intent", "x"}, {"bounty", -5}}};
                case 1: return {pick_from(people), Json{{"type", "launch_rocket"}}};
                case 2: return {ParticipantId{"ghost"}, Json{{"type", "claim_task"}, {"task", "t1"}}};
                default:
                    return {pick_from(people), Json{{"type", "register_participant"}, {"id", pick_from(people)}, {"endowment", 5}}};
            }
        }
        default: break;
    }
    Json publish{{"type", "publish_task"}, {"intent", "fuzz task"}, {"bounty", uniform(0, 80)}};
    if (!s.tasks.all().empty() && chance(0.2)) publish["parent"] = some_task({});
    return {pick_from(people), publish};
}

}  // namespace mk::sim
