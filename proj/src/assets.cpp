#include "marketkernel/assets.hpp"

#include <algorithm>
#include <cmath>
#include <queue>
#include <sstream>
#include <stdexcept>

namespace mk {

std::string_view to_string(AssetKind k) {
    switch (k) {
        case AssetKind::skill: return "skill";
        case AssetKind::workflow: return "workflow";
        case AssetKind::trace: return "trace";
        case AssetKind::experience: return "experience";
    }
    return "?";
}

AssetKind asset_kind_from_string(std::string_view s) {
    for (auto k : {AssetKind::skill, AssetKind::workflow, AssetKind::trace, AssetKind::experience})
        if (to_string(k) == s) return k;
    throw KernelError(ErrorCode::MalformedCommand, "unknown asset kind: " + std::string(s));
}

std::string_view to_string(AssetStatus s) {
    switch (s) {
        case AssetStatus::candidate: return "candidate";
        case AssetStatus::admitted: return "admitted";
        case AssetStatus::rejected: return "rejected";
    }
    return "?";
}

std::string_view to_string(Relation r) {
    switch (r) {
        case Relation::depends: return "depends";
        case Relation::derives: return "derives";
        case Relation::composes: return "composes";
        case Relation::version_of: return "version_of";
    }
    return "?";
}

Relation relation_from_string(std::string_view s) {
    for (auto r : {Relation::depends, Relation::derives, Relation::composes, Relation::version_of})
        if (to_string(r) == s) return r;
    throw KernelError(ErrorCode::MalformedCommand, "unknown relation: " + std::string(s));
}

Credits RewardSchedule::alpha_j(std::uint64_t j) const {
    if (type == Type::constant || j <= 1) return alpha;
    const double v = static_cast<double>(alpha.value()) * std::pow(rate, static_cast<double>(j - 1));
    return Credits{static_cast<std::uint64_t>(std::llround(v))};
}

Json to_json(const RewardSchedule& s) {
    if (s.type == RewardSchedule::Type::constant) return Json{{"type", "constant"}, {"alpha", s.alpha}};
    return Json{{"type", "decaying"}, {"alpha0", s.alpha}, {"rate", s.rate}};
}

RewardSchedule reward_schedule_from_json(const Json& j) {
    if (!j.is_object()) throw KernelError(ErrorCode::MalformedCommand, "reward_schedule must be an object");
    const auto type = j.value("type", std::string("constant"));
    if (type == "constant") return RewardSchedule{RewardSchedule::Type::constant, j.at("alpha").get<Credits>(), 1.0};
    if (type == "decaying") {
        const double r = j.at("rate").get<double>();
        if (!(r >= 0.0) || !std::isfinite(r))
            throw KernelError(ErrorCode::MalformedCommand, "decay rate must be finite and >= 0");
        return RewardSchedule{RewardSchedule::Type::decaying, j.at("alpha0").get<Credits>(), r};
    }
    throw KernelError(ErrorCode::MalformedCommand, "unknown reward schedule type: " + type);
}

Json to_json(const AssetMetrics& m) {
    return Json{{"success_count", m.success_count},
                {"failure_count", m.failure_count},
                {"invocation_count", m.invocation_count},
                {"latency_sum_ms", m.latency_sum_ms},
                {"latency_samples", m.latency_samples},
                {"acceptance_hits", m.acceptance_hits}};
}

Json to_json(const ValidationReport& r) {
    Json checks = Json::array();
    for (const auto& c : r.checks)
        checks.push_back(Json{{"name", c.name}, {"passed", c.passed}, {"detail", c.detail}});
    return Json{{"asset", r.asset}, {"checks", checks}, {"verdict", r.verdict ? 1 : 0}};
}

Json to_json(const Asset& a) {
    Json deps = Json::array();
    for (const auto& d : a.claimed_dependencies)
        deps.push_back(Json{{"asset", d.asset}, {"relation", to_string(d.relation)}});
    Json j{{"id", a.id},
           {"name", a.name},
           {"kind", to_string(a.kind)},
           {"creator", a.creator},
           {"origin_task", a.origin_task},
           {"status", to_string(a.status)},
           {"version", a.version},
           {"content_digest", a.content_digest},
           {"reward_schedule", to_json(a.reward_schedule)},
           {"metrics", to_json(a.metrics)},
           {"claimed_dependencies", deps},
           {"manifest", a.manifest}};
    j["report"] = a.report ? to_json(*a.report) : Json(nullptr);
    return j;
}

CandidateItem candidate_item_from_json(const Json& j) {
    if (!j.is_object()) throw KernelError(ErrorCode::MalformedCommand, "candidate item must be an object");
    CandidateItem c;
    c.kind = asset_kind_from_string(j.at("kind").get<std::string>());
    c.manifest = j.value("manifest", Json::object());
    if (!c.manifest.is_object() || !c.manifest.contains("name") || !c.manifest["name"].is_string())
        throw KernelError(ErrorCode::MalformedCommand, "candidate manifest needs a string name");
    const auto name = c.manifest["name"].get<std::string>();
    const bool name_ok = !name.empty() && std::all_of(name.begin(), name.end(), [](char ch) {
        return (ch >= 'a' && ch <= 'z') || (ch >= 'A' && ch <= 'Z') || (ch >= '0' && ch <= '9') ||
               ch == '-' || ch == '_' || ch == '.';
    });
    if (!name_ok) throw KernelError(ErrorCode::MalformedCommand, "invalid asset name: " + name);
    c.payload = j.value("payload", std::string());
    if (j.contains("digest")) c.declared_digest = j["digest"].get<std::string>();
    for (const auto& d : j.value("dependencies", Json::array())) {
        DependencyClaim claim{d.at("asset").get<AssetId>(),
                              relation_from_string(d.value("relation", std::string("depends")))};
        if (claim.relation == Relation::version_of)
            throw KernelError(ErrorCode::MalformedCommand, "version_of edges are derived, not claimed");
        c.dependencies.push_back(std::move(claim));
    }
    if (j.contains("reward_schedule")) c.reward_schedule = reward_schedule_from_json(j["reward_schedule"]);
    return c;
}

Json to_json(const CandidateItem& c) {
    Json j{{"kind", to_string(c.kind)}, {"manifest", c.manifest}, {"payload", c.payload}};
    if (c.declared_digest) j["digest"] = *c.declared_digest;
    Json deps = Json::array();
    for (const auto& d : c.dependencies)
        deps.push_back(Json{{"asset", d.asset}, {"relation", to_string(d.relation)}});
    j["dependencies"] = deps;
    if (c.reward_schedule) j["reward_schedule"] = to_json(*c.reward_schedule);
    return j;
}

std::optional<Json> TableExecutor::execute(const Asset& skill, const Json& input) const {
    const auto it = skill.manifest.find("behavior");
    if (it == skill.manifest.end() || !it->is_array()) return std::nullopt;
    for (const auto& row : *it)
        if (row.is_object() && row.contains("input") && row["input"] == input && row.contains("output"))
            return row["output"];
    return std::nullopt;
}

Json to_json(const Lineage& l) {
    Json edges = Json::array();
    for (const auto& e : l.edges)
        edges.push_back(Json{{"from", e.from}, {"to", e.to}, {"relation", to_string(e.relation)}});
    return Json{{"asset", l.root}, {"ancestors", l.ancestors}, {"edges", edges}};
}

// ---------------------------------------------------------------------------

std::vector<AssetId> AssetRegistry::propose_candidates(const TaskBoard& board, const TaskId& task,
                                                       const ParticipantId& caller,
                                                       const std::vector<CandidateItem>& items) {
    const Task& t = board.get(task);
    if (t.state != TaskState::Accepted) throw KernelError(ErrorCode::TaskNotAccepted, task.value);
    if (!board.participants_of(task).contains(caller))
        throw KernelError(ErrorCode::NotParticipant, caller.value);
    for (const auto& item : items)
        for (const auto& d : item.dependencies)
            if (!is_admitted(d.asset)) throw KernelError(ErrorCode::UnknownDependency, d.asset.value);

    std::vector<AssetId> created;
    for (const auto& item : items) {
        Asset a;
        a.name = item.manifest["name"].get<std::string>();
        a.version = ++versions_.slot(a.name);
        a.id = AssetId{a.name + "@" + std::to_string(a.version)};
        a.kind = item.kind;
        a.creator = caller;
        a.origin_task = task;
        a.reward_schedule = item.reward_schedule.value_or(RewardSchedule::constant(1));
        a.content_digest = sha256_hex(item.payload);
        a.declared_digest = item.declared_digest;
        a.manifest = item.manifest;
        a.payload = item.payload;
        a.claimed_dependencies = item.dependencies;
        const AssetId id = a.id;
        order_.push_back(id);
        created.push_back(id);
        assets_.put(id, std::move(a));
    }
    return created;
}

namespace {

bool applicable(std::string_view check, AssetKind kind) {
    if (check == "structural" || check == "digest" || check == "manual_review") return true;
    if (check == "test_vectors") return kind == AssetKind::skill;
    return false;
}

std::vector<std::string> mandatory_checks(AssetKind kind) {
    switch (kind) {
        case AssetKind::skill: return {"structural", "digest", "test_vectors"};
        case AssetKind::workflow: return {"structural", "digest"};
        case AssetKind::trace:
        case AssetKind::experience: return {"structural"};
    }
    return {};
}

ValidationCheck structural_check(const Asset& a) {
    const Json& m = a.manifest;
    auto fail = [](std::string why) { return ValidationCheck{"structural", false, std::move(why)}; };
    switch (a.kind) {
        case AssetKind::skill: {
            if (!m.contains("interface") || !m["interface"].is_object()) return fail("skill needs an interface object");
            if (!m.contains("test_vectors") || !m["test_vectors"].is_array() || m["test_vectors"].empty())
                return fail("skill needs at least one test vector");
            for (const auto& v : m["test_vectors"])
                if (!v.is_object() || !v.contains("input") || !v.contains("expected"))
                    return fail("test vector needs input and expected");
            break;
        }
        case AssetKind::workflow:
            if (!m.contains("steps") || !m["steps"].is_array() || m["steps"].empty())
                return fail("workflow needs a non-empty steps array");
            break;
        case AssetKind::trace:
            if (!m.contains("events") || !m["events"].is_array()) return fail("trace needs an events array");
            break;
        case AssetKind::experience:
            if (!m.contains("summary") || !m["summary"].is_string() || m["summary"].get<std::string>().empty())
                return fail("experience needs a summary");
            break;
    }
    return ValidationCheck{"structural", true, "ok"};
}

ValidationCheck digest_check(const Asset& a) {
    const auto actual = sha256_hex(a.payload);
    if (actual != a.content_digest) return {"digest", false, "stored payload does not match content digest"};
    if (a.declared_digest && *a.declared_digest != actual) return {"digest", false, "declared digest mismatch"};
    return {"digest", true, actual};
}

ValidationCheck test_vector_check(const Asset& a, const SkillExecutor& exec) {
    const auto it = a.manifest.find("test_vectors");
    if (it == a.manifest.end() || !it->is_array() || it->empty())
        return {"test_vectors", false, "no test vectors declared"};
    std::size_t i = 0;
    for (const auto& v : *it) {
        if (!v.is_object() || !v.contains("input") || !v.contains("expected"))
            return {"test_vectors", false, "malformed vector " + std::to_string(i)};
        const auto out = exec.execute(a, v["input"]);
        if (!out) return {"test_vectors", false, "no output for vector " + std::to_string(i)};
        if (*out != v["expected"]) return {"test_vectors", false, "vector " + std::to_string(i) + " mismatched"};
        ++i;
    }
    return {"test_vectors", true, std::to_string(i) + " vectors passed"};
}

}  // namespace

const ValidationReport& AssetRegistry::validate(const AssetId& asset,
                                                const std::vector<ValidatorSpec>& validators,
                                                const SkillExecutor* executor) {
    Asset& a = get_mut(asset);
    if (a.status != AssetStatus::candidate) throw KernelError(ErrorCode::AssetNotCandidate, asset.value);

    std::vector<std::string> wanted = mandatory_checks(a.kind);
    const ValidatorSpec* manual = nullptr;
    for (const auto& v : validators) {
        if (!applicable(v.name, a.kind))
            throw KernelError(ErrorCode::ValidatorUnavailable, v.name + " for " + std::string(to_string(a.kind)));
        if (v.name == "manual_review") manual = &v;
        if (std::find(wanted.begin(), wanted.end(), v.name) == wanted.end()) wanted.push_back(v.name);
    }
    const bool needs_exec = std::find(wanted.begin(), wanted.end(), "test_vectors") != wanted.end();
    if (needs_exec && executor == nullptr)
        throw KernelError(ErrorCode::ValidatorUnavailable, "no skill executor configured");

    ValidationReport report;
    report.asset = asset;
    for (const std::string name : {"structural", "digest", "test_vectors", "manual_review"}) {
        if (std::find(wanted.begin(), wanted.end(), name) == wanted.end()) continue;
        if (name == "structural") report.checks.push_back(structural_check(a));
        else if (name == "digest") report.checks.push_back(digest_check(a));
        else if (name == "test_vectors") report.checks.push_back(test_vector_check(a, *executor));
        else {
            const bool approved = manual->params.value("approved", false);
            report.checks.push_back({"manual_review", approved,
                                     manual->params.value("note", std::string(approved ? "approved" : "not approved"))});
        }
    }
    report.verdict = std::all_of(report.checks.begin(), report.checks.end(),
                                 [](const ValidationCheck& c) { return c.passed; });
    a.report = std::move(report);
    return *a.report;
}

std::vector<AssetId> AssetRegistry::admit(const TaskId& task) {
    std::vector<Asset*> pending;
    for (const auto& id : order_) {
        const Asset& a = get(id);
        if (a.origin_task != task || a.status != AssetStatus::candidate) continue;
        if (!a.report) throw KernelError(ErrorCode::ValidationIncomplete, id.value);
        pending.push_back(&get_mut(id));
    }
    std::vector<AssetId> delta;
    for (Asset* a : pending) {
        if (!a->report->verdict) {
            a->status = AssetStatus::rejected;
            continue;
        }
        if (const Asset* prior = latest_admitted_version(a->name, a->version))
            edges_.push_back(AssetEdge{prior->id, a->id, Relation::version_of});
        for (const auto& d : a->claimed_dependencies) edges_.push_back(AssetEdge{d.asset, a->id, d.relation});
        a->status = AssetStatus::admitted;
        delta.push_back(a->id);
    }
    return delta;
}

const AssetMetrics& AssetRegistry::record_invocation(const AssetId& skill, const Task& task,
                                                     bool success, std::uint64_t latency_ms) {
    if (!assets_.contains(skill)) throw KernelError(ErrorCode::UnknownSkill, skill.value);
    const Asset& current = assets_.at(skill);
    if (current.status != AssetStatus::admitted) throw KernelError(ErrorCode::AssetNotAdmitted, skill.value);
    if (current.kind != AssetKind::skill) throw KernelError(ErrorCode::NotASkill, skill.value);
    if (task.state != TaskState::Claimed && task.state != TaskState::InReview)
        throw KernelError(ErrorCode::TaskNotClaimed, task.id.value);
    Asset& a = assets_.mut(skill);

    auto& m = a.metrics;
    ++m.invocation_count;
    if (success) ++m.success_count;
    else ++m.failure_count;
    m.latency_sum_ms += latency_ms;
    ++m.latency_samples;
    return m;
}

void AssetRegistry::record_acceptance(const std::set<AssetId>& used_skills) {
    for (const auto& id : used_skills) {
        auto it = assets_.find(id);
        if (it != assets_.end() && it->second.kind == AssetKind::skill &&
            it->second.status == AssetStatus::admitted)
            ++assets_.mut(id).metrics.acceptance_hits;
    }
}

std::vector<ScoredSkill> AssetRegistry::score_capability(const std::set<AssetId>& candidates,
                                                         const ScoreWeights& weights) const {
    if (candidates.empty()) throw KernelError(ErrorCode::EmptyCandidateSet);
    std::vector<std::pair<AssetId, AssetMetrics>> rows;
    for (const auto& id : candidates) {
        if (!is_admitted(id)) throw KernelError(ErrorCode::AssetNotAdmitted, id.value);
        const Asset& a = get(id);
        if (a.kind != AssetKind::skill) throw KernelError(ErrorCode::NotASkill, id.value);
        rows.emplace_back(id, a.metrics);
    }
    return rank_by_capability(rows, weights);
}

Lineage AssetRegistry::lineage(const AssetId& asset) const {
    if (!is_admitted(asset)) throw KernelError(ErrorCode::AssetNotAdmitted, asset.value);
    auto counts = [](Relation r) { return r != Relation::version_of; };

    std::set<AssetId> closure{asset};
    std::vector<AssetId> frontier{asset};
    while (!frontier.empty()) {
        AssetId node = frontier.back();
        frontier.pop_back();
        for (const auto& e : edges_)
            if (e.to == node && counts(e.relation) && closure.insert(e.from).second) frontier.push_back(e.from);
    }

    Lineage out;
    out.root = asset;
    for (const auto& e : edges_)
        if (counts(e.relation) && closure.contains(e.to) && closure.contains(e.from)) out.edges.push_back(e);

    // Kahn over reversed edges, starting at the root; smallest id first.
    std::map<AssetId, std::size_t> pending;
    for (const auto& id : closure) pending[id] = 0;
    for (const auto& e : out.edges) ++pending[e.from];
    std::priority_queue<AssetId, std::vector<AssetId>, std::greater<>> ready;
    for (const auto& [id, n] : pending)
        if (n == 0) ready.push(id);
    while (!ready.empty()) {
        AssetId node = ready.top();
        ready.pop();
        if (node != asset) out.ancestors.push_back(node);
        for (const auto& e : out.edges)
            if (e.to == node && --pending[e.from] == 0) ready.push(e.from);
    }
    return out;
}

bool AssetRegistry::is_admitted(const AssetId& id) const {
    auto it = assets_.find(id);
    return it != assets_.end() && it->second.status == AssetStatus::admitted;
}

const Asset& AssetRegistry::get(const AssetId& id) const {
    auto it = assets_.find(id);
    if (it == assets_.end()) throw KernelError(ErrorCode::UnknownAssetId, id.value);
    return it->second;
}

Asset& AssetRegistry::get_mut(const AssetId& id) {
    if (!assets_.contains(id)) throw KernelError(ErrorCode::UnknownAssetId, id.value);
    return assets_.mut(id);
}

std::vector<AssetId> AssetRegistry::admitted() const {
    std::vector<AssetId> out;
    for (const auto& [id, a] : assets_)
        if (a.status == AssetStatus::admitted) out.push_back(id);
    return out;
}

std::size_t AssetRegistry::admitted_count() const {
    return static_cast<std::size_t>(std::count_if(assets_.begin(), assets_.end(), [](const auto& kv) {
        return kv.second.status == AssetStatus::admitted;
    }));
}

const Asset* AssetRegistry::latest_admitted_version(const std::string& name, std::uint64_t below) const {
    const Asset* best = nullptr;
    for (const auto& [_, a] : assets_)
        if (a.name == name && a.version < below && a.status == AssetStatus::admitted &&
            (!best || a.version > best->version))
            best = &a;
    return best;
}

bool AssetRegistry::is_acyclic() const {
    std::map<AssetId, std::size_t> indegree;
    for (const auto& id : admitted()) indegree[id] = 0;
    for (const auto& e : edges_) {
        if (!indegree.contains(e.from) || !indegree.contains(e.to)) return false;
        ++indegree[e.to];
    }
    std::map<AssetId, std::vector<const AssetId*>> out;
    for (const auto& e : edges_) out[e.from].push_back(&e.to);
    std::vector<AssetId> stack;
    for (const auto& [id, d] : indegree)
        if (d == 0) stack.push_back(id);
    std::size_t seen = 0;
    while (!stack.empty()) {
        AssetId node = stack.back();
        stack.pop_back();
        ++seen;
        if (auto it = out.find(node); it != out.end())
            for (const AssetId* to : it->second)
                if (--indegree[*to] == 0) stack.push_back(*to);
    }
    return seen == indegree.size();
}

Json AssetRegistry::graph_json() const {
    Json nodes = Json::array();
    Json adjacency = Json::object();
    for (const auto& [id, a] : assets_) {
        if (a.status != AssetStatus::admitted) continue;
        nodes.push_back(Json{{"id", id}, {"name", a.name}, {"kind", to_string(a.kind)}, {"version", a.version}});
        adjacency[id.value] = Json::array();
    }
    for (const auto& e : edges_)
        adjacency[e.from.value].push_back(Json{{"to", e.to}, {"relation", to_string(e.relation)}});
    return Json{{"nodes", nodes}, {"adjacency", adjacency}};
}

std::string AssetRegistry::graph_dot() const {
    std::ostringstream os;
    os << "digraph assets {\n";
    for (const auto& [id, a] : assets_)
        if (a.status == AssetStatus::admitted)
            os << "  \"" << id.value << "\" [label=\"" << id.value << "\\n" << to_string(a.kind) << "\"];\n";
    for (const auto& e : edges_)
        os << "  \"" << e.from.value << "\" -> \"" << e.to.value << "\" [label=\"" << to_string(e.relation)
           << "\"];\n";
    os << "}\n";
    return os.str();
}

Json AssetRegistry::to_json() const {
    Json assets = Json::array();
    for (const auto& id : order_) assets.push_back(mk::to_json(assets_.at(id)));
    Json edges = Json::array();
    for (const auto& e : edges_)
        edges.push_back(Json{{"from", e.from}, {"to", e.to}, {"relation", to_string(e.relation)}});
    return Json{{"assets", assets}, {"edges", edges}};
}

}  // namespace mk
