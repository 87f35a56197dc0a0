// The ecosystem asset layer: candidate harvesting from accepted tasks,
// validation, admission into the dependency graph, and per-skill metrics.

#pragma once

#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "marketkernel/core.hpp"
#include "marketkernel/taskflow.hpp"
#include "marketkernel/tx.hpp"

namespace mk {

enum class AssetKind { skill, workflow, trace, experience };
enum class AssetStatus { candidate, admitted, rejected };
enum class Relation { depends, derives, composes, version_of };

std::string_view to_string(AssetKind k);
AssetKind asset_kind_from_string(std::string_view s);
std::string_view to_string(AssetStatus s);
std::string_view to_string(Relation r);
Relation relation_from_string(std::string_view s);

/// alpha_j for the j-th paid reuse of a skill.
struct RewardSchedule {
    enum class Type { constant, decaying };

    Type type = Type::constant;
    Credits alpha;      // constant alpha, or alpha_0 when decaying
    double rate = 1.0;  // r, decaying only

    static RewardSchedule constant(std::uint64_t alpha) { return {Type::constant, Credits{alpha}, 1.0}; }
    static RewardSchedule decaying(std::uint64_t alpha0, double r) {
        return {Type::decaying, Credits{alpha0}, r};
    }

    /// round(alpha_0 * r^(j-1)) for decaying schedules; j starts at 1.
    Credits alpha_j(std::uint64_t j) const;
};

Json to_json(const RewardSchedule& s);
RewardSchedule reward_schedule_from_json(const Json& j);

struct AssetMetrics {
    std::uint64_t success_count = 0;
    std::uint64_t failure_count = 0;
    std::uint64_t invocation_count = 0;
    std::uint64_t latency_sum_ms = 0;
    std::uint64_t latency_samples = 0;
    std::uint64_t acceptance_hits = 0;
};

Json to_json(const AssetMetrics& m);

struct DependencyClaim {
    AssetId asset;
    Relation relation = Relation::depends;
};

struct ValidationCheck {
    std::string name;
    bool passed = false;
    std::string detail;
};

struct ValidationReport {
    AssetId asset;
    std::vector<ValidationCheck> checks;
    bool verdict = false;
};

Json to_json(const ValidationReport& r);

struct Asset {
    AssetId id;
    std::string name;
    AssetKind kind = AssetKind::skill;
    ParticipantId creator;
    TaskId origin_task;
    AssetStatus status = AssetStatus::candidate;
    RewardSchedule reward_schedule;
    AssetMetrics metrics;
    std::string content_digest;
    std::optional<std::string> declared_digest;
    std::uint64_t version = 1;
    Json manifest;
    std::string payload;
    std::vector<DependencyClaim> claimed_dependencies;
    std::optional<ValidationReport> report;
};

Json to_json(const Asset& a);

struct AssetEdge {
    AssetId from;
    AssetId to;
    Relation relation = Relation::depends;
};

struct CandidateItem {
    AssetKind kind = AssetKind::skill;
    Json manifest;  // must carry a "name"
    std::string payload;
    std::optional<std::string> declared_digest;
    std::vector<DependencyClaim> dependencies;
    std::optional<RewardSchedule> reward_schedule;
};

CandidateItem candidate_item_from_json(const Json& j);
Json to_json(const CandidateItem& c);

struct ValidatorSpec {
    std::string name;  // structural | digest | test_vectors | manual_review
    Json params = Json::object();
};

/// Runs a skill on one test-vector input. Returns nullopt when the skill
/// cannot produce an output for that input.
class SkillExecutor {
public:
    virtual ~SkillExecutor() = default;
    virtual std::optional<Json> execute(const Asset& skill, const Json& input) const = 0;
};

/// Deterministic executor backed by a lookup table in the skill manifest:
/// "behavior": [{"input": ..., "output": ...}, ...].
class TableExecutor final : public SkillExecutor {
public:
    std::optional<Json> execute(const Asset& skill, const Json& input) const override;
};

struct Lineage {
    AssetId root;
    std::vector<AssetId> ancestors;  // nearest first, topologically ordered
    std::vector<AssetEdge> edges;    // edges among root and its ancestors
};

Json to_json(const Lineage& l);

struct ScoreWeights {
    double success = 0.4;
    double latency = 0.2;
    double frequency = 0.2;
    double acceptance = 0.2;
    double latency_scale_ms = 1000.0;
};

ScoreWeights parse_score_weights(std::string_view csv);

struct ScoredSkill {
    AssetId id;
    double score = 0.0;
};

/// Four-signal capability score over (id, metrics) pairs, highest first,
/// ties by ascending id.
std::vector<ScoredSkill> rank_by_capability(std::span<const std::pair<AssetId, AssetMetrics>> candidates,
                                            const ScoreWeights& weights);

class AssetRegistry {
public:
    std::vector<AssetId> propose_candidates(const TaskBoard& board, const TaskId& task,
                                            const ParticipantId& caller,
                                            const std::vector<CandidateItem>& items);

    const ValidationReport& validate(const AssetId& asset, const std::vector<ValidatorSpec>& validators,
                                     const SkillExecutor* executor);

    /// Delta K_t: candidates of `task` with verdict 1, in proposal order.
    std::vector<AssetId> admit(const TaskId& task);

    const AssetMetrics& record_invocation(const AssetId& skill, const Task& task, bool success,
                                          std::uint64_t latency_ms);

    void record_acceptance(const std::set<AssetId>& used_skills);

    std::vector<ScoredSkill> score_capability(const std::set<AssetId>& candidates,
                                              const ScoreWeights& weights) const;

    Lineage lineage(const AssetId& asset) const;

    bool is_admitted(const AssetId& id) const;
    bool contains(const AssetId& id) const { return assets_.contains(id); }
    const Asset& get(const AssetId& id) const;
    const std::map<AssetId, Asset>& all() const { return assets_.raw(); }
    const std::vector<AssetEdge>& edges() const { return edges_.raw(); }
    std::vector<AssetId> admitted() const;
    std::size_t admitted_count() const;

    /// Kahn's algorithm over admitted nodes and all edges.
    bool is_acyclic() const;

    Json graph_json() const;
    std::string graph_dot() const;
    Json to_json() const;

    void begin_tx() {
        assets_.begin_tx();
        order_.begin_tx();
        edges_.begin_tx();
        versions_.begin_tx();
    }
    void commit() {
        assets_.commit();
        order_.commit();
        edges_.commit();
        versions_.commit();
    }
    void rollback() {
        assets_.rollback();
        order_.rollback();
        edges_.rollback();
        versions_.rollback();
    }

private:
    Asset& get_mut(const AssetId& id);
    const Asset* latest_admitted_version(const std::string& name, std::uint64_t below) const;

    TxMap<AssetId, Asset> assets_;
    TxLog<AssetId> order_;
    TxLog<AssetEdge> edges_;
    TxMap<std::string, std::uint64_t> versions_;
};

}  // namespace mk
