#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "support.hpp"

#include <cmath>

using namespace mk;
using testing::expect_error;
using testing::harvest;
using testing::skill_item;
using testing::World;

namespace {

/// World with one accepted task t1 (req -> sol) ready for harvesting.
struct Harvest : World {
    std::string t1;
    Harvest() {
        reg("req", 1000, "human");
        reg("sol", 100);
        reg("user", 100);
        reg("poor", 0);
        t1 = complete("req", "sol", 10);
    }
    Json propose(Json items, const std::string& who = "sol") {
        return run(who, Json{{"type", "propose_assets"}, {"task", t1}, {"items", items}});
    }
    Json validate(const std::string& id, Json validators = Json::array()) {
        return run("sol", Json{{"type", "validate_asset"}, {"asset", id}, {"validators", validators}});
    }
    Json admit() { return run("sol", Json{{"type", "admit_assets"}, {"task", t1}})["admitted"]; }
    /// A claimed task for `who` to invoke skills in.
    std::string working_task(const std::string& who) {
        const auto t = publish("req", 1);
        claim(who, t);
        return t;
    }
};

Json item(const std::string& kind, const std::string& name, Json manifest) {
    manifest["name"] = name;
    return Json{{"kind", kind}, {"manifest", manifest}, {"payload", "body of " + name}};
}

std::vector<std::string> check_names(const Json& report) {
    std::vector<std::string> out;
    for (const auto& c : report["checks"]) out.push_back(c["name"].get<std::string>());
    return out;
}

}  // namespace

TEST_CASE("each kind runs its mandatory validators") {
    struct Row {
        std::string kind;
        Json manifest;
        std::vector<std::string> checks;
    };
    const std::vector<Row> rows{
        {"skill", skill_item("x")["manifest"], {"structural", "digest", "test_vectors"}},
        {"workflow", Json{{"steps", Json::array({"a", "b"})}}, {"structural", "digest"}},
        {"trace", Json{{"events", Json::array()}}, {"structural"}},
        {"experience", Json{{"summary", "lessons"}}, {"structural"}},
    };
    for (const auto& row : rows) {
        CAPTURE(row.kind);
        Harvest h;
        const auto id = h.propose(Json::array({item(row.kind, "a", row.manifest)}))["assets"][0]["id"].get<std::string>();
        CHECK(id == "a@1");
        const Json report = h.validate(id);
        CHECK(check_names(report) == row.checks);
        CHECK(report["verdict"] == 1);
    }
}

TEST_CASE("structural failures per kind") {
    const std::vector<std::pair<std::string, Json>> broken{
        {"skill", Json{{"interface", Json::object()}}},
        {"skill", Json{{"interface", Json::object()}, {"test_vectors", Json::array({Json{{"input", 1}}})}}},
        {"workflow", Json{{"steps", Json::array()}}},
        {"trace", Json{{"events", "nope"}}},
        {"experience", Json{{"summary", ""}}},
    };
    for (const auto& [kind, manifest] : broken) {
        CAPTURE(kind);
        Harvest h;
        h.propose(Json::array({item(kind, "a", manifest)}));
        const Json report = h.validate("a@1");
        CHECK(report["verdict"] == 0);
        CHECK(report["checks"][0]["name"] == "structural");
        CHECK(report["checks"][0]["passed"] == false);
    }
}

TEST_CASE("optional validators") {
    Harvest h;
    h.propose(Json::array({item("experience", "e", Json{{"summary", "s"}}), item("trace", "t", Json{{"events", Json::array()}})}));
    expect_error(ErrorCode::ValidatorUnavailable, [&] { h.validate("e@1", Json::array({"test_vectors"})); });
    expect_error(ErrorCode::ValidatorUnavailable, [&] { h.validate("e@1", Json::array({"fortune_teller"})); });

    Json report = h.validate("e@1", Json::array({"digest", Json{{"name", "manual_review"}, {"approved", false}}}));
    CHECK(check_names(report) == std::vector<std::string>{"structural", "digest", "manual_review"});
    CHECK(report["verdict"] == 0);
    report = h.validate("e@1", Json::array({Json{{"name", "manual_review"}, {"approved", true}}}));
    CHECK(report["verdict"] == 1);
    h.validate("t@1");
    CHECK(h.admit() == Json::array({"e@1", "t@1"}));
    expect_error(ErrorCode::AssetNotCandidate, [&] { h.validate("e@1"); });
    expect_error(ErrorCode::UnknownAssetId, [&] { h.validate("zz@1"); });
}

TEST_CASE("digest and test vector failures") {
    Harvest h;
    Json bad_digest = skill_item("d");
    bad_digest["digest"] = std::string(64, '0');
    h.propose(Json::array({bad_digest, skill_item("v", Json::array(), true)}));
    Json r = h.validate("d@1");
    CHECK(r["verdict"] == 0);
    CHECK(r["checks"][1]["detail"] == "declared digest mismatch");
    r = h.validate("v@1");
    CHECK(r["verdict"] == 0);
    CHECK(r["checks"][2]["passed"] == false);

    Json good_digest = skill_item("g");
    good_digest["digest"] = sha256_hex("code of g");
    h.propose(Json::array({good_digest}));
    CHECK(h.validate("g@1")["verdict"] == 1);
}

TEST_CASE("admission keeps exactly the passing candidates") {
    Harvest h;
    h.propose(Json::array({skill_item("a"), skill_item("b", Json::array(), true), skill_item("c")}));
    expect_error(ErrorCode::ValidationIncomplete, [&] { h.admit(); });
    for (auto id : {"a@1", "b@1", "c@1"}) h.validate(id);
    const auto before = h.k.state().assets.admitted_count();
    CHECK(h.admit() == Json::array({"a@1", "c@1"}));
    CHECK(h.k.state().assets.admitted_count() == before + 2);
    CHECK(h.asset("b@1").status == AssetStatus::rejected);
    CHECK(h.asset("a@1").status == AssetStatus::admitted);

    // re-admission is idempotent
    CHECK(h.admit() == Json::array());
    CHECK(h.k.state().assets.admitted_count() == before + 2);
}

TEST_CASE("who may propose") {
    Harvest h;
    const auto open = h.publish("req", 5);
    expect_error(ErrorCode::TaskNotAccepted, [&] {
        h.run("sol", Json{{"type", "propose_assets"}, {"task", open}, {"items", Json::array({skill_item("a")})}});
    });
    expect_error(ErrorCode::NotParticipant, [&] { h.propose(Json::array({skill_item("a")}), "user"); });
    expect_error(ErrorCode::NotParticipant, [&] { h.propose(Json::array({skill_item("a")}), "req"); });
    expect_error(ErrorCode::UnknownDependency,
                 [&] { h.propose(Json::array({skill_item("a", Json::array({Json{{"asset", "ghost@1"}}}))})); });
    expect_error(ErrorCode::MalformedCommand, [&] {
        h.propose(Json::array({skill_item("a", Json::array({Json{{"asset", "x@1"}, {"relation", "version_of"}}}))}));
    });
    expect_error(ErrorCode::MalformedCommand, [&] { h.propose(Json::array({item("skill", "bad name!", Json::object())})); });
    CHECK(h.k.state().assets.all().empty());
}

TEST_CASE("subtask solvers may harvest from the parent task") {
    World w;
    w.reg("req", 100, "human");
    w.reg("lead", 0);
    w.reg("sub", 0);
    const auto t = w.publish("req", 50);
    w.claim("lead", t);
    const auto kids = w.decompose("lead", t, {10});
    w.claim("sub", kids[0]);
    w.submit("sub", kids[0]);
    w.review("lead", kids[0], true);
    w.submit("lead", t);
    w.review("req", t, true);
    CHECK(harvest(w, "sub", t, Json::array({skill_item("s")})) == std::vector<std::string>{"s@1"});
}

TEST_CASE("dependency edges, lineage and versions") {
    Harvest h;
    CHECK(harvest(h, "sol", h.t1, Json::array({skill_item("a")})).size() == 1);
    CHECK(harvest(h, "sol", h.t1, Json::array({skill_item("b", Json::array({Json{{"asset", "a@1"}}}))})).size() == 1);
    CHECK(harvest(h, "sol", h.t1,
                  Json::array({skill_item("c", Json::array({Json{{"asset", "b@1"}, {"relation", "derives"}}}))}))
              .size() == 1);
    CHECK(harvest(h, "sol", h.t1, Json::array({skill_item("a")})) == std::vector<std::string>{"a@2"});

    const auto& reg = h.k.state().assets;
    CHECK(reg.is_acyclic());
    REQUIRE(reg.edges().size() == 3);
    CHECK(reg.edges()[0].from == AssetId{"a@1"});
    CHECK(reg.edges()[0].to == AssetId{"b@1"});
    CHECK(reg.edges()[1].relation == Relation::derives);
    CHECK(reg.edges()[2].relation == Relation::version_of);
    CHECK(reg.edges()[2].from == AssetId{"a@1"});
    CHECK(reg.edges()[2].to == AssetId{"a@2"});
    CHECK(h.asset("a@2").version == 2);

    const Lineage l = reg.lineage(AssetId{"c@1"});
    CHECK(l.ancestors == std::vector<AssetId>{AssetId{"b@1"}, AssetId{"a@1"}});
    CHECK(l.edges.size() == 2);
    CHECK(reg.lineage(AssetId{"a@2"}).ancestors.empty());  // version edges are not lineage
    expect_error(ErrorCode::AssetNotAdmitted, [&] { reg.lineage(AssetId{"zz@1"}); });

    // a rejected version does not become the predecessor of the next one
    harvest(h, "sol", h.t1, Json::array({skill_item("a", Json::array(), true)}));
    harvest(h, "sol", h.t1, Json::array({skill_item("a")}));
    CHECK(h.asset("a@3").status == AssetStatus::rejected);
    CHECK(reg.edges().back().from == AssetId{"a@2"});
    CHECK(reg.edges().back().to == AssetId{"a@4"});
}

TEST_CASE("diamond lineage is topologically ordered") {
    Harvest h;
    harvest(h, "sol", h.t1, Json::array({skill_item("base")}));
    harvest(h, "sol", h.t1,
            Json::array({skill_item("left", Json::array({Json{{"asset", "base@1"}}})),
                         skill_item("right", Json::array({Json{{"asset", "base@1"}}}))}));
    harvest(h, "sol", h.t1,
            Json::array({skill_item("top", Json::array({Json{{"asset", "left@1"}, {"relation", "composes"}},
                                                         Json{{"asset", "right@1"}, {"relation", "composes"}}}))}));
    const Lineage l = h.k.state().assets.lineage(AssetId{"top@1"});
    CHECK(l.ancestors == std::vector<AssetId>{AssetId{"left@1"}, AssetId{"right@1"}, AssetId{"base@1"}});
    CHECK(l.edges.size() == 4);
}

TEST_CASE("reward schedules") {
    const auto c = RewardSchedule::constant(3);
    for (std::uint64_t j = 1; j < 10; ++j) CHECK(c.alpha_j(j) == Credits{3});
    const auto d = RewardSchedule::decaying(8, 0.5);
    CHECK(d.alpha_j(1) == Credits{8});
    CHECK(d.alpha_j(2) == Credits{4});
    CHECK(d.alpha_j(3) == Credits{2});
    CHECK(d.alpha_j(4) == Credits{1});
    CHECK(d.alpha_j(60) == Credits{0});
    CHECK(RewardSchedule::decaying(100, 0.9).alpha_j(3) == Credits{81});

    CHECK(to_json(c) == Json{{"type", "constant"}, {"alpha", 3}});
    const auto back = reward_schedule_from_json(to_json(d));
    CHECK(back.type == RewardSchedule::Type::decaying);
    CHECK(back.alpha == Credits{8});
    CHECK(back.rate == 0.5);
    expect_error(ErrorCode::MalformedCommand,
                 [] { reward_schedule_from_json(Json{{"type", "decaying"}, {"alpha0", 1}, {"rate", -1.0}}); });
    expect_error(ErrorCode::MalformedCommand, [] { reward_schedule_from_json(Json{{"type", "lottery"}}); });
}

TEST_CASE("invocations update metrics and pay the creator") {
    Harvest h;
    harvest(h, "sol", h.t1,
            Json::array({skill_item("s", Json::array(), false, Json{{"type", "constant"}, {"alpha", 5}}),
                         item("experience", "note", Json{{"summary", "x"}})}));
    const auto t = h.working_task("user");
    const auto sol_before = h.free("sol");

    Json r = h.invoke("user", "s@1", t, true, 200);
    CHECK(r["invocation"]["reward"] == "paid");
    CHECK(r["invocation"]["fee"] == 5);
    CHECK(r["invocation"]["reuse_index"] == 1);
    r = h.invoke("user", "s@1", t, false, 400);
    CHECK(r["invocation"]["reward"] == "not_validated");
    CHECK(r["invocation"]["fee"] == 0);
    CHECK(h.free("sol") == sol_before + 5);
    CHECK(h.free("user") == 95);

    const auto& m = h.asset("s@1").metrics;
    CHECK(m.success_count == 1);
    CHECK(m.failure_count == 1);
    CHECK(m.invocation_count == 2);
    CHECK(m.latency_sum_ms == 600);
    CHECK(h.task(t).used_skills.contains(AssetId{"s@1"}));

    SUBCASE("self-invocation pays nothing") {
        const auto mine = h.working_task("sol");
        const auto before = h.free("sol");
        CHECK(h.invoke("sol", "s@1", mine)["invocation"]["reward"] == "self");
        CHECK(h.free("sol") == before);
        CHECK(h.asset("s@1").metrics.success_count == 2);
        CHECK(h.k.state().ledger.next_reuse_index(AssetId{"s@1"}) == 2);
    }
    SUBCASE("an invoker who cannot pay still records the use") {
        const auto broke = h.working_task("poor");
        const Json u = h.invoke("poor", "s@1", broke);
        CHECK(u["invocation"]["reward"] == "unpaid");
        CHECK(u["invocation"]["fee"] == 5);
        CHECK(h.asset("s@1").metrics.success_count == 2);
        CHECK(h.k.state().ledger.next_reuse_index(AssetId{"s@1"}) == 2);
        CHECK(testing::conserved(h.k.state().ledger));
    }
    SUBCASE("refusals") {
        expect_error(ErrorCode::NotClaimant, [&] { h.invoke("poor", "s@1", t); });
        expect_error(ErrorCode::UnknownSkill, [&] { h.invoke("user", "nope@1", t); });
        expect_error(ErrorCode::NotASkill, [&] { h.invoke("user", "note@1", t); });
        expect_error(ErrorCode::TaskNotClaimed, [&] { h.invoke("sol", "s@1", h.t1); });
        h.propose(Json::array({skill_item("fresh")}));
        expect_error(ErrorCode::AssetNotAdmitted, [&] { h.invoke("user", "fresh@1", t); });
        CHECK(h.asset("s@1").metrics.invocation_count == 2);
    }
    SUBCASE("acceptance of a task that used the skill counts a hit") {
        h.submit("user", t, Json::array({"s@1"}));
        h.review("req", t, true);
        CHECK(h.asset("s@1").metrics.acceptance_hits == 1);
    }
}

TEST_CASE("mint mode pays the creator without charging the invoker") {
    World m(LedgerMode::mint);
    m.reg("req", 100, "human");
    m.reg("sol", 0);
    m.reg("user", 0);
    const auto t1 = m.complete("req", "sol", 10);
    harvest(m, "sol", t1, Json::array({skill_item("s", Json::array(), false, Json{{"type", "constant"}, {"alpha", 4}})}));
    const auto t = m.publish("req", 1);
    m.claim("user", t);
    CHECK(m.invoke("user", "s@1", t)["invocation"]["reward"] == "paid");
    CHECK(m.free("user") == 0);
    CHECK(m.free("sol") == 14);
    CHECK(m.k.state().ledger.minted() == Credits{4});
    CHECK(testing::conserved(m.k.state().ledger));
}

TEST_CASE("reuse income equals the schedule sum over paid reuses") {
    Harvest h;
    harvest(h, "sol", h.t1,
            Json::array({skill_item("s", Json::array(), false,
                                    Json{{"type", "decaying"}, {"alpha0", 10}, {"rate", 0.7}})}));
    const auto t = h.working_task("user");
    const auto schedule = h.asset("s@1").reward_schedule;
    Credits expected;
    for (std::uint64_t j = 1; j <= 12; ++j) {
        h.invoke("user", "s@1", t);
        expected += schedule.alpha_j(j);
    }
    CHECK(h.k.state().ledger.reuse_income(AssetId{"s@1"}) == expected);
}

TEST_CASE("asset graph exports") {
    Harvest h;
    harvest(h, "sol", h.t1, Json::array({skill_item("a")}));
    harvest(h, "sol", h.t1, Json::array({skill_item("b", Json::array({Json{{"asset", "a@1"}}}))}));
    const auto& reg = h.k.state().assets;
    const Json g = reg.graph_json();
    CHECK(g["nodes"].size() == 2);
    CHECK(g["adjacency"]["a@1"].size() == 1);
    CHECK(g["adjacency"]["b@1"].empty());
    const auto dot = reg.graph_dot();
    CHECK(dot.find("digraph") != std::string::npos);
    CHECK(dot.find("\"a@1\" -> \"b@1\"") != std::string::npos);
}
