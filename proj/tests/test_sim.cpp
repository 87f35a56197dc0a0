#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "support.hpp"

#include <map>
#include <sstream>

#include "marketkernel/sim.hpp"

using namespace mk;
using namespace mk::sim;
using testing::expect_error;

namespace {

std::string scenario_path(const std::string& name) { return std::string(SCENARIO_DIR) + "/" + name + ".json"; }

const PropertyVerdict* verdict(const std::vector<PropertyVerdict>& vs, const std::string& name) {
    for (const auto& v : vs)
        if (v.name == name) return &v;
    return nullptr;
}

bool all_pass(const std::vector<PropertyVerdict>& vs) {
    return std::all_of(vs.begin(), vs.end(), [](const auto& v) { return v.passed; });
}

Json minimal() {
    return Json{{"schema_version", 1},
                {"name", "mini"},
                {"participants", Json::array({Json{{"id", "a"}, {"endowment", 10}}})},
                {"script", Json::array()}};
}

KernelConfig config_for(const Scenario& s) { return KernelConfig{s.mode, {}, std::make_shared<TableExecutor>()}; }

}  // namespace

TEST_CASE("scenario parse errors") {
    CHECK_NOTHROW(parse_scenario(minimal()));
    const std::vector<std::pair<std::string, std::function<void(Json&)>>> broken{
        {"not an object", [](Json& j) { j = Json::array(); }},
        {"wrong schema", [](Json& j) { j["schema_version"] = 2; }},
        {"missing schema", [](Json& j) { j.erase("schema_version"); }},
        {"missing name", [](Json& j) { j.erase("name"); }},
        {"bad mode", [](Json& j) { j["mode"] = "barter"; }},
        {"bad seed", [](Json& j) { j["seed"] = -1; }},
        {"participants not array", [](Json& j) { j["participants"] = "a"; }},
        {"participant without id", [](Json& j) { j["participants"].push_back(Json::object()); }},
        {"bad participant id", [](Json& j) { j["participants"][0]["id"] = "a b"; }},
        {"duplicate participant", [](Json& j) { j["participants"].push_back(Json{{"id", "a"}}); }},
        {"bad kind", [](Json& j) { j["participants"][0]["kind"] = "robot"; }},
        {"bad role", [](Json& j) { j["participants"][0]["roles"] = Json::array({"king"}); }},
        {"step not object", [](Json& j) { j["script"].push_back(3); }},
        {"step without actor", [](Json& j) { j["script"].push_back(Json{{"command", Json{{"type", "claim_task"}}}}); }},
        {"bad command", [](Json& j) {
             j["script"].push_back(Json{{"actor", "a"}, {"command", Json{{"type", "teleport"}}}});
         }},
        {"bad expect_error", [](Json& j) {
             j["script"].push_back(Json{{"actor", "a"}, {"command", Json{{"type", "claim_task"}, {"task", "t1"}}}, {"expect_error", 5}});
         }},
        {"probability out of range", [](Json& j) { j["script"].push_back(Json{{"policy", Json{{"review_strictness", 1.5}}}}); }},
        {"inverted bounty range", [](Json& j) { j["script"].push_back(Json{{"policy", Json{{"bounty_range", {9, 2}}}}}); }},
        {"zero revisions", [](Json& j) { j["script"].push_back(Json{{"policy", Json{{"max_revisions", 0}}}}); }},
        {"inverted latency", [](Json& j) {
             j["script"].push_back(Json{{"policy", Json{{"skill_outcomes", Json{{"s", Json{{"latency_min_ms", 9}, {"latency_max_ms", 1}}}}}}}});
         }},
    };
    for (const auto& [what, mutate] : broken) {
        CAPTURE(what);
        Json j = minimal();
        mutate(j);
        expect_error(ErrorCode::ScenarioParseError, [&] { parse_scenario(j); });
    }
    expect_error(ErrorCode::IoFailure, [] { load_scenario("/nonexistent/scenario.json"); });
}

TEST_CASE("scenario defaults") {
    Json j = minimal();
    j["script"].push_back(Json{{"policy", Json::object()}});
    const Scenario s = parse_scenario(j);
    CHECK(s.mode == LedgerMode::fee);
    CHECK(s.seed == 0);
    REQUIRE(s.script.size() == 1);
    const auto& p = std::get<PolicyBlock>(s.script[0]);
    CHECK_FALSE(p.rounds.has_value());
    CHECK(p.max_revisions == 2);
}

TEST_CASE("promo video case") {
    const Scenario s = load_scenario(scenario_path("case1"));
    const SimRun run = run_scenario(s);
    const auto& r = run.report;
    CHECK(r.events == 19);
    CHECK(r.conservation_ok);
    CHECK(r.log_digest == "dfef9beabef292c921edaa667d4de0d760499302fac6582b1f396b38502dcf81");

    const auto& st = run.kernel.state();
    CHECK(st.ledger.account(ParticipantId{"solver"}).free == Credits{150});
    CHECK(st.ledger.account(ParticipantId{"requester"}).free == Credits{50});
    CHECK(st.ledger.account(ParticipantId{"skill-author"}).free == Credits{100});
    CHECK(st.assets.admitted_count() == 2);
    const Lineage l = st.assets.lineage(AssetId{"epochx-promo-video@1"});
    CHECK(l.ancestors == std::vector<AssetId>{AssetId{"remotion-vertical-short-video@1"}});
    REQUIRE(l.edges.size() == 1);
    CHECK(l.edges[0].relation == Relation::derives);
    CHECK(st.assets.get(AssetId{"remotion-vertical-short-video@1"}).metrics.acceptance_hits == 1);
    CHECK(all_pass(check_properties(run.kernel.events(), config_for(s))));
}

TEST_CASE("research revision case") {
    const Scenario s = load_scenario(scenario_path("case2"));
    const SimRun run = run_scenario(s);
    CHECK(run.report.events == 23);
    CHECK(run.report.log_digest == "4953b5251c2debe12a23d2d9a8688d9ec9011fc127b1139d7c61a1339b93a71f");

    const auto& st = run.kernel.state();
    const Task& t2 = st.tasks.get(TaskId{"t2"});
    CHECK(t2.state == TaskState::Accepted);
    REQUIRE(t2.review_history.size() == 2);
    CHECK(t2.review_history[0].verdict == Verdict::reject);
    CHECK(t2.used_skills.size() == 3);
    // 20 + 80 bounty - 3 reuse fees
    CHECK(st.ledger.account(ParticipantId{"researcher"}).free == Credits{97});
    CHECK(st.ledger.account(ParticipantId{"toolsmith"}).free == Credits{3});
    CHECK(st.ledger.account(ParticipantId{"requester"}).free == Credits{120});
    for (auto id : {"literature-search@1", "academic-paper-writer@1", "chart-producer@1"})
        CHECK(st.assets.get(AssetId{id}).metrics.acceptance_hits == 1);
    CHECK(all_pass(check_properties(run.kernel.events(), config_for(s))));
}

TEST_CASE("script expectations are enforced") {
    Json j = minimal();
    j["participants"].push_back(Json{{"id", "b"}, {"endowment", 0}});
    j["script"] = Json::array({Json{{"actor", "a"}, {"command", Json{{"type", "publish_task"}, {"intent", "x"}, {"bounty", 5}}}},
                               Json{{"actor", "a"}, {"command", Json{{"type", "claim_task"}, {"task", "t1"}}}}});
    expect_error(ErrorCode::PolicyPreconditionViolation, [&] { run_scenario(parse_scenario(j)); });

    j["script"][1]["expect_error"] = "SelfClaim";
    CHECK(run_scenario(parse_scenario(j)).report.events == 3);

    j["script"][1]["expect_error"] = "BudgetExceeded";
    expect_error(ErrorCode::PolicyPreconditionViolation, [&] { run_scenario(parse_scenario(j)); });

    j["script"][1] = Json{{"actor", "b"}, {"command", Json{{"type", "claim_task"}, {"task", "t1"}}}, {"expect_error", "SelfClaim"}};
    expect_error(ErrorCode::PolicyPreconditionViolation, [&] { run_scenario(parse_scenario(j)); });
}

TEST_CASE("runs are deterministic per seed") {
    Scenario s = load_scenario(scenario_path("random_economy"));
    const auto a = run_scenario(s, 11).report;
    const auto b = run_scenario(s, 11).report;
    const auto c = run_scenario(s, 12).report;
    CHECK(a.log_digest == b.log_digest);
    CHECK(a.state_digest == b.state_digest);
    CHECK(a.seed == 11);
    CHECK(a.log_digest != c.log_digest);
    CHECK(to_json(a) == to_json(b));
}

TEST_CASE("the random economy satisfies every property") {
    const Scenario s = load_scenario(scenario_path("random_economy"));
    const SimRun run = run_scenario(s);
    CHECK(run.report.rounds.size() == s.rounds);
    CHECK(run.report.conservation_ok);
    const auto verdicts = check_properties(run.kernel.events(), config_for(s));
    CHECK(verdicts.size() == 9);
    for (const auto& v : verdicts) {
        CAPTURE(v.name);
        CAPTURE(v.detail);
        CHECK(v.passed);
    }

    // the economy actually did something
    const auto& last = run.report.rounds.back();
    CHECK(last.tasks_by_state.at("Accepted") > 50);
    CHECK(last.asset_count > 20);
    CHECK(last.reuse_paid > Credits{0});

    // |K| never shrinks
    for (std::size_t i = 1; i < run.report.rounds.size(); ++i)
        CHECK(run.report.rounds[i].asset_count >= run.report.rounds[i - 1].asset_count);
}

TEST_CASE("the property checker catches a forged settlement") {
    const Scenario s = load_scenario(scenario_path("case1"));
    auto log = run_scenario(s).kernel.events();
    bool forged = false;
    for (auto& ev : log)
        for (auto& le : ev.entries)
            if (!forged && le.kind == EntryKind::settle && le.amount > Credits{0}) {
                le.amount += Credits{7};
                forged = true;
            }
    REQUIRE(forged);
    const auto verdicts = check_properties(log, config_for(s));
    CHECK_FALSE(verdict(verdicts, "replay")->passed);
    CHECK_FALSE(verdict(verdicts, "conservation")->passed);
    CHECK(verdict(verdicts, "budget_bound")->passed);

    auto broken = run_scenario(s).kernel.events();
    const auto review = std::find_if(broken.begin(), broken.end(), [](const Event& ev) { return ev.command["type"] == "review"; });
    REQUIRE(review != broken.end());
    review->actor = ParticipantId{"solver"};
    expect_error(ErrorCode::CorruptLog, [&] { check_properties(broken, config_for(s)); });
}

TEST_CASE("a run with no tasks passes") {
    Json j = minimal();
    j["rounds"] = 5;
    j["script"].push_back(Json{{"policy", Json{{"task_arrival_rate", 0.0}}}});
    const Scenario s = parse_scenario(j);
    const SimRun run = run_scenario(s);
    CHECK(run.report.events == 1);
    CHECK(run.report.rounds.size() == 5);
    CHECK(all_pass(check_properties(run.kernel.events(), config_for(s))));
    CHECK(all_pass(check_properties({}, config_for(s))));
}

TEST_CASE("metrics output") {
    const SimRun run = run_scenario(load_scenario(scenario_path("case2")));
    const auto& r = run.report;

    const auto header = csv_header(r);
    const std::vector<std::string> fixed{"round", "Published", "Claimed", "InReview", "Accepted", "Rejected",
                                         "FinallyRejected", "Cancelled", "assets", "reuse_paid", "total_credits",
                                         "top_skill", "top_score"};
    REQUIRE(header.size() == fixed.size() + 4);
    CHECK(std::equal(fixed.begin(), fixed.end(), header.begin()));
    CHECK(header.back() == "credits:toolsmith");

    std::ostringstream csv;
    emit_metrics(r, MetricsFormat::csv, csv);
    std::istringstream lines(csv.str());
    std::string line;
    std::size_t n = 0;
    while (std::getline(lines, line)) {
        CHECK(std::count(line.begin(), line.end(), ',') == static_cast<long>(header.size() - 1));
        ++n;
    }
    CHECK(n == r.rounds.size() + 1);

    std::ostringstream js;
    emit_metrics(r, MetricsFormat::json, js);
    const SimReport back = report_from_json(Json::parse(js.str()));
    CHECK(to_json(back) == to_json(r));

    CHECK(metrics_format_from_string("csv") == MetricsFormat::csv);
    CHECK_THROWS(metrics_format_from_string("xml"));
    expect_error(ErrorCode::IoFailure, [&] { emit_metrics_file(r, MetricsFormat::csv, "/nonexistent/dir/m.csv"); });
}

TEST_CASE("skill quality compounds when solvers prefer top skills") {
    const Scenario s = load_scenario(scenario_path("flywheel"));
    std::vector<double> top;
    std::vector<std::uint64_t> sizes;
    std::map<AssetId, std::pair<std::uint64_t, Credits>> seen;  // invocations, creator income
    std::size_t regressions = 0;
    const SimRun run = run_scenario(s, std::nullopt, [&](const RoundMetrics& m, const Kernel& k) {
        sizes.push_back(m.asset_count);
        if (m.top_skills.empty()) return;
        top.push_back(m.top_skills.front().score);
        const AssetId leader = m.top_skills.front().id;
        const std::uint64_t n = k.state().assets.get(leader).metrics.invocation_count;
        const Credits income = k.state().ledger.reuse_income(leader);
        if (auto it = seen.find(leader); it != seen.end() && (n < it->second.first || income < it->second.second))
            ++regressions;
        seen[leader] = {n, income};
    });
    CHECK(regressions == 0);
    REQUIRE(top.size() > 10);
    CHECK(sizes.size() == run.report.rounds.size());
    for (std::size_t i = 1; i < sizes.size(); ++i) CHECK(sizes[i] >= sizes[i - 1]);
    // the leading skill ends stronger than it started
    CHECK(top.back() > top.front());
    CHECK(all_pass(check_properties(run.kernel.events(), config_for(s))));
}
