#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "support.hpp"

#include <cmath>
#include <random>

using namespace mk;
using testing::expect_error;
using testing::harvest;
using testing::skill_item;

namespace {

// Straight transcription of the four-signal score, kept separate from the
// library code so the two can disagree.
double oracle(const AssetMetrics& m, std::uint64_t max_n, const ScoreWeights& w) {
    const double n = static_cast<double>(m.invocation_count);
    const double s_hat = (m.success_count + 1.0) / (n + 2.0);
    const double mean = m.latency_samples ? double(m.latency_sum_ms) / double(m.latency_samples) : 0.0;
    const double l_hat = 1.0 / (1.0 + mean / w.latency_scale_ms);
    const double f_hat = max_n == 0 ? 0.0 : std::log(1.0 + n) / std::log(1.0 + double(max_n));
    const double a_hat = (m.acceptance_hits + 1.0) / (n + 2.0);
    return w.success * s_hat + w.latency * l_hat + w.frequency * f_hat + w.acceptance * a_hat;
}

AssetMetrics metrics(std::uint64_t s, std::uint64_t f, std::uint64_t latency_sum, std::uint64_t hits) {
    AssetMetrics m;
    m.success_count = s;
    m.failure_count = f;
    m.invocation_count = s + f;
    m.latency_sum_ms = latency_sum;
    m.latency_samples = s + f;
    m.acceptance_hits = hits;
    return m;
}

}  // namespace

TEST_CASE("ranking matches the oracle on random tables") {
    std::mt19937_64 rng(2024);
    for (int table = 0; table < 50; ++table) {
        ScoreWeights w;
        if (table % 2) {
            std::uniform_real_distribution<double> u(0.0, 1.0);
            w = ScoreWeights{u(rng), u(rng), u(rng), u(rng), 100.0 + u(rng) * 5000.0};
        }
        std::vector<std::pair<AssetId, AssetMetrics>> rows;
        const std::size_t count = 1 + rng() % 12;
        std::uint64_t max_n = 0;
        for (std::size_t i = 0; i < count; ++i) {
            const auto s = rng() % 50, f = rng() % 50;
            const auto hits = (s + f) ? rng() % (s + f + 1) : 0;
            rows.emplace_back(AssetId{"s" + std::to_string(i) + "@1"}, metrics(s, f, (s + f) * (rng() % 3000), hits));
            max_n = std::max(max_n, s + f);
        }
        const auto ranked = rank_by_capability(rows, w);
        REQUIRE(ranked.size() == rows.size());
        for (std::size_t i = 0; i < ranked.size(); ++i) {
            const auto it = std::find_if(rows.begin(), rows.end(), [&](const auto& r) { return r.first == ranked[i].id; });
            REQUIRE(it != rows.end());
            CHECK(ranked[i].score == doctest::Approx(oracle(it->second, max_n, w)).epsilon(1e-12));
            if (i > 0) {
                CHECK(ranked[i - 1].score >= ranked[i].score);
                if (ranked[i - 1].score == ranked[i].score) CHECK(ranked[i - 1].id < ranked[i].id);
            }
        }
    }
}

TEST_CASE("unused skills score from the priors alone") {
    const std::vector<std::pair<AssetId, AssetMetrics>> rows{{AssetId{"a@1"}, AssetMetrics{}}};
    const auto ranked = rank_by_capability(rows, ScoreWeights{});
    // 0.4 * 0.5 + 0.2 * 1 + 0.2 * 0 + 0.2 * 0.5
    CHECK(ranked[0].score == doctest::Approx(0.5));
}

TEST_CASE("ties break by ascending id") {
    const std::vector<std::pair<AssetId, AssetMetrics>> rows{
        {AssetId{"zeta@1"}, metrics(3, 1, 400, 2)},
        {AssetId{"alpha@1"}, metrics(3, 1, 400, 2)},
        {AssetId{"mid@1"}, metrics(3, 1, 400, 2)},
    };
    const auto ranked = rank_by_capability(rows, ScoreWeights{});
    CHECK(ranked[0].id == AssetId{"alpha@1"});
    CHECK(ranked[1].id == AssetId{"mid@1"});
    CHECK(ranked[2].id == AssetId{"zeta@1"});
}

TEST_CASE("a reliable fast skill outranks an unreliable slow one") {
    // A: 9 of 10 succeed at 200 ms, 8 accepted. B: 2 of 4 at 3000 ms, 1 accepted.
    const std::vector<std::pair<AssetId, AssetMetrics>> rows{
        {AssetId{"b@1"}, metrics(2, 2, 12000, 1)},
        {AssetId{"a@1"}, metrics(9, 1, 2000, 8)},
    };
    const auto ranked = rank_by_capability(rows, ScoreWeights{});
    CHECK(ranked[0].id == AssetId{"a@1"});
    const double a = 0.4 * (10.0 / 12) + 0.2 * (1 / 1.2) + 0.2 * 1.0 + 0.2 * (9.0 / 12);
    const double b = 0.4 * (3.0 / 6) + 0.2 * (1 / 4.0) + 0.2 * (std::log(5.0) / std::log(11.0)) + 0.2 * (2.0 / 6);
    CHECK(ranked[0].score == doctest::Approx(a));
    CHECK(ranked[1].score == doctest::Approx(b));
}

TEST_CASE("score weights parse from a comma list") {
    const auto w = parse_score_weights("0.5,0.1,0.1,0.3");
    CHECK(w.success == 0.5);
    CHECK(w.acceptance == 0.3);
    CHECK(w.latency_scale_ms == 1000.0);
    CHECK(parse_score_weights("1,0,0,0,250").latency_scale_ms == 250.0);
    CHECK_THROWS_AS(parse_score_weights("1,2,3"), std::invalid_argument);
    CHECK_THROWS_AS(parse_score_weights("1,2,x,4"), std::invalid_argument);
    CHECK_THROWS_AS(parse_score_weights("1,2,3,4,0"), std::invalid_argument);
}

TEST_CASE("registry scoring checks its candidates") {
    testing::World w;
    w.reg("req", 100, "human");
    w.reg("sol", 10);
    const auto t = w.complete("req", "sol", 5);
    harvest(w, "sol", t,
            Json::array({skill_item("a"), skill_item("b"),
                         Json{{"kind", "experience"}, {"manifest", Json{{"name", "e"}, {"summary", "s"}}}, {"payload", "e"}}}));
    const auto& reg = w.k.state().assets;
    expect_error(ErrorCode::EmptyCandidateSet, [&] { reg.score_capability({}, ScoreWeights{}); });
    expect_error(ErrorCode::NotASkill, [&] { reg.score_capability({AssetId{"e@1"}}, ScoreWeights{}); });
    expect_error(ErrorCode::AssetNotAdmitted, [&] { reg.score_capability({AssetId{"x@1"}}, ScoreWeights{}); });

    const auto t2 = w.publish("req", 1);
    w.reg("user", 10);
    w.claim("user", t2);
    w.invoke("user", "b@1", t2, true, 10);
    const auto ranked = reg.score_capability({AssetId{"a@1"}, AssetId{"b@1"}}, ScoreWeights{});
    CHECK(ranked[0].id == AssetId{"b@1"});
}
