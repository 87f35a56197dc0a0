#include <algorithm>
#include <cmath>
#include <sstream>

#include "marketkernel/assets.hpp"

namespace mk {

ScoreWeights parse_score_weights(std::string_view csv) {
    std::vector<double> v;
    std::stringstream ss{std::string(csv)};
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            v.push_back(std::stod(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw std::invalid_argument("score weights must be numbers: " + std::string(csv));
        }
    }
    if (v.size() != 4 && v.size() != 5)
        throw std::invalid_argument("score weights: expected succ,lat,freq,acc[,latency_scale_ms]");
    ScoreWeights w{v[0], v[1], v[2], v[3], 1000.0};
    if (v.size() == 5) w.latency_scale_ms = v[4];
    if (!(w.latency_scale_ms > 0.0)) throw std::invalid_argument("latency scale must be positive");
    return w;
}

std::vector<ScoredSkill> rank_by_capability(std::span<const std::pair<AssetId, AssetMetrics>> candidates,
                                            const ScoreWeights& w) {
    std::uint64_t max_invocations = 0;
    for (const auto& [_, m] : candidates) max_invocations = std::max(max_invocations, m.invocation_count);

    std::vector<ScoredSkill> out;
    out.reserve(candidates.size());
    for (const auto& [id, m] : candidates) {
        const double n = static_cast<double>(m.invocation_count);
        // Laplace-smoothed success and acceptance rates
        const double success = (static_cast<double>(m.success_count) + 1.0) / (n + 2.0);
        const double acceptance = (static_cast<double>(m.acceptance_hits) + 1.0) / (n + 2.0);
        const double mean_latency =
            m.latency_samples == 0 ? 0.0
                                   : static_cast<double>(m.latency_sum_ms) / static_cast<double>(m.latency_samples);
        const double latency = 1.0 / (1.0 + mean_latency / w.latency_scale_ms);
        const double frequency =
            max_invocations == 0 ? 0.0 : std::log1p(n) / std::log1p(static_cast<double>(max_invocations));
        out.push_back({id, w.success * success + w.latency * latency + w.frequency * frequency +
                               w.acceptance * acceptance});
    }
    std::sort(out.begin(), out.end(), [](const ScoredSkill& a, const ScoredSkill& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.id < b.id;
    });
    return out;
}

}  // namespace mk
