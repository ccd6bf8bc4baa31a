#include "moeplace/eval.h"

#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <ostream>

#include "moeplace/errors.h"

namespace moeplace {

nlohmann::json EvalReport::to_json() const {
    nlohmann::json doc{{"label", label},
                       {"mean_hops_per_token", mean_hops_per_token},
                       {"std_hops", std_hops},
                       {"n_tokens", n_tokens},
                       {"n_chunks", n_chunks}};
    if (objective_train) doc["objective_train"] = *objective_train;
    return doc;
}

std::int64_t token_hops(std::span<const int> experts, int topk, const Placement& placement, const CostMatrix& cost) {
    if (experts.size() != static_cast<std::size_t>(placement.num_layers()) * topk) {
        throw ParameterError("token selections do not match the model shape");
    }
    std::int64_t hops = 0;
    for (int layer = 0; layer < placement.num_layers(); ++layer) {
        for (int k = 0; k < topk; ++k) {
            const int e = experts[static_cast<std::size_t>(layer) * topk + k];
            if (e < 0 || e >= placement.num_experts()) throw ParameterError("expert index out of range");
            const int device = placement.device(layer, e);
            if (device < 0 || device >= cost.num_devices()) {
                throw ParameterError("expert " + std::to_string(e) + " of layer " + std::to_string(layer) +
                                     " is not placed");
            }
            hops += cost(layer, device);
        }
    }
    return hops;
}

EvalReport evaluate(const ActivationTrace& trace, const Placement& placement, const CostMatrix& cost,
                    std::string label) {
    if (trace.empty()) throw ParameterError("cannot evaluate on an empty trace");
    const int topk = trace.model().topk;
    struct ChunkSum {
        std::int64_t hops = 0;
        std::size_t tokens = 0;
    };
    std::map<int, ChunkSum> chunks;
    std::int64_t total = 0;
    for (std::size_t t = 0; t < trace.num_tokens(); ++t) {
        const std::int64_t hops = token_hops(trace.token_experts(t), topk, placement, cost);
        auto& chunk = chunks[trace.chunk_id(t)];
        chunk.hops += hops;
        ++chunk.tokens;
        total += hops;
    }

    EvalReport report;
    report.label = std::move(label);
    report.n_tokens = trace.num_tokens();
    report.n_chunks = static_cast<int>(chunks.size());
    report.mean_hops_per_token = static_cast<double>(total) / static_cast<double>(trace.num_tokens());

    std::vector<double> means;
    for (const auto& [id, chunk] : chunks) {
        means.push_back(static_cast<double>(chunk.hops) / static_cast<double>(chunk.tokens));
    }
    const double avg = std::accumulate(means.begin(), means.end(), 0.0) / means.size();
    double var = 0.0;
    for (double m : means) var += (m - avg) * (m - avg);
    report.std_hops = std::sqrt(var / means.size());
    return report;
}

double objective_value(const Placement& placement, const FrequencyTable& freq, const CostMatrix& cost) {
    if (freq.num_layers() != placement.num_layers() || freq.num_experts() != placement.num_experts() ||
        cost.num_layers() != placement.num_layers()) {
        throw ParameterError("placement, frequency table and cost matrix dimensions disagree");
    }
    double sum = 0.0;
    for (int layer = 0; layer < placement.num_layers(); ++layer) {
        for (int e = 0; e < placement.num_experts(); ++e) {
            sum += freq(layer, e) * cost(layer, placement.device(layer, e));
        }
    }
    return sum;
}

double gain(double baseline_hops, double method_hops) {
    if (!(method_hops > 0.0)) throw ParameterError("gain needs a positive method hop count");
    return 100.0 * (baseline_hops - method_hops) / method_hops;
}

double CommMap::total() const { return std::accumulate(traffic_.begin(), traffic_.end(), 0.0); }

CommMap communication_map(const ActivationTrace& trace, const Placement& placement, const AttentionPlacement& attn,
                          const ClusterGraph& graph, const DistanceMatrix& dist) {
    if (trace.empty()) throw ParameterError("cannot build a communication map from an empty trace");
    const auto& model = trace.model();
    const int devices = dist.size();
    // Integer activation counts per (layer, device) first, then one pass of arithmetic.
    std::vector<std::int64_t> count(static_cast<std::size_t>(model.num_layers) * devices, 0);
    for (std::size_t t = 0; t < trace.num_tokens(); ++t) {
        for (int layer = 0; layer < model.num_layers; ++layer) {
            for (int e : trace.experts(t, layer)) {
                ++count[static_cast<std::size_t>(layer) * devices + placement.device(layer, e)];
            }
        }
    }
    const double tokens = static_cast<double>(trace.num_tokens());
    CommMap map(graph.num_servers());
    auto add = [&](int a, int b, double volume) {
        const int sa = graph.server_of(a);
        const int sb = graph.server_of(b);
        map.at(sa, sb) += 0.5 * volume;
        map.at(sb, sa) += 0.5 * volume;
    };
    for (int layer = 0; layer < model.num_layers; ++layer) {
        const int d = attn.dispatch[layer];
        const int c = attn.collect[layer];
        for (int s = 0; s < devices; ++s) {
            const auto n = count[static_cast<std::size_t>(layer) * devices + s];
            if (n == 0) continue;
            add(d, s, dist(d, s) * static_cast<double>(n) / tokens);
            add(s, c, dist(s, c) * static_cast<double>(n) / tokens);
        }
    }
    return map;
}

void write_comm_map_csv(const CommMap& map, std::ostream& out) {
    char buf[32];
    for (int b = 0; b < map.size(); ++b) out << (b ? "," : "") << b;
    out << '\n';
    for (int a = 0; a < map.size(); ++a) {
        for (int b = 0; b < map.size(); ++b) {
            std::snprintf(buf, sizeof buf, "%.6f", map(a, b));
            out << (b ? "," : "") << buf;
        }
        out << '\n';
    }
}

}  // namespace moeplace
