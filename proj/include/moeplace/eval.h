#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "moeplace/model_trace.h"
#include "moeplace/placement.h"
#include "moeplace/topology.h"

namespace moeplace {

struct EvalReport {
    std::string label;
    double mean_hops_per_token = 0.0;
    double std_hops = 0.0;  // population std of per-chunk mean hops
    std::size_t n_tokens = 0;
    int n_chunks = 0;
    std::optional<double> objective_train;

    nlohmann::json to_json() const;
};

// Hops of one token: sum over layers and selected experts of p(l, device(l, e)).
// `experts` is layer-major with `topk` entries per layer.
std::int64_t token_hops(std::span<const int> experts, int topk, const Placement& placement, const CostMatrix& cost);

// Token-weighted mean hops; std across chunk means.
EvalReport evaluate(const ActivationTrace& trace, const Placement& placement, const CostMatrix& cost,
                    std::string label = {});

// sum over (l, e) of f(l, e) * p(l, device(l, e)).
double objective_value(const Placement& placement, const FrequencyTable& freq, const CostMatrix& cost);

// Percent improvement of `method_hops` over `baseline_hops`, relative to the method.
double gain(double baseline_hops, double method_hops);

// Server x server traffic: each routed activation adds dist(dispatch, s) to
// (server(dispatch), server(s)) and dist(s, collect) to (server(s),
// server(collect)), split evenly between the two symmetric cells, per token.
class CommMap {
public:
    explicit CommMap(int num_servers = 0)
        : n_(num_servers), traffic_(static_cast<std::size_t>(num_servers) * num_servers, 0.0) {}

    int size() const { return n_; }
    double operator()(int a, int b) const { return traffic_[static_cast<std::size_t>(a) * n_ + b]; }
    double& at(int a, int b) { return traffic_[static_cast<std::size_t>(a) * n_ + b]; }
    double total() const;

private:
    int n_;
    std::vector<double> traffic_;
};

CommMap communication_map(const ActivationTrace& trace, const Placement& placement, const AttentionPlacement& attn,
                          const ClusterGraph& graph, const DistanceMatrix& dist);

void write_comm_map_csv(const CommMap& map, std::ostream& out);

}  // namespace moeplace
