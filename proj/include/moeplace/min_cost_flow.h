#pragma once

#include <cstdint>
#include <limits>
#include <vector>

namespace moeplace {

// Min-cost maximum flow on a directed network with integer capacities and
// nonnegative integer costs. Two independent engines are provided:
//
//   CostScaling  Dinic max flow, then epsilon-scaling push-relabel (Goldberg)
//                turns it into a minimum-cost circulation on the residual
//                graph. Insensitive to cost ties and to the number of distinct
//                path lengths; the default.
//
//   SuccessiveShortestPaths
//                Supply enters through the source's out-arcs one unit at a
//                time, in arc order. Each unit follows a shortest augmenting
//                path (Dijkstra on reduced costs, stopping at the sink, lifting
//                potentials of settled nodes only). Arcs back into the source
//                are never used. Minimum-cost whenever every source arc can be
//                saturated.
//
// Both explore arcs in insertion order, so results are deterministic.
class MinCostFlow {
public:
    using Cost = std::int64_t;

    enum class Algorithm { CostScaling, SuccessiveShortestPaths };

    struct Result {
        std::int64_t flow = 0;
        Cost cost = 0;
        std::int64_t iterations = 0;  // refines or augmentations
    };

    explicit MinCostFlow(int num_nodes);

    // Returns the arc id used by flow().
    int add_arc(int from, int to, int capacity, Cost cost);

    Result solve(int source, int sink, Algorithm algorithm = Algorithm::CostScaling);

    int flow(int arc) const { return original_capacity_[arc] - residual_[2 * arc]; }
    int num_nodes() const { return num_nodes_; }
    int num_arcs() const { return static_cast<int>(original_capacity_.size()); }

private:
    void build_adjacency();
    void reset_flow();

    std::int64_t max_flow(int source, int sink);
    bool build_levels(int source, int sink);
    std::int64_t refine_circulation();
    void refine(Cost epsilon, const std::vector<Cost>& scaled);

    std::int64_t successive_shortest_paths(int source, int sink);
    bool route_unit(int start, int source, int sink);

    void push(int arc, int amount) {
        residual_[arc] -= amount;
        residual_[arc ^ 1] += amount;
    }

    int num_nodes_;
    // Residual arc 2i is the forward copy of arc i, 2i+1 its reverse.
    std::vector<int> tail_;
    std::vector<int> head_;
    std::vector<int> residual_;
    std::vector<Cost> cost_;
    std::vector<int> original_capacity_;

    // CSR view of residual arcs by tail.
    std::vector<int> first_out_;
    std::vector<int> out_arcs_;

    std::vector<int> level_;
    std::vector<int> cursor_;
    std::vector<Cost> potential_;
    std::vector<std::int64_t> excess_;

    std::vector<Cost> dist_;
    std::vector<int> pred_arc_;
    std::vector<char> settled_;
    std::vector<int> touched_;
};

}  // namespace moeplace
