#include "moeplace/solver.h"

#include <chrono>
#include <cmath>
#include <limits>

#include "moeplace/errors.h"
#include "moeplace/min_cost_flow.h"

namespace moeplace {

double PlacementInstance::objective(const Placement& placement) const {
    double sum = 0.0;
    for (int layer = 0; layer < num_layers; ++layer) {
        for (int e = 0; e < num_experts; ++e) sum += weight(layer, e, placement.device(layer, e));
    }
    return sum;
}

PlacementInstance build_instance(const CostMatrix& cost, const FrequencyTable& freq, const Constraints& constraints) {
    if (freq.num_layers() != cost.num_layers()) throw ParameterError("frequency table and cost matrix disagree on L");
    PlacementInstance inst;
    inst.num_layers = cost.num_layers();
    inst.num_experts = freq.num_experts();
    inst.num_devices = cost.num_devices();
    inst.constraints = constraints;
    inst.weights.resize(static_cast<std::size_t>(inst.num_layers) * inst.num_experts * inst.num_devices);
    for (int layer = 0; layer < inst.num_layers; ++layer) {
        for (int e = 0; e < inst.num_experts; ++e) {
            const double f = freq(layer, e);
            if (!(f >= 0.0) || !std::isfinite(f)) {
                throw ParameterError("frequency of layer " + std::to_string(layer) + " expert " + std::to_string(e) +
                                     " must be finite and nonnegative");
            }
            for (int s = 0; s < inst.num_devices; ++s) inst.weight(layer, e, s) = f * cost(layer, s);
        }
    }
    return inst;
}

namespace {

void check_weights(const PlacementInstance& inst) {
    for (double w : inst.weights) {
        if (!(w >= 0.0) || !std::isfinite(w)) throw ParameterError("instance weights must be finite and nonnegative");
    }
}

}  // namespace

SolveResult solve_exact(const PlacementInstance& inst) {
    const auto start = std::chrono::steady_clock::now();
    check_weights(inst);
    const Constraints& c = inst.constraints;
    if (c.c_layer < 1 || c.c_exp < 1) throw ParameterError("capacities must be >= 1");

    const int L = inst.num_layers;
    const int E = inst.num_experts;
    const int S = inst.num_devices;
    const int items = L * E;
    const int slots = L * S;
    const int source = 0;
    const int first_item = 1;
    const int first_slot = first_item + items;
    const int first_device = first_slot + slots;
    const int sink = first_device + S;

    MinCostFlow network(sink + 1);
    for (int item = 0; item < items; ++item) network.add_arc(source, first_item + item, 1, 0);
    const int first_assign_arc = network.num_arcs();
    for (int layer = 0; layer < L; ++layer) {
        for (int e = 0; e < E; ++e) {
            for (int s = 0; s < S; ++s) {
                const auto scaled = static_cast<MinCostFlow::Cost>(std::llround(inst.weight(layer, e, s) * kCostScale));
                network.add_arc(first_item + layer * E + e, first_slot + layer * S + s, 1, scaled);
            }
        }
    }
    for (int layer = 0; layer < L; ++layer) {
        for (int s = 0; s < S; ++s) network.add_arc(first_slot + layer * S + s, first_device + s, c.c_layer, 0);
    }
    for (int s = 0; s < S; ++s) network.add_arc(first_device + s, sink, c.c_exp, 0);

    const auto flow = network.solve(source, sink);
    if (flow.flow < items) {
        std::string family = "combined capacity";
        if (static_cast<long long>(S) * c.c_layer < E) family = "c_layer";
        else if (static_cast<long long>(S) * c.c_exp < static_cast<long long>(L) * E) family = "c_exp";
        throw InfeasibleError("infeasible instance (" + family + "): max flow " + std::to_string(flow.flow) + " < " +
                              std::to_string(items) + " experts");
    }

    SolveResult result;
    result.placement = Placement(L, E);
    int arc = first_assign_arc;
    for (int layer = 0; layer < L; ++layer) {
        for (int e = 0; e < E; ++e) {
            for (int s = 0; s < S; ++s, ++arc) {
                if (network.flow(arc) > 0) result.placement.assign(layer, e, s);
            }
        }
    }
    result.objective = inst.objective(result.placement);
    result.flow_value = flow.flow;
    result.iterations = flow.iterations;
    result.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return result;
}

namespace {

struct BruteForce {
    const PlacementInstance& inst;
    std::vector<int> total;
    std::vector<int> per_layer;  // layer-major L x S
    double best = std::numeric_limits<double>::infinity();

    void search(int item, double partial) {
        if (item == inst.num_layers * inst.num_experts) {
            best = std::min(best, partial);
            return;
        }
        const int layer = item / inst.num_experts;
        const int e = item % inst.num_experts;
        for (int s = 0; s < inst.num_devices; ++s) {
            int& used_layer = per_layer[static_cast<std::size_t>(layer) * inst.num_devices + s];
            if (used_layer >= inst.constraints.c_layer || total[s] >= inst.constraints.c_exp) continue;
            ++used_layer;
            ++total[s];
            search(item + 1, partial + inst.weight(layer, e, s));
            --used_layer;
            --total[s];
        }
    }
};

}  // namespace

double brute_force_optimum(const PlacementInstance& inst) {
    check_weights(inst);
    const double space = std::pow(static_cast<double>(inst.num_devices),
                                  static_cast<double>(inst.num_layers) * inst.num_experts);
    if (space > kBruteForceLimit) {
        throw ParameterError("brute force over " + std::to_string(space) + " assignments exceeds the guard");
    }
    BruteForce bf{inst, std::vector<int>(inst.num_devices, 0),
                  std::vector<int>(static_cast<std::size_t>(inst.num_layers) * inst.num_devices, 0)};
    bf.search(0, 0.0);
    if (!std::isfinite(bf.best)) throw InfeasibleError("no assignment satisfies the constraints");
    return bf.best;
}

}  // namespace moeplace
