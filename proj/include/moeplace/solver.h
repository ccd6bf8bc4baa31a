#pragma once

#include <cstdint>
#include <vector>

#include "moeplace/model_trace.h"
#include "moeplace/placement.h"

namespace moeplace {

// Weighted assignment problem: place every (layer, expert) on one device at
// cost w(l, e, s), subject to the c_layer and c_exp caps.
struct PlacementInstance {
    int num_layers = 0;
    int num_experts = 0;
    int num_devices = 0;
    Constraints constraints;
    std::vector<double> weights;  // layer-major, then expert, then device

    double weight(int layer, int expert, int device) const {
        return weights[(static_cast<std::size_t>(layer) * num_experts + expert) * num_devices + device];
    }
    double& weight(int layer, int expert, int device) {
        return weights[(static_cast<std::size_t>(layer) * num_experts + expert) * num_devices + device];
    }

    ModelSpec model() const { return {num_layers, num_experts, 1}; }
    double objective(const Placement& placement) const;
};

// w(l, e, s) = f(l, e) * p(l, s). Pass FrequencyTable::uniform for the
// load-agnostic objective.
PlacementInstance build_instance(const CostMatrix& cost, const FrequencyTable& freq, const Constraints& constraints);

// Scale applied to real weights before the integer flow computation.
inline constexpr double kCostScale = 1e9;

struct SolveResult {
    Placement placement;
    double objective = 0.0;   // sum of unscaled weights over the placement
    std::int64_t flow_value = 0;
    double wall_time_s = 0.0;
    std::int64_t iterations = 0;  // refines or augmentations
};

// Exact optimum via min-cost flow on
//   source -> item(l,e) -> slot(l,s) [c_layer] -> device(s) [c_exp] -> sink.
// Throws InfeasibleError naming the binding constraint family.
SolveResult solve_exact(const PlacementInstance& instance);

// Exhaustive search, for verification. Throws ParameterError when
// S^(L*E) exceeds kBruteForceLimit and InfeasibleError when nothing fits.
inline constexpr double kBruteForceLimit = 1e7;
double brute_force_optimum(const PlacementInstance& instance);

}  // namespace moeplace
