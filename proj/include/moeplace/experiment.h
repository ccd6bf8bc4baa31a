#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "moeplace/eval.h"
#include "moeplace/model_trace.h"
#include "moeplace/placement.h"
#include "moeplace/solver.h"
#include "moeplace/topology.h"

namespace moeplace {

enum class Method { RoundRobin, Greedy, Ilp, IlpLoad };

std::string to_string(Method method);
Method parse_method(std::string_view name);
const std::vector<Method>& all_methods();

// Flat experiment description; JSON keys match the field names below.
struct ExperimentConfig {
    ModelSpec model{58, 256, 8};
    Constraints constraints{64, 1};

    std::vector<TopologyKind> topologies{TopologyKind::FatTree, TopologyKind::Dragonfly, TopologyKind::FatTreeHier,
                                         TopologyKind::DragonflySparse};
    int num_leaf_switches = 16;
    int num_nodes_per_leaf = 4;
    int num_gpus_per_server = 4;
    int topology_extra = 0;

    std::optional<std::filesystem::path> trace_file;
    TraceGenOptions synthetic{1.2, 20000, 150, 1};
    int train_chunks = 100;
    int test_chunks = 50;

    std::vector<Method> methods{Method::RoundRobin, Method::Greedy, Method::Ilp, Method::IlpLoad};
    std::filesystem::path output_dir;

    // Unknown keys and wrongly typed values throw ParameterError.
    static ExperimentConfig from_json(const nlohmann::json& doc);
    nlohmann::json to_json() const;

    TopologySpec topology_spec(TopologyKind kind) const;
    // Shape checks plus the capacity feasibility pre-check (InfeasibleError).
    void validate() const;
};

ExperimentConfig load_config(const std::filesystem::path& path);

// Everything derived from one topology that the placers need.
struct TopologyContext {
    ClusterGraph graph;
    DistanceMatrix dist;
    std::vector<int> order;
    AttentionPlacement attn;
    CostMatrix cost;
};

TopologyContext make_context(const TopologySpec& spec, const ModelSpec& model);

struct TraceSplit {
    ActivationTrace train;
    ActivationTrace test;
    FrequencyTable train_freq;
};

// Loads or synthesises the trace named by the config and splits it.
TraceSplit prepare_traces(const ExperimentConfig& cfg);

struct MethodOutcome {
    Method method;
    Placement placement;
    EvalReport test;
    EvalReport train;
    double objective_train = 0.0;             // load-aware objective with train frequencies
    std::optional<SolveResult> solve;         // exact methods only
};

MethodOutcome run_method(Method method, const TopologyContext& ctx, const ModelSpec& model,
                         const Constraints& constraints, const TraceSplit& traces);

struct ComparisonRow {
    std::string network;
    std::string placement;
    int c_layer = 0;
    double hops_mean = 0.0;
    double hops_std = 0.0;
    double gain_pct = 0.0;
    double objective_train = 0.0;
    std::optional<double> solver_objective;
};

struct TopologyRun {
    TopologyKind kind;
    TopologyContext ctx;
    std::vector<MethodOutcome> outcomes;
};

struct ExperimentResult {
    std::vector<TopologyRun> runs;
    std::vector<ComparisonRow> rows;
};

// Runs every requested method on every topology. When cfg.output_dir is set,
// writes per-topology artifacts and comparison.csv there.
ExperimentResult run_experiment(const ExperimentConfig& cfg);

// One run per c_layer value; rows carry the c_layer column. Writes
// ablation.csv when cfg.output_dir is set.
std::vector<ComparisonRow> ablate_clayer(const ExperimentConfig& cfg, const std::vector<int>& values);

// network,placement,hops_mean,hops_std,gain_pct
void write_comparison_csv(const std::vector<ComparisonRow>& rows, std::ostream& out);
// network,placement,c_layer,hops_mean,hops_std,gain_pct,objective_train,solver_objective
void write_ablation_csv(const std::vector<ComparisonRow>& rows, std::ostream& out);

// Writes through a temporary file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

}  // namespace moeplace
