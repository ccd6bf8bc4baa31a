#include "moeplace/experiment.h"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <tuple>

#include "moeplace/errors.h"

namespace moeplace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(Method method) {
    switch (method) {
        case Method::RoundRobin: return "rr";
        case Method::Greedy: return "greedy";
        case Method::Ilp: return "ilp";
        case Method::IlpLoad: return "ilpload";
    }
    return "unknown";
}

Method parse_method(std::string_view name) {
    for (Method m : all_methods()) {
        if (to_string(m) == name) return m;
    }
    throw ParameterError("unknown placement method '" + std::string(name) + "'");
}

const std::vector<Method>& all_methods() {
    static const std::vector<Method> methods{Method::RoundRobin, Method::Greedy, Method::Ilp, Method::IlpLoad};
    return methods;
}

namespace {

template <typename T>
T get_as(const json& value, const std::string& key) {
    try {
        return value.get<T>();
    } catch (const json::exception&) {
        throw ParameterError("config key '" + key + "' has the wrong type");
    }
}

int get_int(const json& value, const std::string& key) {
    if (!value.is_number_integer()) throw ParameterError("config key '" + key + "' must be an integer");
    return value.get<int>();
}

std::string fixed(double value, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, value);
    return buf;
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const json& doc) {
    if (!doc.is_object()) throw ParameterError("config must be a JSON object");
    ExperimentConfig cfg;
    for (const auto& [key, value] : doc.items()) {
        if (key == "num_layers") cfg.model.num_layers = get_int(value, key);
        else if (key == "num_experts") cfg.model.num_experts = get_int(value, key);
        else if (key == "topk") cfg.model.topk = get_int(value, key);
        else if (key == "c_exp") cfg.constraints.c_exp = get_int(value, key);
        else if (key == "c_layer") cfg.constraints.c_layer = get_int(value, key);
        else if (key == "topologies") {
            cfg.topologies.clear();
            for (const auto& name : get_as<std::vector<std::string>>(value, key)) {
                cfg.topologies.push_back(parse_topology_kind(name));
            }
        } else if (key == "num_leaf_switches") cfg.num_leaf_switches = get_int(value, key);
        else if (key == "num_nodes_per_leaf") cfg.num_nodes_per_leaf = get_int(value, key);
        else if (key == "num_gpus_per_server") cfg.num_gpus_per_server = get_int(value, key);
        else if (key == "topology_extra") cfg.topology_extra = get_int(value, key);
        else if (key == "trace_file") {
            if (value.is_null()) cfg.trace_file.reset();
            else cfg.trace_file = get_as<std::string>(value, key);
        } else if (key == "zipf_s") {
            if (!value.is_number()) throw ParameterError("config key 'zipf_s' must be a number");
            cfg.synthetic.zipf_s = value.get<double>();
        } else if (key == "n_tokens") {
            if (!value.is_number_unsigned()) throw ParameterError("config key 'n_tokens' must be a nonnegative integer");
            cfg.synthetic.num_tokens = value.get<std::size_t>();
        } else if (key == "n_chunks") cfg.synthetic.num_chunks = get_int(value, key);
        else if (key == "seed") {
            if (!value.is_number_unsigned()) throw ParameterError("config key 'seed' must be a nonnegative integer");
            cfg.synthetic.seed = value.get<std::uint64_t>();
        } else if (key == "train_chunks") cfg.train_chunks = get_int(value, key);
        else if (key == "test_chunks") cfg.test_chunks = get_int(value, key);
        else if (key == "methods") {
            cfg.methods.clear();
            for (const auto& name : get_as<std::vector<std::string>>(value, key)) {
                cfg.methods.push_back(parse_method(name));
            }
        } else if (key == "output_dir") cfg.output_dir = get_as<std::string>(value, key);
        else throw ParameterError("unknown config key '" + key + "'");
    }
    return cfg;
}

json ExperimentConfig::to_json() const {
    json topo = json::array();
    for (auto kind : topologies) topo.push_back(to_string(kind));
    json meth = json::array();
    for (auto m : methods) meth.push_back(to_string(m));
    return {{"num_layers", model.num_layers},
            {"num_experts", model.num_experts},
            {"topk", model.topk},
            {"c_exp", constraints.c_exp},
            {"c_layer", constraints.c_layer},
            {"topologies", topo},
            {"num_leaf_switches", num_leaf_switches},
            {"num_nodes_per_leaf", num_nodes_per_leaf},
            {"num_gpus_per_server", num_gpus_per_server},
            {"topology_extra", topology_extra},
            {"trace_file", trace_file ? json(trace_file->string()) : json(nullptr)},
            {"zipf_s", synthetic.zipf_s},
            {"n_tokens", synthetic.num_tokens},
            {"n_chunks", synthetic.num_chunks},
            {"seed", synthetic.seed},
            {"train_chunks", train_chunks},
            {"test_chunks", test_chunks},
            {"methods", meth},
            {"output_dir", output_dir.string()}};
}

TopologySpec ExperimentConfig::topology_spec(TopologyKind kind) const {
    return {kind, num_leaf_switches, num_nodes_per_leaf, num_gpus_per_server, topology_extra};
}

void ExperimentConfig::validate() const {
    model.validate();
    if (topologies.empty()) throw ParameterError("config lists no topologies");
    if (methods.empty()) throw ParameterError("config lists no methods");
    if (std::set<Method>(methods.begin(), methods.end()).size() != methods.size()) {
        throw ParameterError("config lists a method twice");
    }
    if (std::set<TopologyKind>(topologies.begin(), topologies.end()).size() != topologies.size()) {
        throw ParameterError("config lists a topology twice");
    }
    if (train_chunks < 1 || test_chunks < 1) throw ParameterError("train_chunks and test_chunks must be >= 1");
    if (!trace_file) {
        if (synthetic.num_chunks < train_chunks + test_chunks) {
            throw ParameterError("n_chunks must cover train_chunks + test_chunks");
        }
        if (synthetic.num_tokens < static_cast<std::size_t>(synthetic.num_chunks)) {
            throw ParameterError("n_tokens must be at least n_chunks");
        }
        if (!(synthetic.zipf_s >= 0.0)) throw ParameterError("zipf_s must be >= 0");
    }
    for (auto kind : topologies) {
        const auto spec = topology_spec(kind);
        spec.validate();
        constraints.check(model, spec.num_devices());
    }
}

ExperimentConfig load_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ParameterError("config " + path.string() + " is not valid JSON: " + e.what());
    }
    return ExperimentConfig::from_json(doc);
}

TopologyContext make_context(const TopologySpec& spec, const ModelSpec& model) {
    TopologyContext ctx;
    ctx.graph = build_topology(spec);
    ctx.dist = all_pairs_hops(ctx.graph);
    ctx.order = locality_order(ctx.graph, ctx.dist);
    ctx.attn = default_attention_placement(model, ctx.order);
    ctx.cost = cost_matrix(ctx.dist, ctx.attn);
    return ctx;
}

TraceSplit prepare_traces(const ExperimentConfig& cfg) {
    ActivationTrace trace;
    if (cfg.trace_file) {
        trace = parse_trace(*cfg.trace_file);
        if (!(trace.model() == cfg.model)) {
            throw ParameterError("trace file shape does not match the configured model");
        }
    } else {
        trace = generate_trace(cfg.model, cfg.synthetic);
    }
    auto [train, test] = split_trace(trace, cfg.train_chunks, cfg.test_chunks);
    if (train.empty() || test.empty()) throw ParameterError("train or test split holds no tokens");
    auto freq = estimate_frequencies(train);
    return {std::move(train), std::move(test), std::move(freq)};
}

MethodOutcome run_method(Method method, const TopologyContext& ctx, const ModelSpec& model,
                         const Constraints& constraints, const TraceSplit& traces) {
    MethodOutcome out{method, {}, {}, {}, 0.0, std::nullopt};
    switch (method) {
        case Method::RoundRobin:
            out.placement = place_round_robin(model, ctx.attn, ctx.order, constraints);
            break;
        case Method::Greedy:
            out.placement = place_greedy(model, ctx.cost, constraints);
            break;
        case Method::Ilp:
        case Method::IlpLoad: {
            const auto freq = method == Method::Ilp ? FrequencyTable::uniform(model.num_layers, model.num_experts)
                                                    : traces.train_freq;
            out.solve = solve_exact(build_instance(ctx.cost, freq, constraints));
            out.placement = out.solve->placement;
            break;
        }
    }
    const auto violations = validate(out.placement, constraints, model, ctx.dist.size());
    if (!violations.empty()) {
        throw InfeasibleError(to_string(method) + " produced an invalid placement: " + violations.front().describe());
    }
    out.test = evaluate(traces.test, out.placement, ctx.cost, to_string(method));
    out.train = evaluate(traces.train, out.placement, ctx.cost, to_string(method));
    out.objective_train = objective_value(out.placement, traces.train_freq, ctx.cost);
    out.test.objective_train = out.objective_train;
    out.train.objective_train = out.objective_train;
    return out;
}

void write_file_atomic(const fs::path& path, const std::string& contents) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw IoError("cannot write " + tmp.string());
        out << contents;
        if (!out) throw IoError("write failed for " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw IoError("cannot move " + tmp.string() + " into place: " + ec.message());
}

namespace {

template <typename Fn>
std::string render(Fn&& fn) {
    std::ostringstream out;
    fn(out);
    return out.str();
}

void write_topology_artifacts(const fs::path& dir, const TopologyRun& run) {
    write_file_atomic(dir / "topology.json", topology_to_json(run.ctx.graph).dump(2) + "\n");
    write_file_atomic(dir / "distances.csv", render([&](std::ostream& o) { write_distance_csv(run.ctx.dist, o); }));
    for (const auto& outcome : run.outcomes) {
        const auto name = to_string(outcome.method);
        write_file_atomic(dir / ("placement_" + name + ".csv"),
                          render([&](std::ostream& o) { write_placement_csv(outcome.placement, o); }));
        write_file_atomic(dir / ("report_" + name + ".json"), outcome.test.to_json().dump(2) + "\n");
        if (outcome.solve) {
            const json report{{"objective", outcome.solve->objective},
                              {"wall_time_s", outcome.solve->wall_time_s},
                              {"flow_value", outcome.solve->flow_value},
                              {"scaled", true}};
            write_file_atomic(dir / ("solve_" + name + ".json"), report.dump(2) + "\n");
        }
    }
}

ExperimentResult run_with_traces(const ExperimentConfig& cfg, const TraceSplit& traces, bool write_artifacts) {
    cfg.validate();
    ExperimentResult result;
    for (auto kind : cfg.topologies) {
        TopologyRun run{kind, make_context(cfg.topology_spec(kind), cfg.model), {}};
        // Gains are always relative to round robin, requested or not.
        const bool rr_requested =
            std::find(cfg.methods.begin(), cfg.methods.end(), Method::RoundRobin) != cfg.methods.end();
        std::optional<MethodOutcome> baseline;
        if (!rr_requested) baseline = run_method(Method::RoundRobin, run.ctx, cfg.model, cfg.constraints, traces);
        for (auto method : cfg.methods) {
            run.outcomes.push_back(run_method(method, run.ctx, cfg.model, cfg.constraints, traces));
            if (method == Method::RoundRobin) baseline = run.outcomes.back();
        }
        for (const auto& outcome : run.outcomes) {
            ComparisonRow row;
            row.network = to_string(kind);
            row.placement = to_string(outcome.method);
            row.c_layer = cfg.constraints.c_layer;
            row.hops_mean = outcome.test.mean_hops_per_token;
            row.hops_std = outcome.test.std_hops;
            row.gain_pct = gain(baseline->test.mean_hops_per_token, outcome.test.mean_hops_per_token);
            row.objective_train = outcome.objective_train;
            if (outcome.solve) row.solver_objective = outcome.solve->objective;
            result.rows.push_back(row);
        }
        if (write_artifacts && !cfg.output_dir.empty()) {
            const fs::path dir = cfg.output_dir / to_string(kind);
            write_topology_artifacts(dir, run);
            // Communication maps for the two lowest test-hop methods.
            std::vector<const MethodOutcome*> ranked;
            for (const auto& o : run.outcomes) ranked.push_back(&o);
            std::stable_sort(ranked.begin(), ranked.end(), [](const MethodOutcome* a, const MethodOutcome* b) {
                return a->test.mean_hops_per_token < b->test.mean_hops_per_token;
            });
            for (std::size_t i = 0; i < std::min<std::size_t>(2, ranked.size()); ++i) {
                const auto map = communication_map(traces.test, ranked[i]->placement, run.ctx.attn, run.ctx.graph,
                                                   run.ctx.dist);
                write_file_atomic(dir / ("commmap_" + to_string(ranked[i]->method) + ".csv"),
                                  render([&](std::ostream& o) { write_comm_map_csv(map, o); }));
            }
        }
        result.runs.push_back(std::move(run));
    }
    if (write_artifacts && !cfg.output_dir.empty()) {
        write_file_atomic(cfg.output_dir / "comparison.csv",
                          render([&](std::ostream& o) { write_comparison_csv(result.rows, o); }));
    }
    return result;
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    return run_with_traces(cfg, prepare_traces(cfg), true);
}

std::vector<ComparisonRow> ablate_clayer(const ExperimentConfig& cfg, const std::vector<int>& values) {
    if (values.empty()) throw ParameterError("ablation needs at least one c_layer value");
    for (int v : values) {
        ExperimentConfig probe = cfg;
        probe.constraints.c_layer = v;
        probe.validate();
    }
    const auto traces = prepare_traces(cfg);
    std::vector<ComparisonRow> rows;
    for (int v : values) {
        ExperimentConfig run_cfg = cfg;
        run_cfg.constraints.c_layer = v;
        if (!cfg.output_dir.empty()) run_cfg.output_dir = cfg.output_dir / ("c_layer_" + std::to_string(v));
        auto result = run_with_traces(run_cfg, traces, true);
        rows.insert(rows.end(), result.rows.begin(), result.rows.end());
    }
    // Group by topology, then method, then c_layer for plotting.
    std::stable_sort(rows.begin(), rows.end(), [&](const ComparisonRow& a, const ComparisonRow& b) {
        auto topo_rank = [&](const std::string& n) {
            for (std::size_t i = 0; i < cfg.topologies.size(); ++i) {
                if (to_string(cfg.topologies[i]) == n) return i;
            }
            return cfg.topologies.size();
        };
        auto method_rank = [&](const std::string& n) {
            for (std::size_t i = 0; i < cfg.methods.size(); ++i) {
                if (to_string(cfg.methods[i]) == n) return i;
            }
            return cfg.methods.size();
        };
        return std::tuple(topo_rank(a.network), method_rank(a.placement), a.c_layer) <
               std::tuple(topo_rank(b.network), method_rank(b.placement), b.c_layer);
    });
    if (!cfg.output_dir.empty()) {
        write_file_atomic(cfg.output_dir / "ablation.csv", render([&](std::ostream& o) { write_ablation_csv(rows, o); }));
    }
    return rows;
}

void write_comparison_csv(const std::vector<ComparisonRow>& rows, std::ostream& out) {
    out << "network,placement,hops_mean,hops_std,gain_pct\n";
    for (const auto& r : rows) {
        out << r.network << ',' << r.placement << ',' << fixed(r.hops_mean, 4) << ',' << fixed(r.hops_std, 4) << ','
            << fixed(r.gain_pct, 3) << '\n';
    }
}

void write_ablation_csv(const std::vector<ComparisonRow>& rows, std::ostream& out) {
    out << "network,placement,c_layer,hops_mean,hops_std,gain_pct,objective_train,solver_objective\n";
    for (const auto& r : rows) {
        out << r.network << ',' << r.placement << ',' << r.c_layer << ',' << fixed(r.hops_mean, 4) << ','
            << fixed(r.hops_std, 4) << ',' << fixed(r.gain_pct, 3) << ',' << fixed(r.objective_train, 9) << ','
            << (r.solver_objective ? fixed(*r.solver_objective, 9) : std::string()) << '\n';
    }
}

}  // namespace moeplace
