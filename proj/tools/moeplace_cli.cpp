#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "moeplace/errors.h"
#include "moeplace/experiment.h"

using namespace moeplace;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kConfigError = 2, kInfeasible = 3, kIoError = 4 };

// Flags named after the config keys. Only flags given on the command line end
// up in the document; --config entries are applied on top of them.
struct ConfigFlags {
    std::optional<int> num_layers, num_experts, topk, c_exp, c_layer;
    std::vector<std::string> topologies;
    std::optional<int> num_leaf_switches, num_nodes_per_leaf, num_gpus_per_server, topology_extra;
    std::optional<std::string> trace_file;
    std::optional<double> zipf_s;
    std::optional<std::size_t> n_tokens;
    std::optional<int> n_chunks;
    std::optional<std::uint64_t> seed;
    std::optional<int> train_chunks, test_chunks;
    std::vector<std::string> methods;
    std::optional<std::string> output_dir;
    std::string config_path;

    void attach(CLI::App* app, bool with_methods = true) {
        app->add_option("--config", config_path, "JSON config; its entries override flags");
        app->add_option("--num_layers", num_layers, "MoE layers L");
        app->add_option("--num_experts", num_experts, "routed experts per layer E");
        app->add_option("--topk", topk, "experts selected per token per layer");
        app->add_option("--c_exp", c_exp, "max experts per device");
        app->add_option("--c_layer", c_layer, "max experts per device from one layer");
        app->add_option("--topologies", topologies, "fattree, fattree_hier, dragonfly, dragonfly_sparse")
            ->delimiter(',');
        app->add_option("--num_leaf_switches", num_leaf_switches);
        app->add_option("--num_nodes_per_leaf", num_nodes_per_leaf, "servers per leaf switch");
        app->add_option("--num_gpus_per_server", num_gpus_per_server);
        app->add_option("--topology_extra", topology_extra, "spine count or group count, 0 = default");
        app->add_option("--trace_file", trace_file, "trace to load instead of generating one");
        app->add_option("--zipf_s", zipf_s, "Zipf exponent of the synthetic trace");
        app->add_option("--n_tokens", n_tokens);
        app->add_option("--n_chunks", n_chunks);
        app->add_option("--seed", seed);
        app->add_option("--train_chunks", train_chunks);
        app->add_option("--test_chunks", test_chunks);
        if (with_methods) app->add_option("--methods", methods, "rr, greedy, ilp, ilpload")->delimiter(',');
        app->add_option("--output_dir", output_dir);
    }

    ExperimentConfig resolve() const {
        json doc = json::object();
        auto put = [&](const char* key, const auto& value) {
            if (value) doc[key] = *value;
        };
        put("num_layers", num_layers);
        put("num_experts", num_experts);
        put("topk", topk);
        put("c_exp", c_exp);
        put("c_layer", c_layer);
        if (!topologies.empty()) doc["topologies"] = topologies;
        put("num_leaf_switches", num_leaf_switches);
        put("num_nodes_per_leaf", num_nodes_per_leaf);
        put("num_gpus_per_server", num_gpus_per_server);
        put("topology_extra", topology_extra);
        put("trace_file", trace_file);
        put("zipf_s", zipf_s);
        put("n_tokens", n_tokens);
        put("n_chunks", n_chunks);
        put("seed", seed);
        put("train_chunks", train_chunks);
        put("test_chunks", test_chunks);
        if (!methods.empty()) doc["methods"] = methods;
        put("output_dir", output_dir);
        if (!config_path.empty()) {
            std::ifstream in(config_path);
            if (!in) throw IoError("cannot open config " + config_path);
            json file;
            try {
                file = json::parse(in);
            } catch (const json::parse_error& e) {
                throw ParameterError("config " + config_path + " is not valid JSON: " + e.what());
            }
            if (!file.is_object()) throw ParameterError("config must be a JSON object");
            doc.update(file);
        }
        return ExperimentConfig::from_json(doc);
    }
};

void write_output(const std::string& path, const std::string& contents) {
    if (path.empty() || path == "-") {
        std::cout << contents;
        return;
    }
    write_file_atomic(path, contents);
}

template <typename Fn>
std::string render(Fn&& fn) {
    std::ostringstream out;
    fn(out);
    return out.str();
}

TopologyKind pick_topology(const ExperimentConfig& cfg, const std::string& name) {
    if (!name.empty()) return parse_topology_kind(name);
    return cfg.topologies.front();
}

int run(int argc, char** argv) {
    CLI::App app{"Topology-aware placement of MoE experts"};
    app.require_subcommand(1);

    // topo build
    auto* topo = app.add_subcommand("topo", "topology tools");
    topo->require_subcommand(1);
    auto* topo_build = topo->add_subcommand("build", "generate a topology and its distance matrix");
    std::string kind_name = "fattree";
    TopologySpec topo_spec;
    std::string topo_json_out, dist_out, order_out;
    topo_build->add_option("--kind", kind_name, "fattree, fattree_hier, dragonfly, dragonfly_sparse");
    topo_build->add_option("--num_leaf_switches", topo_spec.num_leaf_switches);
    topo_build->add_option("--num_nodes_per_leaf", topo_spec.servers_per_leaf);
    topo_build->add_option("--num_gpus_per_server", topo_spec.gpus_per_server);
    topo_build->add_option("--topology_extra", topo_spec.extra);
    topo_build->add_option("--json", topo_json_out, "topology JSON output ('-' for stdout)");
    topo_build->add_option("--distances", dist_out, "distance CSV output");
    topo_build->add_option("--order", order_out, "locality order output, one device per line");

    // trace gen / trace stats
    auto* trace = app.add_subcommand("trace", "activation trace tools");
    trace->require_subcommand(1);
    auto* trace_gen = trace->add_subcommand("gen", "generate a synthetic Zipf trace");
    ModelSpec gen_model{58, 256, 8};
    TraceGenOptions gen_opts;
    std::string trace_out;
    trace_gen->add_option("--num_layers", gen_model.num_layers);
    trace_gen->add_option("--num_experts", gen_model.num_experts);
    trace_gen->add_option("--topk", gen_model.topk);
    trace_gen->add_option("--zipf_s", gen_opts.zipf_s);
    trace_gen->add_option("--n_tokens", gen_opts.num_tokens);
    trace_gen->add_option("--n_chunks", gen_opts.num_chunks);
    trace_gen->add_option("--seed", gen_opts.seed);
    trace_gen->add_option("--out", trace_out, "trace file ('-' for stdout)");

    auto* trace_stats = trace->add_subcommand("stats", "summarise a trace file");
    std::string stats_in, freq_out;
    trace_stats->add_option("trace", stats_in, "trace file")->required();
    trace_stats->add_option("--frequencies", freq_out, "write layer,expert,frequency CSV");

    // place <method>
    auto* place = app.add_subcommand("place", "compute one placement");
    ConfigFlags place_flags;
    std::string place_method, place_topology, place_out, place_report;
    place->add_option("method", place_method, "rr, greedy, ilp, ilpload")->required();
    place->add_option("--topology", place_topology, "topology kind (default: first configured)");
    place->add_option("--out", place_out, "placement CSV ('-' for stdout)");
    place->add_option("--report", place_report, "JSON report with evaluation and solver details");
    place_flags.attach(place, false);

    // eval
    auto* eval = app.add_subcommand("eval", "evaluate a placement file on a trace");
    ConfigFlags eval_flags;
    std::string eval_placement, eval_topology, eval_trace, eval_commmap;
    eval->add_option("--placement", eval_placement, "placement CSV")->required();
    eval->add_option("--topology", eval_topology, "topology kind (default: first configured)");
    eval->add_option("--trace", eval_trace, "evaluate every token of this trace instead of the test split");
    eval->add_option("--commmap", eval_commmap, "write the server communication map CSV");
    eval_flags.attach(eval, false);

    // compare
    auto* compare = app.add_subcommand("compare", "run every method on every topology");
    ConfigFlags compare_flags;
    compare_flags.attach(compare);

    // ablate
    auto* ablate = app.add_subcommand("ablate", "sweep c_layer");
    ConfigFlags ablate_flags;
    std::vector<int> ablate_values{1, 4, 8};
    ablate->add_option("--values", ablate_values, "c_layer values")->delimiter(',');
    ablate_flags.attach(ablate);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfigError;
    }

    if (topo_build->parsed()) {
        topo_spec.kind = parse_topology_kind(kind_name);
        const auto graph = build_topology(topo_spec);
        const auto dist = all_pairs_hops(graph);
        if (!topo_json_out.empty()) write_output(topo_json_out, topology_to_json(graph).dump(2) + "\n");
        if (!dist_out.empty()) write_output(dist_out, render([&](std::ostream& o) { write_distance_csv(dist, o); }));
        if (!order_out.empty()) {
            write_output(order_out, render([&](std::ostream& o) {
                             for (int d : locality_order(graph, dist)) o << d << '\n';
                         }));
        }
        std::cerr << to_string(topo_spec.kind) << ": " << graph.device_server.size() << " devices, "
                  << graph.num_servers() << " servers, " << graph.links.size() << " links\n";
        return kOk;
    }

    if (trace_gen->parsed()) {
        const auto t = generate_trace(gen_model, gen_opts);
        write_output(trace_out, render([&](std::ostream& o) { write_trace(t, o); }));
        return kOk;
    }

    if (trace_stats->parsed()) {
        const auto t = parse_trace(fs::path(stats_in));
        const auto& m = t.model();
        json doc{{"num_layers", m.num_layers},
                 {"num_experts", m.num_experts},
                 {"topk", m.topk},
                 {"n_tokens", t.num_tokens()},
                 {"n_chunks", t.chunk_ids().size()}};
        if (!t.empty()) {
            const auto freq = estimate_frequencies(t);
            json layers = json::array();
            for (int l = 0; l < m.num_layers; ++l) {
                int hot = 0;
                for (int e = 1; e < m.num_experts; ++e) {
                    if (freq(l, e) > freq(l, hot)) hot = e;
                }
                layers.push_back({{"layer", l}, {"hot_expert", hot}, {"hot_frequency", freq(l, hot)}});
            }
            doc["layers"] = layers;
            if (!freq_out.empty()) {
                write_output(freq_out, render([&](std::ostream& o) {
                                 o << "layer,expert,frequency\n";
                                 char buf[64];
                                 for (int l = 0; l < m.num_layers; ++l) {
                                     for (int e = 0; e < m.num_experts; ++e) {
                                         std::snprintf(buf, sizeof buf, "%d,%d,%.9f\n", l, e, freq(l, e));
                                         o << buf;
                                     }
                                 }
                             }));
            }
        }
        std::cout << doc.dump(2) << '\n';
        return kOk;
    }

    if (place->parsed()) {
        const auto cfg = place_flags.resolve();
        cfg.validate();
        const Method method = parse_method(place_method);
        const TopologyKind kind = pick_topology(cfg, place_topology);
        const auto ctx = make_context(cfg.topology_spec(kind), cfg.model);
        const auto traces = prepare_traces(cfg);
        const auto outcome = run_method(method, ctx, cfg.model, cfg.constraints, traces);
        write_output(place_out, render([&](std::ostream& o) { write_placement_csv(outcome.placement, o); }));
        json report{{"network", to_string(kind)}, {"placement", to_string(method)}, {"test", outcome.test.to_json()},
                    {"train", outcome.train.to_json()}};
        if (outcome.solve) {
            report["solve"] = {{"objective", outcome.solve->objective},
                               {"wall_time_s", outcome.solve->wall_time_s},
                               {"flow_value", outcome.solve->flow_value},
                               {"scaled", true}};
        }
        if (!place_report.empty()) write_output(place_report, report.dump(2) + "\n");
        return kOk;
    }

    if (eval->parsed()) {
        const auto cfg = eval_flags.resolve();
        cfg.validate();
        const TopologyKind kind = pick_topology(cfg, eval_topology);
        const auto ctx = make_context(cfg.topology_spec(kind), cfg.model);
        std::ifstream in(eval_placement);
        if (!in) throw IoError("cannot open placement " + eval_placement);
        const auto placement = read_placement_csv(in, cfg.model, ctx.dist.size());
        const auto violations = validate(placement, cfg.constraints, cfg.model, ctx.dist.size());
        if (!violations.empty()) {
            for (const auto& v : violations) std::cerr << v.describe() << '\n';
            throw InfeasibleError(std::to_string(violations.size()) + " constraint violations in " + eval_placement);
        }
        ActivationTrace t;
        std::optional<FrequencyTable> train_freq;
        if (!eval_trace.empty()) {
            t = parse_trace(fs::path(eval_trace));
            if (!(t.model() == cfg.model)) throw ParameterError("trace shape does not match the configured model");
        } else {
            auto split = prepare_traces(cfg);
            t = std::move(split.test);
            train_freq = std::move(split.train_freq);
        }
        auto report = evaluate(t, placement, ctx.cost, fs::path(eval_placement).filename().string());
        if (train_freq) report.objective_train = objective_value(placement, *train_freq, ctx.cost);
        std::cout << report.to_json().dump(2) << '\n';
        if (!eval_commmap.empty()) {
            const auto map = communication_map(t, placement, ctx.attn, ctx.graph, ctx.dist);
            write_output(eval_commmap, render([&](std::ostream& o) { write_comm_map_csv(map, o); }));
        }
        return kOk;
    }

    if (compare->parsed()) {
        const auto cfg = compare_flags.resolve();
        const auto result = run_experiment(cfg);
        write_comparison_csv(result.rows, std::cout);
        return kOk;
    }

    if (ablate->parsed()) {
        const auto cfg = ablate_flags.resolve();
        const auto rows = ablate_clayer(cfg, ablate_values);
        write_ablation_csv(rows, std::cout);
        return kOk;
    }
    return kFailure;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const InfeasibleError& e) {
        std::cerr << "infeasible: " << e.what() << '\n';
        return kInfeasible;
    } catch (const ParseError& e) {
        std::cerr << "parse error: " << e.what() << '\n';
        return kIoError;
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << '\n';
        return kIoError;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "io error: " << e.what() << '\n';
        return kIoError;
    } catch (const ParameterError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfigError;
    } catch (const TopologyError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfigError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kFailure;
    }
}
