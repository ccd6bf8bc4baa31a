#include "moeplace/topology.h"

#include <algorithm>
#include <charconv>
#include <deque>
#include <limits>
#include <map>
#include <ostream>
#include <set>

#include "moeplace/errors.h"

namespace moeplace {

namespace {

constexpr int kDefaultSpines = 4;
constexpr int kDefaultHierGroups = 4;
constexpr int kDragonflyGroupSize = 4;

// Contiguous balanced partition of [0, n) into `parts` blocks.
int block_begin(int block, int n, int parts) {
    return static_cast<int>(static_cast<long long>(block) * n / parts);
}

class GraphBuilder {
public:
    explicit GraphBuilder(const TopologySpec& spec) {
        graph_.spec = spec;
        const int servers = spec.num_servers();
        graph_.node_kind.assign(servers, NodeKind::Server);
        graph_.node_parent.assign(servers, -1);
        for (int leaf = 0; leaf < spec.num_leaf_switches; ++leaf) {
            graph_.leaf_nodes.push_back(add_node(NodeKind::Leaf));
        }
        for (int s = 0; s < servers; ++s) {
            const int leaf_node = graph_.leaf_nodes[s / spec.servers_per_leaf];
            graph_.node_parent[s] = leaf_node;
            link(s, leaf_node);
        }
        graph_.device_server.resize(spec.num_devices());
        for (int d = 0; d < spec.num_devices(); ++d) {
            graph_.device_server[d] = d / spec.gpus_per_server;
        }
    }

    int add_node(NodeKind kind, int parent = -1) {
        graph_.node_kind.push_back(kind);
        graph_.node_parent.push_back(parent);
        return graph_.num_nodes() - 1;
    }

    void link(int a, int b) {
        if (a == b) return;
        links_.insert({std::min(a, b), std::max(a, b)});
    }

    int leaf(int index) const { return graph_.leaf_nodes[index]; }

    void set_parent(int node, int parent) { graph_.node_parent[node] = parent; }

    ClusterGraph finish() && {
        graph_.links.assign(links_.begin(), links_.end());
        return std::move(graph_);
    }

private:
    ClusterGraph graph_;
    std::set<std::pair<int, int>> links_;
};

void wire_fat_tree(GraphBuilder& b, const TopologySpec& spec) {
    const int spines = spec.resolved_extra();
    std::vector<int> spine_nodes;
    for (int i = 0; i < spines; ++i) spine_nodes.push_back(b.add_node(NodeKind::Spine));
    for (int leaf = 0; leaf < spec.num_leaf_switches; ++leaf) {
        for (int spine : spine_nodes) b.link(b.leaf(leaf), spine);
    }
}

void wire_fat_tree_hier(GraphBuilder& b, const TopologySpec& spec) {
    const int groups = spec.resolved_extra();
    const int n = spec.num_leaf_switches;
    std::vector<int> aggregation;
    for (int g = 0; g < groups; ++g) aggregation.push_back(b.add_node(NodeKind::Aggregation));
    const int top = b.add_node(NodeKind::Top);
    for (int g = 0; g < groups; ++g) {
        b.set_parent(aggregation[g], top);
        b.link(aggregation[g], top);
        for (int leaf = block_begin(g, n, groups); leaf < block_begin(g + 1, n, groups); ++leaf) {
            b.set_parent(b.leaf(leaf), aggregation[g]);
            b.link(b.leaf(leaf), aggregation[g]);
        }
    }
}

void wire_dragonfly(GraphBuilder& b, const TopologySpec& spec) {
    const int groups = spec.resolved_extra();
    const int n = spec.num_leaf_switches;
    std::vector<std::vector<int>> members(groups);
    for (int g = 0; g < groups; ++g) {
        for (int leaf = block_begin(g, n, groups); leaf < block_begin(g + 1, n, groups); ++leaf) {
            members[g].push_back(leaf);
        }
        for (std::size_t i = 0; i < members[g].size(); ++i) {
            for (std::size_t j = i + 1; j < members[g].size(); ++j) {
                b.link(b.leaf(members[g][i]), b.leaf(members[g][j]));
            }
        }
    }
    // One global link per group pair; each group hands out its leaves in turn.
    std::vector<std::size_t> next(groups, 0);
    for (int g = 0; g < groups; ++g) {
        for (int h = g + 1; h < groups; ++h) {
            const int from = members[g][next[g]++ % members[g].size()];
            const int to = members[h][next[h]++ % members[h].size()];
            b.link(b.leaf(from), b.leaf(to));
        }
    }
}

void wire_dragonfly_sparse(GraphBuilder& b, const TopologySpec& spec) {
    const int n = spec.num_leaf_switches;
    for (int leaf = 0; leaf < n; ++leaf) {
        b.link(b.leaf(leaf), b.leaf((leaf + 1) % n));
        b.link(b.leaf(leaf), b.leaf((leaf + n / 2) % n));
    }
}

int parse_node_ref(const std::string& ref, std::string_view prefix) {
    if (ref.size() <= prefix.size() || ref.compare(0, prefix.size(), prefix) != 0) {
        throw ParseError("bad node reference '" + ref + "'");
    }
    int index = -1;
    const char* first = ref.data() + prefix.size();
    const char* last = ref.data() + ref.size();
    auto [ptr, ec] = std::from_chars(first, last, index);
    if (ec != std::errc{} || ptr != last || index < 0) {
        throw ParseError("bad node reference '" + ref + "'");
    }
    return index;
}

}  // namespace

std::string to_string(TopologyKind kind) {
    switch (kind) {
        case TopologyKind::FatTree: return "fattree";
        case TopologyKind::FatTreeHier: return "fattree_hier";
        case TopologyKind::Dragonfly: return "dragonfly";
        case TopologyKind::DragonflySparse: return "dragonfly_sparse";
    }
    return "unknown";
}

TopologyKind parse_topology_kind(std::string_view name) {
    for (auto kind : {TopologyKind::FatTree, TopologyKind::FatTreeHier, TopologyKind::Dragonfly,
                      TopologyKind::DragonflySparse}) {
        if (to_string(kind) == name) return kind;
    }
    throw ParameterError("unknown topology kind '" + std::string(name) + "'");
}

std::string to_string(NodeKind kind) {
    switch (kind) {
        case NodeKind::Server: return "server";
        case NodeKind::Leaf: return "leaf";
        case NodeKind::Spine: return "spine";
        case NodeKind::Aggregation: return "aggregation";
        case NodeKind::Top: return "top";
    }
    return "unknown";
}

int TopologySpec::resolved_extra() const {
    if (extra > 0) return extra;
    switch (kind) {
        case TopologyKind::FatTree: return kDefaultSpines;
        case TopologyKind::FatTreeHier: return std::min(kDefaultHierGroups, num_leaf_switches);
        case TopologyKind::Dragonfly:
            return (num_leaf_switches + kDragonflyGroupSize - 1) / kDragonflyGroupSize;
        case TopologyKind::DragonflySparse: return 0;
    }
    return 0;
}

void TopologySpec::validate() const {
    if (num_leaf_switches < 1 || servers_per_leaf < 1 || gpus_per_server < 1) {
        throw ParameterError("topology counts must all be >= 1");
    }
    if (extra < 0) throw ParameterError("topology extra parameter must be >= 0");
    const int groups = resolved_extra();
    switch (kind) {
        case TopologyKind::FatTree:
            break;
        case TopologyKind::FatTreeHier:
        case TopologyKind::Dragonfly:
            if (groups > num_leaf_switches) {
                throw ParameterError(to_string(kind) + ": group count " + std::to_string(groups) +
                                     " exceeds leaf count " + std::to_string(num_leaf_switches));
            }
            break;
        case TopologyKind::DragonflySparse:
            if (num_leaf_switches < 3) {
                throw ParameterError("dragonfly_sparse needs at least 3 leaf switches");
            }
            break;
    }
}

int ClusterGraph::num_servers() const {
    return static_cast<int>(std::count(node_kind.begin(), node_kind.end(), NodeKind::Server));
}

int ClusterGraph::leaf_of_server(int server) const {
    const int leaf_node = node_parent.at(server);
    auto it = std::find(leaf_nodes.begin(), leaf_nodes.end(), leaf_node);
    return static_cast<int>(it - leaf_nodes.begin());
}

std::vector<std::vector<int>> ClusterGraph::adjacency() const {
    std::vector<std::vector<int>> adj(num_nodes());
    for (auto [a, b] : links) {
        adj[a].push_back(b);
        adj[b].push_back(a);
    }
    for (auto& row : adj) std::sort(row.begin(), row.end());
    return adj;
}

ClusterGraph build_topology(const TopologySpec& spec) {
    spec.validate();
    GraphBuilder builder(spec);
    switch (spec.kind) {
        case TopologyKind::FatTree: wire_fat_tree(builder, spec); break;
        case TopologyKind::FatTreeHier: wire_fat_tree_hier(builder, spec); break;
        case TopologyKind::Dragonfly: wire_dragonfly(builder, spec); break;
        case TopologyKind::DragonflySparse: wire_dragonfly_sparse(builder, spec); break;
    }
    return std::move(builder).finish();
}

std::vector<int> bfs_hops(const std::vector<std::vector<int>>& adjacency, int source) {
    std::vector<int> hops(adjacency.size(), -1);
    std::deque<int> queue{source};
    hops[source] = 0;
    while (!queue.empty()) {
        const int u = queue.front();
        queue.pop_front();
        for (int v : adjacency[u]) {
            if (hops[v] < 0) {
                hops[v] = hops[u] + 1;
                queue.push_back(v);
            }
        }
    }
    return hops;
}

DistanceMatrix all_pairs_hops(const ClusterGraph& graph) {
    const auto adj = graph.adjacency();
    for (int v : bfs_hops(adj, 0)) {
        if (v < 0) throw TopologyError("cluster graph is disconnected");
    }
    const int servers = graph.num_servers();
    std::vector<std::vector<int>> server_hops(servers);
    for (int s = 0; s < servers; ++s) server_hops[s] = bfs_hops(adj, s);

    const int n = graph.num_devices();
    DistanceMatrix dist(n);
    for (int u = 0; u < n; ++u) {
        const auto& row = server_hops[graph.server_of(u)];
        for (int v = 0; v < n; ++v) dist.at(u, v) = row[graph.server_of(v)];
    }
    return dist;
}

std::vector<int> locality_order(const ClusterGraph& graph, const DistanceMatrix& dist) {
    const int leaves = static_cast<int>(graph.leaf_nodes.size());
    std::vector<std::vector<int>> servers_of_leaf(leaves);
    for (int s = 0; s < graph.num_servers(); ++s) {
        servers_of_leaf[graph.leaf_of_server(s)].push_back(s);
    }
    std::vector<std::vector<int>> devices_of_server(graph.num_servers());
    for (int d = 0; d < graph.num_devices(); ++d) devices_of_server[graph.server_of(d)].push_back(d);
    std::vector<int> representative(leaves, -1);
    for (int leaf = 0; leaf < leaves; ++leaf) {
        for (int s : servers_of_leaf[leaf]) {
            if (!devices_of_server[s].empty()) {
                representative[leaf] = devices_of_server[s].front();
                break;
            }
        }
    }

    // Leaves without devices contribute nothing; keep them out of the tour.
    std::vector<int> tour;
    std::vector<bool> visited(leaves, false);
    int current = -1;
    for (int leaf = 0; leaf < leaves; ++leaf) {
        if (representative[leaf] < 0) visited[leaf] = true;
        else if (current < 0) current = leaf;
    }
    while (current >= 0) {
        tour.push_back(current);
        visited[current] = true;
        int best = -1;
        int best_hops = std::numeric_limits<int>::max();
        for (int leaf = 0; leaf < leaves; ++leaf) {
            if (visited[leaf]) continue;
            const int hops = dist(representative[current], representative[leaf]);
            if (hops < best_hops) {
                best_hops = hops;
                best = leaf;
            }
        }
        current = best;
    }

    std::vector<int> order;
    order.reserve(graph.num_devices());
    for (int leaf : tour) {
        for (int s : servers_of_leaf[leaf]) {
            order.insert(order.end(), devices_of_server[s].begin(), devices_of_server[s].end());
        }
    }
    return order;
}

nlohmann::json topology_to_json(const ClusterGraph& graph) {
    using nlohmann::json;
    std::vector<int> kind_index(graph.num_nodes());
    std::map<NodeKind, int> counters;
    for (int v = 0; v < graph.num_nodes(); ++v) kind_index[v] = counters[graph.node_kind[v]]++;
    auto name = [&](int v) { return to_string(graph.node_kind[v]) + std::to_string(kind_index[v]); };

    json nodes = json::array();
    for (int d = 0; d < graph.num_devices(); ++d) {
        nodes.push_back({{"id", "gpu" + std::to_string(d)}, {"kind", "gpu"},
                         {"parent", name(graph.server_of(d))}});
    }
    for (int v = 0; v < graph.num_nodes(); ++v) {
        const int parent = graph.node_parent[v];
        nodes.push_back({{"id", name(v)}, {"kind", to_string(graph.node_kind[v])},
                         {"parent", parent < 0 ? json(nullptr) : json(name(parent))}});
    }
    json links = json::array();
    for (auto [a, b] : graph.links) links.push_back({name(a), name(b)});

    const auto& spec = graph.spec;
    return {{"spec",
             {{"kind", to_string(spec.kind)},
              {"num_leaf_switches", spec.num_leaf_switches},
              {"servers_per_leaf", spec.servers_per_leaf},
              {"gpus_per_server", spec.gpus_per_server},
              {"extra", spec.extra}}},
            {"nodes", std::move(nodes)},
            {"links", std::move(links)}};
}

ClusterGraph topology_from_json(const nlohmann::json& doc) {
    try {
        ClusterGraph graph;
        const auto& js = doc.at("spec");
        graph.spec.kind = parse_topology_kind(js.at("kind").get<std::string>());
        graph.spec.num_leaf_switches = js.at("num_leaf_switches").get<int>();
        graph.spec.servers_per_leaf = js.at("servers_per_leaf").get<int>();
        graph.spec.gpus_per_server = js.at("gpus_per_server").get<int>();
        graph.spec.extra = js.value("extra", 0);

        // Collect nodes per kind, keyed by their numeric suffix.
        std::map<std::string, std::map<int, std::string>> parents;  // kind -> index -> parent ref
        const std::vector<std::string> switch_kinds{"leaf", "spine", "aggregation", "top"};
        for (const auto& node : doc.at("nodes")) {
            const auto kind = node.at("kind").get<std::string>();
            if (kind != "gpu" && kind != "server" &&
                std::find(switch_kinds.begin(), switch_kinds.end(), kind) == switch_kinds.end()) {
                throw ParseError("unknown node kind '" + kind + "'");
            }
            const int index = parse_node_ref(node.at("id").get<std::string>(), kind == "gpu" ? "gpu" : kind);
            const auto& parent = node.at("parent");
            if (!parents[kind].emplace(index, parent.is_null() ? "" : parent.get<std::string>()).second) {
                throw ParseError("duplicate node id " + node.at("id").get<std::string>());
            }
        }
        auto require_dense = [&](const std::string& kind) {
            const auto& m = parents[kind];
            if (!m.empty() && m.rbegin()->first != static_cast<int>(m.size()) - 1) {
                throw ParseError(kind + " ids are not contiguous from 0");
            }
            return static_cast<int>(m.size());
        };
        const int servers = require_dense("server");
        std::map<std::string, int> node_id;
        for (int s = 0; s < servers; ++s) node_id["server" + std::to_string(s)] = s;
        graph.node_kind.assign(servers, NodeKind::Server);
        const NodeKind switch_enum[] = {NodeKind::Leaf, NodeKind::Spine, NodeKind::Aggregation, NodeKind::Top};
        for (std::size_t k = 0; k < switch_kinds.size(); ++k) {
            const int count = require_dense(switch_kinds[k]);
            for (int i = 0; i < count; ++i) {
                node_id[switch_kinds[k] + std::to_string(i)] = graph.num_nodes();
                if (switch_enum[k] == NodeKind::Leaf) graph.leaf_nodes.push_back(graph.num_nodes());
                graph.node_kind.push_back(switch_enum[k]);
            }
        }
        auto resolve = [&](const std::string& ref) {
            auto it = node_id.find(ref);
            if (it == node_id.end()) throw ParseError("unknown node '" + ref + "'");
            return it->second;
        };
        graph.node_parent.assign(graph.num_nodes(), -1);
        for (const auto& [kind, m] : parents) {
            if (kind == "gpu") continue;
            for (const auto& [index, parent] : m) {
                if (!parent.empty()) graph.node_parent[resolve(kind + std::to_string(index))] = resolve(parent);
            }
        }
        const int devices = require_dense("gpu");
        graph.device_server.resize(devices);
        for (const auto& [index, parent] : parents["gpu"]) {
            const int server = resolve(parent);
            if (graph.node_kind[server] != NodeKind::Server) throw ParseError("gpu parent must be a server");
            graph.device_server[index] = server;
        }

        std::set<std::pair<int, int>> links;
        for (const auto& link : doc.at("links")) {
            const int a = resolve(link.at(0).get<std::string>());
            const int b = resolve(link.at(1).get<std::string>());
            if (a == b) throw ParseError("self loop in links");
            links.insert({std::min(a, b), std::max(a, b)});
        }
        graph.links.assign(links.begin(), links.end());

        const auto adj = graph.adjacency();
        for (int s = 0; s < servers; ++s) {
            const int leaf = graph.node_parent[s];
            if (leaf < 0 || graph.node_kind[leaf] != NodeKind::Leaf || adj[s].size() != 1 || adj[s][0] != leaf) {
                throw ParseError("server" + std::to_string(s) + " must have exactly one link, to its leaf");
            }
        }
        return graph;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("topology json: ") + e.what());
    }
}

void write_distance_csv(const DistanceMatrix& dist, std::ostream& out) {
    for (int v = 0; v < dist.size(); ++v) out << (v ? "," : "") << v;
    out << '\n';
    for (int u = 0; u < dist.size(); ++u) {
        for (int v = 0; v < dist.size(); ++v) out << (v ? "," : "") << dist(u, v);
        out << '\n';
    }
}

}  // namespace moeplace
