#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"

namespace moeplace {

enum class TopologyKind { FatTree, FatTreeHier, Dragonfly, DragonflySparse };

std::string to_string(TopologyKind kind);
TopologyKind parse_topology_kind(std::string_view name);

// Shape of a generated cluster. `extra` is kind-specific, 0 selects the default:
//   FatTree          number of spine switches (default 4)
//   FatTreeHier      number of aggregation groups (default 4)
//   Dragonfly        number of leaf groups (default: groups of 4 leaves)
//   DragonflySparse  unused
struct TopologySpec {
    TopologyKind kind = TopologyKind::FatTree;
    int num_leaf_switches = 16;
    int servers_per_leaf = 4;
    int gpus_per_server = 4;
    int extra = 0;

    int num_servers() const { return num_leaf_switches * servers_per_leaf; }
    int num_devices() const { return num_servers() * gpus_per_server; }

    // Kind-specific parameter with defaults applied.
    int resolved_extra() const;

    // Throws ParameterError on invalid counts or combinations.
    void validate() const;

    bool operator==(const TopologySpec&) const = default;
};

enum class NodeKind { Server, Leaf, Spine, Aggregation, Top };

std::string to_string(NodeKind kind);

// Servers and switches form the graph; devices hang off servers without links.
// Node ids: servers occupy [0, num_servers), switches follow.
struct ClusterGraph {
    TopologySpec spec;
    std::vector<int> device_server;  // device id -> server node id
    std::vector<NodeKind> node_kind;
    std::vector<int> node_parent;    // server -> leaf node, leaf -> aggregation node, -1 otherwise
    std::vector<int> leaf_nodes;     // leaf index -> node id
    std::vector<std::pair<int, int>> links;  // undirected, first < second, sorted

    int num_devices() const { return static_cast<int>(device_server.size()); }
    int num_nodes() const { return static_cast<int>(node_kind.size()); }
    int num_servers() const;

    int server_of(int device) const { return device_server.at(device); }
    // Leaf index (position in leaf_nodes) that owns a server.
    int leaf_of_server(int server) const;

    std::vector<std::vector<int>> adjacency() const;
};

// Square matrix of hop counts indexed by device id.
class DistanceMatrix {
public:
    DistanceMatrix() = default;
    explicit DistanceMatrix(int n) : n_(n), hops_(static_cast<std::size_t>(n) * n, 0) {}

    int size() const { return n_; }
    int operator()(int u, int v) const { return hops_[static_cast<std::size_t>(u) * n_ + v]; }
    int& at(int u, int v) { return hops_[static_cast<std::size_t>(u) * n_ + v]; }

    bool operator==(const DistanceMatrix&) const = default;

private:
    int n_ = 0;
    std::vector<int> hops_;
};

ClusterGraph build_topology(const TopologySpec& spec);

// Unweighted single-source shortest paths; unreachable nodes get -1.
std::vector<int> bfs_hops(const std::vector<std::vector<int>>& adjacency, int source);

// Server-to-server link counts lifted to devices; same-server pairs are 0.
DistanceMatrix all_pairs_hops(const ClusterGraph& graph);

// Device enumeration where nearby devices get nearby positions: devices of a
// server are contiguous, servers of a leaf are contiguous, and leaves follow a
// nearest-neighbour tour starting at leaf 0 (ties to the lowest leaf index).
std::vector<int> locality_order(const ClusterGraph& graph, const DistanceMatrix& dist);

nlohmann::json topology_to_json(const ClusterGraph& graph);
ClusterGraph topology_from_json(const nlohmann::json& doc);

void write_distance_csv(const DistanceMatrix& dist, std::ostream& out);

}  // namespace moeplace
