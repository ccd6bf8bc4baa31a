#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "moeplace/model_trace.h"
#include "moeplace/topology.h"

namespace moeplace {

struct Constraints {
    int c_exp = 0;    // experts a device may hold in total
    int c_layer = 0;  // experts a device may hold from one layer

    // ParameterError for malformed caps, InfeasibleError when no placement can exist.
    void check(const ModelSpec& model, int num_devices) const;
};

// p(l, s) = dist(dispatch_l, s) + dist(s, collect_l).
class CostMatrix {
public:
    CostMatrix() = default;
    CostMatrix(int num_layers, int num_devices)
        : layers_(num_layers), devices_(num_devices),
          p_(static_cast<std::size_t>(num_layers) * num_devices, 0) {}

    int num_layers() const { return layers_; }
    int num_devices() const { return devices_; }
    int operator()(int layer, int device) const { return p_[static_cast<std::size_t>(layer) * devices_ + device]; }
    int& at(int layer, int device) { return p_[static_cast<std::size_t>(layer) * devices_ + device]; }
    std::span<const int> row(int layer) const {
        return {p_.data() + static_cast<std::size_t>(layer) * devices_, static_cast<std::size_t>(devices_)};
    }

private:
    int layers_ = 0;
    int devices_ = 0;
    std::vector<int> p_;
};

CostMatrix cost_matrix(const DistanceMatrix& dist, const AttentionPlacement& attn);

// Expert -> device table; kUnassigned marks a hole.
class Placement {
public:
    static constexpr int kUnassigned = -1;

    Placement() = default;
    Placement(int num_layers, int num_experts)
        : layers_(num_layers), experts_(num_experts),
          device_(static_cast<std::size_t>(num_layers) * num_experts, kUnassigned) {}

    int num_layers() const { return layers_; }
    int num_experts() const { return experts_; }
    int device(int layer, int expert) const { return device_[index(layer, expert)]; }
    void assign(int layer, int expert, int device) { device_[index(layer, expert)] = device; }

    bool operator==(const Placement&) const = default;

private:
    std::size_t index(int layer, int expert) const { return static_cast<std::size_t>(layer) * experts_ + expert; }

    int layers_ = 0;
    int experts_ = 0;
    std::vector<int> device_;
};

enum class ConstraintFamily { Assignment, ExpertCap, LayerCap };

std::string to_string(ConstraintFamily family);

// Coordinates not relevant to a family are -1.
struct Violation {
    ConstraintFamily family;
    int layer = -1;
    int expert = -1;
    int device = -1;
    int count = 0;  // observed load for capacity families

    std::string describe() const;
    bool operator==(const Violation&) const = default;
};

std::vector<Violation> validate(const Placement& placement, const Constraints& constraints,
                                const ModelSpec& model, int num_devices);

// Sum of p(l, device(l, e)) over every placed expert.
long long placement_cost(const Placement& placement, const CostMatrix& cost);

// Experts of each layer packed c_layer per device into a window of
// d = ceil(E / c_layer) ordering positions [i - floor(d/2), i + ceil(d/2)),
// wrapping around, where i is the dispatch device's position.
Placement place_round_robin(const ModelSpec& model, const AttentionPlacement& attn,
                            std::span<const int> order, const Constraints& constraints);

// Layer by layer, expert by expert: the cheapest device (by p, then id) with
// residual capacity in both caps.
Placement place_greedy(const ModelSpec& model, const CostMatrix& cost, const Constraints& constraints);

void write_placement_csv(const Placement& placement, std::ostream& out);
// Throws ParseError on malformed rows, missing or duplicate (layer, expert) pairs.
Placement read_placement_csv(std::istream& in, const ModelSpec& model, int num_devices);

}  // namespace moeplace
