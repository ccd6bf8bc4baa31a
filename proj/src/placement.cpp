#include "moeplace/placement.h"

#include <algorithm>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "moeplace/errors.h"

namespace moeplace {

void Constraints::check(const ModelSpec& model, int num_devices) const {
    if (c_layer < 1) throw ParameterError("c_layer must be >= 1");
    if (c_exp < c_layer) throw ParameterError("c_exp must be >= c_layer");
    const long long devices = num_devices;
    if (devices * c_layer < model.num_experts) {
        throw InfeasibleError("c_layer: " + std::to_string(num_devices) + " devices x c_layer " +
                              std::to_string(c_layer) + " < " + std::to_string(model.num_experts) +
                              " experts per layer");
    }
    if (devices * c_exp < static_cast<long long>(model.num_layers) * model.num_experts) {
        throw InfeasibleError("c_exp: " + std::to_string(num_devices) + " devices x c_exp " +
                              std::to_string(c_exp) + " < " +
                              std::to_string(static_cast<long long>(model.num_layers) * model.num_experts) +
                              " experts in total");
    }
}

CostMatrix cost_matrix(const DistanceMatrix& dist, const AttentionPlacement& attn) {
    attn.validate(attn.num_layers(), dist.size());
    CostMatrix cost(attn.num_layers(), dist.size());
    for (int layer = 0; layer < attn.num_layers(); ++layer) {
        for (int s = 0; s < dist.size(); ++s) {
            cost.at(layer, s) = dist(attn.dispatch[layer], s) + dist(s, attn.collect[layer]);
        }
    }
    return cost;
}

std::string to_string(ConstraintFamily family) {
    switch (family) {
        case ConstraintFamily::Assignment: return "assignment";
        case ConstraintFamily::ExpertCap: return "c_exp";
        case ConstraintFamily::LayerCap: return "c_layer";
    }
    return "unknown";
}

std::string Violation::describe() const {
    std::ostringstream out;
    out << to_string(family);
    switch (family) {
        case ConstraintFamily::Assignment:
            out << ": layer " << layer << " expert " << expert << " has invalid device " << device;
            break;
        case ConstraintFamily::ExpertCap:
            out << ": device " << device << " holds " << count << " experts";
            break;
        case ConstraintFamily::LayerCap:
            out << ": device " << device << " holds " << count << " experts of layer " << layer;
            break;
    }
    return out.str();
}

std::vector<Violation> validate(const Placement& placement, const Constraints& constraints,
                                const ModelSpec& model, int num_devices) {
    std::vector<Violation> violations;
    if (placement.num_layers() != model.num_layers || placement.num_experts() != model.num_experts) {
        violations.push_back({ConstraintFamily::Assignment, -1, -1, -1, 0});
        return violations;
    }
    std::vector<int> total(num_devices, 0);
    std::vector<int> per_layer(num_devices);
    for (int layer = 0; layer < model.num_layers; ++layer) {
        std::fill(per_layer.begin(), per_layer.end(), 0);
        for (int e = 0; e < model.num_experts; ++e) {
            const int s = placement.device(layer, e);
            if (s < 0 || s >= num_devices) {
                violations.push_back({ConstraintFamily::Assignment, layer, e, s, 0});
                continue;
            }
            ++per_layer[s];
            ++total[s];
        }
        for (int s = 0; s < num_devices; ++s) {
            if (per_layer[s] > constraints.c_layer) {
                violations.push_back({ConstraintFamily::LayerCap, layer, -1, s, per_layer[s]});
            }
        }
    }
    for (int s = 0; s < num_devices; ++s) {
        if (total[s] > constraints.c_exp) violations.push_back({ConstraintFamily::ExpertCap, -1, -1, s, total[s]});
    }
    return violations;
}

long long placement_cost(const Placement& placement, const CostMatrix& cost) {
    long long sum = 0;
    for (int layer = 0; layer < placement.num_layers(); ++layer) {
        for (int e = 0; e < placement.num_experts(); ++e) sum += cost(layer, placement.device(layer, e));
    }
    return sum;
}

Placement place_round_robin(const ModelSpec& model, const AttentionPlacement& attn,
                            std::span<const int> order, const Constraints& constraints) {
    const int n = static_cast<int>(order.size());
    constraints.check(model, n);
    attn.validate(model.num_layers, n);
    std::vector<int> position(n, -1);
    for (int i = 0; i < n; ++i) position.at(order[i]) = i;

    const int window = (model.num_experts + constraints.c_layer - 1) / constraints.c_layer;
    Placement placement(model.num_layers, model.num_experts);
    std::vector<int> total(n, 0);
    for (int layer = 0; layer < model.num_layers; ++layer) {
        const int start = position[attn.dispatch[layer]] - window / 2;
        for (int e = 0; e < model.num_experts; ++e) {
            const int pos = ((start + e / constraints.c_layer) % n + n) % n;
            const int device = order[pos];
            placement.assign(layer, e, device);
            if (++total[device] > constraints.c_exp) {
                throw InfeasibleError("round robin: device " + std::to_string(device) + " exceeds c_exp " +
                                      std::to_string(constraints.c_exp) + " at layer " + std::to_string(layer));
            }
        }
    }
    return placement;
}

Placement place_greedy(const ModelSpec& model, const CostMatrix& cost, const Constraints& constraints) {
    const int n = cost.num_devices();
    constraints.check(model, n);
    if (cost.num_layers() != model.num_layers) throw ParameterError("cost matrix layer count mismatch");

    Placement placement(model.num_layers, model.num_experts);
    std::vector<int> total(n, 0);
    std::vector<int> per_layer(n);
    std::vector<int> ranked(n);
    for (int layer = 0; layer < model.num_layers; ++layer) {
        std::iota(ranked.begin(), ranked.end(), 0);
        const auto p = cost.row(layer);
        std::stable_sort(ranked.begin(), ranked.end(), [&](int a, int b) { return p[a] < p[b]; });
        std::fill(per_layer.begin(), per_layer.end(), 0);
        for (int e = 0; e < model.num_experts; ++e) {
            auto it = std::find_if(ranked.begin(), ranked.end(), [&](int s) {
                return per_layer[s] < constraints.c_layer && total[s] < constraints.c_exp;
            });
            if (it == ranked.end()) {
                throw InfeasibleError("greedy: no device with residual capacity for layer " + std::to_string(layer) +
                                      " expert " + std::to_string(e));
            }
            placement.assign(layer, e, *it);
            ++per_layer[*it];
            ++total[*it];
        }
    }
    return placement;
}

void write_placement_csv(const Placement& placement, std::ostream& out) {
    out << "layer,expert,device\n";
    for (int layer = 0; layer < placement.num_layers(); ++layer) {
        for (int e = 0; e < placement.num_experts(); ++e) {
            out << layer << ',' << e << ',' << placement.device(layer, e) << '\n';
        }
    }
}

Placement read_placement_csv(std::istream& in, const ModelSpec& model, int num_devices) {
    std::string line;
    if (!std::getline(in, line) || line != "layer,expert,device") {
        throw ParseError("placement csv must start with 'layer,expert,device'", 1);
    }
    Placement placement(model.num_layers, model.num_experts);
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream row(line);
        int layer, expert, device;
        char c1, c2;
        if (!(row >> layer >> c1 >> expert >> c2 >> device) || c1 != ',' || c2 != ',' || (row >> std::ws, !row.eof())) {
            throw ParseError("malformed placement row", line_no);
        }
        if (layer < 0 || layer >= model.num_layers || expert < 0 || expert >= model.num_experts) {
            throw ParseError("layer/expert out of range", line_no);
        }
        if (device < 0 || device >= num_devices) throw ParseError("device out of range", line_no);
        if (placement.device(layer, expert) != Placement::kUnassigned) {
            throw ParseError("duplicate row for layer " + std::to_string(layer) + " expert " + std::to_string(expert),
                             line_no);
        }
        placement.assign(layer, expert, device);
    }
    for (int layer = 0; layer < model.num_layers; ++layer) {
        for (int e = 0; e < model.num_experts; ++e) {
            if (placement.device(layer, e) == Placement::kUnassigned) {
                throw ParseError("missing row for layer " + std::to_string(layer) + " expert " + std::to_string(e));
            }
        }
    }
    return placement;
}

}  // namespace moeplace
