#include "moeplace/min_cost_flow.h"

#include <algorithm>
#include <deque>
#include <functional>
#include <queue>
#include <stdexcept>
#include <utility>

namespace moeplace {

namespace {
constexpr MinCostFlow::Cost kInf = std::numeric_limits<MinCostFlow::Cost>::max() / 4;
// Largest scaled arc cost accepted by cost scaling; leaves room for prices.
constexpr MinCostFlow::Cost kMaxScaledCost = MinCostFlow::Cost{1} << 52;
constexpr MinCostFlow::Cost kScalingFactor = 8;
}  // namespace

MinCostFlow::MinCostFlow(int num_nodes) : num_nodes_(num_nodes) {
    if (num_nodes < 2) throw std::invalid_argument("flow network needs at least two nodes");
}

int MinCostFlow::add_arc(int from, int to, int capacity, Cost cost) {
    if (from < 0 || from >= num_nodes_ || to < 0 || to >= num_nodes_) {
        throw std::out_of_range("arc endpoint out of range");
    }
    if (capacity < 0) throw std::invalid_argument("arc capacity must be nonnegative");
    if (cost < 0) throw std::invalid_argument("arc cost must be nonnegative");
    const int id = num_arcs();
    tail_.insert(tail_.end(), {from, to});
    head_.insert(head_.end(), {to, from});
    residual_.insert(residual_.end(), {capacity, 0});
    cost_.insert(cost_.end(), {cost, -cost});
    original_capacity_.push_back(capacity);
    return id;
}

void MinCostFlow::build_adjacency() {
    first_out_.assign(num_nodes_ + 1, 0);
    for (int t : tail_) ++first_out_[t + 1];
    for (int v = 0; v < num_nodes_; ++v) first_out_[v + 1] += first_out_[v];
    out_arcs_.resize(tail_.size());
    std::vector<int> fill(first_out_.begin(), first_out_.end() - 1);
    for (int a = 0; a < static_cast<int>(tail_.size()); ++a) out_arcs_[fill[tail_[a]]++] = a;
}

void MinCostFlow::reset_flow() {
    for (int arc = 0; arc < num_arcs(); ++arc) {
        residual_[2 * arc] = original_capacity_[arc];
        residual_[2 * arc + 1] = 0;
    }
}

MinCostFlow::Result MinCostFlow::solve(int source, int sink, Algorithm algorithm) {
    if (source < 0 || source >= num_nodes_ || sink < 0 || sink >= num_nodes_) {
        throw std::out_of_range("source or sink out of range");
    }
    if (source == sink) throw std::invalid_argument("source and sink must differ");
    build_adjacency();
    reset_flow();

    Result result;
    if (algorithm == Algorithm::CostScaling) {
        result.flow = max_flow(source, sink);
        result.iterations = refine_circulation();
    } else {
        result.iterations = successive_shortest_paths(source, sink);
        for (int i = first_out_[source]; i < first_out_[source + 1]; ++i) {
            const int a = out_arcs_[i];
            result.flow += (a & 1) ? -residual_[a] : original_capacity_[a / 2] - residual_[a];
        }
    }
    for (int arc = 0; arc < num_arcs(); ++arc) result.cost += static_cast<Cost>(flow(arc)) * cost_[2 * arc];
    return result;
}

// Dinic

bool MinCostFlow::build_levels(int source, int sink) {
    level_.assign(num_nodes_, -1);
    std::vector<int> queue{source};
    level_[source] = 0;
    for (std::size_t i = 0; i < queue.size(); ++i) {
        const int u = queue[i];
        for (int j = first_out_[u]; j < first_out_[u + 1]; ++j) {
            const int a = out_arcs_[j];
            const int v = head_[a];
            if (residual_[a] > 0 && level_[v] < 0) {
                level_[v] = level_[u] + 1;
                queue.push_back(v);
            }
        }
    }
    return level_[sink] >= 0;
}

std::int64_t MinCostFlow::max_flow(int source, int sink) {
    std::int64_t total = 0;
    std::vector<int> path;
    while (build_levels(source, sink)) {
        cursor_.assign(first_out_.begin(), first_out_.end() - 1);
        int v = source;
        path.clear();
        while (true) {
            if (v == sink) {
                int bottleneck = std::numeric_limits<int>::max();
                for (int a : path) bottleneck = std::min(bottleneck, residual_[a]);
                for (int a : path) push(a, bottleneck);
                total += bottleneck;
                v = source;
                path.clear();
                continue;
            }
            bool advanced = false;
            for (; cursor_[v] < first_out_[v + 1]; ++cursor_[v]) {
                const int a = out_arcs_[cursor_[v]];
                const int w = head_[a];
                if (residual_[a] > 0 && level_[w] == level_[v] + 1) {
                    path.push_back(a);
                    v = w;
                    advanced = true;
                    break;
                }
            }
            if (advanced) continue;
            level_[v] = -1;
            if (v == source) break;
            const int a = path.back();
            path.pop_back();
            v = tail_[a];
            ++cursor_[v];
        }
    }
    return total;
}

// Cost scaling

std::int64_t MinCostFlow::refine_circulation() {
    const Cost scale = static_cast<Cost>(num_nodes_) + 1;
    std::vector<Cost> scaled(cost_.size());
    Cost epsilon = 0;
    for (std::size_t a = 0; a < cost_.size(); ++a) {
        const Cost magnitude = cost_[a] < 0 ? -cost_[a] : cost_[a];
        if (magnitude > kMaxScaledCost / scale) throw std::overflow_error("arc cost too large for cost scaling");
        scaled[a] = cost_[a] * scale;
        epsilon = std::max(epsilon, magnitude * scale);
    }
    potential_.assign(num_nodes_, 0);
    excess_.assign(num_nodes_, 0);
    std::int64_t refines = 0;
    while (epsilon > 1) {
        epsilon = std::max<Cost>(1, epsilon / kScalingFactor);
        refine(epsilon, scaled);
        ++refines;
    }
    return refines;
}

void MinCostFlow::refine(Cost epsilon, const std::vector<Cost>& scaled) {
    std::vector<Cost>& price = potential_;
    for (int v = 0; v < num_nodes_; ++v) {
        for (int i = first_out_[v]; i < first_out_[v + 1]; ++i) {
            const int a = out_arcs_[i];
            const int r = residual_[a];
            if (r > 0 && scaled[a] + price[v] - price[head_[a]] < 0) {
                push(a, r);
                excess_[v] -= r;
                excess_[head_[a]] += r;
            }
        }
    }

    std::deque<int> active;
    std::vector<char> queued(num_nodes_, 0);
    for (int v = 0; v < num_nodes_; ++v) {
        if (excess_[v] > 0) {
            active.push_back(v);
            queued[v] = 1;
        }
    }
    cursor_.assign(first_out_.begin(), first_out_.end() - 1);

    while (!active.empty()) {
        const int v = active.front();
        active.pop_front();
        queued[v] = 0;
        while (excess_[v] > 0) {
            if (cursor_[v] == first_out_[v + 1]) {
                Cost best = -kInf;
                for (int i = first_out_[v]; i < first_out_[v + 1]; ++i) {
                    const int a = out_arcs_[i];
                    if (residual_[a] > 0) best = std::max(best, price[head_[a]] - scaled[a]);
                }
                if (best == -kInf) throw std::logic_error("node with excess has no residual arc");
                price[v] = best - epsilon;
                cursor_[v] = first_out_[v];
            }
            const int a = out_arcs_[cursor_[v]];
            const int w = head_[a];
            if (residual_[a] > 0 && scaled[a] + price[v] - price[w] < 0) {
                const int delta = static_cast<int>(std::min<std::int64_t>(excess_[v], residual_[a]));
                push(a, delta);
                excess_[v] -= delta;
                excess_[w] += delta;
                if (excess_[w] > 0 && !queued[w]) {
                    active.push_back(w);
                    queued[w] = 1;
                }
                if (residual_[a] == 0) ++cursor_[v];
            } else {
                ++cursor_[v];
            }
        }
    }
}

// Successive shortest paths

std::int64_t MinCostFlow::successive_shortest_paths(int source, int sink) {
    potential_.assign(num_nodes_, 0);
    dist_.assign(num_nodes_, kInf);
    pred_arc_.assign(num_nodes_, -1);
    settled_.assign(num_nodes_, 0);
    touched_.clear();

    std::int64_t augmentations = 0;
    for (int i = first_out_[source]; i < first_out_[source + 1]; ++i) {
        const int entry = out_arcs_[i];
        if (entry & 1) continue;  // reverse copy of an arc into the source
        const int start = head_[entry];
        while (residual_[entry] > 0 && route_unit(start, source, sink)) {
            push(entry, 1);
            ++augmentations;
        }
    }
    return augmentations;
}

bool MinCostFlow::route_unit(int start, int source, int sink) {
    using Entry = std::pair<Cost, int>;
    std::priority_queue<Entry, std::vector<Entry>, std::greater<>> queue;
    for (int v : touched_) {
        dist_[v] = kInf;
        settled_[v] = 0;
    }
    touched_.clear();

    dist_[start] = 0;
    pred_arc_[start] = -1;
    touched_.push_back(start);
    queue.push({0, start});
    Cost reach = kInf;
    while (!queue.empty()) {
        const auto [d, u] = queue.top();
        queue.pop();
        if (settled_[u]) continue;
        settled_[u] = 1;
        if (u == sink) {
            reach = d;
            break;
        }
        const Cost pu = potential_[u] + d;
        for (int i = first_out_[u]; i < first_out_[u + 1]; ++i) {
            const int a = out_arcs_[i];
            if (residual_[a] == 0) continue;
            const int v = head_[a];
            if (v == source || settled_[v]) continue;
            const Cost nd = pu + cost_[a] - potential_[v];
            if (nd < dist_[v]) {
                if (dist_[v] == kInf) touched_.push_back(v);
                dist_[v] = nd;
                pred_arc_[v] = a;
                queue.push({nd, v});
            }
        }
    }
    if (reach == kInf) return false;

    // pi += min(dist, reach) - reach: unsettled nodes keep their potential and
    // every residual reduced cost stays nonnegative.
    for (int v : touched_) {
        if (settled_[v]) potential_[v] += dist_[v] - reach;
    }
    for (int v = sink; v != start;) {
        const int a = pred_arc_[v];
        push(a, 1);
        v = tail_[a];
    }
    return true;
}

}  // namespace moeplace
