#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <utility>
#include <vector>

namespace moeplace {

// Routing shape of the MoE model: L MoE layers, E routed experts each, top-K routing.
struct ModelSpec {
    int num_layers = 0;
    int num_experts = 0;
    int topk = 0;

    void validate() const;
    bool operator==(const ModelSpec&) const = default;
};

// Devices holding the attention blocks that feed (dispatch) and consume
// (collect) each MoE layer.
struct AttentionPlacement {
    std::vector<int> dispatch;
    std::vector<int> collect;

    int num_layers() const { return static_cast<int>(dispatch.size()); }
    // Throws ParameterError when sizes disagree or a device id is out of range.
    void validate(int num_layers, int num_devices) const;
};

// Contiguous pipeline layout along the device ordering: layer l dispatches from
// order[l * |order| / L] and collects at the next layer's dispatch device.
AttentionPlacement default_attention_placement(const ModelSpec& model, std::span<const int> order);

// Token-major selections: experts(t, l) is the K-element list for token t, layer l.
class ActivationTrace {
public:
    ActivationTrace() = default;
    explicit ActivationTrace(ModelSpec model) : model_(model) {}

    const ModelSpec& model() const { return model_; }
    std::size_t num_tokens() const { return chunk_ids_.size(); }
    bool empty() const { return chunk_ids_.empty(); }

    // `experts` is layer-major: L blocks of K indices.
    void add_token(int chunk_id, std::span<const int> experts);

    int chunk_id(std::size_t token) const { return chunk_ids_[token]; }
    std::span<const int> experts(std::size_t token, int layer) const {
        const std::size_t k = model_.topk;
        return {experts_.data() + (token * model_.num_layers + layer) * k, k};
    }
    std::span<const int> token_experts(std::size_t token) const {
        const std::size_t row = static_cast<std::size_t>(model_.num_layers) * model_.topk;
        return {experts_.data() + token * row, row};
    }

    // Sorted distinct chunk ids.
    std::vector<int> chunk_ids() const;

    bool operator==(const ActivationTrace&) const = default;

private:
    ModelSpec model_;
    std::vector<int> chunk_ids_;
    std::vector<int> experts_;
};

// Per-layer expert load frequencies; each row sums to 1.
class FrequencyTable {
public:
    FrequencyTable() = default;
    FrequencyTable(int num_layers, int num_experts, double fill = 0.0)
        : layers_(num_layers), experts_(num_experts),
          f_(static_cast<std::size_t>(num_layers) * num_experts, fill) {}

    static FrequencyTable uniform(int num_layers, int num_experts);

    int num_layers() const { return layers_; }
    int num_experts() const { return experts_; }
    double operator()(int layer, int expert) const { return f_[index(layer, expert)]; }
    double& at(int layer, int expert) { return f_[index(layer, expert)]; }

private:
    std::size_t index(int layer, int expert) const {
        return static_cast<std::size_t>(layer) * experts_ + expert;
    }

    int layers_ = 0;
    int experts_ = 0;
    std::vector<double> f_;
};

struct TraceGenOptions {
    double zipf_s = 1.2;
    std::size_t num_tokens = 20000;
    int num_chunks = 150;
    std::uint64_t seed = 1;
};

// Synthetic skewed trace. Each layer draws its own random rank permutation so
// the hot experts differ per layer; experts of a token are drawn without
// replacement with probability proportional to rank^-s.
ActivationTrace generate_trace(const ModelSpec& model, const TraceGenOptions& options);

// Text format:
//   #moeplace-trace v1 L=<L> E=<E> K=<K>
//   <chunk_id>\t0:e,e,...\t1:e,e,...
ActivationTrace parse_trace(std::istream& in);
ActivationTrace parse_trace(const std::filesystem::path& path);
void write_trace(const ActivationTrace& trace, std::ostream& out);
void write_trace(const ActivationTrace& trace, const std::filesystem::path& path);

// f(l, e) = count(l, e) / (K * tokens). Throws ParameterError on an empty trace.
FrequencyTable estimate_frequencies(const ActivationTrace& trace);

// First `train_chunks` chunk ids (ascending) go to train, the next `test_chunks` to test.
std::pair<ActivationTrace, ActivationTrace> split_trace(const ActivationTrace& trace, int train_chunks,
                                                        int test_chunks);

}  // namespace moeplace
