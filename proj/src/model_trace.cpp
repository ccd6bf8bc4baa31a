#include "moeplace/model_trace.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <string_view>

#include "moeplace/errors.h"

namespace moeplace {

namespace {

// mt19937_64 output is fixed by the standard; the distributions are not, so
// draws are derived by hand to keep traces identical across toolchains.
class PortableRng {
public:
    explicit PortableRng(std::uint64_t seed) : engine_(seed) {}

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    // Uniform in [0, bound), rejection sampling to avoid modulo bias.
    std::uint64_t below(std::uint64_t bound) {
        const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                    std::numeric_limits<std::uint64_t>::max() % bound;
        std::uint64_t x;
        do {
            x = engine_();
        } while (x >= limit);
        return x % bound;
    }

private:
    std::mt19937_64 engine_;
};

int parse_int(std::string_view text, std::size_t line, const char* what) {
    int value = 0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc{} || ptr != text.data() + text.size() || text.empty()) {
        throw ParseError(std::string("invalid ") + what + " '" + std::string(text) + "'", line);
    }
    return value;
}

std::vector<std::string_view> split(std::string_view text, char sep) {
    std::vector<std::string_view> parts;
    std::size_t start = 0;
    while (true) {
        const auto pos = text.find(sep, start);
        parts.push_back(text.substr(start, pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return parts;
}

ModelSpec parse_header(std::string_view line) {
    constexpr std::string_view magic = "#moeplace-trace v1 ";
    if (line.substr(0, magic.size()) != magic) throw ParseError("missing trace header", 1);
    ModelSpec model;
    const auto fields = split(line.substr(magic.size()), ' ');
    if (fields.size() != 3) throw ParseError("header must carry L=, E= and K=", 1);
    const std::string_view keys[] = {"L=", "E=", "K="};
    int* targets[] = {&model.num_layers, &model.num_experts, &model.topk};
    for (int i = 0; i < 3; ++i) {
        if (fields[i].substr(0, 2) != keys[i]) throw ParseError("header field order is L E K", 1);
        *targets[i] = parse_int(fields[i].substr(2), 1, "header value");
    }
    try {
        model.validate();
    } catch (const ParameterError& e) {
        throw ParseError(e.what(), 1);
    }
    return model;
}

}  // namespace

void ModelSpec::validate() const {
    if (num_layers < 1) throw ParameterError("model needs at least one MoE layer");
    if (num_experts < 1) throw ParameterError("model needs at least one expert per layer");
    if (topk < 1 || topk > num_experts) throw ParameterError("topk must be in [1, num_experts]");
}

void AttentionPlacement::validate(int num_layers, int num_devices) const {
    if (static_cast<int>(dispatch.size()) != num_layers || static_cast<int>(collect.size()) != num_layers) {
        throw ParameterError("attention placement must cover every layer");
    }
    for (int layer = 0; layer < num_layers; ++layer) {
        for (int device : {dispatch[layer], collect[layer]}) {
            if (device < 0 || device >= num_devices) {
                throw ParameterError("attention device " + std::to_string(device) + " of layer " +
                                     std::to_string(layer) + " does not exist");
            }
        }
    }
}

AttentionPlacement default_attention_placement(const ModelSpec& model, std::span<const int> order) {
    if (order.empty()) throw ParameterError("attention placement needs at least one device");
    const auto layers = static_cast<std::size_t>(model.num_layers);
    AttentionPlacement attn;
    attn.dispatch.resize(layers);
    attn.collect.resize(layers);
    for (std::size_t layer = 0; layer < layers; ++layer) {
        attn.dispatch[layer] = order[layer * order.size() / layers];
    }
    for (std::size_t layer = 0; layer < layers; ++layer) {
        attn.collect[layer] = layer + 1 < layers ? attn.dispatch[layer + 1] : attn.dispatch[layer];
    }
    return attn;
}

void ActivationTrace::add_token(int chunk_id, std::span<const int> experts) {
    const std::size_t row = static_cast<std::size_t>(model_.num_layers) * model_.topk;
    if (experts.size() != row) throw ParameterError("token must carry L*K expert indices");
    for (int e : experts) {
        if (e < 0 || e >= model_.num_experts) throw ParameterError("expert index out of range");
    }
    chunk_ids_.push_back(chunk_id);
    experts_.insert(experts_.end(), experts.begin(), experts.end());
}

std::vector<int> ActivationTrace::chunk_ids() const {
    std::vector<int> ids(chunk_ids_);
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    return ids;
}

FrequencyTable FrequencyTable::uniform(int num_layers, int num_experts) {
    return FrequencyTable(num_layers, num_experts, 1.0 / num_experts);
}

ActivationTrace generate_trace(const ModelSpec& model, const TraceGenOptions& options) {
    model.validate();
    if (!(options.zipf_s >= 0.0) || !std::isfinite(options.zipf_s)) {
        throw ParameterError("zipf exponent must be finite and >= 0");
    }
    if (options.num_chunks < 1) throw ParameterError("need at least one chunk");

    const int num_experts = model.num_experts;
    const int topk = model.topk;
    PortableRng rng(options.seed);

    // Popularity per layer: expert perm[r] has weight (r+1)^-s.
    std::vector<std::vector<double>> cumulative(model.num_layers, std::vector<double>(num_experts));
    std::vector<std::vector<double>> weight(model.num_layers, std::vector<double>(num_experts));
    for (int layer = 0; layer < model.num_layers; ++layer) {
        std::vector<int> perm(num_experts);
        for (int e = 0; e < num_experts; ++e) perm[e] = e;
        for (int i = num_experts - 1; i > 0; --i) {
            std::swap(perm[i], perm[rng.below(static_cast<std::uint64_t>(i) + 1)]);
        }
        for (int rank = 0; rank < num_experts; ++rank) {
            weight[layer][perm[rank]] = std::pow(static_cast<double>(rank + 1), -options.zipf_s);
        }
        double total = 0.0;
        for (int e = 0; e < num_experts; ++e) {
            total += weight[layer][e];
            cumulative[layer][e] = total;
        }
    }

    ActivationTrace trace(model);
    std::vector<int> row(static_cast<std::size_t>(model.num_layers) * topk);
    std::vector<char> taken(num_experts);
    for (std::size_t t = 0; t < options.num_tokens; ++t) {
        for (int layer = 0; layer < model.num_layers; ++layer) {
            const auto& cum = cumulative[layer];
            const double total = cum.back();
            std::fill(taken.begin(), taken.end(), 0);
            double taken_mass = 0.0;
            for (int k = 0; k < topk; ++k) {
                int pick = -1;
                // Rejection against already-chosen experts gives the same law as
                // drawing from the renormalised remainder; fall back to an exact
                // scan when the remainder is a small fraction of the mass.
                if (taken_mass < 0.5 * total) {
                    for (int attempt = 0; attempt < 64 && pick < 0; ++attempt) {
                        const double u = rng.uniform() * total;
                        auto it = std::upper_bound(cum.begin(), cum.end(), u);
                        const int e = it == cum.end() ? num_experts - 1 : static_cast<int>(it - cum.begin());
                        if (!taken[e]) pick = e;
                    }
                }
                if (pick < 0) {
                    double u = rng.uniform() * (total - taken_mass);
                    for (int e = 0; e < num_experts; ++e) {
                        if (taken[e]) continue;
                        pick = e;
                        u -= weight[layer][e];
                        if (u < 0.0) break;
                    }
                }
                taken[pick] = 1;
                taken_mass += weight[layer][pick];
                row[static_cast<std::size_t>(layer) * topk + k] = pick;
            }
        }
        const int chunk = static_cast<int>(t * options.num_chunks / options.num_tokens);
        trace.add_token(chunk, row);
    }
    return trace;
}

ActivationTrace parse_trace(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) return ActivationTrace{};
    const ModelSpec model = parse_header(line);
    ActivationTrace trace(model);

    const std::size_t k = model.topk;
    std::vector<int> row(static_cast<std::size_t>(model.num_layers) * k);
    std::vector<char> seen(model.num_experts);
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto fields = split(line, '\t');
        if (fields.size() != static_cast<std::size_t>(model.num_layers) + 1) {
            throw ParseError("expected " + std::to_string(model.num_layers) + " layer fields", line_no);
        }
        const int chunk = parse_int(fields[0], line_no, "chunk id");
        for (int layer = 0; layer < model.num_layers; ++layer) {
            const auto field = fields[layer + 1];
            const auto colon = field.find(':');
            if (colon == std::string_view::npos) throw ParseError("layer field without ':'", line_no);
            if (parse_int(field.substr(0, colon), line_no, "layer index") != layer) {
                throw ParseError("layer fields out of order", line_no);
            }
            const auto experts = split(field.substr(colon + 1), ',');
            if (experts.size() != k) {
                throw ParseError("layer " + std::to_string(layer) + " must list " + std::to_string(k) +
                                     " experts",
                                 line_no);
            }
            std::fill(seen.begin(), seen.end(), 0);
            for (std::size_t i = 0; i < k; ++i) {
                const int e = parse_int(experts[i], line_no, "expert index");
                if (e < 0 || e >= model.num_experts) {
                    throw ParseError("expert index " + std::to_string(e) + " out of range [0, " +
                                         std::to_string(model.num_experts) + ")",
                                     line_no);
                }
                if (seen[e]++) throw ParseError("duplicate expert " + std::to_string(e), line_no);
                row[layer * k + i] = e;
            }
        }
        trace.add_token(chunk, row);
    }
    return trace;
}

ActivationTrace parse_trace(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open trace file " + path.string());
    return parse_trace(in);
}

void write_trace(const ActivationTrace& trace, std::ostream& out) {
    if (trace.model().num_layers == 0) return;
    const auto& m = trace.model();
    out << "#moeplace-trace v1 L=" << m.num_layers << " E=" << m.num_experts << " K=" << m.topk << '\n';
    for (std::size_t t = 0; t < trace.num_tokens(); ++t) {
        out << trace.chunk_id(t);
        for (int layer = 0; layer < m.num_layers; ++layer) {
            out << '\t' << layer << ':';
            const auto experts = trace.experts(t, layer);
            for (std::size_t i = 0; i < experts.size(); ++i) out << (i ? "," : "") << experts[i];
        }
        out << '\n';
    }
}

void write_trace(const ActivationTrace& trace, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write trace file " + path.string());
    write_trace(trace, out);
}

FrequencyTable estimate_frequencies(const ActivationTrace& trace) {
    if (trace.empty()) throw ParameterError("cannot estimate frequencies from an empty trace");
    const auto& m = trace.model();
    std::vector<std::uint64_t> counts(static_cast<std::size_t>(m.num_layers) * m.num_experts, 0);
    for (std::size_t t = 0; t < trace.num_tokens(); ++t) {
        for (int layer = 0; layer < m.num_layers; ++layer) {
            for (int e : trace.experts(t, layer)) ++counts[static_cast<std::size_t>(layer) * m.num_experts + e];
        }
    }
    const double denom = static_cast<double>(m.topk) * static_cast<double>(trace.num_tokens());
    FrequencyTable f(m.num_layers, m.num_experts);
    for (int layer = 0; layer < m.num_layers; ++layer) {
        for (int e = 0; e < m.num_experts; ++e) {
            f.at(layer, e) = static_cast<double>(counts[static_cast<std::size_t>(layer) * m.num_experts + e]) / denom;
        }
    }
    return f;
}

std::pair<ActivationTrace, ActivationTrace> split_trace(const ActivationTrace& trace, int train_chunks,
                                                        int test_chunks) {
    if (train_chunks < 0 || test_chunks < 0) throw ParameterError("chunk counts must be nonnegative");
    const auto ids = trace.chunk_ids();
    if (static_cast<std::size_t>(train_chunks) + test_chunks > ids.size()) {
        throw ParameterError("split needs " + std::to_string(train_chunks + test_chunks) +
                             " chunks but the trace has " + std::to_string(ids.size()));
    }
    const std::set<int> train_ids(ids.begin(), ids.begin() + train_chunks);
    const std::set<int> test_ids(ids.begin() + train_chunks, ids.begin() + train_chunks + test_chunks);
    ActivationTrace train(trace.model());
    ActivationTrace test(trace.model());
    for (std::size_t t = 0; t < trace.num_tokens(); ++t) {
        const int chunk = trace.chunk_id(t);
        if (train_ids.count(chunk)) train.add_token(chunk, trace.token_experts(t));
        else if (test_ids.count(chunk)) test.add_token(chunk, trace.token_experts(t));
    }
    return {std::move(train), std::move(test)};
}

}  // namespace moeplace
