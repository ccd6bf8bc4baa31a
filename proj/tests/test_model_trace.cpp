#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "moeplace/errors.h"
#include "moeplace/model_trace.h"

using namespace moeplace;

namespace {

// Fraction of tokens whose layer-l selection contains expert e.
std::vector<double> selection_rates(const ActivationTrace& t, int layer) {
    std::vector<double> rate(t.model().num_experts, 0.0);
    for (std::size_t i = 0; i < t.num_tokens(); ++i) {
        for (int e : t.experts(i, layer)) rate[e] += 1.0;
    }
    for (double& r : rate) r /= static_cast<double>(t.num_tokens());
    return rate;
}

ActivationTrace parse_text(const std::string& text) {
    std::istringstream in(text);
    return parse_trace(in);
}

std::string write_text(const ActivationTrace& t) {
    std::ostringstream out;
    write_trace(t, out);
    return out.str();
}

}  // namespace

TEST(ModelSpec, Validation) {
    EXPECT_NO_THROW((ModelSpec{1, 4, 4}.validate()));
    EXPECT_THROW((ModelSpec{0, 4, 2}.validate()), ParameterError);
    EXPECT_THROW((ModelSpec{1, 4, 5}.validate()), ParameterError);
    EXPECT_THROW((ModelSpec{1, 4, 0}.validate()), ParameterError);
}

TEST(AttentionPlacement, FourLayersOnFourDevices) {
    const std::vector<int> order{7, 5, 6, 4};
    const auto attn = default_attention_placement({4, 8, 2}, order);
    EXPECT_EQ(attn.dispatch, (std::vector<int>{7, 5, 6, 4}));
    EXPECT_EQ(attn.collect, (std::vector<int>{5, 6, 4, 4}));
}

TEST(AttentionPlacement, SingleDevice) {
    const std::vector<int> order{0};
    const auto attn = default_attention_placement({2, 4, 1}, order);
    EXPECT_EQ(attn.dispatch, (std::vector<int>{0, 0}));
    EXPECT_EQ(attn.collect, (std::vector<int>{0, 0}));
}

TEST(AttentionPlacement, ContiguousPipelineAndValidDevices) {
    std::vector<int> order(256);
    std::iota(order.begin(), order.end(), 0);
    std::reverse(order.begin(), order.end());
    const auto attn = default_attention_placement({58, 256, 8}, order);
    ASSERT_EQ(attn.num_layers(), 58);
    EXPECT_NO_THROW(attn.validate(58, 256));
    for (int l = 0; l < 58; ++l) {
        EXPECT_EQ(attn.dispatch[l], order[l * 256 / 58]);
        EXPECT_EQ(attn.collect[l], l + 1 < 58 ? attn.dispatch[l + 1] : attn.dispatch[l]);
    }
    EXPECT_THROW(attn.validate(58, 10), ParameterError);
    EXPECT_THROW(attn.validate(57, 256), ParameterError);
}

TEST(GenerateTrace, SameSeedSameTrace) {
    const ModelSpec m{3, 16, 4};
    TraceGenOptions opts{1.2, 500, 10, 42};
    EXPECT_EQ(generate_trace(m, opts), generate_trace(m, opts));
    auto other = opts;
    other.seed = 43;
    EXPECT_FALSE(generate_trace(m, opts) == generate_trace(m, other));
}

TEST(GenerateTrace, TokensHoldDistinctInRangeExperts) {
    const ModelSpec m{4, 10, 7};
    const auto t = generate_trace(m, {1.5, 300, 7, 3});
    ASSERT_EQ(t.num_tokens(), 300u);
    for (std::size_t i = 0; i < t.num_tokens(); ++i) {
        for (int l = 0; l < m.num_layers; ++l) {
            const auto ex = t.experts(i, l);
            std::set<int> uniq(ex.begin(), ex.end());
            EXPECT_EQ(uniq.size(), 7u);
            EXPECT_GE(*uniq.begin(), 0);
            EXPECT_LT(*uniq.rbegin(), 10);
        }
    }
}

TEST(GenerateTrace, ChunksEvenlyLabelled) {
    const auto t = generate_trace({1, 4, 1}, {1.0, 150, 15, 1});
    const auto ids = t.chunk_ids();
    ASSERT_EQ(ids.size(), 15u);
    std::vector<int> count(15, 0);
    for (std::size_t i = 0; i < t.num_tokens(); ++i) ++count[t.chunk_id(i)];
    for (int c : count) EXPECT_EQ(c, 10);
    for (std::size_t i = 1; i < t.num_tokens(); ++i) EXPECT_LE(t.chunk_id(i - 1), t.chunk_id(i));
}

TEST(GenerateTrace, ZeroExponentIsUniformWithinThreeSigma) {
    const ModelSpec m{2, 8, 3};
    const std::size_t n = 20000;
    const auto t = generate_trace(m, {0.0, n, 10, 7});
    const double p = 3.0 / 8.0;
    const double sigma = std::sqrt(p * (1 - p) / static_cast<double>(n));
    for (int l = 0; l < m.num_layers; ++l) {
        for (double r : selection_rates(t, l)) EXPECT_NEAR(r, p, 3 * sigma);
    }
}

TEST(GenerateTrace, ZipfHotExpertAtLeastTwiceUniformRate) {
    const ModelSpec m{3, 64, 6};
    const std::size_t n = 10000;
    const double s = 1.2;
    const auto t = generate_trace(m, {s, n, 10, 11});
    double harmonic = 0.0;
    for (int k = 1; k <= 64; ++k) harmonic += std::pow(k, -s);
    // The hot expert is chosen first with probability 1/H, so it is selected at least that often.
    const double first_draw = 1.0 / harmonic;
    const double uniform_rate = 6.0 / 64.0;
    ASSERT_GE(first_draw, 2 * uniform_rate);
    for (int l = 0; l < m.num_layers; ++l) {
        const auto rates = selection_rates(t, l);
        const double top = *std::max_element(rates.begin(), rates.end());
        EXPECT_GE(top, 2 * uniform_rate);
        EXPECT_GE(top, first_draw - 4 * std::sqrt(first_draw * (1 - first_draw) / n));
    }
}

TEST(GenerateTrace, HotExpertDiffersAcrossLayers) {
    const ModelSpec m{8, 64, 2};
    const auto t = generate_trace(m, {2.0, 2000, 4, 5});
    std::set<int> hot;
    for (int l = 0; l < m.num_layers; ++l) {
        const auto rates = selection_rates(t, l);
        hot.insert(static_cast<int>(std::max_element(rates.begin(), rates.end()) - rates.begin()));
    }
    EXPECT_GT(hot.size(), 1u);
}

TEST(GenerateTrace, RejectsNegativeExponent) {
    EXPECT_THROW(generate_trace({1, 4, 1}, {-0.5, 10, 1, 1}), ParameterError);
}

TEST(TraceFormat, EmptyFileIsEmptyTrace) {
    const auto t = parse_text("");
    EXPECT_TRUE(t.empty());
    EXPECT_EQ(t.num_tokens(), 0u);
}

TEST(TraceFormat, CanonicalTextRoundTrips) {
    const std::string text =
        "#moeplace-trace v1 L=2 E=4 K=2\n"
        "0\t0:1,3\t1:0,2\n"
        "0\t0:2,0\t1:3,1\n"
        "5\t0:3,2\t1:1,0\n";
    const auto t = parse_text(text);
    EXPECT_EQ(t.num_tokens(), 3u);
    EXPECT_EQ(t.chunk_id(2), 5);
    EXPECT_EQ(t.experts(1, 1)[0], 3);
    EXPECT_EQ(write_text(t), text);
}

TEST(TraceFormat, GeneratedTraceRoundTrips) {
    const auto t = generate_trace({5, 32, 4}, {1.2, 400, 9, 2});
    const auto text = write_text(t);
    const auto back = parse_text(text);
    EXPECT_EQ(back, t);
    EXPECT_EQ(write_text(back), text);
}

TEST(TraceFormat, HeaderOnlyIsEmptyTraceWithShape) {
    const auto t = parse_text("#moeplace-trace v1 L=3 E=5 K=2\n");
    EXPECT_TRUE(t.empty());
    EXPECT_EQ(t.model(), (ModelSpec{3, 5, 2}));
}

TEST(TraceFormat, ExpertIndexEqualToEReportsLine) {
    try {
        parse_text("#moeplace-trace v1 L=1 E=4 K=2\n0\t0:0,1\n0\t0:2,4\n");
        FAIL() << "expected a parse error";
    } catch (const ParseError& e) {
        EXPECT_EQ(e.line(), 3u);
    }
}

TEST(TraceFormat, MalformedInputsReportLines) {
    const std::string header = "#moeplace-trace v1 L=2 E=4 K=2\n";
    const std::vector<std::string> bad_rows{
        "0\t0:0,1\n",             // missing layer field
        "0\t0:0\t1:0,1\n",        // wrong count
        "0\t0:0,0\t1:0,1\n",      // duplicate expert
        "0\t1:0,1\t0:2,3\n",      // layers out of order
        "x\t0:0,1\t1:0,1\n",      // bad chunk id
        "0\t0:0,1\t1:0,-1\n",     // negative index
        "0\t0 0,1\t1:0,1\n",      // missing colon
    };
    for (const auto& row : bad_rows) {
        try {
            parse_text(header + "0\t0:0,1\t1:2,3\n" + row);
            ADD_FAILURE() << "accepted: " << row;
        } catch (const ParseError& e) {
            EXPECT_EQ(e.line(), 3u) << row;
        }
    }
}

TEST(TraceFormat, BadHeaderRejected) {
    EXPECT_THROW(parse_text("0\t0:1\n"), ParseError);
    EXPECT_THROW(parse_text("#moeplace-trace v2 L=1 E=4 K=1\n"), ParseError);
    EXPECT_THROW(parse_text("#moeplace-trace v1 L=1 E=4 K=9\n"), ParseError);
}

TEST(TraceFormat, MissingFileIsIoError) {
    EXPECT_THROW(parse_trace(std::filesystem::path("/nonexistent/trace.txt")), IoError);
}

TEST(Frequencies, SingleTokenDirectCount) {
    ActivationTrace t({1, 4, 2});
    const std::vector<int> row{0, 1};
    t.add_token(0, row);
    const auto f = estimate_frequencies(t);
    EXPECT_DOUBLE_EQ(f(0, 0), 0.5);
    EXPECT_DOUBLE_EQ(f(0, 1), 0.5);
    EXPECT_DOUBLE_EQ(f(0, 2), 0.0);
    EXPECT_DOUBLE_EQ(f(0, 3), 0.0);
}

TEST(Frequencies, IdenticalSelectionsSplitEvenly) {
    ActivationTrace t({2, 6, 3});
    const std::vector<int> row{5, 1, 3, 0, 2, 4};
    for (int i = 0; i < 17; ++i) t.add_token(i % 3, row);
    const auto f = estimate_frequencies(t);
    for (int e : {5, 1, 3}) EXPECT_DOUBLE_EQ(f(0, e), 1.0 / 3);
    for (int e : {0, 2, 4}) EXPECT_DOUBLE_EQ(f(0, e), 0.0);
    for (int e : {0, 2, 4}) EXPECT_DOUBLE_EQ(f(1, e), 1.0 / 3);
}

TEST(Frequencies, RowsSumToOne) {
    const auto t = generate_trace({6, 40, 5}, {1.1, 777, 5, 9});
    const auto f = estimate_frequencies(t);
    for (int l = 0; l < 6; ++l) {
        double sum = 0.0;
        for (int e = 0; e < 40; ++e) {
            EXPECT_GE(f(l, e), 0.0);
            sum += f(l, e);
        }
        EXPECT_NEAR(sum, 1.0, 1e-9);
    }
}

TEST(Frequencies, UniformTraceWithinFourSigma) {
    const ModelSpec m{3, 32, 4};
    const std::size_t n = 5000;
    const auto f = estimate_frequencies(generate_trace(m, {0.0, n, 10, 21}));
    const double p = 4.0 / 32.0;
    const double sigma = std::sqrt(n * p * (1 - p)) / (4.0 * n);
    for (int l = 0; l < m.num_layers; ++l) {
        for (int e = 0; e < m.num_experts; ++e) EXPECT_LE(std::abs(f(l, e) - 1.0 / 32), 4 * sigma);
    }
}

TEST(Frequencies, ConcatenationIsTokenWeightedAverage) {
    const ModelSpec m{2, 12, 3};
    const auto a = generate_trace(m, {1.0, 300, 3, 1});
    const auto b = generate_trace(m, {0.5, 500, 5, 2});
    ActivationTrace both(m);
    for (const auto* t : {&a, &b}) {
        for (std::size_t i = 0; i < t->num_tokens(); ++i) both.add_token(t->chunk_id(i), t->token_experts(i));
    }
    const auto fa = estimate_frequencies(a);
    const auto fb = estimate_frequencies(b);
    const auto fab = estimate_frequencies(both);
    for (int l = 0; l < 2; ++l) {
        for (int e = 0; e < 12; ++e) EXPECT_NEAR(fab(l, e), (300 * fa(l, e) + 500 * fb(l, e)) / 800, 1e-12);
    }
}

TEST(Frequencies, EmptyTraceIsAnError) {
    EXPECT_THROW(estimate_frequencies(ActivationTrace({1, 4, 1})), ParameterError);
}

TEST(SplitTrace, HundredFiftyChunksIntoHundredAndFifty) {
    const auto t = generate_trace({2, 8, 2}, {1.2, 3000, 150, 4});
    const auto [train, test] = split_trace(t, 100, 50);
    const auto train_ids = train.chunk_ids();
    const auto test_ids = test.chunk_ids();
    EXPECT_EQ(train_ids.size(), 100u);
    EXPECT_EQ(test_ids.size(), 50u);
    std::set<int> all(train_ids.begin(), train_ids.end());
    for (int id : test_ids) EXPECT_TRUE(all.insert(id).second);
    EXPECT_EQ(all.size(), 150u);
    EXPECT_EQ(train.num_tokens() + test.num_tokens(), t.num_tokens());
    EXPECT_EQ(train_ids.back(), 99);
    EXPECT_EQ(test_ids.front(), 100);
}

TEST(SplitTrace, TwoChunksOneEach) {
    ActivationTrace t({1, 2, 1});
    const std::vector<int> e0{0}, e1{1};
    t.add_token(1, e1);
    t.add_token(0, e0);
    const auto [train, test] = split_trace(t, 1, 1);
    ASSERT_EQ(train.num_tokens(), 1u);
    ASSERT_EQ(test.num_tokens(), 1u);
    EXPECT_EQ(train.chunk_id(0), 0);
    EXPECT_EQ(test.chunk_id(0), 1);
}

TEST(SplitTrace, InsufficientChunks) {
    const auto t = generate_trace({1, 4, 1}, {1.0, 40, 4, 1});
    EXPECT_THROW(split_trace(t, 3, 3), ParameterError);
}

TEST(SplitTrace, StableAcrossRuns) {
    const auto t = generate_trace({2, 8, 2}, {1.2, 600, 12, 8});
    EXPECT_EQ(split_trace(t, 8, 4), split_trace(t, 8, 4));
}
