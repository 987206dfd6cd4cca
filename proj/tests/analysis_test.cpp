#include "attnprune/analysis.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "test_util.hpp"

using attnprune::ArchConfig;
using attnprune::DatasetSpec;
using attnprune::Rng;
using attnprune::Tensor;

namespace {

ArchConfig identity_block_arch() {
    // one stage, one block, stem width == stage width: block0 is identity
    ArchConfig arch;
    arch.kind = "resnet";
    arch.stage_widths = {6};
    arch.blocks_per_stage = 1;
    arch.num_classes = 3;
    arch.in_h = arch.in_w = 10;
    return arch;
}

}  // namespace

// ---------------------------------------------------------------------------
// refinement bounds
// ---------------------------------------------------------------------------

TEST(LemmaBounds, ConstantScoresCancelExactly) {
    Rng rng(1);
    auto net = attnprune::build_network<double>(identity_block_arch(), rng);
    auto input = testutil::random_tensor({6, 10, 10}, rng, 0.0, false);
    auto scores = Tensor<double>::full({6}, 0.37);
    auto m = attnprune::check_lemma_bounds(net, 0, input, scores);
    EXPECT_NEAR(m.ratio_scored, m.ratio_unscored, 1e-12 * std::abs(m.ratio_unscored));
    EXPECT_TRUE(m.holds());
}

TEST(LemmaBounds, EqualScoresCollapseTheBandToFactorOne) {
    Rng rng(2);
    auto net = attnprune::build_network<double>(identity_block_arch(), rng);
    auto input = testutil::random_tensor({6, 10, 10}, rng, 0.0, false);
    auto scores = Tensor<double>::full({6}, 1.25);  // delta == 1+eps
    auto m = attnprune::check_lemma_bounds(net, 0, input, scores);
    EXPECT_DOUBLE_EQ(m.delta, m.eps_bound);
    EXPECT_TRUE(m.holds());
}

TEST(LemmaBounds, RandomizedTriplesNeverViolate) {
    Rng rng(3);
    int violations = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        Rng local = rng.fork(static_cast<std::uint64_t>(trial));
        auto net = attnprune::build_network<double>(identity_block_arch(), local);
        auto input = testutil::random_tensor({6, 10, 10}, local, 0.0, false);
        std::vector<double> sv(6);
        for (auto& v : sv) v = local.uniform(0.1, 1.0);
        auto m = attnprune::check_lemma_bounds(net, 0, input,
                                               Tensor<double>::from({6}, std::move(sv)));
        if (!m.holds()) ++violations;
    }
    EXPECT_EQ(violations, 0);
}

TEST(LemmaBounds, ClippingIsReported) {
    Rng rng(4);
    auto net = attnprune::build_network<double>(identity_block_arch(), rng);
    auto input = testutil::random_tensor({6, 10, 10}, rng, 0.0, false);
    auto scores = Tensor<double>::from({6}, {0.0, 1e-9, 0.5, 0.9, 1.0, 0.2});
    auto m = attnprune::check_lemma_bounds(net, 0, input, scores, 1e-3);
    EXPECT_EQ(m.clipped_count, 2);
    EXPECT_DOUBLE_EQ(m.delta, 1e-3);
    EXPECT_TRUE(m.holds());
}

TEST(LemmaBounds, ZeroInputIsDegenerate) {
    Rng rng(5);
    auto net = attnprune::build_network<double>(identity_block_arch(), rng);
    auto input = Tensor<double>::zeros({6, 10, 10});
    auto scores = Tensor<double>::full({6}, 0.5);
    EXPECT_THROW(attnprune::check_lemma_bounds(net, 0, input, scores),
                 attnprune::domain_error);
}

TEST(LemmaBounds, ProjectionBlocksAreRejected) {
    ArchConfig arch;
    arch.kind = "resnet";
    arch.stage_widths = {4, 8};
    arch.blocks_per_stage = 1;
    arch.num_classes = 3;
    arch.in_h = arch.in_w = 8;
    Rng rng(6);
    auto net = attnprune::build_network<double>(arch, rng);
    auto input = testutil::random_tensor({4, 8, 8}, rng, 0.0, false);
    auto scores = Tensor<double>::full({8}, 0.5);
    EXPECT_THROW(attnprune::check_lemma_bounds(net, 1, input, scores),
                 attnprune::domain_error);
}

// ---------------------------------------------------------------------------
// histogram
// ---------------------------------------------------------------------------

TEST(Histogram, AllOnesSingleBinAndFullBimodality) {
    std::vector<std::vector<double>> scores = {{1.0, 1.0, 1.0}, {1.0, 1.0}};
    auto h = attnprune::score_histogram(scores, 10);
    long long occupied = 0, total = 0;
    for (const auto c : h.pooled) {
        if (c > 0) ++occupied;
        total += c;
    }
    EXPECT_EQ(occupied, 1);
    EXPECT_EQ(total, 5);
    EXPECT_DOUBLE_EQ(h.bimodality, 1.0);
}

TEST(Histogram, CountsAreConservedPerLayerAndPooled) {
    Rng rng(7);
    std::vector<std::vector<double>> scores(3);
    std::size_t total = 0;
    for (auto& layer : scores) {
        const int f = 5 + static_cast<int>(rng.uniform_int(0, 10));
        for (int i = 0; i < f; ++i) layer.push_back(rng.uniform() * 1.02);
        total += layer.size();
    }
    auto h = attnprune::score_histogram(scores, 16);
    long long pooled = 0;
    for (const auto c : h.pooled) pooled += c;
    EXPECT_EQ(static_cast<std::size_t>(pooled), total);
    for (std::size_t l = 0; l < scores.size(); ++l) {
        long long layer_total = 0;
        for (const auto c : h.per_layer[l]) layer_total += c;
        EXPECT_EQ(static_cast<std::size_t>(layer_total), scores[l].size());
    }
}

TEST(Histogram, UniformScoresSitNearTheFlatBaseline) {
    Rng rng(8);
    std::vector<std::vector<double>> scores(1);
    for (int i = 0; i < 20000; ++i) scores[0].push_back(rng.uniform());
    auto h = attnprune::score_histogram(scores, 20);
    // near 0 contributes ~0.1 and the modal window at most ~0.2
    EXPECT_GT(h.bimodality, 0.1);
    EXPECT_LT(h.bimodality, 0.4);
    // roughly flat counts
    for (const auto c : h.pooled) {
        EXPECT_GT(c, 20000 / 20 / 2);
        EXPECT_LT(c, 20000 / 20 * 2);
    }
}

TEST(Histogram, RejectsTooFewBins) {
    EXPECT_THROW(attnprune::score_histogram<double>({{0.5}}, 1), attnprune::domain_error);
}

TEST(Histogram, CsvContainsPooledRows) {
    auto h = attnprune::score_histogram<double>({{0.1, 0.9}}, 4);
    const auto csv = attnprune::score_histogram_csv(h);
    EXPECT_NE(csv.find("layer,bin_lo,bin_hi,count"), std::string::npos);
    EXPECT_NE(csv.find("pooled"), std::string::npos);
}

// ---------------------------------------------------------------------------
// brute force oracle
// ---------------------------------------------------------------------------

namespace {

attnprune::DataSet<double> oracle_data(Rng& rng) {
    DatasetSpec spec;
    spec.num_classes = 2;
    spec.samples_per_class = 12;
    spec.channels = 2;
    spec.height = 6;
    spec.width = 6;
    spec.val_fraction = 0.0;
    spec.separation = 2.0;
    spec.noise = 0.3;
    auto [train, val] = attnprune::make_synthetic<double>(spec, rng);
    return std::move(train);
}

attnprune::Network<double> oracle_net(Rng& rng) {
    ArchConfig arch;
    arch.kind = "conv_stack";
    arch.stack_widths = {3, 3};
    arch.num_classes = 2;
    arch.in_channels = 2;
    arch.in_h = arch.in_w = 6;
    return attnprune::build_network<double>(arch, rng);
}

}  // namespace

TEST(BruteForce, KeepAllIsASingleCombination) {
    Rng rng(9);
    auto net = oracle_net(rng);
    auto data = oracle_data(rng);
    auto result = attnprune::brute_force_best_subnet(net, data, {3, 3});
    ASSERT_EQ(result.table.size(), 1u);
    for (const auto& mask : result.table[0].masks) {
        for (const auto v : mask) EXPECT_EQ(v, 1);
    }
}

TEST(BruteForce, EnumeratesExactlyChooseProduct) {
    Rng rng(10);
    auto net = oracle_net(rng);
    auto data = oracle_data(rng);
    auto result = attnprune::brute_force_best_subnet(net, data, {2, 2});
    EXPECT_EQ(result.table.size(), 9u);  // C(3,2)^2
    // table rows are distinct mask tuples
    for (std::size_t i = 0; i < result.table.size(); ++i) {
        for (std::size_t j = i + 1; j < result.table.size(); ++j) {
            EXPECT_NE(result.table[i].masks, result.table[j].masks);
        }
    }
    // best index is the argmin
    for (const auto& e : result.table) {
        EXPECT_GE(e.loss, result.table[result.best_index].loss);
    }
}

TEST(BruteForce, GuardRefusesCombinatorialBlowup) {
    ArchConfig arch;
    arch.kind = "conv_stack";
    arch.stack_widths = {24, 24};
    arch.num_classes = 2;
    arch.in_channels = 2;
    arch.in_h = arch.in_w = 6;
    Rng rng(11);
    auto net = attnprune::build_network<double>(arch, rng);
    auto data = oracle_data(rng);
    try {
        attnprune::brute_force_best_subnet(net, data, {12, 12});
        FAIL() << "expected domain_error";
    } catch (const attnprune::domain_error& e) {
        EXPECT_NE(std::string(e.what()).find("guard"), std::string::npos) << e.what();
    }
}

TEST(BruteForce, PercentileOfBestIsZero) {
    Rng rng(12);
    auto net = oracle_net(rng);
    auto data = oracle_data(rng);
    auto result = attnprune::brute_force_best_subnet(net, data, {2, 2});
    const double pct =
        attnprune::loss_percentile(result, result.table[result.best_index].masks);
    EXPECT_DOUBLE_EQ(pct, 0.0);
    EXPECT_THROW(attnprune::loss_percentile(result, {{1, 1, 1}, {1, 1, 1}}),
                 attnprune::domain_error);
}

TEST(TopKMasks, SelectsHighestScoresWithStableTies) {
    auto masks = attnprune::top_k_masks<double>(
        {Tensor<double>::from({4}, {0.9, 0.2, 0.9, 0.5})}, {2});
    EXPECT_EQ(masks[0], (std::vector<std::uint8_t>{1, 0, 1, 0}));
}

// ---------------------------------------------------------------------------
// budget CSV
// ---------------------------------------------------------------------------

TEST(BudgetCsv, RoundTripsThroughParse) {
    attnprune::BudgetReport report;
    attnprune::BudgetLayerReport a;
    a.layer_index = 0;
    a.name = "stem";
    a.f_original = 8;
    a.f_surviving = 8;
    a.masked_only = true;
    attnprune::BudgetLayerReport b;
    b.layer_index = 1;
    b.name = "block0.conv1";
    b.f_original = 8;
    b.f_surviving = 0;  // zero-filter layer stays present and flagged
    b.identity_pass = true;
    report.layers = {a, b};
    const auto csv = attnprune::budget_csv(report);
    const auto parsed = attnprune::parse_budget_csv(csv);
    ASSERT_EQ(parsed.size(), 2u);
    EXPECT_EQ(parsed[0].name, "stem");
    EXPECT_EQ(parsed[0].masked_only, true);
    EXPECT_EQ(parsed[1].f_surviving, 0);
    EXPECT_EQ(parsed[1].identity_pass, true);
    // equal columns when nothing was pruned
    EXPECT_EQ(parsed[0].f_original, parsed[0].f_surviving);
}

TEST(BudgetCsv, MalformedRowsAreParseErrors) {
    EXPECT_THROW(attnprune::parse_budget_csv("bad header\n"), attnprune::parse_error);
    EXPECT_THROW(
        attnprune::parse_budget_csv(
            "layer_index,name,f_original,f_surviving,masked_only,identity_pass\nx,y\n"),
        attnprune::parse_error);
}
