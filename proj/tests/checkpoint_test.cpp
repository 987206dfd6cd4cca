#include "attnprune/checkpoint.hpp"

#include <gtest/gtest.h>

#include <filesystem>

#include "test_util.hpp"

using attnprune::ArchConfig;
using attnprune::CheckpointData;
using attnprune::Rng;
using attnprune::ScoreMode;
using attnprune::Tensor;

namespace {

ArchConfig toy_arch() {
    ArchConfig arch;
    arch.kind = "resnet";
    arch.stage_widths = {4, 8};
    arch.blocks_per_stage = 1;
    arch.num_classes = 3;
    arch.in_h = arch.in_w = 12;
    return arch;
}

CheckpointData<double> sample_checkpoint(Rng& rng) {
    CheckpointData<double> ckpt;
    ckpt.net = attnprune::build_network<double>(toy_arch(), rng);
    ckpt.attention =
        attnprune::init_attention_set(attnprune::AttentionConfig{}, ckpt.net, rng);
    auto scores = attnprune::compute_scores(ckpt.net, ckpt.attention,
                                            attnprune::ActivationSpec{});
    for (const auto& s : scores) ckpt.scores.push_back(s.value());
    ckpt.phase = {attnprune::SchedulePhase::TrainAN, 1, 2};
    return ckpt;
}

}  // namespace

TEST(Base64, RoundTripsArbitraryBytes) {
    Rng rng(1);
    for (const std::size_t n : {0u, 1u, 2u, 3u, 4u, 17u, 100u}) {
        std::vector<std::uint8_t> bytes(n);
        for (auto& b : bytes) b = static_cast<std::uint8_t>(rng.uniform_int(0, 255));
        const auto enc = attnprune::detail::base64_encode(bytes.data(), bytes.size());
        EXPECT_EQ(attnprune::detail::base64_decode(enc), bytes);
    }
    EXPECT_THROW(attnprune::detail::base64_decode("abc"), attnprune::parse_error);
    EXPECT_THROW(attnprune::detail::base64_decode("a!=="), attnprune::parse_error);
}

TEST(TensorJson, ExactDoubleRoundTrip) {
    Rng rng(2);
    auto t = testutil::random_tensor({3, 5}, rng, 0.0, false);
    t.value()[0] = 0.1 + 0.2;  // not representable exactly; bits must survive
    const auto j = attnprune::tensor_to_json(t);
    const auto back = attnprune::tensor_from_json<double>(j);
    EXPECT_EQ(back.shape(), t.shape());
    for (std::size_t i = 0; i < t.numel(); ++i) {
        EXPECT_EQ(back.value()[i], t.value()[i]);  // bitwise
    }
}

TEST(TensorJson, Float32FileLoadsIntoDouble) {
    auto t = Tensor<float>::from({2}, {1.5f, -2.25f});
    const auto j = attnprune::tensor_to_json(t);
    const auto back = attnprune::tensor_from_json<double>(j);
    EXPECT_DOUBLE_EQ(back.value()[0], 1.5);
    EXPECT_DOUBLE_EQ(back.value()[1], -2.25);
}

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
    Rng rng(3);
    auto ckpt = sample_checkpoint(rng);
    const std::string first = attnprune::checkpoint_to_string(ckpt);
    auto loaded = attnprune::checkpoint_from_string<double>(first);
    const std::string second = attnprune::checkpoint_to_string(loaded);
    EXPECT_EQ(first, second);
}

TEST(Checkpoint, LoadedNetworkComputesIdenticalOutputs) {
    Rng rng(4);
    auto ckpt = sample_checkpoint(rng);
    auto loaded =
        attnprune::checkpoint_from_string<double>(attnprune::checkpoint_to_string(ckpt));
    auto input = testutil::random_tensor({2, 3, 12, 12}, rng, 0.0, false);
    auto a = ckpt.net.forward(input, nullptr, ScoreMode::off);
    auto b = loaded.net.forward(input, nullptr, ScoreMode::off);
    for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_EQ(a.value()[i], b.value()[i]);
    // attention weights survive too
    auto s1 = attnprune::compute_scores(ckpt.net, ckpt.attention, ckpt.activation);
    auto s2 = attnprune::compute_scores(loaded.net, loaded.attention, loaded.activation);
    for (std::size_t l = 0; l < s1.size(); ++l) EXPECT_EQ(s1[l].value(), s2[l].value());
}

TEST(Checkpoint, VersionMismatchIsRejected) {
    Rng rng(5);
    auto ckpt = sample_checkpoint(rng);
    auto j = attnprune::ordered_json::parse(attnprune::checkpoint_to_string(ckpt));
    j["format_version"] = 999;
    EXPECT_THROW(attnprune::checkpoint_from_string<double>(j.dump()),
                 attnprune::version_error);
}

TEST(Checkpoint, MalformedJsonIsParseError) {
    EXPECT_THROW(attnprune::checkpoint_from_string<double>("{not json"),
                 attnprune::parse_error);
    EXPECT_THROW(attnprune::checkpoint_from_string<double>(
                     "{\"format_version\": 1, \"kind\": \"dense\"}"),
                 attnprune::parse_error);
}

TEST(Checkpoint, ExtractedNetworkRoundTrips) {
    Rng rng(6);
    auto net = attnprune::build_network<double>(toy_arch(), rng);
    std::vector<std::vector<std::uint8_t>> masks;
    Rng mask_rng(7);
    for (const auto* l : net.scored_layers()) {
        std::vector<std::uint8_t> m(l->bank.filters());
        for (auto& v : m) v = mask_rng.uniform() < 0.7 ? 1 : 0;
        masks.push_back(std::move(m));
    }
    CheckpointData<double> ckpt;
    ckpt.kind = "extracted";
    ckpt.net = attnprune::extract(net, masks);
    auto loaded =
        attnprune::checkpoint_from_string<double>(attnprune::checkpoint_to_string(ckpt));
    auto input = testutil::random_tensor({1, 3, 12, 12}, rng, 0.0, false);
    auto a = ckpt.net.forward(input, nullptr, ScoreMode::off);
    auto b = loaded.net.forward(input, nullptr, ScoreMode::off);
    for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_EQ(a.value()[i], b.value()[i]);
}

TEST(Checkpoint, FileRoundTripThroughAtomicWrite) {
    Rng rng(8);
    auto ckpt = sample_checkpoint(rng);
    const auto path =
        (std::filesystem::temp_directory_path() / "attnprune_ckpt_test.json").string();
    attnprune::save_checkpoint(path, ckpt);
    EXPECT_EQ(attnprune::checkpoint_precision(path), "f64");
    auto loaded = attnprune::load_checkpoint<double>(path);
    EXPECT_EQ(loaded.kind, "dense");
    EXPECT_EQ(loaded.phase.cycle_index, 1);
    EXPECT_FALSE(std::filesystem::exists(path + ".tmp"));
    std::filesystem::remove(path);
}
