#include "attnprune/cli.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("attnprune_cli_" + std::to_string(::getpid()) + "_" +
                std::to_string(counter()++));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
    static int& counter() {
        static int c = 0;
        return c;
    }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

std::string tiny_config_json(const std::string& out_dir, int cycles = 1) {
    return R"({
  "seed": 11,
  "deterministic": true,
  "out_dir": ")" + out_dir + R"(",
  "precision": "f64",
  "arch": {"kind": "conv_stack", "stack_widths": [3, 3], "num_classes": 2,
           "in_channels": 3, "in_h": 8, "in_w": 8},
  "dataset": {"kind": "synthetic", "num_classes": 2, "samples_per_class": 12,
              "channels": 3, "height": 8, "width": 8, "val_fraction": 0.25,
              "separation": 2.0, "noise": 0.4},
  "prune": {"lambda": 0.001, "threshold_mode": "fixed", "theta": 0.5,
            "warmup_epochs": 1, "outer_cycles": )" + std::to_string(cycles) + R"(,
            "an_epochs": 1, "cnn_epochs": 1, "finetune_epochs": 1, "batch_size": 8,
            "warmup_opt": {"lr": 0.05}, "an_opt": {"lr": 0.01},
            "cnn_opt": {"lr": 0.02}, "finetune_opt": {"lr": 0.02}}
})";
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    out << content;
}

std::string slurp(const std::string& path) { return attnprune::read_text(path); }

}  // namespace

TEST(Cli, TrainProducesAllOutputFiles) {
    TempDir dir;
    const std::string cfg = dir.file("config.json");
    write_file(cfg, tiny_config_json(dir.file("out")));
    ASSERT_EQ(attnprune::run_cli({"train", "--config", cfg}), 0);
    for (const char* name : {"checkpoint.json", "pruned_checkpoint.json", "history.csv",
                             "budget_report.json", "score_histogram.csv", "run_manifest.json",
                             "budget_report.csv"}) {
        EXPECT_TRUE(fs::exists(dir.file(std::string("out/") + name))) << name;
    }
    const auto manifest = attnprune::ordered_json::parse(slurp(dir.file("out/run_manifest.json")));
    EXPECT_EQ(manifest.at("timestamps").at("started"), "");  // deterministic mode
    EXPECT_TRUE(manifest.at("config_hash").get<std::string>().starts_with("fnv1a64:"));
}

TEST(Cli, SameSeedRunsAreByteIdentical) {
    TempDir dir;
    const std::string cfg_a = dir.file("a.json");
    const std::string cfg_b = dir.file("b.json");
    write_file(cfg_a, tiny_config_json(dir.file("out_a")));
    write_file(cfg_b, tiny_config_json(dir.file("out_b")));
    ASSERT_EQ(attnprune::run_cli({"train", "--config", cfg_a}), 0);
    ASSERT_EQ(attnprune::run_cli({"train", "--config", cfg_b}), 0);
    EXPECT_EQ(slurp(dir.file("out_a/history.csv")), slurp(dir.file("out_b/history.csv")));
    EXPECT_EQ(slurp(dir.file("out_a/checkpoint.json")), slurp(dir.file("out_b/checkpoint.json")));
    EXPECT_EQ(slurp(dir.file("out_a/budget_report.json")),
              slurp(dir.file("out_b/budget_report.json")));
}

TEST(Cli, InvalidConfigExitsTwoWithFieldMessage) {
    TempDir dir;
    const std::string cfg = dir.file("config.json");
    // quantile mode with p = 0 is invalid
    std::string text = tiny_config_json(dir.file("out"));
    text.replace(text.find("\"threshold_mode\": \"fixed\""), 25,
                 "\"threshold_mode\": \"quantile\", \"p\": 0.0");
    write_file(cfg, text);
    testing::internal::CaptureStderr();
    const int code = attnprune::run_cli({"train", "--config", cfg});
    const std::string err = testing::internal::GetCapturedStderr();
    EXPECT_EQ(code, 2);
    EXPECT_NE(err.find("prune.p"), std::string::npos) << err;
}

TEST(Cli, UnknownConfigKeyExitsTwo) {
    TempDir dir;
    const std::string cfg = dir.file("config.json");
    std::string text = tiny_config_json(dir.file("out"));
    text.replace(text.find("\"lambda\""), 8, "\"lambdaa\"");
    write_file(cfg, text);
    testing::internal::CaptureStderr();
    const int code = attnprune::run_cli({"train", "--config", cfg});
    const std::string err = testing::internal::GetCapturedStderr();
    EXPECT_EQ(code, 2);
    EXPECT_NE(err.find("lambdaa"), std::string::npos) << err;
}

TEST(Cli, EvalOnAllKeptExtractionMatchesDense) {
    TempDir dir;
    const std::string cfg = dir.file("config.json");
    // lambda 0 keeps every score at ~1, so extraction keeps everything
    std::string text = tiny_config_json(dir.file("out"));
    text.replace(text.find("\"lambda\": 0.001"), 15, "\"lambda\": 0.0");
    write_file(cfg, text);
    ASSERT_EQ(attnprune::run_cli({"train", "--config", cfg}), 0);

    TempDir eval_dense, eval_pruned;
    ASSERT_EQ(attnprune::run_cli({"eval", "--config", cfg, "--checkpoint",
                                  dir.file("out/checkpoint.json"), "--out",
                                  eval_dense.path.string()}),
              0);
    ASSERT_EQ(attnprune::run_cli({"eval", "--config", cfg, "--checkpoint",
                                  dir.file("out/pruned_checkpoint.json"), "--out",
                                  eval_pruned.path.string()}),
              0);
    const auto a = attnprune::ordered_json::parse(slurp(eval_dense.file("eval.json")));
    const auto b = attnprune::ordered_json::parse(slurp(eval_pruned.file("eval.json")));
    // The budget report confirms everything survived; the extracted net must
    // then score identically.
    const auto report =
        attnprune::ordered_json::parse(slurp(dir.file("out/budget_report.json")));
    ASSERT_DOUBLE_EQ(report.at("keep_ratio").get<double>(), 1.0);
    EXPECT_DOUBLE_EQ(a.at("accuracy").get<double>(), b.at("accuracy").get<double>());
}

TEST(Cli, PruneFromCheckpointWritesBudgetAndExtraction) {
    TempDir dir;
    const std::string cfg = dir.file("config.json");
    write_file(cfg, tiny_config_json(dir.file("out")));
    ASSERT_EQ(attnprune::run_cli({"train", "--config", cfg}), 0);
    TempDir prune_out;
    ASSERT_EQ(attnprune::run_cli({"prune", "--config", cfg, "--checkpoint",
                                  dir.file("out/checkpoint.json"), "--out",
                                  prune_out.path.string()}),
              0);
    EXPECT_TRUE(fs::exists(prune_out.file("pruned_checkpoint.json")));
    EXPECT_TRUE(fs::exists(prune_out.file("budget_report.json")));
    // pruning an already-extracted checkpoint is refused
    testing::internal::CaptureStderr();
    const int code = attnprune::run_cli({"prune", "--config", cfg, "--checkpoint",
                                         prune_out.file("pruned_checkpoint.json"), "--out",
                                         prune_out.path.string()});
    testing::internal::GetCapturedStderr();
    EXPECT_EQ(code, 2);
}

TEST(Cli, AnalyzeFreshVanillaCheckpointReportsAllScoresOne) {
    TempDir dir;
    const std::string cfg = dir.file("config.json");
    // zero cycles: the score network never trains, so scores stay at exactly 1
    std::string text = tiny_config_json(dir.file("out"), 0);
    write_file(cfg, text);
    ASSERT_EQ(attnprune::run_cli({"train", "--config", cfg}), 0);
    TempDir out;
    ASSERT_EQ(attnprune::run_cli({"analyze", "--config", cfg, "--checkpoint",
                                  dir.file("out/checkpoint.json"), "--out",
                                  out.path.string()}),
              0);
    const auto j = attnprune::ordered_json::parse(slurp(out.file("analyze.json")));
    for (const auto& layer : j.at("score_summary")) {
        EXPECT_DOUBLE_EQ(layer.at("min").get<double>(), 1.0);
        EXPECT_DOUBLE_EQ(layer.at("max").get<double>(), 1.0);
    }
    EXPECT_TRUE(fs::exists(out.file("score_histogram.csv")));
}

TEST(Cli, OracleEnumeratesChooseSquared) {
    TempDir dir;
    const std::string cfg = dir.file("config.json");
    write_file(cfg, tiny_config_json(dir.file("out")));
    ASSERT_EQ(attnprune::run_cli({"train", "--config", cfg}), 0);
    TempDir out;
    ASSERT_EQ(attnprune::run_cli({"oracle", "--config", cfg, "--checkpoint",
                                  dir.file("out/checkpoint.json"), "--keep", "2,2", "--out",
                                  out.path.string()}),
              0);
    const auto j = attnprune::ordered_json::parse(slurp(out.file("oracle_report.json")));
    EXPECT_EQ(j.at("combinations").get<int>(), 9);  // C(3,2)^2
    EXPECT_GE(j.at("percentile").get<double>(), 0.0);
}

TEST(Cli, CheckpointVersionMismatchExitsFour) {
    TempDir dir;
    const std::string cfg = dir.file("config.json");
    write_file(cfg, tiny_config_json(dir.file("out")));
    ASSERT_EQ(attnprune::run_cli({"train", "--config", cfg}), 0);
    auto j = attnprune::ordered_json::parse(slurp(dir.file("out/checkpoint.json")));
    j["format_version"] = 2;
    write_file(dir.file("tampered.json"), j.dump(2));
    testing::internal::CaptureStderr();
    const int code = attnprune::run_cli({"eval", "--config", cfg, "--checkpoint",
                                         dir.file("tampered.json"), "--out",
                                         dir.file("eval_out")});
    const std::string err = testing::internal::GetCapturedStderr();
    EXPECT_EQ(code, 4);
    EXPECT_NE(err.find("version"), std::string::npos) << err;
}

TEST(Cli, MissingSubcommandOrConfigIsUsageError) {
    testing::internal::CaptureStderr();
    EXPECT_EQ(attnprune::run_cli({"train"}), 2);  // --config required
    testing::internal::GetCapturedStderr();
}
