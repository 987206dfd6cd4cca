#pragma once

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "attnprune/analysis.hpp"
#include "attnprune/config.hpp"

namespace attnprune {

namespace cli_detail {

inline std::string now_iso8601() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::tm tm_utc{};
    gmtime_r(&t, &tm_utc);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
    return buf;
}

inline std::string join_path(const std::string& dir, const std::string& name) {
    return (std::filesystem::path(dir) / name).string();
}

inline void ensure_dir(const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw io_error("cannot create output directory '" + dir + "': " + ec.message());
}

struct CommonFlags {
    std::string config_path;
    std::string checkpoint_path;
    std::string out_dir;
    std::int64_t seed = -1;
    bool deterministic = false;
};

inline RunConfig load_config(const CommonFlags& flags) {
    RunConfig cfg = parse_run_config(read_text(flags.config_path));
    if (flags.seed >= 0) cfg.seed = static_cast<std::uint64_t>(flags.seed);
    if (flags.deterministic) cfg.deterministic = true;
    if (!flags.out_dir.empty()) cfg.out_dir = flags.out_dir;
    cfg.validate();
    return cfg;
}

template <typename T>
std::vector<Tensor<T>> checkpoint_scores(CheckpointData<T>& ckpt) {
    // the attention weights are the source of truth when present
    if (!ckpt.attention.empty()) {
        return compute_scores(ckpt.net, ckpt.attention, ckpt.activation);
    }
    std::vector<Tensor<T>> out;
    for (auto& s : ckpt.scores) {
        const std::size_t n = s.size();
        out.push_back(Tensor<T>::from({n}, s));
    }
    return out;
}

template <typename T>
int cmd_train_typed(const RunConfig& cfg) {
    const std::string started = now_iso8601();
    Rng rng(cfg.seed);
    auto [train, val] = load_dataset<T>(cfg.dataset, rng);
    Network<T> net = build_network<T>(cfg.arch, rng);
    auto ans = init_attention_set(cfg.prune.attention, net, rng);
    auto result = run_schedule(net, ans, train, cfg.prune, rng, cfg.dataset.augment);

    ensure_dir(cfg.out_dir);
    const std::string ckpt_path = join_path(cfg.out_dir, "checkpoint.json");
    const std::string pruned_path = join_path(cfg.out_dir, "pruned_checkpoint.json");
    const std::string history_path = join_path(cfg.out_dir, "history.csv");
    const std::string budget_path = join_path(cfg.out_dir, "budget_report.json");
    const std::string budget_csv_path = join_path(cfg.out_dir, "budget_report.csv");
    const std::string hist_path = join_path(cfg.out_dir, "score_histogram.csv");
    const std::string manifest_path = join_path(cfg.out_dir, "run_manifest.json");

    CheckpointData<T> dense;
    dense.kind = "dense";
    dense.net = std::move(net);
    dense.attention = std::move(ans);
    dense.scores = result.final_scores;
    dense.activation = cfg.prune.activation;
    dense.phase = {SchedulePhase::Finetune, cfg.prune.outer_cycles, cfg.prune.finetune_epochs};
    save_checkpoint(ckpt_path, dense);

    CheckpointData<T> pruned;
    pruned.kind = "extracted";
    pruned.net = std::move(result.pruned);
    pruned.activation = cfg.prune.activation;
    pruned.phase = {SchedulePhase::Finetune, cfg.prune.outer_cycles, cfg.prune.finetune_epochs};
    save_checkpoint(pruned_path, pruned);

    write_text_atomic(history_path, history_csv(result.history));
    write_text_atomic(budget_path, budget_report_to_json(result.report).dump(2) + "\n");
    emit_budget_data(result.report, budget_csv_path);
    write_text_atomic(hist_path, score_histogram_csv(score_histogram(result.final_scores, 24)));

    const auto manifest =
        run_manifest(cfg, "train",
                     {{"checkpoint", ckpt_path},
                      {"pruned_checkpoint", pruned_path},
                      {"history", history_path},
                      {"budget_report", budget_path},
                      {"budget_report_csv", budget_csv_path},
                      {"score_histogram", hist_path}},
                     started, now_iso8601());
    write_text_atomic(manifest_path, manifest.dump(2) + "\n");

    double val_acc = -1.0;
    if (val.n > 0) val_acc = evaluate(pruned.net, val).second;
    std::printf("train: keep_ratio=%.4f threshold=%.4f params %lld -> %lld (structural %lld)\n",
                result.report.keep_ratio, result.report.threshold,
                result.report.dense.total_params, result.report.masked.total_params,
                result.report.structural.total_params);
    if (val_acc >= 0.0) std::printf("train: pruned_val_accuracy=%.4f\n", val_acc);
    std::printf("train: outputs in %s\n", cfg.out_dir.c_str());
    return 0;
}

template <typename T>
int cmd_prune_typed(const RunConfig& cfg, const std::string& checkpoint_path) {
    auto ckpt = load_checkpoint<T>(checkpoint_path);
    if (ckpt.kind != "dense") {
        throw config_error("prune: checkpoint '" + checkpoint_path +
                           "' is already extracted");
    }
    auto scores = checkpoint_scores(ckpt);
    auto bin = binarize(scores, cfg.prune);
    auto dead = propagate_dead_branches(ckpt.net, std::move(bin.masks));
    auto report =
        make_budget_report(ckpt.net, dead.masks, bin.threshold, dead.identity_pass_blocks);

    ensure_dir(cfg.out_dir);
    const std::string pruned_path = join_path(cfg.out_dir, "pruned_checkpoint.json");
    const std::string budget_path = join_path(cfg.out_dir, "budget_report.json");
    const std::string budget_csv_path = join_path(cfg.out_dir, "budget_report.csv");

    CheckpointData<T> pruned;
    pruned.kind = "extracted";
    pruned.net = extract(ckpt.net, dead.masks);
    pruned.activation = ckpt.activation;
    pruned.phase = ckpt.phase;
    save_checkpoint(pruned_path, pruned);
    write_text_atomic(budget_path, budget_report_to_json(report).dump(2) + "\n");
    emit_budget_data(report, budget_csv_path);

    std::printf("prune: threshold=%.4f keep_ratio=%.4f params %lld -> %lld\n", report.threshold,
                report.keep_ratio, report.dense.total_params, report.masked.total_params);
    std::printf("prune: outputs in %s\n", cfg.out_dir.c_str());
    return 0;
}

template <typename T>
int cmd_eval_typed(const RunConfig& cfg, const std::string& checkpoint_path) {
    auto ckpt = load_checkpoint<T>(checkpoint_path);
    Rng rng(cfg.seed);
    auto [train, val] = load_dataset<T>(cfg.dataset, rng);
    const DataSet<T>& data = val.n > 0 ? val : train;
    const auto [loss, acc] = evaluate(ckpt.net, data);
    ensure_dir(cfg.out_dir);
    ordered_json j;
    j["checkpoint"] = checkpoint_path;
    j["kind"] = ckpt.kind;
    j["samples"] = data.n;
    j["loss"] = loss;
    j["accuracy"] = acc;
    write_text_atomic(join_path(cfg.out_dir, "eval.json"), j.dump(2) + "\n");
    std::printf("eval: accuracy=%.6f loss=%.6f n=%zu\n", acc, loss, data.n);
    return 0;
}

template <typename T>
int cmd_analyze_typed(const RunConfig& cfg, const std::string& checkpoint_path, int bins,
                      int lemma_trials) {
    auto ckpt = load_checkpoint<T>(checkpoint_path);
    auto scores = checkpoint_scores(ckpt);
    std::vector<std::vector<T>> score_values;
    for (const auto& s : scores) score_values.push_back(s.value());

    ensure_dir(cfg.out_dir);
    const auto hist = score_histogram(score_values, bins);
    write_text_atomic(join_path(cfg.out_dir, "score_histogram.csv"),
                      score_histogram_csv(hist));

    ordered_json j;
    j["checkpoint"] = checkpoint_path;
    j["bimodality"] = hist.bimodality;
    j["mode_near_one"] = hist.mode_near_one;
    j["score_summary"] = ordered_json::array();
    for (std::size_t l = 0; l < score_values.size(); ++l) {
        const auto& sv = score_values[l];
        double mn = sv.empty() ? 0.0 : static_cast<double>(sv[0]);
        double mx = mn, mean = 0.0;
        for (const T v : sv) {
            mn = std::min(mn, static_cast<double>(v));
            mx = std::max(mx, static_cast<double>(v));
            mean += static_cast<double>(v);
        }
        if (!sv.empty()) mean /= static_cast<double>(sv.size());
        ordered_json lj;
        lj["layer_index"] = l;
        lj["min"] = mn;
        lj["mean"] = mean;
        lj["max"] = mx;
        j["score_summary"].push_back(std::move(lj));
    }

    // refinement bounds on every shape-preserving block, random inputs
    Rng rng(cfg.seed);
    ordered_json lemma = ordered_json::array();
    int violations = 0, checks = 0;
    for (std::size_t b = 0; b < ckpt.net.blocks.size(); ++b) {
        if (ckpt.net.blocks[b].has_projection()) continue;
        const int conv2_index = ckpt.net.blocks[b].conv2.bank.layer_index;
        const auto& block_scores = scores[static_cast<std::size_t>(conv2_index)];
        const std::size_t channels = ckpt.net.blocks[b].conv1.bank.in_channels();
        const std::size_t hw = ckpt.net.blocks[b].conv1.bank.out_h;
        for (int trial = 0; trial < lemma_trials; ++trial) {
            std::vector<T> input(channels * hw * hw);
            for (auto& v : input) v = static_cast<T>(rng.normal());
            auto m = check_lemma_bounds(ckpt.net, b,
                                        Tensor<T>::from({channels, hw, hw}, std::move(input)),
                                        block_scores);
            ++checks;
            if (!m.holds()) ++violations;
            if (trial == 0) {
                ordered_json mj;
                mj["block"] = m.block_index;
                mj["ratio_unscored"] = m.ratio_unscored;
                mj["ratio_scored"] = m.ratio_scored;
                mj["delta"] = m.delta;
                mj["eps_bound"] = m.eps_bound;
                mj["clipped_count"] = m.clipped_count;
                mj["holds"] = m.holds();
                lemma.push_back(std::move(mj));
            }
        }
    }
    j["refinement_checks"] = checks;
    j["refinement_violations"] = violations;
    j["refinement_samples"] = std::move(lemma);
    write_text_atomic(join_path(cfg.out_dir, "analyze.json"), j.dump(2) + "\n");
    std::printf("analyze: bimodality=%.4f refinement_checks=%d violations=%d\n",
                hist.bimodality, checks, violations);
    return violations == 0 ? 0 : 1;
}

template <typename T>
int cmd_oracle_typed(const RunConfig& cfg, const std::string& checkpoint_path,
                     const std::vector<int>& keep_counts) {
    auto ckpt = load_checkpoint<T>(checkpoint_path);
    Rng rng(cfg.seed);
    auto [train, val] = load_dataset<T>(cfg.dataset, rng);
    const DataSet<T>& data = val.n > 0 ? val : train;
    auto scores = checkpoint_scores(ckpt);
    auto result = brute_force_best_subnet(ckpt.net, data, keep_counts);
    const auto selected = top_k_masks(scores, keep_counts);
    const double pct = loss_percentile(result, selected);

    ensure_dir(cfg.out_dir);
    ordered_json j;
    j["checkpoint"] = checkpoint_path;
    j["keep_counts"] = keep_counts;
    j["combinations"] = result.table.size();
    j["best_loss"] = result.table[result.best_index].loss;
    double selected_loss = 0.0;
    for (const auto& e : result.table) {
        if (e.masks == selected) selected_loss = e.loss;
    }
    j["selected_loss"] = selected_loss;
    j["percentile"] = pct;
    write_text_atomic(join_path(cfg.out_dir, "oracle_report.json"), j.dump(2) + "\n");
    std::printf("oracle: combinations=%zu best_loss=%.6f selected_loss=%.6f percentile=%.1f\n",
                result.table.size(), result.table[result.best_index].loss, selected_loss, pct);
    return 0;
}

}  // namespace cli_detail

inline int run_cli(const std::vector<std::string>& args) {
    using namespace cli_detail;
    CLI::App app{"attention-scored filter pruning workbench"};
    app.require_subcommand(1);

    CommonFlags flags;
    int bins = 24;
    int lemma_trials = 8;
    std::string keep_spec;

    auto add_common = [&flags](CLI::App* cmd, bool needs_checkpoint) {
        cmd->add_option("--config", flags.config_path, "run configuration JSON")->required();
        if (needs_checkpoint) {
            cmd->add_option("--checkpoint", flags.checkpoint_path, "checkpoint JSON")
                ->required();
        }
        cmd->add_option("--seed", flags.seed, "override config seed");
        cmd->add_flag("--deterministic", flags.deterministic,
                      "pin every random draw to the seed and blank timestamps");
        cmd->add_option("--out", flags.out_dir, "override output directory");
    };

    CLI::App* train = app.add_subcommand("train", "run the full pruning schedule");
    add_common(train, false);
    CLI::App* prune = app.add_subcommand("prune", "binarize and extract from a checkpoint");
    add_common(prune, true);
    CLI::App* eval = app.add_subcommand("eval", "accuracy of a checkpoint on the dataset");
    add_common(eval, true);
    CLI::App* analyze =
        app.add_subcommand("analyze", "score histogram and refinement-bound report");
    add_common(analyze, true);
    analyze->add_option("--bins", bins, "histogram bins");
    analyze->add_option("--lemma-trials", lemma_trials, "random inputs per block");
    CLI::App* oracle =
        app.add_subcommand("oracle", "exhaustive subnetwork table and percentile");
    add_common(oracle, true);
    oracle->add_option("--keep", keep_spec, "comma-separated per-layer keep counts")
        ->required();

    std::vector<const char*> argv;
    argv.push_back("attnprune");
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;  // bad usage is an invalid-config error
    }

    try {
        RunConfig cfg = load_config(flags);
        const bool f32 = cfg.precision == "f32";
        if (train->parsed()) {
            return f32 ? cmd_train_typed<float>(cfg) : cmd_train_typed<double>(cfg);
        }
        const std::string ckpt_precision = checkpoint_precision(flags.checkpoint_path);
        const bool ckpt_f32 = ckpt_precision == "f32";
        if (prune->parsed()) {
            return ckpt_f32 ? cmd_prune_typed<float>(cfg, flags.checkpoint_path)
                            : cmd_prune_typed<double>(cfg, flags.checkpoint_path);
        }
        if (eval->parsed()) {
            return ckpt_f32 ? cmd_eval_typed<float>(cfg, flags.checkpoint_path)
                            : cmd_eval_typed<double>(cfg, flags.checkpoint_path);
        }
        if (analyze->parsed()) {
            return ckpt_f32
                       ? cmd_analyze_typed<float>(cfg, flags.checkpoint_path, bins, lemma_trials)
                       : cmd_analyze_typed<double>(cfg, flags.checkpoint_path, bins,
                                                   lemma_trials);
        }
        if (oracle->parsed()) {
            std::vector<int> keep_counts;
            std::istringstream in(keep_spec);
            std::string tok;
            while (std::getline(in, tok, ',')) {
                try {
                    keep_counts.push_back(std::stoi(tok));
                } catch (const std::exception&) {
                    throw config_error("oracle: bad keep count '" + tok + "'");
                }
            }
            return ckpt_f32
                       ? cmd_oracle_typed<float>(cfg, flags.checkpoint_path, keep_counts)
                       : cmd_oracle_typed<double>(cfg, flags.checkpoint_path, keep_counts);
        }
    } catch (const config_error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const budget_error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const divergence_error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    } catch (const version_error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 4;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}

inline int run_cli(int argc, char** argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return run_cli(args);
}

}  // namespace attnprune
