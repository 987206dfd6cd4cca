#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "attnprune/checkpoint.hpp"
#include "attnprune/dataset.hpp"
#include "attnprune/pruning.hpp"

namespace attnprune {

/// One run, fully specified: architecture, data, pruning hyperparameters,
/// seed and output location. The JSON schema is documented in the README;
/// unknown keys are rejected so typos fail loudly instead of silently using
/// defaults.
struct RunConfig {
    std::uint64_t seed = 1;
    bool deterministic = false;
    std::string out_dir = "run_out";
    std::string precision = "f64";  // "f64" | "f32"
    ArchConfig arch;
    DatasetSpec dataset;
    PruningConfig prune;

    void validate() const {
        if (precision != "f64" && precision != "f32") {
            throw config_error("precision must be 'f64' or 'f32', got '" + precision + "'");
        }
        if (out_dir.empty()) throw config_error("out_dir must not be empty");
        arch.validate();
        dataset.validate();
        prune.validate();
        if (dataset.channels != arch.in_channels || dataset.height != arch.in_h ||
            dataset.width != arch.in_w) {
            throw config_error("dataset image dims (" + std::to_string(dataset.channels) + "x" +
                               std::to_string(dataset.height) + "x" +
                               std::to_string(dataset.width) +
                               ") do not match arch input dims (" +
                               std::to_string(arch.in_channels) + "x" +
                               std::to_string(arch.in_h) + "x" + std::to_string(arch.in_w) + ")");
        }
        if (dataset.num_classes != arch.num_classes) {
            throw config_error("dataset.num_classes and arch.num_classes disagree");
        }
    }
};

namespace detail {

inline void expect_keys(const ordered_json& j, const std::vector<std::string>& known,
                        const std::string& context) {
    for (const auto& [key, value] : j.items()) {
        bool ok = false;
        for (const auto& k : known) {
            if (k == key) {
                ok = true;
                break;
            }
        }
        if (!ok) throw config_error(context + ": unknown field '" + key + "'");
    }
}

template <typename V>
void read_field(const ordered_json& j, const char* key, V& out, const std::string& context) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<V>();
    } catch (const nlohmann::json::exception&) {
        throw config_error(context + "." + key + ": wrong type");
    }
}

inline SgdConfig sgd_from_json(const ordered_json& j, const std::string& context,
                               SgdConfig defaults) {
    expect_keys(j, {"lr", "momentum", "weight_decay"}, context);
    read_field(j, "lr", defaults.lr, context);
    read_field(j, "momentum", defaults.momentum, context);
    read_field(j, "weight_decay", defaults.weight_decay, context);
    return defaults;
}

inline AdamConfig adam_from_json(const ordered_json& j, const std::string& context,
                                 AdamConfig defaults) {
    expect_keys(j, {"lr", "beta1", "beta2", "eps"}, context);
    read_field(j, "lr", defaults.lr, context);
    read_field(j, "beta1", defaults.beta1, context);
    read_field(j, "beta2", defaults.beta2, context);
    read_field(j, "eps", defaults.eps, context);
    return defaults;
}

inline ordered_json sgd_to_json(const SgdConfig& c) {
    ordered_json j;
    j["lr"] = c.lr;
    j["momentum"] = c.momentum;
    j["weight_decay"] = c.weight_decay;
    return j;
}

inline ordered_json adam_to_json(const AdamConfig& c) {
    ordered_json j;
    j["lr"] = c.lr;
    j["beta1"] = c.beta1;
    j["beta2"] = c.beta2;
    j["eps"] = c.eps;
    return j;
}

}  // namespace detail

inline RunConfig run_config_from_json(const ordered_json& j) {
    using detail::expect_keys;
    using detail::read_field;
    RunConfig cfg;
    expect_keys(j, {"seed", "deterministic", "out_dir", "precision", "arch", "dataset", "prune"},
                "config");
    read_field(j, "seed", cfg.seed, "config");
    read_field(j, "deterministic", cfg.deterministic, "config");
    read_field(j, "out_dir", cfg.out_dir, "config");
    read_field(j, "precision", cfg.precision, "config");

    if (j.contains("arch")) {
        const auto& a = j.at("arch");
        expect_keys(a,
                    {"kind", "stage_widths", "blocks_per_stage", "stack_widths", "num_classes",
                     "in_channels", "in_h", "in_w", "kernel"},
                    "arch");
        read_field(a, "kind", cfg.arch.kind, "arch");
        read_field(a, "stage_widths", cfg.arch.stage_widths, "arch");
        read_field(a, "blocks_per_stage", cfg.arch.blocks_per_stage, "arch");
        read_field(a, "stack_widths", cfg.arch.stack_widths, "arch");
        read_field(a, "num_classes", cfg.arch.num_classes, "arch");
        read_field(a, "in_channels", cfg.arch.in_channels, "arch");
        read_field(a, "in_h", cfg.arch.in_h, "arch");
        read_field(a, "in_w", cfg.arch.in_w, "arch");
        read_field(a, "kernel", cfg.arch.kernel, "arch");
    }
    if (j.contains("dataset")) {
        const auto& d = j.at("dataset");
        expect_keys(d,
                    {"kind", "path", "num_classes", "samples_per_class", "channels", "height",
                     "width", "seed", "separation", "noise", "val_fraction", "augment"},
                    "dataset");
        read_field(d, "kind", cfg.dataset.kind, "dataset");
        read_field(d, "path", cfg.dataset.path, "dataset");
        read_field(d, "num_classes", cfg.dataset.num_classes, "dataset");
        read_field(d, "samples_per_class", cfg.dataset.samples_per_class, "dataset");
        read_field(d, "channels", cfg.dataset.channels, "dataset");
        read_field(d, "height", cfg.dataset.height, "dataset");
        read_field(d, "width", cfg.dataset.width, "dataset");
        read_field(d, "seed", cfg.dataset.seed, "dataset");
        read_field(d, "separation", cfg.dataset.separation, "dataset");
        read_field(d, "noise", cfg.dataset.noise, "dataset");
        read_field(d, "val_fraction", cfg.dataset.val_fraction, "dataset");
        read_field(d, "augment", cfg.dataset.augment, "dataset");
    }
    if (j.contains("prune")) {
        const auto& p = j.at("prune");
        expect_keys(p,
                    {"lambda", "p", "threshold_mode", "theta", "warmup_epochs", "outer_cycles",
                     "an_epochs", "cnn_epochs", "finetune_epochs", "flops_balance", "batch_size",
                     "activation", "attention", "warmup_opt", "an_opt", "cnn_opt",
                     "finetune_opt"},
                    "prune");
        read_field(p, "lambda", cfg.prune.lambda, "prune");
        read_field(p, "p", cfg.prune.p, "prune");
        if (p.contains("threshold_mode")) {
            cfg.prune.threshold_mode =
                threshold_mode_from_name(p.at("threshold_mode").get<std::string>());
        }
        read_field(p, "theta", cfg.prune.theta, "prune");
        read_field(p, "warmup_epochs", cfg.prune.warmup_epochs, "prune");
        read_field(p, "outer_cycles", cfg.prune.outer_cycles, "prune");
        read_field(p, "an_epochs", cfg.prune.an_epochs, "prune");
        read_field(p, "cnn_epochs", cfg.prune.cnn_epochs, "prune");
        read_field(p, "finetune_epochs", cfg.prune.finetune_epochs, "prune");
        read_field(p, "flops_balance", cfg.prune.flops_balance, "prune");
        read_field(p, "batch_size", cfg.prune.batch_size, "prune");
        if (p.contains("activation")) {
            const auto& act = p.at("activation");
            expect_keys(act, {"kind", "a", "b"}, "prune.activation");
            if (act.contains("kind")) {
                cfg.prune.activation.kind =
                    activation_kind_from_name(act.at("kind").get<std::string>());
            }
            read_field(act, "a", cfg.prune.activation.a, "prune.activation");
            read_field(act, "b", cfg.prune.activation.b, "prune.activation");
        }
        if (p.contains("attention")) {
            const auto& att = p.at("attention");
            expect_keys(att, {"variant", "hidden_divisor", "alpha", "alpha_per_block"},
                        "prune.attention");
            if (att.contains("variant")) {
                const std::string v = att.at("variant").get<std::string>();
                if (v == "vanilla") {
                    cfg.prune.attention.variant = AttentionVariant::vanilla;
                } else if (v == "kq") {
                    cfg.prune.attention.variant = AttentionVariant::kq;
                } else {
                    throw config_error("prune.attention.variant must be 'vanilla' or 'kq'");
                }
            }
            read_field(att, "hidden_divisor", cfg.prune.attention.hidden_divisor,
                       "prune.attention");
            read_field(att, "alpha", cfg.prune.attention.alpha, "prune.attention");
            read_field(att, "alpha_per_block", cfg.prune.attention.alpha_per_block,
                       "prune.attention");
        }
        if (p.contains("warmup_opt")) {
            cfg.prune.warmup_opt =
                detail::sgd_from_json(p.at("warmup_opt"), "prune.warmup_opt", cfg.prune.warmup_opt);
        }
        if (p.contains("an_opt")) {
            cfg.prune.an_opt = detail::adam_from_json(p.at("an_opt"), "prune.an_opt",
                                                      cfg.prune.an_opt);
        }
        if (p.contains("cnn_opt")) {
            cfg.prune.cnn_opt =
                detail::sgd_from_json(p.at("cnn_opt"), "prune.cnn_opt", cfg.prune.cnn_opt);
        }
        if (p.contains("finetune_opt")) {
            cfg.prune.finetune_opt = detail::sgd_from_json(p.at("finetune_opt"),
                                                           "prune.finetune_opt",
                                                           cfg.prune.finetune_opt);
        }
    }
    cfg.validate();
    return cfg;
}

inline RunConfig parse_run_config(const std::string& text) {
    ordered_json j;
    try {
        j = ordered_json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw config_error(std::string("config: not valid JSON: ") + e.what());
    }
    return run_config_from_json(j);
}

inline ordered_json run_config_to_json(const RunConfig& cfg) {
    ordered_json j;
    j["seed"] = cfg.seed;
    j["deterministic"] = cfg.deterministic;
    j["out_dir"] = cfg.out_dir;
    j["precision"] = cfg.precision;
    j["arch"] = detail::arch_to_json(cfg.arch);
    ordered_json d;
    d["kind"] = cfg.dataset.kind;
    d["path"] = cfg.dataset.path;
    d["num_classes"] = cfg.dataset.num_classes;
    d["samples_per_class"] = cfg.dataset.samples_per_class;
    d["channels"] = cfg.dataset.channels;
    d["height"] = cfg.dataset.height;
    d["width"] = cfg.dataset.width;
    d["seed"] = cfg.dataset.seed;
    d["separation"] = cfg.dataset.separation;
    d["noise"] = cfg.dataset.noise;
    d["val_fraction"] = cfg.dataset.val_fraction;
    d["augment"] = cfg.dataset.augment;
    j["dataset"] = std::move(d);
    ordered_json p;
    p["lambda"] = cfg.prune.lambda;
    p["p"] = cfg.prune.p;
    p["threshold_mode"] = threshold_mode_name(cfg.prune.threshold_mode);
    p["theta"] = cfg.prune.theta;
    p["warmup_epochs"] = cfg.prune.warmup_epochs;
    p["outer_cycles"] = cfg.prune.outer_cycles;
    p["an_epochs"] = cfg.prune.an_epochs;
    p["cnn_epochs"] = cfg.prune.cnn_epochs;
    p["finetune_epochs"] = cfg.prune.finetune_epochs;
    p["flops_balance"] = cfg.prune.flops_balance;
    p["batch_size"] = cfg.prune.batch_size;
    ordered_json act;
    act["kind"] = activation_kind_name(cfg.prune.activation.kind);
    act["a"] = cfg.prune.activation.a;
    act["b"] = cfg.prune.activation.b;
    p["activation"] = std::move(act);
    ordered_json att;
    att["variant"] = cfg.prune.attention.variant == AttentionVariant::vanilla ? "vanilla" : "kq";
    att["hidden_divisor"] = cfg.prune.attention.hidden_divisor;
    att["alpha"] = cfg.prune.attention.alpha;
    att["alpha_per_block"] = cfg.prune.attention.alpha_per_block;
    p["attention"] = std::move(att);
    p["warmup_opt"] = detail::sgd_to_json(cfg.prune.warmup_opt);
    p["an_opt"] = detail::adam_to_json(cfg.prune.an_opt);
    p["cnn_opt"] = detail::sgd_to_json(cfg.prune.cnn_opt);
    p["finetune_opt"] = detail::sgd_to_json(cfg.prune.finetune_opt);
    j["prune"] = std::move(p);
    return j;
}

// ---------------------------------------------------------------------------
// Reports and manifest
// ---------------------------------------------------------------------------

inline ordered_json flops_account_to_json(const FlopsAccount& acct) {
    ordered_json j;
    j["layers"] = ordered_json::array();
    for (const auto& l : acct.layers) {
        ordered_json lj;
        lj["name"] = l.name;
        lj["layer_index"] = l.layer_index;
        lj["params"] = l.params;
        lj["flops"] = l.flops;
        j["layers"].push_back(std::move(lj));
    }
    j["total_params"] = acct.total_params;
    j["total_flops"] = acct.total_flops;
    j["head_params"] = acct.head_params;
    j["head_flops"] = acct.head_flops;
    return j;
}

inline ordered_json budget_report_to_json(const BudgetReport& report) {
    ordered_json j;
    j["layers"] = ordered_json::array();
    for (const auto& l : report.layers) {
        ordered_json lj;
        lj["layer_index"] = l.layer_index;
        lj["name"] = l.name;
        lj["f_original"] = l.f_original;
        lj["f_surviving"] = l.f_surviving;
        lj["masked_only"] = l.masked_only;
        lj["identity_pass"] = l.identity_pass;
        j["layers"].push_back(std::move(lj));
    }
    j["threshold"] = report.threshold;
    j["keep_ratio"] = report.keep_ratio;
    j["flops_before"] = flops_account_to_json(report.dense);
    j["flops_after_masked"] = flops_account_to_json(report.masked);
    j["flops_after_structural"] = flops_account_to_json(report.structural);
    j["identity_pass_blocks"] = report.identity_pass_blocks;
    return j;
}

/// Everything needed to reproduce a run from the same binary: the full config
/// snapshot, its content hash, the seed, and where the outputs went.
/// Timestamps are blanked in deterministic mode so that all emitted artifacts
/// are byte-identical across reruns.
inline ordered_json run_manifest(const RunConfig& cfg, const std::string& command,
                                 const std::vector<std::pair<std::string, std::string>>& outputs,
                                 const std::string& started, const std::string& finished) {
    ordered_json j;
    j["format_version"] = kCheckpointFormatVersion;
    j["command"] = command;
    const ordered_json snapshot = run_config_to_json(cfg);
    j["config"] = snapshot;
    char hash[32];
    std::snprintf(hash, sizeof(hash), "fnv1a64:%016llx",
                  static_cast<unsigned long long>(fnv1a64(snapshot.dump())));
    j["config_hash"] = hash;
    j["seed"] = cfg.seed;
    j["deterministic"] = cfg.deterministic;
    ordered_json ts;
    ts["started"] = cfg.deterministic ? "" : started;
    ts["finished"] = cfg.deterministic ? "" : finished;
    j["timestamps"] = std::move(ts);
    ordered_json out;
    for (const auto& [key, path] : outputs) out[key] = path;
    j["outputs"] = std::move(out);
    return j;
}

}  // namespace attnprune
