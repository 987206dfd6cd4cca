#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "attnprune/dataset.hpp"
#include "attnprune/optimizer.hpp"
#include "attnprune/score_network.hpp"

namespace attnprune {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

enum class ThresholdMode { fixed, quantile };

struct PruningConfig {
    double lambda = 5e-4;  // score-L1 weight in the regularized loss
    double p = 0.5;        // global keep ratio (quantile mode)
    ThresholdMode threshold_mode = ThresholdMode::fixed;
    double theta = 0.5;    // fixed-mode threshold

    int warmup_epochs = 2;
    int outer_cycles = 2;   // alternating cycles
    int an_epochs = 3;      // score-network mini-epochs per cycle
    int cnn_epochs = 6;     // CNN mini-epochs per cycle
    int finetune_epochs = 2;

    bool flops_balance = true;
    int batch_size = 32;

    ActivationSpec activation;
    AttentionConfig attention;

    SgdConfig warmup_opt;            // lr 0.1, momentum 0.9, wd 5e-4
    AdamConfig an_opt;               // lr 1e-6
    SgdConfig cnn_opt = {0.01, 0.9, 5e-4};
    SgdConfig finetune_opt = {0.01, 0.9, 5e-4};

    void validate() const {
        if (lambda < 0.0) throw config_error("prune.lambda must be >= 0");
        if (p <= 0.0 || p > 1.0) throw config_error("prune.p must be in (0, 1]");
        if (theta < 0.0 || theta > 1.0) throw config_error("prune.theta must be in [0, 1]");
        if (an_epochs < 1 || cnn_epochs < 1) {
            throw config_error("prune.an_epochs and prune.cnn_epochs must be >= 1");
        }
        if (warmup_epochs < 0 || finetune_epochs < 0 || outer_cycles < 0) {
            throw config_error("prune.epoch counts must be >= 0");
        }
        if (batch_size < 1) throw config_error("prune.batch_size must be >= 1");
        activation.validate();
    }
};

inline std::string threshold_mode_name(ThresholdMode m) {
    return m == ThresholdMode::fixed ? "fixed" : "quantile";
}

inline ThresholdMode threshold_mode_from_name(const std::string& s) {
    if (s == "fixed") return ThresholdMode::fixed;
    if (s == "quantile") return ThresholdMode::quantile;
    throw config_error("prune.threshold_mode must be 'fixed' or 'quantile', got '" + s + "'");
}

enum class SchedulePhase { Warmup, TrainAN, TrainCNN, Finetune };

inline const char* phase_name(SchedulePhase p) {
    switch (p) {
        case SchedulePhase::Warmup: return "warmup";
        case SchedulePhase::TrainAN: return "train_an";
        case SchedulePhase::TrainCNN: return "train_cnn";
        case SchedulePhase::Finetune: return "finetune";
    }
    return "?";
}

// ---------------------------------------------------------------------------
// Regularized objective
// ---------------------------------------------------------------------------

/// cross_entropy + lambda * sum_l w_l * ||S_l||_1, where w_l is the ratio of
/// layer l's output map area to the last prunable layer's map area when
/// flops balancing is on (early, large-map layers cost more flops per kept
/// filter) and 1 otherwise. With lambda == 0 the result is exactly the plain
/// cross-entropy graph.
template <typename T>
Tensor<T> regularized_loss(const Tensor<T>& logits, const std::vector<int>& labels,
                           const std::vector<Tensor<T>>& scores, const PruningConfig& cfg,
                           const Network<T>& net) {
    const auto layers = net.scored_layers();
    if (scores.size() != layers.size()) {
        throw config_error("regularized_loss: expected " + std::to_string(layers.size()) +
                           " score vectors, got " + std::to_string(scores.size()));
    }
    Tensor<T> ce = cross_entropy(logits, labels);
    if (cfg.lambda == 0.0) return ce;
    const auto* last = layers.back();
    const double last_area =
        static_cast<double>(last->bank.out_h) * static_cast<double>(last->bank.out_w);
    Tensor<T> total = ce;
    for (std::size_t l = 0; l < layers.size(); ++l) {
        double w = 1.0;
        if (cfg.flops_balance) {
            const double area = static_cast<double>(layers[l]->bank.out_h) *
                                static_cast<double>(layers[l]->bank.out_w);
            w = area / last_area;
        }
        total = add(total, scale(l1_norm(scores[l]), static_cast<T>(cfg.lambda * w)));
    }
    return total;
}

// ---------------------------------------------------------------------------
// Binarization
// ---------------------------------------------------------------------------

struct BinarizeResult {
    std::vector<std::vector<std::uint8_t>> masks;
    double threshold = 0.0;
};

/// Thresholds analog scores into keep/drop masks. Fixed mode keeps s >= theta
/// elementwise. Quantile mode pools every layer's scores, keeps exactly
/// ceil(p * total) of them, and reports the smallest kept score as the
/// threshold; ties at the threshold drop the later (layer, filter) indices so
/// the budget is met exactly and deterministically.
template <typename T>
BinarizeResult binarize(const std::vector<Tensor<T>>& scores, const PruningConfig& cfg) {
    if (scores.empty()) throw domain_error("binarize: no score vectors");
    BinarizeResult out;
    out.masks.resize(scores.size());
    std::size_t total = 0;
    for (std::size_t l = 0; l < scores.size(); ++l) {
        out.masks[l].assign(scores[l].numel(), 0);
        total += scores[l].numel();
    }
    if (cfg.threshold_mode == ThresholdMode::fixed) {
        out.threshold = cfg.theta;
        for (std::size_t l = 0; l < scores.size(); ++l) {
            const auto& sv = scores[l].value();
            for (std::size_t i = 0; i < sv.size(); ++i) {
                out.masks[l][i] = sv[i] >= static_cast<T>(cfg.theta) ? 1 : 0;
            }
        }
        return out;
    }
    const double budget_real = cfg.p * static_cast<double>(total);
    if (budget_real < 1.0) {
        throw budget_error("binarize: budget p*total = " + std::to_string(budget_real) +
                           " < 1 would prune everything (p = " + std::to_string(cfg.p) +
                           ", total = " + std::to_string(total) + ")");
    }
    const std::size_t keep = static_cast<std::size_t>(std::ceil(budget_real));
    struct Entry {
        T score;
        std::size_t layer;
        std::size_t index;
    };
    std::vector<Entry> pool;
    pool.reserve(total);
    for (std::size_t l = 0; l < scores.size(); ++l) {
        const auto& sv = scores[l].value();
        for (std::size_t i = 0; i < sv.size(); ++i) pool.push_back({sv[i], l, i});
    }
    std::sort(pool.begin(), pool.end(), [](const Entry& a, const Entry& b) {
        if (a.score != b.score) return a.score > b.score;
        return std::tie(a.layer, a.index) < std::tie(b.layer, b.index);
    });
    for (std::size_t i = 0; i < keep && i < pool.size(); ++i) {
        out.masks[pool[i].layer][pool[i].index] = 1;
    }
    out.threshold = static_cast<double>(pool[std::min(keep, pool.size()) - 1].score);
    return out;
}

/// Kept fraction the current scores would produce under the configured
/// binarization; safe to call every epoch (never throws on small budgets).
template <typename T>
double keep_ratio_of(const std::vector<Tensor<T>>& scores, const PruningConfig& cfg) {
    std::size_t total = 0, kept = 0;
    for (const auto& s : scores) total += s.numel();
    if (total == 0) return 0.0;
    if (cfg.threshold_mode == ThresholdMode::quantile) {
        return std::min(1.0, std::ceil(cfg.p * static_cast<double>(total)) /
                                 static_cast<double>(total));
    }
    for (const auto& s : scores) {
        for (const T v : s.value()) {
            if (v >= static_cast<T>(cfg.theta)) ++kept;
        }
    }
    return static_cast<double>(kept) / static_cast<double>(total);
}

// ---------------------------------------------------------------------------
// Extraction
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
ChannelNorm<T> slice_norm(const ChannelNorm<T>& norm, const std::vector<std::size_t>& rows) {
    ChannelNorm<T> out;
    std::vector<T> gamma, beta;
    for (const auto r : rows) {
        gamma.push_back(norm.gamma.value()[r]);
        beta.push_back(norm.beta.value()[r]);
        out.running_mean.push_back(norm.running_mean[r]);
        out.running_var.push_back(norm.running_var[r]);
    }
    out.gamma = Tensor<T>::from({rows.size()}, std::move(gamma), true);
    out.beta = Tensor<T>::from({rows.size()}, std::move(beta), true);
    out.momentum = norm.momentum;
    out.eps = norm.eps;
    return out;
}

/// Copies the layer keeping filter rows `rows` and input channels `cols`.
/// Rows listed in zero_rows (indices into the *new* row order) have their
/// weights and normalization affine zeroed: the channel stays for shape
/// reasons but computes an exact zero.
template <typename T>
ConvLayer<T> slice_layer(const ConvLayer<T>& l, const std::vector<std::size_t>& rows,
                         const std::vector<std::size_t>& cols,
                         const std::vector<std::size_t>& zero_rows) {
    const std::size_t k = l.bank.kernel();
    const std::size_t old_c = l.bank.in_channels();
    std::vector<T> weights(rows.size() * cols.size() * k * k, T(0));
    const auto& old_w = l.bank.weights.value();
    for (std::size_t r = 0; r < rows.size(); ++r) {
        for (std::size_t c = 0; c < cols.size(); ++c) {
            for (std::size_t i = 0; i < k * k; ++i) {
                weights[(r * cols.size() + c) * k * k + i] =
                    old_w[(rows[r] * old_c + cols[c]) * k * k + i];
            }
        }
    }
    ConvLayer<T> out;
    out.bank.weights =
        Tensor<T>::from({rows.size(), cols.size(), k, k}, std::move(weights), true);
    out.bank.layer_index = l.bank.layer_index;
    out.bank.stride = l.bank.stride;
    out.bank.padding = l.bank.padding;
    out.bank.out_h = l.bank.out_h;
    out.bank.out_w = l.bank.out_w;
    out.norm = slice_norm(l.norm, rows);
    for (const auto zr : zero_rows) {
        auto& wv = out.bank.weights.value();
        std::fill(wv.begin() + static_cast<std::ptrdiff_t>(zr * cols.size() * k * k),
                  wv.begin() + static_cast<std::ptrdiff_t>((zr + 1) * cols.size() * k * k),
                  T(0));
        out.norm.gamma.value()[zr] = T(0);
        out.norm.beta.value()[zr] = T(0);
    }
    return out;
}

inline std::vector<std::size_t> mask_survivors(const std::vector<std::uint8_t>& mask) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (mask[i]) out.push_back(i);
    }
    return out;
}

inline std::vector<std::size_t> all_indices(std::size_t n) {
    std::vector<std::size_t> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = i;
    return out;
}

}  // namespace detail

/// Physically removes dropped filters. Layers feeding identity-shortcut
/// junctions keep their channel count (the junction fixes it) and get their
/// dropped rows zeroed instead; everywhere else dropped filters vanish and
/// the consumer's input channels are sliced to the producer's survivors.
/// The result computes the same function as binary-masked forward.
template <typename T>
Network<T> extract(const Network<T>& net, const std::vector<std::vector<std::uint8_t>>& masks) {
    const auto layers = net.scored_layers();
    if (masks.size() != layers.size()) {
        throw structural_error("extract: expected " + std::to_string(layers.size()) +
                               " masks, got " + std::to_string(masks.size()));
    }
    for (std::size_t l = 0; l < masks.size(); ++l) {
        if (masks[l].size() != layers[l]->bank.filters()) {
            throw structural_error("extract: layer " + std::to_string(l) + " has " +
                                   std::to_string(layers[l]->bank.filters()) +
                                   " filters but mask has " + std::to_string(masks[l].size()) +
                                   " entries");
        }
    }
    const auto masked_only = net.masked_only_layers();

    // Rows kept per scored layer, plus which of those rows must be zeroed.
    auto layer_rows = [&](int layer_index) {
        const auto& mask = masks[static_cast<std::size_t>(layer_index)];
        if (masked_only[static_cast<std::size_t>(layer_index)]) {
            std::vector<std::size_t> zero;
            for (std::size_t i = 0; i < mask.size(); ++i) {
                if (!mask[i]) zero.push_back(i);
            }
            return std::pair{detail::all_indices(mask.size()), zero};
        }
        return std::pair{detail::mask_survivors(mask), std::vector<std::size_t>{}};
    };

    Network<T> out;
    out.arch = net.arch;
    out.set_num_scored_layers(net.num_scored_layers());

    std::vector<std::size_t> feed =
        detail::all_indices(static_cast<std::size_t>(net.arch.in_channels));
    {
        auto [rows, zeros] = layer_rows(net.stem.bank.layer_index);
        out.stem = detail::slice_layer(net.stem, rows, feed, zeros);
        feed = std::move(rows);
    }
    for (const auto& l : net.stack) {
        auto [rows, zeros] = layer_rows(l.bank.layer_index);
        out.stack.push_back(detail::slice_layer(l, rows, feed, zeros));
        feed = std::move(rows);
    }
    for (const auto& b : net.blocks) {
        ResidualBlock<T> nb;
        auto [rows1, zeros1] = layer_rows(b.conv1.bank.layer_index);
        nb.conv1 = detail::slice_layer(b.conv1, rows1, feed, zeros1);
        auto [rows2, zeros2] = layer_rows(b.conv2.bank.layer_index);
        nb.conv2 = detail::slice_layer(b.conv2, rows2, rows1, zeros2);
        if (b.projection) {
            // tied to conv2: same surviving rows, same zeroed rows
            nb.projection = detail::slice_layer(*b.projection, rows2, feed, zeros2);
        } else if (rows2.size() != feed.size()) {
            throw structural_error(
                "extract: identity block output (" + std::to_string(rows2.size()) +
                " channels) no longer matches its shortcut (" + std::to_string(feed.size()) +
                " channels)");
        }
        feed = std::move(rows2);
        out.blocks.push_back(std::move(nb));
    }
    {
        const std::size_t classes = net.head_b.numel();
        std::vector<T> hw(feed.size() * classes);
        const auto& old = net.head_w.value();
        for (std::size_t r = 0; r < feed.size(); ++r) {
            for (std::size_t j = 0; j < classes; ++j) hw[r * classes + j] = old[feed[r] * classes + j];
        }
        out.head_w = Tensor<T>::from({feed.size(), classes}, std::move(hw), true);
        out.head_b = net.head_b.clone();
        out.head_b.set_requires_grad(true);
    }
    out.refresh_scored_layer_cache();
    return out;
}

/// A residual branch with a fully dropped conv goes dark as a whole: when
/// either conv of an identity block keeps no filters, both masks collapse to
/// zero and the block degenerates to an identity pass. Projection blocks are
/// left alone; their second conv legitimately consumes a zero-channel input.
struct DeadBranchResult {
    std::vector<std::vector<std::uint8_t>> masks;
    std::vector<int> identity_pass_blocks;
};

template <typename T>
DeadBranchResult propagate_dead_branches(const Network<T>& net,
                                         std::vector<std::vector<std::uint8_t>> masks) {
    DeadBranchResult out;
    auto all_zero = [](const std::vector<std::uint8_t>& m) {
        for (const auto v : m) {
            if (v) return false;
        }
        return true;
    };
    for (std::size_t b = 0; b < net.blocks.size(); ++b) {
        const auto& block = net.blocks[b];
        if (block.has_projection()) continue;
        const auto i1 = static_cast<std::size_t>(block.conv1.bank.layer_index);
        const auto i2 = static_cast<std::size_t>(block.conv2.bank.layer_index);
        if (all_zero(masks[i1]) || all_zero(masks[i2])) {
            std::fill(masks[i1].begin(), masks[i1].end(), 0);
            std::fill(masks[i2].begin(), masks[i2].end(), 0);
            out.identity_pass_blocks.push_back(static_cast<int>(b));
        }
    }
    out.masks = std::move(masks);
    return out;
}

// ---------------------------------------------------------------------------
// Budget reporting
// ---------------------------------------------------------------------------

struct BudgetLayerReport {
    int layer_index = 0;
    std::string name;
    int f_original = 0;
    int f_surviving = 0;
    bool masked_only = false;    // pruned by zero-masking, not structural removal
    bool identity_pass = false;  // belongs to a block whose branch went dark
};

struct BudgetReport {
    std::vector<BudgetLayerReport> layers;
    double threshold = 0.0;
    FlopsAccount dense;        // before pruning
    FlopsAccount masked;       // every dropped filter counted as removed
    FlopsAccount structural;   // only physically removable filters counted
    double keep_ratio = 0.0;
    std::vector<int> identity_pass_blocks;
};

template <typename T>
BudgetReport make_budget_report(const Network<T>& net,
                                const std::vector<std::vector<std::uint8_t>>& masks,
                                double threshold,
                                std::vector<int> identity_pass_blocks = {}) {
    const auto layers = net.scored_layers();
    const auto masked_only = net.masked_only_layers();
    const auto names = net.scored_layer_names();
    BudgetReport report;
    report.threshold = threshold;
    report.identity_pass_blocks = std::move(identity_pass_blocks);
    std::vector<bool> layer_in_dead_block(layers.size(), false);
    for (const int b : report.identity_pass_blocks) {
        const auto& block = net.blocks[static_cast<std::size_t>(b)];
        if (block.conv1.bank.layer_index >= 0) {
            layer_in_dead_block[static_cast<std::size_t>(block.conv1.bank.layer_index)] = true;
        }
        if (block.conv2.bank.layer_index >= 0) {
            layer_in_dead_block[static_cast<std::size_t>(block.conv2.bank.layer_index)] = true;
        }
    }
    std::vector<int> surviving, structural_counts;
    long long total = 0, kept = 0;
    for (std::size_t l = 0; l < layers.size(); ++l) {
        BudgetLayerReport lr;
        lr.layer_index = static_cast<int>(l);
        lr.name = names[l];
        lr.f_original = static_cast<int>(layers[l]->bank.filters());
        lr.f_surviving = 0;
        for (const auto v : masks[l]) lr.f_surviving += v ? 1 : 0;
        lr.masked_only = masked_only[l];
        lr.identity_pass = layer_in_dead_block[l];
        surviving.push_back(lr.f_surviving);
        structural_counts.push_back(masked_only[l] ? lr.f_original : lr.f_surviving);
        total += lr.f_original;
        kept += lr.f_surviving;
        report.layers.push_back(std::move(lr));
    }
    report.dense = count(net, full_survivor_counts(net));
    report.masked = count(net, surviving);
    report.structural = count(net, structural_counts);
    report.keep_ratio = total > 0 ? static_cast<double>(kept) / static_cast<double>(total) : 0.0;
    return report;
}

// ---------------------------------------------------------------------------
// Training schedule
// ---------------------------------------------------------------------------

struct EpochStat {
    int epoch = 0;
    SchedulePhase phase = SchedulePhase::Warmup;
    double loss = 0.0;
    double accuracy = 0.0;
    double keep_ratio = 1.0;
    double mean_score = 1.0;
    double frac_near_0 = 0.0;
    double frac_near_1 = 1.0;
    double threshold = 0.0;  // quantile threshold in effect (reporting only)
};

/// The documented history schema: one row per epoch.
inline std::string history_csv(const std::vector<EpochStat>& history) {
    std::ostringstream os;
    os << "epoch,phase,loss,accuracy,keep_ratio,mean_score,frac_scores_near_0,frac_scores_near_1\n";
    char line[256];
    for (const auto& e : history) {
        std::snprintf(line, sizeof(line), "%d,%s,%.9g,%.6f,%.6f,%.6f,%.6f,%.6f\n", e.epoch,
                      phase_name(e.phase), e.loss, e.accuracy, e.keep_ratio, e.mean_score,
                      e.frac_near_0, e.frac_near_1);
        os << line;
    }
    return os.str();
}

template <typename T>
struct ScheduleResult {
    Network<T> pruned;  // extracted and fine-tuned
    BudgetReport report;
    std::vector<EpochStat> history;
    std::vector<std::vector<std::uint8_t>> masks;  // after dead-branch collapse
    double threshold = 0.0;
    std::vector<std::vector<T>> final_scores;  // analog scores at extraction
};

template <typename T>
void set_attention_requires_grad(std::vector<Attention<T>>& ans, bool on) {
    for (auto& a : ans) {
        for (auto& p : attention_parameters(a)) p.set_requires_grad(on);
    }
}

namespace detail {

template <typename T>
std::vector<Tensor<T>> masks_to_tensors(const std::vector<std::vector<std::uint8_t>>& masks) {
    std::vector<Tensor<T>> out;
    for (const auto& m : masks) {
        std::vector<T> vals(m.size());
        for (std::size_t i = 0; i < m.size(); ++i) vals[i] = m[i] ? T(1) : T(0);
        out.push_back(Tensor<T>::from({m.size()}, std::move(vals)));
    }
    return out;
}

inline std::vector<std::vector<std::size_t>> make_batches(std::size_t n, int batch_size,
                                                          Rng& rng) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    rng.shuffle(order.begin(), order.end());
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t at = 0; at < n; at += static_cast<std::size_t>(batch_size)) {
        const std::size_t end = std::min(n, at + static_cast<std::size_t>(batch_size));
        batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(at),
                             order.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return batches;
}

template <typename T>
struct PooledScoreStats {
    double mean = 1.0;
    double frac_near_0 = 0.0;
    double frac_near_1 = 1.0;
    std::string per_layer_summary;
};

template <typename T>
PooledScoreStats<T> pooled_score_stats(const std::vector<Tensor<T>>& scores) {
    PooledScoreStats<T> st;
    double sum = 0.0;
    std::size_t n = 0, near0 = 0, near1 = 0;
    std::ostringstream per_layer;
    for (std::size_t l = 0; l < scores.size(); ++l) {
        const auto& sv = scores[l].value();
        double lmin = sv.empty() ? 0.0 : sv[0], lmax = lmin, lsum = 0.0;
        for (const T v : sv) {
            const double d = static_cast<double>(v);
            sum += d;
            lsum += d;
            lmin = std::min(lmin, d);
            lmax = std::max(lmax, d);
            ++n;
            if (std::abs(d) <= 0.1) ++near0;
            if (std::abs(d - 1.0) <= 0.1) ++near1;
        }
        per_layer << "layer" << l << "[min=" << lmin << " mean="
                  << (sv.empty() ? 0.0 : lsum / static_cast<double>(sv.size()))
                  << " max=" << lmax << "] ";
    }
    if (n > 0) {
        st.mean = sum / static_cast<double>(n);
        st.frac_near_0 = static_cast<double>(near0) / static_cast<double>(n);
        st.frac_near_1 = static_cast<double>(near1) / static_cast<double>(n);
    }
    st.per_layer_summary = per_layer.str();
    return st;
}

}  // namespace detail

/// Mean loss and accuracy on a dataset under the given score mode (no
/// training, no statistics updates).
template <typename T>
std::pair<double, double> evaluate(Network<T>& net, const DataSet<T>& data,
                                   const std::vector<Tensor<T>>* scores, ScoreMode mode,
                                   int batch_size = 64) {
    double loss_sum = 0.0, acc_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t at = 0; at < data.n; at += static_cast<std::size_t>(batch_size)) {
        const std::size_t end = std::min(data.n, at + static_cast<std::size_t>(batch_size));
        std::vector<std::size_t> idx(end - at);
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = at + i;
        auto [input, labels] = assemble_batch(data, idx);
        Tensor<T> logits = net.forward(input, scores, mode, false);
        loss_sum += cross_entropy(logits, labels).item() * static_cast<double>(idx.size());
        acc_sum += accuracy(logits, labels) * static_cast<double>(idx.size());
        seen += idx.size();
    }
    if (seen == 0) return {0.0, 0.0};
    return {loss_sum / static_cast<double>(seen), acc_sum / static_cast<double>(seen)};
}

template <typename T>
std::pair<double, double> evaluate(Network<T>& net, const DataSet<T>& data,
                                   int batch_size = 64) {
    return evaluate<T>(net, data, nullptr, ScoreMode::off, batch_size);
}

/// Warm-up, alternating score/CNN cycles, extraction, fine-tune. The dense
/// network and attention modules are trained in place; the returned network
/// is the physically extracted, fine-tuned subnetwork.
template <typename T>
ScheduleResult<T> run_schedule(Network<T>& net, std::vector<Attention<T>>& ans,
                               const DataSet<T>& train, const PruningConfig& cfg, Rng& rng,
                               bool augment = false) {
    cfg.validate();
    if (train.n == 0) throw domain_error("run_schedule: empty training set");

    ScheduleResult<T> result;
    int epoch = 0;
    double current_threshold = cfg.theta;

    std::vector<Tensor<T>> an_params;
    for (auto& a : ans) {
        for (auto& p : attention_parameters(a)) an_params.push_back(p);
    }
    SgdMomentum<T> warmup_opt(net.cnn_parameters(), cfg.warmup_opt);
    Adam<T> an_opt(an_params, cfg.an_opt);
    SgdMomentum<T> cnn_opt(net.cnn_parameters(), cfg.cnn_opt);

    auto train_epoch = [&](Network<T>& target, SchedulePhase phase,
                           const std::vector<Tensor<T>>* binary_masks, auto& optimizer,
                           double lr_note) {
        const bool analog = phase == SchedulePhase::TrainAN;
        const bool update_stats = !analog;  // CNN state moves only in CNN phases
        const ScoreMode mode = analog            ? ScoreMode::analog
                               : binary_masks    ? ScoreMode::binary
                                                 : ScoreMode::off;
        double loss_sum = 0.0, acc_sum = 0.0;
        const auto batches = detail::make_batches(train.n, cfg.batch_size, rng);
        for (const auto& idx : batches) {
            auto [input, labels] = assemble_batch(train, idx, augment, &rng);
            GradientTape<T> tape;
            typename GradientTape<T>::Scope scope(tape);
            std::vector<Tensor<T>> scores;
            const std::vector<Tensor<T>>* sptr = binary_masks;
            if (analog) {
                scores = compute_scores(target, ans, cfg.activation);
                sptr = &scores;
            }
            Tensor<T> logits = target.forward(input, sptr, mode, update_stats);
            Tensor<T> loss = analog ? regularized_loss(logits, labels, scores, cfg, target)
                                    : cross_entropy(logits, labels);
            const double lv = static_cast<double>(loss.item());
            if (!std::isfinite(lv)) {
                auto stats = detail::pooled_score_stats(
                    analog ? scores : compute_scores(net, ans, cfg.activation));
                throw divergence_error(
                    std::string("run_schedule: non-finite loss in phase ") + phase_name(phase) +
                    " at epoch " + std::to_string(epoch) + "; scores: " +
                    stats.per_layer_summary + "; last learning rates: an=" +
                    std::to_string(an_opt.learning_rate()) + " phase_lr=" +
                    std::to_string(lr_note));
            }
            tape.backward(loss);
            optimizer.step();
            optimizer.zero_grad();
            loss_sum += lv * static_cast<double>(idx.size());
            acc_sum += accuracy(logits, labels) * static_cast<double>(idx.size());
        }
        return std::pair{loss_sum / static_cast<double>(train.n),
                         acc_sum / static_cast<double>(train.n)};
    };

    auto log_epoch = [&](SchedulePhase phase, double loss, double acc) {
        EpochStat st;
        st.epoch = epoch++;
        st.phase = phase;
        st.loss = loss;
        st.accuracy = acc;
        st.threshold = current_threshold;
        const auto scores = compute_scores(net, ans, cfg.activation);
        const auto stats = detail::pooled_score_stats(scores);
        st.keep_ratio = keep_ratio_of(scores, cfg);
        st.mean_score = stats.mean;
        st.frac_near_0 = stats.frac_near_0;
        st.frac_near_1 = stats.frac_near_1;
        result.history.push_back(st);
    };

    // Warm-up: dense CNN, scores pinned at 1 (score_mode off is the identical
    // graph), score network frozen.
    net.set_cnn_requires_grad(true);
    set_attention_requires_grad(ans, false);
    for (int e = 0; e < cfg.warmup_epochs; ++e) {
        auto [loss, acc] =
            train_epoch(net, SchedulePhase::Warmup, nullptr, warmup_opt, cfg.warmup_opt.lr);
        log_epoch(SchedulePhase::Warmup, loss, acc);
    }

    for (int cycle = 0; cycle < cfg.outer_cycles; ++cycle) {
        // Score-network phase: CNN frozen, analog scores, regularized loss.
        net.set_cnn_requires_grad(false);
        set_attention_requires_grad(ans, true);
        for (int e = 0; e < cfg.an_epochs; ++e) {
            auto [loss, acc] =
                train_epoch(net, SchedulePhase::TrainAN, nullptr, an_opt, cfg.an_opt.lr);
            log_epoch(SchedulePhase::TrainAN, loss, acc);
        }

        // Threshold is recomputed at every AN->CNN transition.
        const auto scores = compute_scores(net, ans, cfg.activation);
        const auto bin = binarize(scores, cfg);
        current_threshold = bin.threshold;
        const auto mask_tensors = detail::masks_to_tensors<T>(bin.masks);

        // CNN phase: scores frozen and binarized, plain classification loss.
        net.set_cnn_requires_grad(true);
        set_attention_requires_grad(ans, false);
        for (int e = 0; e < cfg.cnn_epochs; ++e) {
            auto [loss, acc] =
                train_epoch(net, SchedulePhase::TrainCNN, &mask_tensors, cnn_opt, cfg.cnn_opt.lr);
            log_epoch(SchedulePhase::TrainCNN, loss, acc);
        }
    }

    // Final binarization from the final weights and score network, then
    // physical extraction.
    const auto final_scores = compute_scores(net, ans, cfg.activation);
    auto bin = binarize(final_scores, cfg);
    current_threshold = bin.threshold;
    auto dead = propagate_dead_branches(net, std::move(bin.masks));
    result.report =
        make_budget_report(net, dead.masks, bin.threshold, dead.identity_pass_blocks);
    result.masks = dead.masks;
    result.threshold = bin.threshold;
    for (const auto& s : final_scores) result.final_scores.push_back(s.value());

    Network<T> pruned = extract(net, dead.masks);
    pruned.set_cnn_requires_grad(true);
    SgdMomentum<T> ft_opt(pruned.cnn_parameters(), cfg.finetune_opt);
    const double achieved_keep = result.report.keep_ratio;
    for (int e = 0; e < cfg.finetune_epochs; ++e) {
        auto [loss, acc] =
            train_epoch(pruned, SchedulePhase::Finetune, nullptr, ft_opt, cfg.finetune_opt.lr);
        EpochStat st;
        st.epoch = epoch++;
        st.phase = SchedulePhase::Finetune;
        st.loss = loss;
        st.accuracy = acc;
        st.threshold = current_threshold;
        st.keep_ratio = achieved_keep;
        st.mean_score = 1.0;  // survivors run at full strength, scores removed
        st.frac_near_0 = 0.0;
        st.frac_near_1 = 1.0;
        result.history.push_back(st);
    }
    result.pruned = std::move(pruned);
    return result;
}

}  // namespace attnprune
