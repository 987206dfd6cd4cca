#pragma once

#include <cmath>
#include <variant>
#include <vector>

#include "attnprune/activations.hpp"
#include "attnprune/network.hpp"

namespace attnprune {

/// Per-layer analog importance scores. Values live in [0, 1+eps]; the
/// binarized counterpart is produced by the pruning engine.
template <typename T>
struct ScoreVector {
    Tensor<T> analog;  // length F
    int layer_index = -1;
};

/// Full-correlation score network: one dense matrix mapping the flattened
/// filter bank to one score per filter. Exact but quadratic in bank size.
template <typename T>
struct VanillaAttention {
    Tensor<T> w_f;  // [(F*C*K*K) x F]
};

/// Scaled key/query score network. Filters are the chunks: queries and keys
/// are per-filter projections of the reshaped bank, and scores come from the
/// row-means of their cross-correlation. Scales to wide layers where the
/// vanilla matrix would not.
template <typename T>
struct KQAttention {
    Tensor<T> w_q;  // [(C*K*K) x d]
    Tensor<T> w_k;  // [(C*K*K) x d]
    std::size_t hidden_dim = 1;
    T alpha = T(1);
};

template <typename T>
using Attention = std::variant<VanillaAttention<T>, KQAttention<T>>;

enum class AttentionVariant { vanilla, kq };

template <typename T>
AttentionVariant attention_variant(const Attention<T>& att) {
    return std::holds_alternative<VanillaAttention<T>>(att) ? AttentionVariant::vanilla
                                                            : AttentionVariant::kq;
}

template <typename T>
std::vector<Tensor<T>> attention_parameters(Attention<T>& att) {
    if (auto* v = std::get_if<VanillaAttention<T>>(&att)) return {v->w_f};
    auto& kq = std::get<KQAttention<T>>(att);
    return {kq.w_q, kq.w_k};
}

namespace detail {

/// Score networks read the filter weights as data: gradient flow from scores
/// back into the CNN weights is cut, matching the schedule's freeze of the
/// CNN while the score network trains.
template <typename T>
Tensor<T> detached_weights(const FilterBank<T>& fb) {
    return Tensor<T>::from(fb.weights.shape(), fb.weights.value());
}

}  // namespace detail

/// S = phi(flatten(F) . W_f). With W_f = 0 every pre-activation is 0 and every
/// score is exactly 1: the dense starting point.
template <typename T>
Tensor<T> score_vanilla(const FilterBank<T>& fb, const VanillaAttention<T>& att,
                        const ActivationSpec& act) {
    const std::size_t f = fb.filters();
    const std::size_t flat = fb.weights.numel();
    if (att.w_f.rank() != 2 || att.w_f.dim(0) != flat || att.w_f.dim(1) != f) {
        throw shape_error("score_vanilla: layer " + std::to_string(fb.layer_index) +
                          " expects weight matrix (" + std::to_string(flat) + "x" +
                          std::to_string(f) + "), got " + shape_str(att.w_f.shape()));
    }
    Tensor<T> row = reshape(detail::detached_weights(fb), {1, flat});
    Tensor<T> pre = reshape(matmul(row, att.w_f), {f});
    return apply_activation(pre, act);
}

/// S = phi(mean_rows(Q K^T) / (alpha sqrt(d))) with Q = F W_q and K = F W_k
/// over the bank reshaped to [F x (C*K*K)] in canonical (C, K, K) row-major
/// order.
template <typename T>
Tensor<T> score_kq(const FilterBank<T>& fb, const KQAttention<T>& att,
                   const ActivationSpec& act) {
    const std::size_t f = fb.filters();
    const std::size_t chunk = fb.in_channels() * fb.kernel() * fb.kernel();
    if (att.w_q.rank() != 2 || att.w_q.dim(0) != chunk || att.w_k.rank() != 2 ||
        att.w_k.dim(0) != chunk || att.w_q.dim(1) != att.hidden_dim ||
        att.w_k.dim(1) != att.hidden_dim) {
        throw shape_error("score_kq: layer " + std::to_string(fb.layer_index) +
                          " expects query/key matrices (" + std::to_string(chunk) + "x" +
                          std::to_string(att.hidden_dim) + "), got " +
                          shape_str(att.w_q.shape()) + " and " + shape_str(att.w_k.shape()));
    }
    if (att.alpha <= T(0)) {
        throw domain_error("score_kq: alpha must be positive");
    }
    Tensor<T> bank = reshape(detail::detached_weights(fb), {f, chunk});
    Tensor<T> queries = matmul(bank, att.w_q);
    Tensor<T> keys = matmul(bank, att.w_k);
    Tensor<T> corr = matmul(queries, transpose(keys));  // [F x F]
    Tensor<T> means = reduce_mean_rows(corr);
    const T denom = att.alpha * static_cast<T>(std::sqrt(static_cast<double>(att.hidden_dim)));
    return apply_activation(scale(means, T(1) / denom), act);
}

template <typename T>
Tensor<T> score_layer(const FilterBank<T>& fb, const Attention<T>& att,
                      const ActivationSpec& act) {
    if (const auto* v = std::get_if<VanillaAttention<T>>(&att)) {
        return score_vanilla(fb, *v, act);
    }
    return score_kq(fb, std::get<KQAttention<T>>(att), act);
}

struct AttentionConfig {
    AttentionVariant variant = AttentionVariant::vanilla;
    int hidden_divisor = 1;  // d = max(1, F / hidden_divisor)
    double alpha = 1.0;
    // When set, alpha for every layer in a block becomes 1/F_last of that
    // block (root of the sum of squared filter counts, one term per block).
    bool alpha_per_block = false;
};

/// Dense-start initialization. Vanilla starts at exactly zero so every score
/// is exactly 1; the key/query pair draws from a zero-mean Gaussian with
/// stddev 1/sqrt(C*K*K), keeping pre-activations near 0 and scores near 1.
template <typename T>
Attention<T> init_attention(const AttentionConfig& cfg, const FilterBank<T>& fb, Rng& rng,
                            T alpha_override = T(0)) {
    const std::size_t f = fb.filters();
    const std::size_t chunk = fb.in_channels() * fb.kernel() * fb.kernel();
    if (cfg.variant == AttentionVariant::vanilla) {
        VanillaAttention<T> att;
        att.w_f = Tensor<T>::zeros({fb.weights.numel(), f}, true);
        return att;
    }
    KQAttention<T> att;
    att.hidden_dim = std::max<std::size_t>(
        1, f / static_cast<std::size_t>(std::max(cfg.hidden_divisor, 1)));
    att.alpha = alpha_override > T(0) ? alpha_override : static_cast<T>(cfg.alpha);
    const double stddev = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(chunk, 1)));
    auto draw = [&](Shape shape) {
        std::vector<T> data(shape_numel(shape));
        for (auto& v : data) v = static_cast<T>(rng.normal(0.0, stddev));
        return Tensor<T>::from(std::move(shape), std::move(data), true);
    };
    att.w_q = draw({chunk, att.hidden_dim});
    att.w_k = draw({chunk, att.hidden_dim});
    return att;
}

/// One attention module per scored layer, in layer order.
template <typename T>
std::vector<Attention<T>> init_attention_set(const AttentionConfig& cfg, Network<T>& net,
                                             Rng& rng) {
    std::vector<Attention<T>> out;
    const auto layers = net.scored_layers();
    // 1/alpha per block: root of the squared filter count of the block's last
    // conv (a single term per block), applied to both convs of the block.
    std::vector<T> alphas(layers.size(), T(0));
    if (cfg.alpha_per_block && cfg.variant == AttentionVariant::kq) {
        for (const auto& b : net.blocks) {
            const T a = T(1) / static_cast<T>(std::max<std::size_t>(b.conv2.bank.filters(), 1));
            if (b.conv1.bank.layer_index >= 0) {
                alphas[static_cast<std::size_t>(b.conv1.bank.layer_index)] = a;
            }
            if (b.conv2.bank.layer_index >= 0) {
                alphas[static_cast<std::size_t>(b.conv2.bank.layer_index)] = a;
            }
        }
    }
    for (std::size_t i = 0; i < layers.size(); ++i) {
        out.push_back(init_attention(cfg, layers[i]->bank, rng, alphas[i]));
    }
    return out;
}

/// Analog scores for every scored layer, in layer order.
template <typename T>
std::vector<Tensor<T>> compute_scores(Network<T>& net, const std::vector<Attention<T>>& ans,
                                      const ActivationSpec& act) {
    const auto layers = net.scored_layers();
    if (ans.size() != layers.size()) {
        throw config_error("compute_scores: " + std::to_string(layers.size()) +
                           " scored layers vs " + std::to_string(ans.size()) +
                           " attention modules");
    }
    std::vector<Tensor<T>> scores;
    scores.reserve(layers.size());
    for (std::size_t i = 0; i < layers.size(); ++i) {
        scores.push_back(score_layer(layers[i]->bank, ans[i], act));
    }
    return scores;
}

}  // namespace attnprune
