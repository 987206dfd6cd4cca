#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "attnprune/fsio.hpp"
#include "attnprune/pruning.hpp"

namespace attnprune {

// ---------------------------------------------------------------------------
// Iterative-refinement bound checker
// ---------------------------------------------------------------------------

/// Measured refinement ratios of one residual block with and without score
/// multiplication, plus the score band [delta, eps_bound] the bounds use.
/// With scores in [delta, 1+eps] and the scoring applied after the residual
/// addition, the scored ratio must stay within factor (1+eps)/delta of the
/// unscored one on both sides.
struct RefinementMeasurement {
    int block_index = 0;
    double ratio_unscored = 0.0;
    double ratio_scored = 0.0;
    double delta = 0.0;      // min score after clipping
    double eps_bound = 0.0;  // max score, the 1+eps of the band
    int clipped_count = 0;   // entries raised to delta_min
    bool lower_ok = false;
    bool upper_ok = false;

    bool holds() const { return lower_ok && upper_ok; }
};

namespace detail {

template <typename T>
double squared_norm(const Tensor<T>& t) {
    double acc = 0.0;
    for (const T v : t.value()) {
        acc += static_cast<double>(v) * static_cast<double>(v);
    }
    return acc;
}

}  // namespace detail

/// Evaluates both refinement ratios for one identity block. Scores below
/// delta_min are clipped up to it first (the bound's hypothesis needs
/// delta > 0); how many were clipped is reported alongside.
template <typename T>
RefinementMeasurement check_lemma_bounds(Network<T>& net, std::size_t block_index,
                                         const Tensor<T>& input, const Tensor<T>& scores,
                                         T delta_min = T(1e-3)) {
    if (delta_min <= T(0)) throw domain_error("check_lemma_bounds: delta_min must be > 0");
    RefinementMeasurement m;
    m.block_index = static_cast<int>(block_index);

    std::vector<T> clipped = scores.value();
    for (auto& v : clipped) {
        if (v < delta_min) {
            v = delta_min;
            ++m.clipped_count;
        }
    }
    Tensor<T> s = Tensor<T>::from(scores.shape(), clipped);
    m.delta = static_cast<double>(*std::min_element(clipped.begin(), clipped.end()));
    m.eps_bound = static_cast<double>(*std::max_element(clipped.begin(), clipped.end()));

    const double x_norm = detail::squared_norm(input);
    if (x_norm == 0.0) {
        throw domain_error("check_lemma_bounds: degenerate zero input to block " +
                           std::to_string(block_index));
    }
    Tensor<T> branch = net.branch_forward(block_index, input);
    const double f_norm = detail::squared_norm(branch);
    const double sx_norm = detail::squared_norm(pointwise_mul_broadcast(s, input));
    const double sf_norm = detail::squared_norm(pointwise_mul_broadcast(s, branch));

    m.ratio_unscored = f_norm / x_norm;
    m.ratio_scored = sf_norm / sx_norm;
    const double band = m.eps_bound / m.delta;
    const double slack = 1.0 + 1e-12;  // float headroom only
    m.lower_ok = m.ratio_scored * slack >= m.ratio_unscored / band;
    m.upper_ok = m.ratio_scored <= band * m.ratio_unscored * slack;
    return m;
}

// ---------------------------------------------------------------------------
// Score histograms
// ---------------------------------------------------------------------------

struct ScoreHistogram {
    std::vector<double> edges;                    // bins + 1 edges over [0, hi]
    std::vector<std::vector<long long>> per_layer;
    std::vector<long long> pooled;
    double mode_near_one = 1.0;  // center of the modal bin at or above 0.5
    double bimodality = 0.0;     // frac within 0.1 of 0 plus frac within 0.1 of the mode
};

/// Per-layer and pooled score histograms over [0, max(1, max score)], with a
/// bimodality statistic: fraction of scores within 0.1 of 0 plus fraction
/// within 0.1 of the near-1 mode. Committed score distributions push this
/// towards 1; a uniform spread sits near 0.2.
template <typename T>
ScoreHistogram score_histogram(const std::vector<std::vector<T>>& scores_per_layer, int bins) {
    if (bins < 2) throw domain_error("score_histogram: bins must be >= 2");
    ScoreHistogram h;
    double hi = 1.0;
    for (const auto& layer : scores_per_layer) {
        for (const T v : layer) hi = std::max(hi, static_cast<double>(v));
    }
    h.edges.resize(static_cast<std::size_t>(bins) + 1);
    for (int i = 0; i <= bins; ++i) {
        h.edges[static_cast<std::size_t>(i)] = hi * static_cast<double>(i) / bins;
    }
    h.pooled.assign(static_cast<std::size_t>(bins), 0);
    std::size_t total = 0;
    for (const auto& layer : scores_per_layer) {
        std::vector<long long> counts(static_cast<std::size_t>(bins), 0);
        for (const T v : layer) {
            const double d = static_cast<double>(v);
            auto bin = static_cast<std::size_t>(std::min(
                static_cast<double>(bins - 1), std::floor(d / hi * bins)));
            ++counts[bin];
            ++h.pooled[bin];
            ++total;
        }
        h.per_layer.push_back(std::move(counts));
    }
    // modal bin at or above 0.5; ties resolve to the higher center
    long long best = -1;
    for (int b = 0; b < bins; ++b) {
        const double center = (h.edges[static_cast<std::size_t>(b)] +
                               h.edges[static_cast<std::size_t>(b) + 1]) /
                              2.0;
        if (center < 0.5) continue;
        if (h.pooled[static_cast<std::size_t>(b)] >= best) {
            best = h.pooled[static_cast<std::size_t>(b)];
            h.mode_near_one = center;
        }
    }
    std::size_t near0 = 0, near_mode = 0;
    for (const auto& layer : scores_per_layer) {
        for (const T v : layer) {
            const double d = static_cast<double>(v);
            if (std::abs(d) <= 0.1) ++near0;
            if (std::abs(d - h.mode_near_one) <= 0.1) ++near_mode;
        }
    }
    if (total > 0) {
        h.bimodality = static_cast<double>(near0 + near_mode) / static_cast<double>(total);
    }
    return h;
}

inline std::string score_histogram_csv(const ScoreHistogram& h) {
    std::ostringstream os;
    os << "layer,bin_lo,bin_hi,count\n";
    char line[160];
    auto emit = [&](const std::string& layer, const std::vector<long long>& counts) {
        for (std::size_t b = 0; b < counts.size(); ++b) {
            std::snprintf(line, sizeof(line), "%s,%.9g,%.9g,%lld\n", layer.c_str(), h.edges[b],
                          h.edges[b + 1], counts[b]);
            os << line;
        }
    };
    for (std::size_t l = 0; l < h.per_layer.size(); ++l) {
        emit(std::to_string(l), h.per_layer[l]);
    }
    emit("pooled", h.pooled);
    return os.str();
}

// ---------------------------------------------------------------------------
// Exhaustive subnetwork oracle
// ---------------------------------------------------------------------------

struct SubnetEvaluation {
    std::vector<std::vector<std::uint8_t>> masks;
    double loss = 0.0;
};

struct BruteForceResult {
    std::vector<SubnetEvaluation> table;  // every combination, lexicographic
    std::size_t best_index = 0;
};

namespace detail {

inline long long binomial(long long n, long long k) {
    if (k < 0 || k > n) return 0;
    k = std::min(k, n - k);
    long long out = 1;
    for (long long i = 1; i <= k; ++i) out = out * (n - k + i) / i;
    return out;
}

/// Advances a k-subset of {0..n-1} in lexicographic order; false at the end.
inline bool next_combination(std::vector<std::size_t>& idx, std::size_t n) {
    if (idx.empty()) return false;
    const std::size_t k = idx.size();
    std::size_t i = k;
    while (i-- > 0) {
        if (idx[i] < n - k + i) {
            ++idx[i];
            for (std::size_t j = i + 1; j < k; ++j) idx[j] = idx[j - 1] + 1;
            return true;
        }
    }
    return false;
}

}  // namespace detail

/// Evaluates the validation loss of every (F_l choose k_l) mask combination,
/// without retraining, and returns the full table plus the argmin. This is
/// the exhaustive ideal that importance scoring approximates; it is only
/// tractable for tiny networks, hence the combination guard.
template <typename T>
BruteForceResult brute_force_best_subnet(Network<T>& net, const DataSet<T>& data,
                                         const std::vector<int>& keep_counts,
                                         long long guard = 100000) {
    const auto layers = net.scored_layers();
    if (keep_counts.size() != layers.size()) {
        throw domain_error("brute_force_best_subnet: expected " +
                           std::to_string(layers.size()) + " keep counts, got " +
                           std::to_string(keep_counts.size()));
    }
    long long combinations = 1;
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const auto f = static_cast<long long>(layers[l]->bank.filters());
        if (keep_counts[l] < 0 || keep_counts[l] > f) {
            throw domain_error("brute_force_best_subnet: keep count " +
                               std::to_string(keep_counts[l]) + " outside [0, " +
                               std::to_string(f) + "] at layer " + std::to_string(l));
        }
        combinations *= detail::binomial(f, keep_counts[l]);
        if (combinations > guard) {
            throw domain_error("brute_force_best_subnet: " + std::to_string(combinations) +
                               "+ combinations exceed the guard of " + std::to_string(guard));
        }
    }

    std::vector<std::vector<std::size_t>> chosen(layers.size());
    for (std::size_t l = 0; l < layers.size(); ++l) {
        for (int i = 0; i < keep_counts[l]; ++i) chosen[l].push_back(static_cast<std::size_t>(i));
    }

    BruteForceResult result;
    double best_loss = 0.0;
    while (true) {
        SubnetEvaluation eval;
        for (std::size_t l = 0; l < layers.size(); ++l) {
            std::vector<std::uint8_t> mask(layers[l]->bank.filters(), 0);
            for (const auto i : chosen[l]) mask[i] = 1;
            eval.masks.push_back(std::move(mask));
        }
        const auto mask_tensors = detail::masks_to_tensors<T>(eval.masks);
        eval.loss = evaluate(net, data, &mask_tensors, ScoreMode::binary).first;
        if (result.table.empty() || eval.loss < best_loss) {
            best_loss = eval.loss;
            result.best_index = result.table.size();
        }
        result.table.push_back(std::move(eval));

        // odometer over per-layer combinations, last layer fastest
        std::size_t l = layers.size();
        bool advanced = false;
        while (l-- > 0) {
            if (detail::next_combination(chosen[l], layers[l]->bank.filters())) {
                advanced = true;
                break;
            }
            chosen[l].clear();
            for (int i = 0; i < keep_counts[l]; ++i) {
                chosen[l].push_back(static_cast<std::size_t>(i));
            }
        }
        if (!advanced) break;
    }
    return result;
}

/// Percentile of the given mask's loss within the enumerated table:
/// 100 * (#strictly better masks) / (table size - 1). The mask must be one of
/// the enumerated combinations.
inline double loss_percentile(const BruteForceResult& result,
                              const std::vector<std::vector<std::uint8_t>>& masks) {
    const SubnetEvaluation* found = nullptr;
    for (const auto& e : result.table) {
        if (e.masks == masks) {
            found = &e;
            break;
        }
    }
    if (found == nullptr) {
        throw domain_error("loss_percentile: mask is not one of the enumerated combinations");
    }
    std::size_t strictly_better = 0;
    for (const auto& e : result.table) {
        if (e.loss < found->loss) ++strictly_better;
    }
    const std::size_t denom = std::max<std::size_t>(result.table.size() - 1, 1);
    return 100.0 * static_cast<double>(strictly_better) / static_cast<double>(denom);
}

/// Per-layer top-k mask from analog scores (ties keep the earlier filter);
/// the shape of selection the oracle table enumerates.
template <typename T>
std::vector<std::vector<std::uint8_t>> top_k_masks(const std::vector<Tensor<T>>& scores,
                                                   const std::vector<int>& keep_counts) {
    if (scores.size() != keep_counts.size()) {
        throw domain_error("top_k_masks: " + std::to_string(scores.size()) + " score vectors vs " +
                           std::to_string(keep_counts.size()) + " keep counts");
    }
    std::vector<std::vector<std::uint8_t>> masks;
    for (std::size_t l = 0; l < scores.size(); ++l) {
        const auto& sv = scores[l].value();
        std::vector<std::size_t> order(sv.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::stable_sort(order.begin(), order.end(),
                         [&sv](std::size_t a, std::size_t b) { return sv[a] > sv[b]; });
        std::vector<std::uint8_t> mask(sv.size(), 0);
        for (int i = 0; i < keep_counts[l] && i < static_cast<int>(order.size()); ++i) {
            mask[order[static_cast<std::size_t>(i)]] = 1;
        }
        masks.push_back(std::move(mask));
    }
    return masks;
}

// ---------------------------------------------------------------------------
// Budget data emission
// ---------------------------------------------------------------------------

inline std::string budget_csv(const BudgetReport& report) {
    std::ostringstream os;
    os << "layer_index,name,f_original,f_surviving,masked_only,identity_pass\n";
    for (const auto& l : report.layers) {
        os << l.layer_index << "," << l.name << "," << l.f_original << "," << l.f_surviving
           << "," << (l.masked_only ? 1 : 0) << "," << (l.identity_pass ? 1 : 0) << "\n";
    }
    return os.str();
}

inline void emit_budget_data(const BudgetReport& report, const std::string& path) {
    write_text_atomic(path, budget_csv(report));
}

/// Parses budget CSV back into per-layer rows; the round trip is asserted in
/// tests so downstream plotting sees exactly what the report held.
inline std::vector<BudgetLayerReport> parse_budget_csv(const std::string& csv) {
    std::istringstream in(csv);
    std::string line;
    if (!std::getline(in, line) ||
        line != "layer_index,name,f_original,f_surviving,masked_only,identity_pass") {
        throw parse_error("budget csv: bad header '" + line + "'");
    }
    std::vector<BudgetLayerReport> out;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream row(line);
        BudgetLayerReport r;
        std::string field;
        try {
            std::getline(row, field, ',');
            r.layer_index = std::stoi(field);
            std::getline(row, r.name, ',');
            std::getline(row, field, ',');
            r.f_original = std::stoi(field);
            std::getline(row, field, ',');
            r.f_surviving = std::stoi(field);
            std::getline(row, field, ',');
            r.masked_only = field == "1";
            std::getline(row, field, ',');
            r.identity_pass = field == "1";
        } catch (const std::exception&) {
            throw parse_error("budget csv: malformed row at line " + std::to_string(lineno) +
                              ": '" + line + "'");
        }
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace attnprune
