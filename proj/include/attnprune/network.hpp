#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "attnprune/ops.hpp"
#include "attnprune/rng.hpp"

namespace attnprune {

/// One convolutional layer's weights plus shape metadata. layer_index is the
/// position in the network's scored-layer order, or -1 for layers that carry
/// no score of their own (projection shortcuts).
template <typename T>
struct FilterBank {
    Tensor<T> weights;  // [F, C, K, K]
    int layer_index = -1;
    std::size_t stride = 1;
    std::size_t padding = 0;
    std::size_t out_h = 0;  // spatial dims of this layer's output map
    std::size_t out_w = 0;

    std::size_t filters() const { return weights.dim(0); }
    std::size_t in_channels() const { return weights.dim(1); }
    std::size_t kernel() const { return weights.dim(2); }
};

/// Per-channel normalization with running statistics. The statistics enter
/// the forward pass as constants, so normalization is batch-free: gradients
/// never couple samples. Statistics are refreshed from batch moments only
/// when the owning phase trains the CNN.
template <typename T>
struct ChannelNorm {
    Tensor<T> gamma;
    Tensor<T> beta;
    std::vector<T> running_mean;
    std::vector<T> running_var;
    T momentum = T(0.1);
    T eps = T(1e-5);

    static ChannelNorm identity(std::size_t channels) {
        ChannelNorm n;
        n.gamma = Tensor<T>::full({channels}, T(1), true);
        n.beta = Tensor<T>::zeros({channels}, true);
        n.running_mean.assign(channels, T(0));
        n.running_var.assign(channels, T(1));
        return n;
    }

    std::size_t channels() const { return gamma.numel(); }

    std::vector<T> invstd() const {
        std::vector<T> is(running_var.size());
        for (std::size_t i = 0; i < is.size(); ++i) {
            is[i] = T(1) / std::sqrt(running_var[i] + eps);
        }
        return is;
    }

    Tensor<T> forward(const Tensor<T>& x) const {
        return channel_norm(x, gamma, beta, running_mean, invstd());
    }

    /// Folds the batch moments of x into the running statistics. Pure value
    /// computation, never taped.
    void update_stats(const Tensor<T>& x) {
        const bool batched = x.rank() == 4;
        const std::size_t n = batched ? x.dim(0) : 1;
        const std::size_t c = x.dim(batched ? 1 : 0);
        const std::size_t plane = x.dim(batched ? 2 : 1) * x.dim(batched ? 3 : 2);
        const std::size_t count = n * plane;
        if (c != channels() || count == 0) return;
        const auto& xv = x.value();
        for (std::size_t ci = 0; ci < c; ++ci) {
            T m = T(0), sq = T(0);
            for (std::size_t bi = 0; bi < n; ++bi) {
                const std::size_t base = (bi * c + ci) * plane;
                for (std::size_t i = 0; i < plane; ++i) {
                    m += xv[base + i];
                    sq += xv[base + i] * xv[base + i];
                }
            }
            m /= static_cast<T>(count);
            const T var = sq / static_cast<T>(count) - m * m;
            running_mean[ci] = (T(1) - momentum) * running_mean[ci] + momentum * m;
            running_var[ci] =
                (T(1) - momentum) * running_var[ci] + momentum * std::max(var, T(0));
        }
    }
};

template <typename T>
struct ConvLayer {
    FilterBank<T> bank;
    ChannelNorm<T> norm;
};

/// Two 3x3 convolutions around a shortcut. Blocks whose input and output
/// shapes differ carry a 1x1 projection on the shortcut path; the projection
/// has no score of its own and is pruned in lockstep with conv2.
template <typename T>
struct ResidualBlock {
    ConvLayer<T> conv1;
    ConvLayer<T> conv2;
    std::optional<ConvLayer<T>> projection;

    bool has_projection() const { return projection.has_value(); }
};

enum class ScoreMode { off, analog, binary };

struct ArchConfig {
    std::string kind = "resnet";         // "resnet" | "conv_stack"
    std::vector<int> stage_widths = {8, 16, 32};
    int blocks_per_stage = 1;
    std::vector<int> stack_widths;       // conv_stack only; stem is the first entry
    int num_classes = 4;
    int in_channels = 3;
    int in_h = 16;
    int in_w = 16;
    int kernel = 3;

    void validate() const {
        if (kind != "resnet" && kind != "conv_stack") {
            throw config_error("arch.kind must be 'resnet' or 'conv_stack', got '" + kind + "'");
        }
        if (kind == "resnet" && stage_widths.empty()) {
            throw config_error("arch.stage_widths must not be empty");
        }
        if (kind == "conv_stack" && stack_widths.empty()) {
            throw config_error("arch.stack_widths must not be empty");
        }
        if (blocks_per_stage < 1) throw config_error("arch.blocks_per_stage must be >= 1");
        if (num_classes < 2) throw config_error("arch.num_classes must be >= 2");
        if (in_channels < 1 || in_h < 1 || in_w < 1) {
            throw config_error("arch.image dims must be positive");
        }
        if (kernel < 1 || kernel > std::min(in_h, in_w)) {
            throw config_error("arch.kernel does not fit the input image");
        }
        for (const int w : stage_widths) {
            if (w < 1) throw config_error("arch.stage_widths entries must be >= 1");
        }
        for (const int w : stack_widths) {
            if (w < 1) throw config_error("arch.stack_widths entries must be >= 1");
        }
    }
};

/// The prunable CNN: a stem convolution, then either a plain convolution
/// chain (tiny test nets) or residual stages, then global average pooling
/// and a linear classifier.
template <typename T>
class Network {
public:
    ConvLayer<T> stem;
    std::vector<ConvLayer<T>> stack;
    std::vector<ResidualBlock<T>> blocks;
    Tensor<T> head_w;  // [C_final, num_classes]
    Tensor<T> head_b;  // [num_classes]
    ArchConfig arch;

    Network() = default;
    Network(Network&&) = default;
    Network& operator=(Network&&) = default;
    Network(const Network&) = delete;
    Network& operator=(const Network&) = delete;

    /// Number of scored (prunable) layers, L.
    int num_scored_layers() const { return num_scored_; }
    void set_num_scored_layers(int l) { num_scored_ = l; }

    std::vector<ConvLayer<T>*> scored_layers() {
        std::vector<ConvLayer<T>*> out(static_cast<std::size_t>(num_scored_), nullptr);
        auto place = [&](ConvLayer<T>& l) {
            if (l.bank.layer_index >= 0) out[static_cast<std::size_t>(l.bank.layer_index)] = &l;
        };
        place(stem);
        for (auto& l : stack) place(l);
        for (auto& b : blocks) {
            place(b.conv1);
            place(b.conv2);
        }
        return out;
    }
    std::vector<const ConvLayer<T>*> scored_layers() const {
        auto ptrs = const_cast<Network*>(this)->scored_layers();
        return {ptrs.begin(), ptrs.end()};
    }

    /// Every trainable CNN tensor: conv weights, norm affine terms, head.
    std::vector<Tensor<T>> cnn_parameters() {
        std::vector<Tensor<T>> out;
        auto push_layer = [&](ConvLayer<T>& l) {
            out.push_back(l.bank.weights);
            out.push_back(l.norm.gamma);
            out.push_back(l.norm.beta);
        };
        push_layer(stem);
        for (auto& l : stack) push_layer(l);
        for (auto& b : blocks) {
            push_layer(b.conv1);
            push_layer(b.conv2);
            if (b.projection) push_layer(*b.projection);
        }
        out.push_back(head_w);
        out.push_back(head_b);
        return out;
    }

    void set_cnn_requires_grad(bool on) {
        for (auto& p : cnn_parameters()) p.set_requires_grad(on);
    }

    /// Forward pass. scores must hold one length-F vector per scored layer for
    /// the analog and binary modes (binary masks are 0/1-valued tensors); in
    /// off mode no score multiplication happens at all.
    Tensor<T> forward(const Tensor<T>& input, const std::vector<Tensor<T>>* scores,
                      ScoreMode mode, bool update_norm_stats = false) {
        if (mode != ScoreMode::off) {
            if (scores == nullptr || static_cast<int>(scores->size()) != num_scored_) {
                throw shape_error("forward: expected " + std::to_string(num_scored_) +
                                  " score vectors, got " +
                                  std::to_string(scores ? scores->size() : 0));
            }
            for (int li = 0; li < num_scored_; ++li) {
                const auto& s = (*scores)[static_cast<std::size_t>(li)];
                const std::size_t f = scored_layer_filters_[static_cast<std::size_t>(li)];
                if (s.rank() != 1 || s.dim(0) != f) {
                    throw shape_error("forward: layer " + std::to_string(li) + " expects " +
                                      std::to_string(f) + " scores, got " +
                                      shape_str(s.shape()));
                }
            }
        }
        auto maybe_mul = [&](Tensor<T> x, int layer_index) {
            if (mode == ScoreMode::off || layer_index < 0) return x;
            return pointwise_mul_broadcast((*scores)[static_cast<std::size_t>(layer_index)], x);
        };
        auto conv_unit = [&](ConvLayer<T>& l, const Tensor<T>& x) {
            Tensor<T> pre = conv2d(x, l.bank.weights, l.bank.stride, l.bank.padding);
            if (update_norm_stats) l.norm.update_stats(pre);
            return l.norm.forward(pre);
        };

        Tensor<T> h = relu(conv_unit(stem, input));
        h = maybe_mul(std::move(h), stem.bank.layer_index);
        for (auto& l : stack) {
            h = relu(conv_unit(l, h));
            h = maybe_mul(std::move(h), l.bank.layer_index);
        }
        for (auto& b : blocks) {
            Tensor<T> inner = relu(conv_unit(b.conv1, h));
            inner = maybe_mul(std::move(inner), b.conv1.bank.layer_index);
            Tensor<T> branch = conv_unit(b.conv2, inner);
            Tensor<T> shortcut =
                b.projection ? conv_unit(*b.projection, h) : h;
            Tensor<T> joined;
            if (b.projection) {
                // The projection carries the same output channels as conv2, so
                // conv2's score covers their sum; anything else would make the
                // masked and physically extracted networks disagree.
                joined = maybe_mul(add(branch, shortcut), b.conv2.bank.layer_index);
            } else {
                // Identity shortcuts are never score-multiplied.
                joined = add(maybe_mul(std::move(branch), b.conv2.bank.layer_index), shortcut);
            }
            h = relu(joined);
        }
        Tensor<T> pooled = global_average_pool(h);
        if (pooled.rank() == 1) pooled = reshape(pooled, {1, pooled.numel()});
        return linear(pooled, head_w, head_b);
    }

    /// The residual branch of one block without scores or shortcut: the f_i in
    /// x_{i+1} = x_i + f_i(x_i). Only meaningful for shape-preserving blocks.
    Tensor<T> branch_forward(std::size_t block_index, const Tensor<T>& x) {
        if (block_index >= blocks.size()) {
            throw domain_error("branch_forward: block " + std::to_string(block_index) +
                               " out of range");
        }
        auto& b = blocks[block_index];
        if (b.has_projection()) {
            throw domain_error("branch_forward: block " + std::to_string(block_index) +
                               " changes shape; the refinement ratio needs an identity block");
        }
        auto conv_unit = [&](ConvLayer<T>& l, const Tensor<T>& in) {
            return l.norm.forward(conv2d(in, l.bank.weights, l.bank.stride, l.bank.padding));
        };
        return conv_unit(b.conv2, relu(conv_unit(b.conv1, x)));
    }

    void refresh_scored_layer_cache() {
        scored_layer_filters_.assign(static_cast<std::size_t>(num_scored_), 0);
        for (const auto* l : scored_layers()) {
            if (l != nullptr) {
                scored_layer_filters_[static_cast<std::size_t>(l->bank.layer_index)] =
                    l->bank.filters();
            }
        }
    }

    /// Per scored layer: true when the layer's output feeds an identity
    /// shortcut junction, so its filters may only be masked to zero, never
    /// structurally removed (the junction fixes the channel count).
    std::vector<bool> masked_only_layers() const {
        std::vector<bool> out(static_cast<std::size_t>(num_scored_), false);
        if (blocks.empty()) return out;
        auto mark = [&](int layer_index) {
            if (layer_index >= 0) out[static_cast<std::size_t>(layer_index)] = true;
        };
        // stem feeds block 0's shortcut
        if (!blocks.front().has_projection()) mark(stem.bank.layer_index);
        for (std::size_t b = 0; b < blocks.size(); ++b) {
            const bool own_identity = !blocks[b].has_projection();
            const bool next_identity =
                b + 1 < blocks.size() && !blocks[b + 1].has_projection();
            if (own_identity || next_identity) mark(blocks[b].conv2.bank.layer_index);
        }
        return out;
    }

    /// Names for reporting, indexed by scored layer.
    std::vector<std::string> scored_layer_names() const {
        std::vector<std::string> names(static_cast<std::size_t>(num_scored_));
        auto put = [&](int idx, std::string n) {
            if (idx >= 0) names[static_cast<std::size_t>(idx)] = std::move(n);
        };
        put(stem.bank.layer_index, "stem");
        for (std::size_t i = 0; i < stack.size(); ++i) {
            put(stack[i].bank.layer_index, "stack" + std::to_string(i));
        }
        for (std::size_t b = 0; b < blocks.size(); ++b) {
            put(blocks[b].conv1.bank.layer_index, "block" + std::to_string(b) + ".conv1");
            put(blocks[b].conv2.bank.layer_index, "block" + std::to_string(b) + ".conv2");
        }
        return names;
    }

private:
    int num_scored_ = 0;
    std::vector<std::size_t> scored_layer_filters_;
};

namespace detail {

template <typename T>
Tensor<T> he_init(Shape shape, Rng& rng) {
    const std::size_t fan_in = shape.size() == 4 ? shape[1] * shape[2] * shape[3] : shape[0];
    const double stddev = std::sqrt(2.0 / static_cast<double>(std::max<std::size_t>(fan_in, 1)));
    std::vector<T> data(shape_numel(shape));
    for (auto& v : data) v = static_cast<T>(rng.normal(0.0, stddev));
    return Tensor<T>::from(std::move(shape), std::move(data), true);
}

template <typename T>
ConvLayer<T> make_conv(std::size_t f, std::size_t c, std::size_t k, std::size_t stride,
                       std::size_t padding, int layer_index, std::size_t in_h, std::size_t in_w,
                       Rng& rng) {
    ConvLayer<T> l;
    l.bank.weights = he_init<T>({f, c, k, k}, rng);
    l.bank.layer_index = layer_index;
    l.bank.stride = stride;
    l.bank.padding = padding;
    l.bank.out_h = conv_out_extent(in_h, k, stride, padding);
    l.bank.out_w = conv_out_extent(in_w, k, stride, padding);
    l.norm = ChannelNorm<T>::identity(f);
    return l;
}

}  // namespace detail

template <typename T>
Network<T> build_network(const ArchConfig& arch, Rng& rng) {
    arch.validate();
    Network<T> net;
    net.arch = arch;
    const std::size_t k = static_cast<std::size_t>(arch.kernel);
    const std::size_t pad = k / 2;
    int next_index = 0;
    std::size_t h = static_cast<std::size_t>(arch.in_h);
    std::size_t w = static_cast<std::size_t>(arch.in_w);
    std::size_t channels = static_cast<std::size_t>(arch.in_channels);

    if (arch.kind == "conv_stack") {
        const std::size_t stem_f = static_cast<std::size_t>(arch.stack_widths.front());
        net.stem = detail::make_conv<T>(stem_f, channels, k, 1, pad, next_index++, h, w, rng);
        channels = stem_f;
        h = net.stem.bank.out_h;
        w = net.stem.bank.out_w;
        for (std::size_t i = 1; i < arch.stack_widths.size(); ++i) {
            const std::size_t f = static_cast<std::size_t>(arch.stack_widths[i]);
            net.stack.push_back(detail::make_conv<T>(f, channels, k, 1, pad, next_index++, h, w, rng));
            channels = f;
            h = net.stack.back().bank.out_h;
            w = net.stack.back().bank.out_w;
        }
    } else {
        const std::size_t stem_f = static_cast<std::size_t>(arch.stage_widths.front());
        net.stem = detail::make_conv<T>(stem_f, channels, k, 1, pad, next_index++, h, w, rng);
        channels = stem_f;
        h = net.stem.bank.out_h;
        w = net.stem.bank.out_w;
        for (std::size_t s = 0; s < arch.stage_widths.size(); ++s) {
            const std::size_t width = static_cast<std::size_t>(arch.stage_widths[s]);
            for (int bi = 0; bi < arch.blocks_per_stage; ++bi) {
                const bool first_in_stage = bi == 0;
                const std::size_t stride = (first_in_stage && s > 0) ? 2 : 1;
                const bool needs_projection = stride != 1 || width != channels;
                ResidualBlock<T> block;
                block.conv1 =
                    detail::make_conv<T>(width, channels, k, stride, pad, next_index++, h, w, rng);
                const std::size_t bh = block.conv1.bank.out_h;
                const std::size_t bw = block.conv1.bank.out_w;
                block.conv2 =
                    detail::make_conv<T>(width, width, k, 1, pad, next_index++, bh, bw, rng);
                if (needs_projection) {
                    block.projection =
                        detail::make_conv<T>(width, channels, 1, stride, 0, -1, h, w, rng);
                }
                channels = width;
                h = bh;
                w = bw;
                net.blocks.push_back(std::move(block));
            }
        }
    }

    const std::size_t classes = static_cast<std::size_t>(arch.num_classes);
    const double head_std = std::sqrt(1.0 / static_cast<double>(std::max<std::size_t>(channels, 1)));
    std::vector<T> hw(channels * classes);
    for (auto& v : hw) v = static_cast<T>(rng.normal(0.0, head_std));
    net.head_w = Tensor<T>::from({channels, classes}, std::move(hw), true);
    net.head_b = Tensor<T>::zeros({classes}, true);
    net.set_num_scored_layers(next_index);
    net.refresh_scored_layer_cache();
    return net;
}

// ---------------------------------------------------------------------------
// Parameter and flops accounting
// ---------------------------------------------------------------------------

struct LayerCount {
    std::string name;
    int layer_index;  // -1 for unscored layers
    long long params = 0;
    long long flops = 0;
};

struct FlopsAccount {
    std::vector<LayerCount> layers;  // convolutions only
    long long total_params = 0;
    long long total_flops = 0;
    long long head_params = 0;
    long long head_flops = 0;
};

/// Exact integer params/flops with every scored layer's filter count replaced
/// by its surviving count, and input channels replaced by the survivor count
/// of the feeding layer. Projections are tied to their block's conv2.
template <typename T>
FlopsAccount count(const Network<T>& net, const std::vector<int>& surviving) {
    if (static_cast<int>(surviving.size()) != net.num_scored_layers()) {
        throw domain_error("count: expected " + std::to_string(net.num_scored_layers()) +
                           " surviving counts, got " + std::to_string(surviving.size()));
    }
    const auto scored = net.scored_layers();
    for (std::size_t i = 0; i < surviving.size(); ++i) {
        const int f = static_cast<int>(scored[i]->bank.filters());
        if (surviving[i] < 0 || surviving[i] > f) {
            throw domain_error("count: layer " + std::to_string(i) + " surviving count " +
                               std::to_string(surviving[i]) + " outside [0, " +
                               std::to_string(f) + "]");
        }
    }
    auto eff = [&](int layer_index) {
        return static_cast<long long>(surviving[static_cast<std::size_t>(layer_index)]);
    };
    FlopsAccount acct;
    auto add_layer = [&](const std::string& name, const FilterBank<T>& bank, long long in_c,
                         long long out_f) {
        const long long k = static_cast<long long>(bank.kernel());
        LayerCount lc;
        lc.name = name;
        lc.layer_index = bank.layer_index;
        lc.params = in_c * out_f * k * k;
        lc.flops = lc.params * static_cast<long long>(bank.out_h) *
                   static_cast<long long>(bank.out_w);
        acct.total_params += lc.params;
        acct.total_flops += lc.flops;
        acct.layers.push_back(std::move(lc));
    };

    long long feed = net.arch.in_channels;
    add_layer("stem", net.stem.bank, feed, eff(net.stem.bank.layer_index));
    feed = eff(net.stem.bank.layer_index);
    for (std::size_t i = 0; i < net.stack.size(); ++i) {
        const auto& bank = net.stack[i].bank;
        add_layer("stack" + std::to_string(i), bank, feed, eff(bank.layer_index));
        feed = eff(bank.layer_index);
    }
    for (std::size_t b = 0; b < net.blocks.size(); ++b) {
        const auto& block = net.blocks[b];
        const std::string prefix = "block" + std::to_string(b);
        const long long c1 = eff(block.conv1.bank.layer_index);
        const long long c2 = eff(block.conv2.bank.layer_index);
        add_layer(prefix + ".conv1", block.conv1.bank, feed, c1);
        add_layer(prefix + ".conv2", block.conv2.bank, c1, c2);
        if (block.projection) {
            add_layer(prefix + ".projection", block.projection->bank, feed, c2);
        }
        feed = c2;
    }
    acct.head_params = feed * net.arch.num_classes + net.arch.num_classes;
    acct.head_flops = feed * net.arch.num_classes;
    return acct;
}

/// Surviving counts equal to the full filter counts (the dense network).
template <typename T>
std::vector<int> full_survivor_counts(const Network<T>& net) {
    std::vector<int> out;
    for (const auto* l : net.scored_layers()) {
        out.push_back(static_cast<int>(l->bank.filters()));
    }
    return out;
}

}  // namespace attnprune
