#pragma once

#include <cstdint>
#include <cstring>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "attnprune/fsio.hpp"
#include "attnprune/pruning.hpp"

namespace attnprune {

using ordered_json = nlohmann::ordered_json;

inline constexpr int kCheckpointFormatVersion = 1;

// ---------------------------------------------------------------------------
// base64 for raw tensor buffers
// ---------------------------------------------------------------------------

namespace detail {

inline constexpr char kB64Alphabet[] =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

inline std::string base64_encode(const std::uint8_t* data, std::size_t n) {
    std::string out;
    out.reserve((n + 2) / 3 * 4);
    for (std::size_t i = 0; i < n; i += 3) {
        std::uint32_t chunk = static_cast<std::uint32_t>(data[i]) << 16;
        if (i + 1 < n) chunk |= static_cast<std::uint32_t>(data[i + 1]) << 8;
        if (i + 2 < n) chunk |= static_cast<std::uint32_t>(data[i + 2]);
        out.push_back(kB64Alphabet[(chunk >> 18) & 63]);
        out.push_back(kB64Alphabet[(chunk >> 12) & 63]);
        out.push_back(i + 1 < n ? kB64Alphabet[(chunk >> 6) & 63] : '=');
        out.push_back(i + 2 < n ? kB64Alphabet[chunk & 63] : '=');
    }
    return out;
}

inline std::vector<std::uint8_t> base64_decode(const std::string& s) {
    auto value_of = [](char c) -> int {
        if (c >= 'A' && c <= 'Z') return c - 'A';
        if (c >= 'a' && c <= 'z') return c - 'a' + 26;
        if (c >= '0' && c <= '9') return c - '0' + 52;
        if (c == '+') return 62;
        if (c == '/') return 63;
        return -1;
    };
    if (s.size() % 4 != 0) throw parse_error("base64: length not a multiple of 4");
    std::vector<std::uint8_t> out;
    out.reserve(s.size() / 4 * 3);
    for (std::size_t i = 0; i < s.size(); i += 4) {
        int vals[4];
        int pad = 0;
        for (int j = 0; j < 4; ++j) {
            const char c = s[i + static_cast<std::size_t>(j)];
            if (c == '=') {
                vals[j] = 0;
                ++pad;
            } else {
                vals[j] = value_of(c);
                if (vals[j] < 0) {
                    throw parse_error("base64: invalid character at offset " +
                                      std::to_string(i + static_cast<std::size_t>(j)));
                }
                if (pad > 0) throw parse_error("base64: data after padding");
            }
        }
        const std::uint32_t chunk = (static_cast<std::uint32_t>(vals[0]) << 18) |
                                    (static_cast<std::uint32_t>(vals[1]) << 12) |
                                    (static_cast<std::uint32_t>(vals[2]) << 6) |
                                    static_cast<std::uint32_t>(vals[3]);
        out.push_back(static_cast<std::uint8_t>((chunk >> 16) & 0xff));
        if (pad < 2) out.push_back(static_cast<std::uint8_t>((chunk >> 8) & 0xff));
        if (pad < 1) out.push_back(static_cast<std::uint8_t>(chunk & 0xff));
    }
    return out;
}

template <typename T>
const char* dtype_name() {
    return sizeof(T) == 8 ? "f64" : "f32";
}

}  // namespace detail

// ---------------------------------------------------------------------------
// tensor <-> json
// ---------------------------------------------------------------------------

template <typename T>
ordered_json tensor_to_json(const Tensor<T>& t) {
    ordered_json j;
    j["shape"] = t.shape();
    j["dtype"] = detail::dtype_name<T>();
    const auto* bytes = reinterpret_cast<const std::uint8_t*>(t.value().data());
    j["data"] = detail::base64_encode(bytes, t.numel() * sizeof(T));
    return j;
}

template <typename T>
Tensor<T> tensor_from_json(const ordered_json& j, bool requires_grad = false) {
    Shape shape = j.at("shape").get<Shape>();
    const std::string dtype = j.at("dtype").get<std::string>();
    const auto bytes = detail::base64_decode(j.at("data").get<std::string>());
    const std::size_t n = shape_numel(shape);
    std::vector<T> data(n);
    auto fill = [&](auto tag) {
        using S = decltype(tag);
        if (bytes.size() != n * sizeof(S)) {
            throw parse_error("tensor: buffer holds " + std::to_string(bytes.size()) +
                              " bytes, shape " + shape_str(shape) + " needs " +
                              std::to_string(n * sizeof(S)));
        }
        std::vector<S> raw(n);
        std::memcpy(raw.data(), bytes.data(), bytes.size());
        for (std::size_t i = 0; i < n; ++i) data[i] = static_cast<T>(raw[i]);
    };
    if (dtype == "f64") {
        fill(double{});
    } else if (dtype == "f32") {
        fill(float{});
    } else {
        throw parse_error("tensor: unknown dtype '" + dtype + "'");
    }
    return Tensor<T>::from(std::move(shape), std::move(data), requires_grad);
}

// ---------------------------------------------------------------------------
// network <-> json
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
ordered_json conv_layer_to_json(const ConvLayer<T>& l) {
    ordered_json j;
    j["layer_index"] = l.bank.layer_index;
    j["stride"] = l.bank.stride;
    j["padding"] = l.bank.padding;
    j["out_h"] = l.bank.out_h;
    j["out_w"] = l.bank.out_w;
    j["weights"] = tensor_to_json(l.bank.weights);
    j["gamma"] = tensor_to_json(l.norm.gamma);
    j["beta"] = tensor_to_json(l.norm.beta);
    j["running_mean"] = l.norm.running_mean;
    j["running_var"] = l.norm.running_var;
    j["momentum"] = static_cast<double>(l.norm.momentum);
    j["eps"] = static_cast<double>(l.norm.eps);
    return j;
}

template <typename T>
ConvLayer<T> conv_layer_from_json(const ordered_json& j) {
    ConvLayer<T> l;
    l.bank.layer_index = j.at("layer_index").get<int>();
    l.bank.stride = j.at("stride").get<std::size_t>();
    l.bank.padding = j.at("padding").get<std::size_t>();
    l.bank.out_h = j.at("out_h").get<std::size_t>();
    l.bank.out_w = j.at("out_w").get<std::size_t>();
    l.bank.weights = tensor_from_json<T>(j.at("weights"), true);
    l.norm.gamma = tensor_from_json<T>(j.at("gamma"), true);
    l.norm.beta = tensor_from_json<T>(j.at("beta"), true);
    l.norm.running_mean = j.at("running_mean").get<std::vector<T>>();
    l.norm.running_var = j.at("running_var").get<std::vector<T>>();
    l.norm.momentum = static_cast<T>(j.at("momentum").get<double>());
    l.norm.eps = static_cast<T>(j.at("eps").get<double>());
    return l;
}

inline ordered_json arch_to_json(const ArchConfig& a) {
    ordered_json j;
    j["kind"] = a.kind;
    j["stage_widths"] = a.stage_widths;
    j["blocks_per_stage"] = a.blocks_per_stage;
    j["stack_widths"] = a.stack_widths;
    j["num_classes"] = a.num_classes;
    j["in_channels"] = a.in_channels;
    j["in_h"] = a.in_h;
    j["in_w"] = a.in_w;
    j["kernel"] = a.kernel;
    return j;
}

inline ArchConfig arch_from_json(const ordered_json& j) {
    ArchConfig a;
    a.kind = j.at("kind").get<std::string>();
    a.stage_widths = j.at("stage_widths").get<std::vector<int>>();
    a.blocks_per_stage = j.at("blocks_per_stage").get<int>();
    a.stack_widths = j.at("stack_widths").get<std::vector<int>>();
    a.num_classes = j.at("num_classes").get<int>();
    a.in_channels = j.at("in_channels").get<int>();
    a.in_h = j.at("in_h").get<int>();
    a.in_w = j.at("in_w").get<int>();
    a.kernel = j.at("kernel").get<int>();
    return a;
}

}  // namespace detail

template <typename T>
ordered_json network_to_json(const Network<T>& net) {
    ordered_json j;
    j["arch"] = detail::arch_to_json(net.arch);
    j["num_scored_layers"] = net.num_scored_layers();
    j["stem"] = detail::conv_layer_to_json(net.stem);
    j["stack"] = ordered_json::array();
    for (const auto& l : net.stack) j["stack"].push_back(detail::conv_layer_to_json(l));
    j["blocks"] = ordered_json::array();
    for (const auto& b : net.blocks) {
        ordered_json bj;
        bj["conv1"] = detail::conv_layer_to_json(b.conv1);
        bj["conv2"] = detail::conv_layer_to_json(b.conv2);
        bj["projection"] =
            b.projection ? detail::conv_layer_to_json(*b.projection) : ordered_json();
        j["blocks"].push_back(std::move(bj));
    }
    j["head_w"] = tensor_to_json(net.head_w);
    j["head_b"] = tensor_to_json(net.head_b);
    return j;
}

template <typename T>
Network<T> network_from_json(const ordered_json& j) {
    Network<T> net;
    net.arch = detail::arch_from_json(j.at("arch"));
    net.set_num_scored_layers(j.at("num_scored_layers").get<int>());
    net.stem = detail::conv_layer_from_json<T>(j.at("stem"));
    for (const auto& lj : j.at("stack")) {
        net.stack.push_back(detail::conv_layer_from_json<T>(lj));
    }
    for (const auto& bj : j.at("blocks")) {
        ResidualBlock<T> b;
        b.conv1 = detail::conv_layer_from_json<T>(bj.at("conv1"));
        b.conv2 = detail::conv_layer_from_json<T>(bj.at("conv2"));
        if (!bj.at("projection").is_null()) {
            b.projection = detail::conv_layer_from_json<T>(bj.at("projection"));
        }
        net.blocks.push_back(std::move(b));
    }
    net.head_w = tensor_from_json<T>(j.at("head_w"), true);
    net.head_b = tensor_from_json<T>(j.at("head_b"), true);
    net.refresh_scored_layer_cache();
    return net;
}

// ---------------------------------------------------------------------------
// attention <-> json
// ---------------------------------------------------------------------------

template <typename T>
ordered_json attention_to_json(const Attention<T>& att) {
    ordered_json j;
    if (const auto* v = std::get_if<VanillaAttention<T>>(&att)) {
        j["variant"] = "vanilla";
        j["w_f"] = tensor_to_json(v->w_f);
        return j;
    }
    const auto& kq = std::get<KQAttention<T>>(att);
    j["variant"] = "kq";
    j["w_q"] = tensor_to_json(kq.w_q);
    j["w_k"] = tensor_to_json(kq.w_k);
    j["hidden_dim"] = kq.hidden_dim;
    j["alpha"] = static_cast<double>(kq.alpha);
    return j;
}

template <typename T>
Attention<T> attention_from_json(const ordered_json& j) {
    const std::string variant = j.at("variant").get<std::string>();
    if (variant == "vanilla") {
        VanillaAttention<T> v;
        v.w_f = tensor_from_json<T>(j.at("w_f"), true);
        return v;
    }
    if (variant != "kq") throw parse_error("attention: unknown variant '" + variant + "'");
    KQAttention<T> kq;
    kq.w_q = tensor_from_json<T>(j.at("w_q"), true);
    kq.w_k = tensor_from_json<T>(j.at("w_k"), true);
    kq.hidden_dim = j.at("hidden_dim").get<std::size_t>();
    kq.alpha = static_cast<T>(j.at("alpha").get<double>());
    return kq;
}

// ---------------------------------------------------------------------------
// unified checkpoint
// ---------------------------------------------------------------------------

struct CheckpointPhase {
    SchedulePhase phase = SchedulePhase::Warmup;
    int cycle_index = 0;
    int epoch_in_phase = 0;
};

/// Everything one run needs to resume or be inspected: architecture, CNN
/// weights and statistics, score-network weights, current analog scores, and
/// the schedule phase. One self-describing JSON file, tensors as base64 raw
/// buffers, versioned.
template <typename T>
struct CheckpointData {
    std::string kind = "dense";  // "dense" | "extracted"
    Network<T> net;
    std::vector<Attention<T>> attention;  // empty once extracted
    std::vector<std::vector<T>> scores;   // analog scores, one vector per layer
    ActivationSpec activation;
    CheckpointPhase phase;
};

template <typename T>
std::string checkpoint_to_string(const CheckpointData<T>& ckpt) {
    ordered_json j;
    j["format_version"] = kCheckpointFormatVersion;
    j["kind"] = ckpt.kind;
    j["precision"] = detail::dtype_name<T>();
    j["network"] = network_to_json(ckpt.net);
    j["attention"] = ordered_json::array();
    for (const auto& a : ckpt.attention) j["attention"].push_back(attention_to_json(a));
    j["scores"] = ckpt.scores;
    ordered_json act;
    act["kind"] = activation_kind_name(ckpt.activation.kind);
    act["a"] = ckpt.activation.a;
    act["b"] = ckpt.activation.b;
    j["activation"] = std::move(act);
    ordered_json ph;
    ph["phase"] = phase_name(ckpt.phase.phase);
    ph["cycle_index"] = ckpt.phase.cycle_index;
    ph["epoch_in_phase"] = ckpt.phase.epoch_in_phase;
    j["phase"] = std::move(ph);
    return j.dump(2) + "\n";
}

template <typename T>
void save_checkpoint(const std::string& path, const CheckpointData<T>& ckpt) {
    write_text_atomic(path, checkpoint_to_string(ckpt));
}

template <typename T>
CheckpointData<T> checkpoint_from_string(const std::string& text) {
    ordered_json j;
    try {
        j = ordered_json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw parse_error(std::string("checkpoint: not valid JSON: ") + e.what());
    }
    const int version = j.value("format_version", -1);
    if (version != kCheckpointFormatVersion) {
        throw version_error("checkpoint: format version " + std::to_string(version) +
                            " unsupported (expected " +
                            std::to_string(kCheckpointFormatVersion) + ")");
    }
    CheckpointData<T> ckpt;
    try {
        ckpt.kind = j.at("kind").get<std::string>();
        ckpt.net = network_from_json<T>(j.at("network"));
        for (const auto& aj : j.at("attention")) {
            ckpt.attention.push_back(attention_from_json<T>(aj));
        }
        ckpt.scores = j.at("scores").get<std::vector<std::vector<T>>>();
        ckpt.activation.kind =
            activation_kind_from_name(j.at("activation").at("kind").get<std::string>());
        ckpt.activation.a = j.at("activation").at("a").get<double>();
        ckpt.activation.b = j.at("activation").at("b").get<double>();
        const std::string ph = j.at("phase").at("phase").get<std::string>();
        for (const auto p : {SchedulePhase::Warmup, SchedulePhase::TrainAN,
                             SchedulePhase::TrainCNN, SchedulePhase::Finetune}) {
            if (ph == phase_name(p)) ckpt.phase.phase = p;
        }
        ckpt.phase.cycle_index = j.at("phase").at("cycle_index").get<int>();
        ckpt.phase.epoch_in_phase = j.at("phase").at("epoch_in_phase").get<int>();
    } catch (const nlohmann::json::exception& e) {
        throw parse_error(std::string("checkpoint: missing or malformed field: ") + e.what());
    }
    return ckpt;
}

template <typename T>
CheckpointData<T> load_checkpoint(const std::string& path) {
    return checkpoint_from_string<T>(read_text(path));
}

/// Precision recorded in a checkpoint without deserializing the tensors.
inline std::string checkpoint_precision(const std::string& path) {
    ordered_json j;
    try {
        j = ordered_json::parse(read_text(path));
    } catch (const nlohmann::json::exception& e) {
        throw parse_error(std::string("checkpoint: not valid JSON: ") + e.what());
    }
    return j.value("precision", "f64");
}

}  // namespace attnprune
