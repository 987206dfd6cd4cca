#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "attnprune/errors.hpp"
#include "attnprune/rng.hpp"
#include "attnprune/tensor.hpp"

namespace attnprune {

struct DatasetSpec {
    std::string kind = "synthetic";  // "synthetic" | "cifar10_subset"
    std::string path;                // cifar10_subset: one *.bin batch file
    int num_classes = 4;
    int samples_per_class = 100;
    int channels = 3;
    int height = 16;
    int width = 16;
    std::uint64_t seed = 0;          // split / subset-selection seed
    double separation = 1.0;         // synthetic: template magnitude
    double noise = 0.6;              // synthetic: per-pixel noise stddev
    double val_fraction = 0.2;
    bool augment = false;            // random crop (pad 4) + horizontal flip

    void validate() const {
        if (kind != "synthetic" && kind != "cifar10_subset") {
            throw config_error("dataset.kind must be 'synthetic' or 'cifar10_subset', got '" +
                               kind + "'");
        }
        if (kind == "cifar10_subset" && path.empty()) {
            throw config_error("dataset.path is required for cifar10_subset");
        }
        if (kind == "cifar10_subset" &&
            (channels != 3 || height != 32 || width != 32 || num_classes > 10)) {
            throw config_error("dataset: cifar10_subset is 3x32x32 with at most 10 classes");
        }
        if (num_classes < 2) throw config_error("dataset.num_classes must be >= 2");
        if (samples_per_class < 1) throw config_error("dataset.samples_per_class must be >= 1");
        if (channels < 1 || height < 1 || width < 1) {
            throw config_error("dataset.image dims must be positive");
        }
        if (val_fraction < 0.0 || val_fraction >= 1.0) {
            throw config_error("dataset.val_fraction must be in [0, 1)");
        }
        if (noise < 0.0) throw config_error("dataset.noise must be >= 0");
    }
};

/// Flat image store: images holds n * c * h * w values sample-major.
template <typename T>
struct DataSet {
    std::size_t n = 0, c = 0, h = 0, w = 0;
    std::vector<T> images;
    std::vector<int> labels;

    std::size_t sample_size() const { return c * h * w; }
};

// ---------------------------------------------------------------------------
// Synthetic class-conditional blobs
// ---------------------------------------------------------------------------

namespace detail {

/// 3x3 box blur, replicated edges; applied twice the raw noise becomes a
/// smooth per-class template that a 3x3 convnet can pick up quickly.
template <typename T>
void box_blur(std::vector<T>& img, int c, int h, int w) {
    std::vector<T> out(img.size());
    for (int ci = 0; ci < c; ++ci) {
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                T acc = T(0);
                for (int dy = -1; dy <= 1; ++dy) {
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int yy = std::min(std::max(y + dy, 0), h - 1);
                        const int xx = std::min(std::max(x + dx, 0), w - 1);
                        acc += img[(ci * h + yy) * w + xx];
                    }
                }
                out[(ci * h + y) * w + x] = acc / T(9);
            }
        }
    }
    img = std::move(out);
}

}  // namespace detail

/// Class-conditional Gaussian blob images: a fixed smooth template per class
/// plus per-sample noise. Sized so the toy networks reach high accuracy in
/// minutes on a CPU.
template <typename T>
std::pair<DataSet<T>, DataSet<T>> make_synthetic(const DatasetSpec& spec, Rng& rng) {
    spec.validate();
    const int c = spec.channels, h = spec.height, w = spec.width;
    const std::size_t pix = static_cast<std::size_t>(c) * h * w;

    std::vector<std::vector<T>> templates;
    for (int cls = 0; cls < spec.num_classes; ++cls) {
        std::vector<T> tpl(pix);
        for (auto& v : tpl) v = static_cast<T>(rng.normal());
        detail::box_blur(tpl, c, h, w);
        detail::box_blur(tpl, c, h, w);
        T mean = T(0), sq = T(0);
        for (const T v : tpl) {
            mean += v;
            sq += v * v;
        }
        mean /= static_cast<T>(pix);
        const T stddev = std::sqrt(std::max(sq / static_cast<T>(pix) - mean * mean, T(1e-12)));
        for (auto& v : tpl) v = (v - mean) / stddev * static_cast<T>(spec.separation);
        templates.push_back(std::move(tpl));
    }

    const int val_per_class = static_cast<int>(spec.val_fraction * spec.samples_per_class);
    DataSet<T> train, val;
    train.c = val.c = static_cast<std::size_t>(c);
    train.h = val.h = static_cast<std::size_t>(h);
    train.w = val.w = static_cast<std::size_t>(w);
    for (int cls = 0; cls < spec.num_classes; ++cls) {
        for (int i = 0; i < spec.samples_per_class; ++i) {
            DataSet<T>& dst = i < val_per_class ? val : train;
            for (std::size_t j = 0; j < pix; ++j) {
                dst.images.push_back(templates[static_cast<std::size_t>(cls)][j] +
                                     static_cast<T>(rng.normal(0.0, spec.noise)));
            }
            dst.labels.push_back(cls);
            ++dst.n;
        }
    }
    // deterministic interleave so mini-batches are class-mixed from the start
    std::vector<std::size_t> order(train.n);
    for (std::size_t i = 0; i < train.n; ++i) order[i] = i;
    rng.shuffle(order.begin(), order.end());
    DataSet<T> shuffled;
    shuffled.n = train.n;
    shuffled.c = train.c;
    shuffled.h = train.h;
    shuffled.w = train.w;
    shuffled.images.reserve(train.images.size());
    for (const std::size_t idx : order) {
        const auto* src = train.images.data() + idx * pix;
        shuffled.images.insert(shuffled.images.end(), src, src + pix);
        shuffled.labels.push_back(train.labels[idx]);
    }
    return {std::move(shuffled), std::move(val)};
}

// ---------------------------------------------------------------------------
// CIFAR-10 binary format
// ---------------------------------------------------------------------------

/// One record of the CIFAR-10 binary layout: a label byte then 3072 pixel
/// bytes in row-major R, G, B planes.
struct Cifar10Record {
    std::uint8_t label = 0;
    std::array<std::uint8_t, 3072> pixels{};
};

inline constexpr std::size_t kCifarRecordBytes = 3073;
inline constexpr double kCifarMean[3] = {0.4914, 0.4822, 0.4465};
inline constexpr double kCifarStd[3] = {0.2470, 0.2435, 0.2616};

inline std::vector<Cifar10Record> decode_cifar10(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() % kCifarRecordBytes != 0) {
        throw parse_error("cifar10: file size " + std::to_string(bytes.size()) +
                          " is not a multiple of " + std::to_string(kCifarRecordBytes) +
                          "; truncated record at byte offset " +
                          std::to_string(bytes.size() - bytes.size() % kCifarRecordBytes));
    }
    std::vector<Cifar10Record> records(bytes.size() / kCifarRecordBytes);
    for (std::size_t r = 0; r < records.size(); ++r) {
        const std::size_t off = r * kCifarRecordBytes;
        const std::uint8_t label = bytes[off];
        if (label >= 10) {
            throw parse_error("cifar10: label byte " + std::to_string(int(label)) +
                              " out of range at byte offset " + std::to_string(off));
        }
        records[r].label = label;
        std::copy(bytes.begin() + static_cast<std::ptrdiff_t>(off + 1),
                  bytes.begin() + static_cast<std::ptrdiff_t>(off + kCifarRecordBytes),
                  records[r].pixels.begin());
    }
    return records;
}

inline std::vector<std::uint8_t> encode_cifar10(const std::vector<Cifar10Record>& records) {
    std::vector<std::uint8_t> bytes;
    bytes.reserve(records.size() * kCifarRecordBytes);
    for (const auto& r : records) {
        bytes.push_back(r.label);
        bytes.insert(bytes.end(), r.pixels.begin(), r.pixels.end());
    }
    return bytes;
}

inline std::vector<Cifar10Record> load_cifar10_records(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cifar10: cannot open '" + path + "'");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return decode_cifar10(bytes);
}

/// Deterministic per-class subset, normalized with the fixed per-channel
/// constants above. Selection shuffles each class's record indices with the
/// split seed and takes the first samples_per_class.
template <typename T>
std::pair<DataSet<T>, DataSet<T>> cifar10_subset(const std::vector<Cifar10Record>& records,
                                                 const DatasetSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    std::vector<std::vector<std::size_t>> by_class(10);
    for (std::size_t i = 0; i < records.size(); ++i) {
        by_class[records[i].label].push_back(i);
    }
    const int val_per_class = static_cast<int>(spec.val_fraction * spec.samples_per_class);
    DataSet<T> train, val;
    train.c = val.c = 3;
    train.h = val.h = 32;
    train.w = val.w = 32;
    for (int cls = 0; cls < spec.num_classes; ++cls) {
        auto& pool = by_class[static_cast<std::size_t>(cls)];
        if (static_cast<int>(pool.size()) < spec.samples_per_class) {
            throw domain_error("cifar10: class " + std::to_string(cls) + " has only " +
                               std::to_string(pool.size()) + " records, need " +
                               std::to_string(spec.samples_per_class));
        }
        rng.shuffle(pool.begin(), pool.end());
        for (int i = 0; i < spec.samples_per_class; ++i) {
            DataSet<T>& dst = i < val_per_class ? val : train;
            const auto& rec = records[pool[static_cast<std::size_t>(i)]];
            for (int ch = 0; ch < 3; ++ch) {
                for (int p = 0; p < 1024; ++p) {
                    const double raw = rec.pixels[static_cast<std::size_t>(ch * 1024 + p)] / 255.0;
                    dst.images.push_back(static_cast<T>((raw - kCifarMean[ch]) / kCifarStd[ch]));
                }
            }
            dst.labels.push_back(cls);
            ++dst.n;
        }
    }
    return {std::move(train), std::move(val)};
}

template <typename T>
std::pair<DataSet<T>, DataSet<T>> load_dataset(const DatasetSpec& spec, Rng& rng) {
    spec.validate();
    if (spec.kind == "synthetic") return make_synthetic<T>(spec, rng);
    return cifar10_subset<T>(load_cifar10_records(spec.path), spec);
}

// ---------------------------------------------------------------------------
// Batch assembly
// ---------------------------------------------------------------------------

/// Copies the indexed samples into one [N,C,H,W] tensor. With augment set,
/// each sample is randomly flipped and shifted by up to 4 pixels (zero fill).
template <typename T>
std::pair<Tensor<T>, std::vector<int>> assemble_batch(const DataSet<T>& data,
                                                      const std::vector<std::size_t>& indices,
                                                      bool augment = false, Rng* rng = nullptr) {
    const std::size_t pix = data.sample_size();
    std::vector<T> buf(indices.size() * pix);
    std::vector<int> labels(indices.size());
    const int h = static_cast<int>(data.h), w = static_cast<int>(data.w),
              c = static_cast<int>(data.c);
    for (std::size_t bi = 0; bi < indices.size(); ++bi) {
        const T* src = data.images.data() + indices[bi] * pix;
        T* dst = buf.data() + bi * pix;
        labels[bi] = data.labels[indices[bi]];
        if (!augment || rng == nullptr) {
            std::copy(src, src + pix, dst);
            continue;
        }
        const bool flip = rng->uniform() < 0.5;
        const int dy = static_cast<int>(rng->uniform_int(-4, 4));
        const int dx = static_cast<int>(rng->uniform_int(-4, 4));
        for (int ci = 0; ci < c; ++ci) {
            for (int y = 0; y < h; ++y) {
                for (int x = 0; x < w; ++x) {
                    const int sy = y + dy;
                    int sx = x + dx;
                    if (flip) sx = w - 1 - sx;
                    T v = T(0);
                    if (sy >= 0 && sy < h && sx >= 0 && sx < w) {
                        v = src[(ci * h + sy) * w + sx];
                    }
                    dst[(ci * h + y) * w + x] = v;
                }
            }
        }
    }
    return {Tensor<T>::from({indices.size(), data.c, data.h, data.w}, std::move(buf)),
            std::move(labels)};
}

}  // namespace attnprune
