#include "attnprune/dataset.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "attnprune/rng.hpp"

using attnprune::Cifar10Record;
using attnprune::DatasetSpec;
using attnprune::Rng;

TEST(Synthetic, ShapesAndDeterminism) {
    DatasetSpec spec;
    spec.num_classes = 3;
    spec.samples_per_class = 10;
    spec.channels = 2;
    spec.height = 6;
    spec.width = 6;
    spec.val_fraction = 0.2;
    Rng rng1(42), rng2(42);
    auto [train1, val1] = attnprune::make_synthetic<double>(spec, rng1);
    auto [train2, val2] = attnprune::make_synthetic<double>(spec, rng2);
    EXPECT_EQ(train1.n, 24u);  // 8 per class
    EXPECT_EQ(val1.n, 6u);     // 2 per class
    EXPECT_EQ(train1.images, train2.images);
    EXPECT_EQ(train1.labels, train2.labels);
    EXPECT_EQ(train1.images.size(), train1.n * train1.sample_size());
}

TEST(Synthetic, ClassesAreLinearlySeparableEnough) {
    DatasetSpec spec;
    spec.num_classes = 2;
    spec.samples_per_class = 50;
    spec.separation = 2.0;
    spec.noise = 0.5;
    spec.val_fraction = 0.0;
    Rng rng(7);
    auto [train, val] = attnprune::make_synthetic<double>(spec, rng);
    // nearest-template classification should be nearly perfect at this
    // separation; use class means as templates
    const std::size_t pix = train.sample_size();
    std::vector<std::vector<double>> mean(2, std::vector<double>(pix, 0.0));
    std::vector<int> count(2, 0);
    for (std::size_t i = 0; i < train.n; ++i) {
        const int c = train.labels[i];
        ++count[static_cast<std::size_t>(c)];
        for (std::size_t p = 0; p < pix; ++p) {
            mean[static_cast<std::size_t>(c)][p] += train.images[i * pix + p];
        }
    }
    for (int c = 0; c < 2; ++c) {
        for (auto& v : mean[static_cast<std::size_t>(c)]) v /= count[static_cast<std::size_t>(c)];
    }
    int correct = 0;
    for (std::size_t i = 0; i < train.n; ++i) {
        double d0 = 0.0, d1 = 0.0;
        for (std::size_t p = 0; p < pix; ++p) {
            const double x = train.images[i * pix + p];
            d0 += (x - mean[0][p]) * (x - mean[0][p]);
            d1 += (x - mean[1][p]) * (x - mean[1][p]);
        }
        const int pred = d0 <= d1 ? 0 : 1;
        if (pred == train.labels[i]) ++correct;
    }
    EXPECT_GT(static_cast<double>(correct) / static_cast<double>(train.n), 0.95);
}

TEST(Cifar10, RecordLengthMustDivideFileSize) {
    std::vector<std::uint8_t> bytes(3073 * 2 + 5, 0);
    try {
        attnprune::decode_cifar10(bytes);
        FAIL() << "expected parse_error";
    } catch (const attnprune::parse_error& e) {
        EXPECT_NE(std::string(e.what()).find("byte offset"), std::string::npos) << e.what();
    }
}

TEST(Cifar10, LabelByteRange) {
    std::vector<std::uint8_t> bytes(3073, 0);
    bytes[0] = 9;
    EXPECT_EQ(attnprune::decode_cifar10(bytes)[0].label, 9);
    bytes[0] = 10;
    try {
        attnprune::decode_cifar10(bytes);
        FAIL() << "expected parse_error";
    } catch (const attnprune::parse_error& e) {
        EXPECT_NE(std::string(e.what()).find("offset 0"), std::string::npos) << e.what();
    }
}

TEST(Cifar10, EncodeDecodeRoundTripsByteIdentical) {
    Rng rng(9);
    std::vector<std::uint8_t> bytes;
    for (int r = 0; r < 7; ++r) {
        bytes.push_back(static_cast<std::uint8_t>(rng.uniform_int(0, 9)));
        for (int i = 0; i < 3072; ++i) {
            bytes.push_back(static_cast<std::uint8_t>(rng.uniform_int(0, 255)));
        }
    }
    const auto records = attnprune::decode_cifar10(bytes);
    const auto encoded = attnprune::encode_cifar10(records);
    EXPECT_EQ(bytes, encoded);
}

TEST(Cifar10, SubsetSelectionIsSeedDeterministicAndNormalized) {
    Rng rng(10);
    std::vector<Cifar10Record> records;
    for (int r = 0; r < 60; ++r) {
        Cifar10Record rec;
        rec.label = static_cast<std::uint8_t>(r % 10);
        for (auto& p : rec.pixels) p = static_cast<std::uint8_t>(rng.uniform_int(0, 255));
        records.push_back(rec);
    }
    DatasetSpec spec;
    spec.kind = "cifar10_subset";
    spec.path = "unused";
    spec.num_classes = 4;
    spec.samples_per_class = 3;
    spec.channels = 3;
    spec.height = 32;
    spec.width = 32;
    spec.seed = 5;
    spec.val_fraction = 0.34;
    auto [a_train, a_val] = attnprune::cifar10_subset<double>(records, spec);
    auto [b_train, b_val] = attnprune::cifar10_subset<double>(records, spec);
    EXPECT_EQ(a_train.images, b_train.images);
    EXPECT_EQ(a_train.n + a_val.n, 12u);
    // normalization maps bytes into a small standardized range
    for (const double v : a_train.images) {
        EXPECT_GT(v, -3.0);
        EXPECT_LT(v, 3.0);
    }
    spec.samples_per_class = 100;  // more than available
    EXPECT_THROW(attnprune::cifar10_subset<double>(records, spec), attnprune::domain_error);
}

TEST(Cifar10, LoadFromDiskMatchesDecode) {
    Rng rng(11);
    std::vector<std::uint8_t> bytes;
    for (int r = 0; r < 3; ++r) {
        bytes.push_back(static_cast<std::uint8_t>(r));
        for (int i = 0; i < 3072; ++i) {
            bytes.push_back(static_cast<std::uint8_t>(rng.uniform_int(0, 255)));
        }
    }
    const auto path = std::filesystem::temp_directory_path() / "attnprune_cifar_test.bin";
    {
        std::ofstream out(path, std::ios::binary);
        out.write(reinterpret_cast<const char*>(bytes.data()),
                  static_cast<std::streamsize>(bytes.size()));
    }
    const auto records = attnprune::load_cifar10_records(path.string());
    EXPECT_EQ(records.size(), 3u);
    EXPECT_EQ(records[2].label, 2);
    EXPECT_EQ(attnprune::encode_cifar10(records), bytes);
    std::filesystem::remove(path);
    EXPECT_THROW(attnprune::load_cifar10_records(path.string()), attnprune::io_error);
}

TEST(AssembleBatch, AugmentationIsDeterministicUnderSeed) {
    DatasetSpec spec;
    spec.num_classes = 2;
    spec.samples_per_class = 4;
    spec.val_fraction = 0.0;
    spec.channels = 3;
    spec.height = 8;
    spec.width = 8;
    Rng rng(12);
    auto [train, val] = attnprune::make_synthetic<double>(spec, rng);
    std::vector<std::size_t> idx = {0, 1, 2};
    Rng aug1(3), aug2(3);
    auto [b1, l1] = attnprune::assemble_batch(train, idx, true, &aug1);
    auto [b2, l2] = attnprune::assemble_batch(train, idx, true, &aug2);
    EXPECT_EQ(b1.value(), b2.value());
    EXPECT_EQ(l1, l2);
    EXPECT_EQ(b1.shape(), (attnprune::Shape{3, 3, 8, 8}));
}

TEST(DatasetSpec, ValidationRules) {
    DatasetSpec spec;
    spec.kind = "bogus";
    EXPECT_THROW(spec.validate(), attnprune::config_error);
    spec = DatasetSpec{};
    spec.kind = "cifar10_subset";
    EXPECT_THROW(spec.validate(), attnprune::config_error);  // missing path
    spec = DatasetSpec{};
    spec.val_fraction = 1.0;
    EXPECT_THROW(spec.validate(), attnprune::config_error);
}
