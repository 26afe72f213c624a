#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "vfd/data.hpp"

namespace fs = std::filesystem;
using vfd::Dataset;
using vfd::SynthKind;
using vfd::SynthSpec;

namespace {

fs::path scratch(const std::string& name)
{
    const auto dir = fs::temp_directory_path() / "vfd_test_data";
    fs::create_directories(dir);
    return dir / name;
}

void expect_ingestion_error(const std::function<void()>& f, const std::string& needle)
{
    try {
        f();
        ADD_FAILURE() << "no IngestionError";
    } catch (const vfd::IngestionError& e) {
        EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
    }
}

std::string be32(std::uint32_t v)
{
    std::string s;
    for (int sh = 24; sh >= 0; sh -= 8)
        s.push_back(static_cast<char>((v >> sh) & 0xff));
    return s;
}

}  // namespace

TEST(Synth, DeterministicBalancedAndInRange)
{
    for (auto kind : {SynthKind::gaussian_blobs, SynthKind::ring_classes, SynthKind::rasterized_blobs}) {
        SynthSpec s;
        s.kind = kind;
        s.num_classes = 4;
        s.per_class = 50;
        s.seed = 3;
        s.texture = 0.02;
        s.pixel_noise = 0.05;
        const auto a = vfd::synthesize<double>(s), b = vfd::synthesize<double>(s);
        EXPECT_TRUE(std::equal(a.inputs.data().begin(), a.inputs.data().end(), b.inputs.data().begin()));
        EXPECT_EQ(a.labels, b.labels);
        EXPECT_EQ(a.class_counts(), (std::vector<std::size_t>(4, 50)));
        EXPECT_NO_THROW(a.validate());
        s.seed = 4;
        const auto c = vfd::synthesize<double>(s);
        EXPECT_FALSE(std::equal(a.inputs.data().begin(), a.inputs.data().end(), c.inputs.data().begin()));
    }
}

TEST(Synth, RasterShapeAndTexture)
{
    SynthSpec s;
    s.per_class = 1;
    s.noise = 0;
    s.texture = 0.05;
    const auto ds = vfd::synthesize<double>(s);
    EXPECT_EQ(ds.inputs.shape(), (vfd::Shape{3, 1, 8, 8}));
    // without jitter or pixel noise, removing the texture leaves the same
    // blob image whatever the pattern
    SynthSpec plain = s;
    plain.texture = 0;
    const auto base = vfd::synthesize<double>(plain);
    for (std::size_t k = 0; k < 3; ++k) {
        const auto pat = vfd::texture_pattern(k, 8, s.seed);
        for (std::size_t i = 0; i < 64; ++i)
            EXPECT_NEAR(ds.inputs.data()[k * 64 + i], std::clamp(base.inputs.data()[k * 64 + i] + 0.05 * pat[i], 0.0, 1.0),
                        1e-12);
    }
}

// Two Gaussian blobs with shared isotropic spread: the nearest-centroid rule
// is Bayes-optimal with accuracy Phi(d / (2 sigma)).
TEST(Synth, GaussianBlobsMatchBayesRate)
{
    SynthSpec s;
    s.kind = SynthKind::gaussian_blobs;
    s.num_classes = 2;
    s.per_class = 20000;
    s.noise = 0.05;
    s.separation = 0.12;
    s.dim = 2;
    s.seed = 1;
    const auto ds = vfd::synthesize<double>(s);
    const auto c = vfd::blob_centroids(s);
    std::size_t ok = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        double d0 = 0, d1 = 0;
        for (std::size_t j = 0; j < 2; ++j) {
            const double v = ds.inputs.data()[i * 2 + j];
            d0 += (v - c[0][j]) * (v - c[0][j]);
            d1 += (v - c[1][j]) * (v - c[1][j]);
        }
        ok += (d1 < d0) == (ds.labels[i] == 1);
    }
    const double want = 0.5 * std::erfc(-(0.12 / (2 * 0.05)) / std::sqrt(2.0));
    const double n = static_cast<double>(ds.size());
    EXPECT_NEAR(static_cast<double>(ok) / n, want, 4 * std::sqrt(want * (1 - want) / n));
}

TEST(Synth, RejectsBadSpecs)
{
    SynthSpec s;
    s.num_classes = 1;
    EXPECT_THROW(vfd::synthesize<double>(s), vfd::ConfigError);
    s = {};
    s.noise = -1;
    EXPECT_THROW(vfd::synthesize<double>(s), vfd::ConfigError);
}

TEST(Split, StratifiedFiveToOneDisjointAndSeeded)
{
    SynthSpec s;
    s.per_class = 60;
    const auto ds = vfd::synthesize<double>(s);
    const auto [train, test] = vfd::split(ds, 5, 1, 9);
    EXPECT_EQ(train.class_counts(), (std::vector<std::size_t>(3, 50)));
    EXPECT_EQ(test.class_counts(), (std::vector<std::size_t>(3, 10)));
    EXPECT_EQ(train.split, "train");
    EXPECT_EQ(test.split, "test");
    const auto [train2, test2] = vfd::split(ds, 5, 1, 9);
    EXPECT_TRUE(std::equal(test.inputs.data().begin(), test.inputs.data().end(), test2.inputs.data().begin()));
    const auto [train3, test3] = vfd::split(ds, 5, 1, 10);
    EXPECT_FALSE(std::equal(test.inputs.data().begin(), test.inputs.data().end(), test3.inputs.data().begin()));
    // every example lands on exactly one side: compare multisets of first pixels
    std::multiset<double> all, parts;
    for (std::size_t i = 0; i < ds.size(); ++i)
        all.insert(ds.inputs.data()[i * 64 + 27] + 10.0 * static_cast<double>(ds.labels[i]));
    for (const Dataset<double>* d : {&train, &test})
        for (std::size_t i = 0; i < d->size(); ++i)
            parts.insert(d->inputs.data()[i * 64 + 27] + 10.0 * static_cast<double>(d->labels[i]));
    EXPECT_EQ(all, parts);
}

TEST(Split, NeverLeavesAClassOutOfTheTestSide)
{
    SynthSpec s;
    s.per_class = 3;
    const auto ds = vfd::synthesize<double>(s);
    const auto [train, test] = vfd::split(ds, 100, 1, 0);
    EXPECT_EQ(test.class_counts(), (std::vector<std::size_t>(3, 1)));
    EXPECT_THROW(vfd::split(ds, 5, 0, 0), vfd::ConfigError);
}

TEST(Idx, RoundTripQuantizes)
{
    SynthSpec s;
    s.per_class = 5;
    const auto ds = vfd::synthesize<double>(s);
    const auto img = scratch("rt-images.idx").string(), lab = scratch("rt-labels.idx").string();
    vfd::save_idx(ds, img, lab);
    const auto back = vfd::load_idx<double>(img, lab, 3);
    EXPECT_EQ(back.labels, ds.labels);
    EXPECT_EQ(back.inputs.shape(), ds.inputs.shape());
    for (std::size_t i = 0; i < ds.inputs.numel(); ++i)
        EXPECT_NEAR(back.inputs.data()[i], ds.inputs.data()[i], 0.5 / 255 + 1e-12);
}

TEST(Idx, MalformedFilesReportOffsets)
{
    const auto img = scratch("bad-images.idx").string(), lab = scratch("bad-labels.idx").string();
    auto write = [](const std::string& p, const std::string& b) { vfd::io::write_file(p, b); };
    const std::string good_lab = be32(0x801) + be32(2) + std::string("\x00\x01", 2);
    const std::string good_img = be32(0x803) + be32(2) + be32(2) + be32(2) + std::string(8, '\x10');

    write(img, be32(0x999) + good_img.substr(4));
    write(lab, good_lab);
    expect_ingestion_error([&] { vfd::load_idx<double>(img, lab); }, "byte 0");

    write(img, good_img.substr(0, 6));
    expect_ingestion_error([&] { vfd::load_idx<double>(img, lab); }, "truncated");

    write(img, good_img + "x");
    expect_ingestion_error([&] { vfd::load_idx<double>(img, lab); }, "length mismatch");

    write(img, good_img);
    write(lab, be32(0x801) + be32(3) + std::string("\x00\x01\x01", 3));
    expect_ingestion_error([&] { vfd::load_idx<double>(img, lab); }, "3 labels for 2 images");

    write(lab, be32(0x801) + be32(2) + std::string("\x00\x07", 2));
    expect_ingestion_error([&] { vfd::load_idx<double>(img, lab, 3); }, "byte 9");

    write(lab, good_lab);
    const auto ok = vfd::load_idx<double>(img, lab);
    EXPECT_EQ(ok.num_classes, 2u);
    EXPECT_DOUBLE_EQ(ok.inputs.data()[0], 16.0 / 255.0);
    EXPECT_THROW(vfd::load_idx<double>(img, scratch("missing").string()), vfd::IoError);
}

TEST(Records, Cifar10LayoutAndTrailingBytes)
{
    const auto path = scratch("rec.bin").string();
    std::string b;
    for (int r = 0; r < 3; ++r) {
        b.push_back(static_cast<char>(r));
        b.append(3 * 32 * 32, static_cast<char>(51 * r));
    }
    vfd::io::write_file(path, b);
    const auto ds = vfd::load_standard<double>({path}, vfd::StandardFormat::cifar10);
    EXPECT_EQ(ds.inputs.shape(), (vfd::Shape{3, 3, 32, 32}));
    EXPECT_EQ(ds.labels, (std::vector<std::size_t>{0, 1, 2}));
    EXPECT_DOUBLE_EQ(ds.inputs.data()[3 * 32 * 32 * 2], 102.0 / 255.0);
    vfd::io::write_file(path, b + "zz");
    expect_ingestion_error([&] { vfd::load_standard<double>({path}, vfd::StandardFormat::cifar10); }, "9219");
    b[0] = 12;
    vfd::io::write_file(path, b);
    expect_ingestion_error([&] { vfd::load_standard<double>({path}, vfd::StandardFormat::cifar10); }, "byte 0");
}

TEST(Container, RoundTripIsBitExactAndValidated)
{
    SynthSpec s;
    s.per_class = 7;
    s.pixel_noise = 0.1;
    auto ds = vfd::synthesize<double>(s);
    const auto path = scratch("ds.vfd").string();
    vfd::save_dataset(ds, path);
    const auto back = vfd::load_dataset<double>(path);
    EXPECT_TRUE(std::equal(ds.inputs.data().begin(), ds.inputs.data().end(), back.inputs.data().begin()));
    EXPECT_EQ(back.labels, ds.labels);
    EXPECT_EQ(back.id, ds.id);
    EXPECT_EQ(vfd::encode_dataset(back), vfd::encode_dataset(ds));
    EXPECT_THROW(vfd::load_dataset<float>(path), vfd::IngestionError);

    std::string bytes = vfd::io::read_file(path);
    vfd::io::write_file(path, bytes.substr(0, bytes.size() - 3));
    expect_ingestion_error([&] { vfd::load_dataset<double>(path); }, "payload");

    ds.labels[0] = 5;
    vfd::save_dataset(ds, path);
    expect_ingestion_error([&] { vfd::load_dataset<double>(path); }, "label 5");
}

TEST(Synth, ZeroNoiseGivesIdenticalClassMembers)
{
    for (auto kind : {SynthKind::gaussian_blobs, SynthKind::rasterized_blobs}) {
        SynthSpec s;
        s.kind = kind;
        s.per_class = 6;
        s.noise = 0;
        const auto ds = vfd::synthesize<double>(s);
        const std::size_t d = ds.inputs.numel() / ds.size();
        for (std::size_t i = 0; i < ds.size(); ++i)
            for (std::size_t j = 0; j < ds.size(); ++j) {
                if (ds.labels[i] != ds.labels[j])
                    continue;
                EXPECT_TRUE(std::equal(ds.inputs.data().begin() + i * d, ds.inputs.data().begin() + (i + 1) * d,
                                       ds.inputs.data().begin() + j * d));
            }
    }
}

TEST(Idx, AllZeroBytesDecodeToExactZeros)
{
    const auto img = scratch("zero-images.idx"), lab = scratch("zero-labels.idx");
    vfd::io::write_file(img.string(), be32(0x803) + be32(2) + be32(3) + be32(3) + std::string(18, '\0'));
    vfd::io::write_file(lab.string(), be32(0x801) + be32(2) + std::string("\0\1", 2));
    const auto ds = vfd::load_idx<double>(img.string(), lab.string(), 2);
    ASSERT_EQ(ds.inputs.numel(), 18u);
    for (double v : ds.inputs.data())
        EXPECT_EQ(v, 0.0);
}
