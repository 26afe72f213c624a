#pragma once

// Datasets: inputs in [0, 1] with integer class labels.
//
// Sources: IDX image/label pairs, record-per-row label+pixel binaries
// (CIFAR-10/100 layout), the internal container written by `save_dataset`,
// and three synthetic generators.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "vfd/io.hpp"
#include "vfd/tensor.hpp"

namespace vfd {

template <class T = double>
struct Dataset {
    Tensor<T> inputs;  // (N, ...)
    std::vector<std::size_t> labels;
    std::size_t num_classes = 0;
    std::string split = "full";
    std::string id;

    std::size_t size() const { return labels.size(); }

    Shape example_shape() const { return Shape(inputs.shape().begin() + 1, inputs.shape().end()); }
    std::size_t example_numel() const { return size() ? inputs.numel() / size() : 0; }

    Dataset subset(std::span<const std::size_t> index, std::string tag) const
    {
        const std::size_t d = example_numel();
        std::vector<T> v;
        v.reserve(index.size() * d);
        std::vector<std::size_t> y;
        y.reserve(index.size());
        for (auto i : index) {
            auto src = inputs.data().subspan(i * d, d);
            v.insert(v.end(), src.begin(), src.end());
            y.push_back(labels.at(i));
        }
        Shape s = example_shape();
        s.insert(s.begin(), index.size());
        return Dataset{Tensor<T>(std::move(s), std::move(v)), std::move(y), num_classes, std::move(tag), id};
    }

    /// Contiguous slice [begin, end) as a batch tensor and its labels.
    std::pair<Tensor<T>, std::vector<std::size_t>> slice(std::size_t begin, std::size_t end) const
    {
        std::vector<std::size_t> idx(end - begin);
        std::iota(idx.begin(), idx.end(), begin);
        return gather(idx);
    }

    std::pair<Tensor<T>, std::vector<std::size_t>> gather(std::span<const std::size_t> index) const
    {
        const std::size_t d = example_numel();
        std::vector<T> v(index.size() * d);
        std::vector<std::size_t> y(index.size());
        for (std::size_t k = 0; k < index.size(); ++k) {
            auto src = inputs.data().subspan(index[k] * d, d);
            std::copy(src.begin(), src.end(), v.begin() + static_cast<std::ptrdiff_t>(k * d));
            y[k] = labels.at(index[k]);
        }
        Shape s = example_shape();
        s.insert(s.begin(), index.size());
        return {Tensor<T>(std::move(s), std::move(v)), std::move(y)};
    }

    /// Throws IngestionError unless labels and value ranges hold.
    void validate() const
    {
        if (labels.empty())
            throw IngestionError("dataset is empty");
        if (inputs.dim(0) != labels.size())
            throw IngestionError("dataset has " + std::to_string(inputs.dim(0)) + " inputs but " +
                                 std::to_string(labels.size()) + " labels");
        for (std::size_t i = 0; i < labels.size(); ++i)
            if (labels[i] >= num_classes)
                throw IngestionError("label " + std::to_string(labels[i]) + " at example " + std::to_string(i) +
                                     " outside [0, " + std::to_string(num_classes) + ")");
        for (T v : inputs.data())
            if (!(v >= T{0} && v <= T{1}))
                throw IngestionError("input value outside [0, 1]");
    }

    std::vector<std::size_t> class_counts() const
    {
        std::vector<std::size_t> c(num_classes, 0);
        for (auto y : labels)
            ++c.at(y);
        return c;
    }
};

// ---------------------------------------------------------------------------
// Synthetic generators

enum class SynthKind { gaussian_blobs, ring_classes, rasterized_blobs };

inline std::string to_string(SynthKind k)
{
    switch (k) {
    case SynthKind::gaussian_blobs: return "gaussian-blobs";
    case SynthKind::ring_classes: return "ring-classes";
    case SynthKind::rasterized_blobs: return "rasterized-blobs";
    }
    return "?";
}

inline SynthKind parse_synth_kind(const std::string& s)
{
    if (s == "gaussian-blobs")
        return SynthKind::gaussian_blobs;
    if (s == "ring-classes")
        return SynthKind::ring_classes;
    if (s == "rasterized-blobs")
        return SynthKind::rasterized_blobs;
    throw ConfigError("unknown generator '" + s + "'");
}

struct SynthSpec {
    SynthKind kind = SynthKind::rasterized_blobs;
    std::size_t num_classes = 3;
    std::size_t per_class = 500;
    double noise = 0.1;  // gaussian/ring: input units; raster: blob-position jitter in pixels
    std::uint64_t seed = 0;

    std::size_t dim = 2;      // gaussian-blobs feature count
    double separation = 0.2;  // gaussian: centroid circle diameter; raster: centroid radius in pixels
    std::size_t side = 8;     // raster image side
    double texture = 0.0;     // raster: amplitude of the class-specific high-frequency pattern
    double pixel_noise = 0.0; // raster: i.i.d. per-pixel Gaussian noise
};

/// Gaussian-blob class means: a circle of diameter `separation` about 0.5 in
/// the first two coordinates, 0.5 elsewhere.
inline std::vector<std::vector<double>> blob_centroids(const SynthSpec& spec)
{
    std::vector<std::vector<double>> c(spec.num_classes, std::vector<double>(spec.dim, 0.5));
    for (std::size_t k = 0; k < spec.num_classes; ++k) {
        const double a = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(spec.num_classes);
        c[k][0] += 0.5 * spec.separation * std::cos(a);
        if (spec.dim > 1)
            c[k][1] += 0.5 * spec.separation * std::sin(a);
    }
    return c;
}

/// Class-specific +-1 pattern used as the raster texture. The first three
/// classes get horizontal stripes, vertical stripes and a checkerboard.
inline std::vector<double> texture_pattern(std::size_t cls, std::size_t side, std::uint64_t seed)
{
    std::vector<double> p(side * side);
    std::mt19937_64 rng(seed ^ (0x9e3779b97f4a7c15ULL * (cls + 1)));
    std::bernoulli_distribution coin(0.5);
    for (std::size_t i = 0; i < side; ++i)
        for (std::size_t j = 0; j < side; ++j) {
            double v;
            switch (cls) {
            case 0: v = (i % 2) ? 1.0 : -1.0; break;
            case 1: v = (j % 2) ? 1.0 : -1.0; break;
            case 2: v = ((i + j) % 2) ? 1.0 : -1.0; break;
            default: v = coin(rng) ? 1.0 : -1.0; break;
            }
            p[i * side + j] = v;
        }
    return p;
}

/// Example j has class j % num_classes.
template <class T = double>
Dataset<T> synthesize(const SynthSpec& spec)
{
    if (spec.num_classes < 2 || spec.per_class < 1)
        throw ConfigError("synthesize: need >= 2 classes and >= 1 example per class");
    if (spec.noise < 0 || spec.pixel_noise < 0)
        throw ConfigError("synthesize: noise must be >= 0");
    const std::size_t K = spec.num_classes, N = K * spec.per_class;
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    auto clamp01 = [](double v) { return static_cast<T>(std::clamp(v, 0.0, 1.0)); };

    Dataset<T> ds;
    ds.num_classes = K;
    ds.id = to_string(spec.kind) + ":seed=" + std::to_string(spec.seed);
    ds.labels.resize(N);
    std::vector<T> v;

    switch (spec.kind) {
    case SynthKind::gaussian_blobs: {
        const auto centroids = blob_centroids(spec);
        v.reserve(N * spec.dim);
        for (std::size_t j = 0; j < N; ++j) {
            const std::size_t k = ds.labels[j] = j % K;
            for (std::size_t d = 0; d < spec.dim; ++d)
                v.push_back(clamp01(centroids[k][d] + spec.noise * normal(rng)));
        }
        ds.inputs = Tensor<T>({N, spec.dim}, std::move(v));
        break;
    }
    case SynthKind::ring_classes: {
        v.reserve(N * 2);
        for (std::size_t j = 0; j < N; ++j) {
            const std::size_t k = ds.labels[j] = j % K;
            const double r = 0.4 * static_cast<double>(k + 1) / static_cast<double>(K) + spec.noise * normal(rng);
            const double a = 2.0 * std::numbers::pi * uniform(rng);
            v.push_back(clamp01(0.5 + r * std::cos(a)));
            v.push_back(clamp01(0.5 + r * std::sin(a)));
        }
        ds.inputs = Tensor<T>({N, 2}, std::move(v));
        break;
    }
    case SynthKind::rasterized_blobs: {
        const std::size_t S = spec.side;
        if (S < 2)
            throw ConfigError("synthesize: raster side must be >= 2");
        constexpr double background = 0.2, amplitude = 0.6, width = 1.0;
        const double mid = 0.5 * static_cast<double>(S - 1);
        std::vector<std::vector<double>> patterns;
        for (std::size_t k = 0; k < K; ++k)
            patterns.push_back(texture_pattern(k, S, spec.seed));
        v.reserve(N * S * S);
        for (std::size_t j = 0; j < N; ++j) {
            const std::size_t k = ds.labels[j] = j % K;
            const double a = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(K);
            const double cy = mid + spec.separation * std::sin(a) + spec.noise * normal(rng);
            const double cx = mid + spec.separation * std::cos(a) + spec.noise * normal(rng);
            for (std::size_t i = 0; i < S; ++i)
                for (std::size_t jj = 0; jj < S; ++jj) {
                    const double dy = static_cast<double>(i) - cy, dx = static_cast<double>(jj) - cx;
                    double p = background + amplitude * std::exp(-(dx * dx + dy * dy) / (2 * width * width));
                    p += spec.texture * patterns[k][i * S + jj];
                    if (spec.pixel_noise > 0)
                        p += spec.pixel_noise * normal(rng);
                    v.push_back(clamp01(p));
                }
        }
        ds.inputs = Tensor<T>({N, 1, S, S}, std::move(v));
        break;
    }
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Splitting

/// Seeded stratified split into train:test parts per class.
template <class T>
std::pair<Dataset<T>, Dataset<T>> split(const Dataset<T>& ds, double train_parts, double test_parts,
                                        std::uint64_t seed)
{
    if (!(train_parts > 0) || !(test_parts > 0))
        throw ConfigError("split: both ratio parts must be positive (test split must be non-empty)");
    std::vector<std::vector<std::size_t>> by_class(ds.num_classes);
    for (std::size_t i = 0; i < ds.size(); ++i)
        by_class.at(ds.labels[i]).push_back(i);
    std::mt19937_64 rng(seed);
    std::vector<std::size_t> train, test;
    const double frac = train_parts / (train_parts + test_parts);
    for (std::size_t k = 0; k < by_class.size(); ++k) {
        auto& idx = by_class[k];
        if (idx.empty())
            continue;
        if (idx.size() < 2)
            throw ConfigError("split: class " + std::to_string(k) + " has fewer than 2 examples");
        std::shuffle(idx.begin(), idx.end(), rng);
        auto n_train = static_cast<std::size_t>(std::llround(frac * static_cast<double>(idx.size())));
        n_train = std::clamp<std::size_t>(n_train, 1, idx.size() - 1);
        train.insert(train.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
        test.insert(test.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
    }
    std::sort(train.begin(), train.end());
    std::sort(test.begin(), test.end());
    return {ds.subset(train, "train"), ds.subset(test, "test")};
}

// ---------------------------------------------------------------------------
// Standard binary formats

namespace detail {

inline std::uint32_t read_be32(const std::string& b, std::size_t off, const std::string& path)
{
    if (off + 4 > b.size())
        throw IngestionError(path + ": truncated header at byte " + std::to_string(off));
    return (std::uint32_t(static_cast<unsigned char>(b[off])) << 24) |
           (std::uint32_t(static_cast<unsigned char>(b[off + 1])) << 16) |
           (std::uint32_t(static_cast<unsigned char>(b[off + 2])) << 8) |
           std::uint32_t(static_cast<unsigned char>(b[off + 3]));
}

inline std::size_t infer_classes(const std::vector<std::size_t>& labels, std::size_t given)
{
    if (given)
        return given;
    std::size_t mx = 0;
    for (auto y : labels)
        mx = std::max(mx, y);
    return mx + 1;
}

}  // namespace detail

/// IDX unsigned-byte image file (magic 0x00000803, dims N,H,W) and label file
/// (magic 0x00000801). Pixels map to [0,1] by /255. `num_classes == 0` infers
/// max(label) + 1.
template <class T = double>
Dataset<T> load_idx(const std::string& images_path, const std::string& labels_path, std::size_t num_classes = 0)
{
    const std::string img = io::read_file(images_path);
    const std::string lab = io::read_file(labels_path);
    const auto img_magic = detail::read_be32(img, 0, images_path);
    if (img_magic != 0x00000803u)
        throw IngestionError(images_path + ": bad magic at byte 0 (expected 0x00000803)");
    const auto lab_magic = detail::read_be32(lab, 0, labels_path);
    if (lab_magic != 0x00000801u)
        throw IngestionError(labels_path + ": bad magic at byte 0 (expected 0x00000801)");
    const std::size_t n = detail::read_be32(img, 4, images_path);
    const std::size_t h = detail::read_be32(img, 8, images_path);
    const std::size_t w = detail::read_be32(img, 12, images_path);
    const std::size_t nl = detail::read_be32(lab, 4, labels_path);
    if (nl != n)
        throw IngestionError(labels_path + ": " + std::to_string(nl) + " labels for " + std::to_string(n) +
                             " images (header at byte 4)");
    const std::size_t img_need = 16 + n * h * w, lab_need = 8 + n;
    if (img.size() != img_need)
        throw IngestionError(images_path + ": length mismatch, expected " + std::to_string(img_need) +
                             " bytes, found " + std::to_string(img.size()));
    if (lab.size() != lab_need)
        throw IngestionError(labels_path + ": length mismatch, expected " + std::to_string(lab_need) +
                             " bytes, found " + std::to_string(lab.size()));
    Dataset<T> ds;
    ds.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i)
        ds.labels[i] = static_cast<unsigned char>(lab[8 + i]);
    ds.num_classes = detail::infer_classes(ds.labels, num_classes);
    for (std::size_t i = 0; i < n; ++i)
        if (ds.labels[i] >= ds.num_classes)
            throw IngestionError(labels_path + ": label " + std::to_string(ds.labels[i]) + " out of range at byte " +
                                 std::to_string(8 + i));
    std::vector<T> v(n * h * w);
    for (std::size_t i = 0; i < v.size(); ++i)
        v[i] = static_cast<T>(static_cast<unsigned char>(img[16 + i])) / T{255};
    ds.inputs = Tensor<T>({n, 1, h, w}, std::move(v));
    ds.id = "idx:" + images_path;
    return ds;
}

/// Writes an IDX image/label pair (inputs quantized by round(255 * v)).
template <class T>
void save_idx(const Dataset<T>& ds, const std::string& images_path, const std::string& labels_path)
{
    const auto s = ds.example_shape();
    if (s.size() != 3 || s[0] != 1)
        throw ContractViolation("save_idx: needs single-channel (N,1,H,W) inputs");
    auto be32 = [](std::string& out, std::uint32_t v) {
        for (int sh = 24; sh >= 0; sh -= 8)
            out.push_back(static_cast<char>((v >> sh) & 0xff));
    };
    std::string img, lab;
    be32(img, 0x00000803u);
    be32(img, static_cast<std::uint32_t>(ds.size()));
    be32(img, static_cast<std::uint32_t>(s[1]));
    be32(img, static_cast<std::uint32_t>(s[2]));
    for (T v : ds.inputs.data())
        img.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(static_cast<double>(v) * 255.0))));
    be32(lab, 0x00000801u);
    be32(lab, static_cast<std::uint32_t>(ds.size()));
    for (auto y : ds.labels)
        lab.push_back(static_cast<char>(static_cast<unsigned char>(y)));
    io::write_file(images_path, img);
    io::write_file(labels_path, lab);
}

struct RecordLayout {
    std::size_t label_bytes = 1;  // the last label byte is the class
    std::size_t channels = 3, height = 32, width = 32;
    std::size_t num_classes = 10;

    static RecordLayout cifar10() { return {1, 3, 32, 32, 10}; }
    static RecordLayout cifar100() { return {2, 3, 32, 32, 100}; }
    std::size_t record_bytes() const { return label_bytes + channels * height * width; }
};

/// Record-per-row binary: each record is label byte(s) then C*H*W pixel bytes.
template <class T = double>
Dataset<T> load_records(const std::vector<std::string>& paths, const RecordLayout& layout)
{
    Dataset<T> ds;
    ds.num_classes = layout.num_classes;
    std::vector<T> v;
    const std::size_t rec = layout.record_bytes(), px = rec - layout.label_bytes;
    for (const auto& path : paths) {
        const std::string b = io::read_file(path);
        if (b.size() % rec != 0)
            throw IngestionError(path + ": length mismatch, " + std::to_string(b.size()) +
                                 " bytes is not a multiple of the " + std::to_string(rec) +
                                 "-byte record (trailing bytes start at " + std::to_string(b.size() / rec * rec) + ")");
        for (std::size_t off = 0; off < b.size(); off += rec) {
            const std::size_t y = static_cast<unsigned char>(b[off + layout.label_bytes - 1]);
            if (y >= layout.num_classes)
                throw IngestionError(path + ": label " + std::to_string(y) + " out of range at byte " +
                                     std::to_string(off + layout.label_bytes - 1));
            ds.labels.push_back(y);
            for (std::size_t i = 0; i < px; ++i)
                v.push_back(static_cast<T>(static_cast<unsigned char>(b[off + layout.label_bytes + i])) / T{255});
        }
    }
    if (ds.labels.empty())
        throw IngestionError("no records found");
    ds.inputs = Tensor<T>({ds.labels.size(), layout.channels, layout.height, layout.width}, std::move(v));
    ds.id = "records:" + paths.front();
    return ds;
}

enum class StandardFormat { idx, cifar10, cifar100 };

inline StandardFormat parse_standard_format(const std::string& s)
{
    if (s == "idx")
        return StandardFormat::idx;
    if (s == "cifar10")
        return StandardFormat::cifar10;
    if (s == "cifar100")
        return StandardFormat::cifar100;
    throw ConfigError("unknown dataset format '" + s + "'");
}

/// `paths` holds {images, labels} for IDX, or the record files otherwise.
template <class T = double>
Dataset<T> load_standard(const std::vector<std::string>& paths, StandardFormat format, std::size_t num_classes = 0)
{
    switch (format) {
    case StandardFormat::idx:
        if (paths.size() != 2)
            throw ConfigError("idx needs an image path and a label path");
        return load_idx<T>(paths[0], paths[1], num_classes);
    case StandardFormat::cifar10:
        return load_records<T>(paths, RecordLayout::cifar10());
    case StandardFormat::cifar100:
        return load_records<T>(paths, RecordLayout::cifar100());
    }
    throw ConfigError("unsupported format");
}

// ---------------------------------------------------------------------------
// Internal container

template <class T>
constexpr const char* dtype_name()
{
    return sizeof(T) == 8 ? "f64" : "f32";
}

template <class T>
std::string encode_dataset(const Dataset<T>& ds)
{
    io::Manifest m;
    m.magic = "vfd-dataset";
    m.version = 1;
    m.set("dtype", dtype_name<T>());
    m.set("shape", io::join_shape(ds.inputs.shape()));
    m.set("classes", std::to_string(ds.num_classes));
    m.set("split", ds.split);
    m.set("id", ds.id);
    m.set("input_bytes", std::to_string(ds.inputs.numel() * sizeof(T)));
    m.set("label_bytes", std::to_string(ds.labels.size() * 4));
    std::string out = m.render();
    for (T v : ds.inputs.data())
        io::put_le(out, v);
    for (auto y : ds.labels)
        io::put_le(out, static_cast<std::uint32_t>(y));
    return out;
}

template <class T>
void save_dataset(const Dataset<T>& ds, const std::string& path)
{
    io::write_file(path, encode_dataset(ds));
}

template <class T = double>
Dataset<T> load_dataset(const std::string& path)
{
    const std::string bytes = io::read_file(path);
    try {
        auto [m, payload] = io::parse_container<IngestionError>(bytes, "vfd-dataset");
        if (m.version != 1)
            throw IngestionError(path + ": unsupported container version " + std::to_string(m.version));
        if (m.get<IngestionError>("dtype") != dtype_name<T>())
            throw IngestionError(path + ": stored dtype " + m.get<IngestionError>("dtype") + ", requested " +
                                 dtype_name<T>());
        Shape shape = io::parse_shape(m.get<IngestionError>("shape"));
        const std::size_t in_bytes = std::stoull(m.get<IngestionError>("input_bytes"));
        const std::size_t lab_bytes = std::stoull(m.get<IngestionError>("label_bytes"));
        if (in_bytes != numel_of(shape) * sizeof(T) || shape.empty() || lab_bytes != shape[0] * 4)
            throw IngestionError(path + ": manifest sizes disagree with shape " + to_string(shape));
        if (payload.size() != in_bytes + lab_bytes)
            throw IngestionError(path + ": payload has " + std::to_string(payload.size()) + " bytes, manifest declares " +
                                 std::to_string(in_bytes + lab_bytes));
        Dataset<T> ds;
        std::vector<T> v(numel_of(shape));
        for (std::size_t i = 0; i < v.size(); ++i)
            v[i] = io::get_le<T>(payload.data() + i * sizeof(T));
        ds.inputs = Tensor<T>(shape, std::move(v));
        ds.labels.resize(shape[0]);
        for (std::size_t i = 0; i < shape[0]; ++i)
            ds.labels[i] = io::get_le<std::uint32_t>(payload.data() + in_bytes + i * 4);
        ds.num_classes = std::stoull(m.get<IngestionError>("classes"));
        ds.split = m.get<IngestionError>("split");
        ds.id = m.get<IngestionError>("id");
        ds.validate();
        return ds;
    } catch (const std::logic_error& e) {
        throw IngestionError(path + ": malformed dataset manifest (" + std::string(e.what()) + ")");
    }
}

}  // namespace vfd
