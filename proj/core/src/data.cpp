#include "rnascl/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

#include "rnascl/error.hpp"
#include "rnascl/random.hpp"

namespace rnascl::data {

namespace {

constexpr char kMagic[4] = {'R', 'N', 'D', 'S'};
constexpr std::size_t kHeaderBytes = 24;

void put_u32(std::ostream& out, std::uint32_t v) {
    for (int b = 0; b < 4; ++b) out.put(static_cast<char>((v >> (8 * b)) & 0xff));
}

std::uint32_t get_u32(const std::vector<unsigned char>& buf, std::size_t offset) {
    return static_cast<std::uint32_t>(buf[offset]) | (static_cast<std::uint32_t>(buf[offset + 1]) << 8) |
           (static_cast<std::uint32_t>(buf[offset + 2]) << 16) | (static_cast<std::uint32_t>(buf[offset + 3]) << 24);
}

std::vector<unsigned char> read_all(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingArtifactError("dataset file not found: " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Shape membership for pixel offset (dx, dy) from the shape centre.
bool in_shape(std::size_t shape, double dx, double dy, double half_len, double half_thick) {
    const double ax = std::abs(dx), ay = std::abs(dy);
    switch (shape % 8) {
        case 0: return ay <= half_thick && ax <= half_len;                    // horizontal bar
        case 1: return ax <= half_thick && ay <= half_len;                    // vertical bar
        case 2: return (ay <= half_thick && ax <= half_len) || (ax <= half_thick && ay <= half_len);  // plus
        case 3: {                                                              // square ring
            const double m = std::max(ax, ay);
            return m <= half_len && m >= half_len - 2.0 * half_thick;
        }
        case 4: return std::abs(ax - ay) <= half_thick * 0.75 && ax <= half_len;  // diagonal cross
        case 5: return dx * dx + dy * dy <= half_len * half_len * 0.45;          // disk
        case 6: return ay <= half_thick && ax >= half_len * 0.4 && ax <= half_len;  // two dashes
        default: return (ay <= half_thick || ax <= half_thick) && dx >= -half_thick && dy >= -half_thick &&
                        ax <= half_len && ay <= half_len;  // corner
    }
}

double texture(std::size_t cls, std::size_t channels, std::size_t channel, std::size_t y, std::size_t x) {
    if (channel != cls % channels) return 0.0;
    switch ((cls / channels) % 3) {
        case 0: return ((x + y) % 2 == 0) ? 1.0 : -1.0;
        case 1: return (x % 2 == 0) ? 1.0 : -1.0;
        default: return (y % 2 == 0) ? 1.0 : -1.0;
    }
}

}  // namespace

Tensor Dataset::images_at(std::span<const std::size_t> indices) const {
    const auto m = sample_numel();
    std::vector<double> v;
    v.reserve(indices.size() * m);
    for (auto i : indices) {
        if (i >= size()) throw ShapeError("sample index " + std::to_string(i) + " out of range");
        v.insert(v.end(), images.begin() + static_cast<std::ptrdiff_t>(i * m),
                 images.begin() + static_cast<std::ptrdiff_t>((i + 1) * m));
    }
    return Tensor::from({indices.size(), channels, height, width}, std::move(v));
}

std::vector<int> Dataset::labels_at(std::span<const std::size_t> indices) const {
    std::vector<int> out;
    out.reserve(indices.size());
    for (auto i : indices) out.push_back(labels.at(i));
    return out;
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
    Dataset out{channels, height, width, classes, {}, {}, split};
    const auto m = sample_numel();
    for (auto i : indices) {
        out.images.insert(out.images.end(), images.begin() + static_cast<std::ptrdiff_t>(i * m),
                          images.begin() + static_cast<std::ptrdiff_t>((i + 1) * m));
        out.labels.push_back(labels.at(i));
    }
    return out;
}

std::vector<std::size_t> Dataset::class_counts() const {
    std::vector<std::size_t> counts(classes, 0);
    for (int y : labels) ++counts.at(static_cast<std::size_t>(y));
    return counts;
}

void Dataset::validate() const {
    if (images.size() != labels.size() * sample_numel()) throw ShapeError("dataset image buffer size mismatch");
    for (double v : images)
        if (!(v >= 0.0 && v <= 1.0)) throw DomainError("dataset pixel outside [0,1]");
    for (int y : labels)
        if (y < 0 || static_cast<std::size_t>(y) >= classes) throw DomainError("dataset label out of range");
}

Dataset synth_dataset(const SynthConfig& cfg) {
    if (cfg.classes < 2) throw ConfigError("synthetic dataset needs at least 2 classes");
    if (cfg.size < 8) throw ConfigError("synthetic images must be at least 8×8");
    if (cfg.channels < 1) throw ConfigError("synthetic images need at least one channel");
    Dataset ds{cfg.channels, cfg.size, cfg.size, cfg.classes, {}, {}, cfg.split};
    const auto m = ds.sample_numel();
    const std::size_t n = cfg.classes * cfg.n_per_class;
    ds.images.resize(n * m);
    ds.labels.resize(n);
    Rng rng(mix_seed(cfg.seed, cfg.split == Split::Train ? 1 : 2));
    const auto order = rng.permutation(n);
    const double s = static_cast<double>(cfg.size);
    const double half_len = 0.3 * s;
    const double half_thick = std::max(1.0, s / 16.0);
    for (std::size_t k = 0; k < n; ++k) {
        const auto idx = order[k];
        const auto cls = k % cfg.classes;
        ds.labels[idx] = static_cast<int>(cls);
        double* img = ds.images.data() + idx * m;
        const double background = rng.uniform(0.3, 0.6);
        const double contrast = rng.uniform(cfg.shape_contrast_lo, cfg.shape_contrast_hi);
        const auto jitter_span = 2 * cfg.jitter + 1;
        const double cx = s / 2.0 + static_cast<double>(rng.index(jitter_span)) - static_cast<double>(cfg.jitter);
        const double cy = s / 2.0 + static_cast<double>(rng.index(jitter_span)) - static_cast<double>(cfg.jitter);
        std::vector<double> tint(cfg.channels);
        for (auto& t : tint) t = rng.uniform(0.7, 1.0);
        for (std::size_t c = 0; c < cfg.channels; ++c) {
            for (std::size_t y = 0; y < cfg.size; ++y) {
                for (std::size_t x = 0; x < cfg.size; ++x) {
                    const double dx = static_cast<double>(x) + 0.5 - cx;
                    const double dy = static_cast<double>(y) + 0.5 - cy;
                    double v = background;
                    if (in_shape(cls, dx, dy, half_len, half_thick)) v += contrast * tint[c];
                    v += cfg.texture_amplitude * texture(cls, cfg.channels, c, y, x);
                    v += cfg.noise_sd * rng.normal();
                    img[(c * cfg.size + y) * cfg.size + x] = std::clamp(v, 0.0, 1.0);
                }
            }
        }
    }
    return ds;
}

// --- binary format ---------------------------------------------------------------

void save_dataset(const std::filesystem::path& path, const Dataset& ds) {
    ds.validate();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    out.write(kMagic, 4);
    put_u32(out, static_cast<std::uint32_t>(ds.size()));
    put_u32(out, static_cast<std::uint32_t>(ds.classes));
    put_u32(out, static_cast<std::uint32_t>(ds.channels));
    put_u32(out, static_cast<std::uint32_t>(ds.height));
    put_u32(out, static_cast<std::uint32_t>(ds.width));
    for (double v : ds.images) out.put(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
    for (int y : ds.labels) {
        out.put(static_cast<char>(y & 0xff));
        out.put(static_cast<char>((y >> 8) & 0xff));
    }
    if (!out) throw Error("failed writing " + path.string());
}

Dataset load_dataset(const std::filesystem::path& path) {
    const auto buf = read_all(path);
    auto fail = [&](std::size_t offset, const std::string& what) {
        throw FormatError(path.string() + ": " + what + " at byte " + std::to_string(offset));
    };
    if (buf.size() < kHeaderBytes) fail(buf.size(), "truncated header");
    if (!std::equal(kMagic, kMagic + 4, buf.begin())) fail(0, "bad magic");
    Dataset ds;
    const auto n = get_u32(buf, 4);
    ds.classes = get_u32(buf, 8);
    ds.channels = get_u32(buf, 12);
    ds.height = get_u32(buf, 16);
    ds.width = get_u32(buf, 20);
    if (ds.classes == 0) fail(8, "zero class count");
    if (ds.channels == 0 || ds.height == 0 || ds.width == 0) fail(12, "zero image extent");
    const std::size_t pixels = static_cast<std::size_t>(n) * ds.sample_numel();
    const std::size_t expected = kHeaderBytes + pixels + 2 * static_cast<std::size_t>(n);
    if (buf.size() < expected) fail(buf.size(), "truncated payload (expected " + std::to_string(expected) + " bytes)");
    if (buf.size() > expected) fail(expected, "trailing bytes");
    ds.images.resize(pixels);
    for (std::size_t i = 0; i < pixels; ++i) ds.images[i] = static_cast<double>(buf[kHeaderBytes + i]) / 255.0;
    ds.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto off = kHeaderBytes + pixels + 2 * i;
        const int y = buf[off] | (buf[off + 1] << 8);
        if (static_cast<std::size_t>(y) >= ds.classes) fail(off, "label " + std::to_string(y) + " out of range");
        ds.labels[i] = y;
    }
    return ds;
}

Dataset load_subset(const std::filesystem::path& path, std::size_t n_per_class) {
    const auto full = load_dataset(path);
    std::vector<std::size_t> taken(full.classes, 0);
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < full.size(); ++i) {
        auto& t = taken[static_cast<std::size_t>(full.labels[i])];
        if (t < n_per_class) {
            keep.push_back(i);
            ++t;
        }
    }
    return full.subset(keep);
}

Dataset ingest_cifar10(const std::vector<std::filesystem::path>& batches, std::size_t n_per_class, Split split) {
    constexpr std::size_t kRecord = 1 + 3 * 32 * 32;
    Dataset ds{3, 32, 32, 10, {}, {}, split};
    std::vector<std::size_t> taken(10, 0);
    for (const auto& path : batches) {
        const auto buf = read_all(path);
        if (buf.size() % kRecord != 0) {
            throw FormatError(path.string() + ": size is not a multiple of the record length, trailing record at byte " +
                              std::to_string(buf.size() - buf.size() % kRecord));
        }
        for (std::size_t off = 0; off < buf.size(); off += kRecord) {
            const auto label = buf[off];
            if (label >= 10) throw FormatError(path.string() + ": label " + std::to_string(label) + " at byte " + std::to_string(off));
            if (taken[label] >= n_per_class) continue;
            ++taken[label];
            ds.labels.push_back(label);
            for (std::size_t i = 1; i < kRecord; ++i) ds.images.push_back(static_cast<double>(buf[off + i]) / 255.0);
        }
    }
    return ds;
}

// --- augmentation & batching -----------------------------------------------------

Tensor augment(const Tensor& batch, bool flip, std::size_t crop_pad, std::uint64_t seed) {
    if (batch.rank() != 4) throw ShapeError("augment expects N×C×H×W, got " + shape_str(batch.shape()));
    if (!flip && crop_pad == 0) return batch.detach();
    const auto n = batch.dim(0), c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
    Rng rng(seed);
    std::vector<double> out(batch.numel(), 0.0);
    const auto src = batch.data();
    for (std::size_t ni = 0; ni < n; ++ni) {
        const bool do_flip = flip && rng.uniform() < 0.5;
        const auto oy = crop_pad ? rng.index(2 * crop_pad + 1) : crop_pad;
        const auto ox = crop_pad ? rng.index(2 * crop_pad + 1) : crop_pad;
        for (std::size_t ci = 0; ci < c; ++ci)
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t x = 0; x < w; ++x) {
                    // window coordinates in the padded image
                    const auto py = static_cast<std::ptrdiff_t>(y + oy) - static_cast<std::ptrdiff_t>(crop_pad);
                    auto px = static_cast<std::ptrdiff_t>(x + ox) - static_cast<std::ptrdiff_t>(crop_pad);
                    if (py < 0 || px < 0 || py >= static_cast<std::ptrdiff_t>(h) || px >= static_cast<std::ptrdiff_t>(w)) {
                        continue;
                    }
                    if (do_flip) px = static_cast<std::ptrdiff_t>(w) - 1 - px;
                    out[((ni * c + ci) * h + y) * w + x] = src[((ni * c + ci) * h + py) * w + px];
                }
    }
    return Tensor::from(batch.shape(), std::move(out));
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
    Rng rng(mix_seed(seed, epoch));
    return rng.permutation(n);
}

std::vector<std::vector<std::size_t>> make_batches(const std::vector<std::size_t>& order, std::size_t batch_size,
                                                   bool drop_last) {
    if (batch_size == 0) throw ConfigError("batch size must be >= 1");
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
        const auto end = std::min(order.size(), start + batch_size);
        if (drop_last && end - start < batch_size) break;
        out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start), order.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return out;
}

}  // namespace rnascl::data
