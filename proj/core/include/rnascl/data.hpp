#ifndef RNASCL_DATA_HPP
#define RNASCL_DATA_HPP

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "rnascl/tensor.hpp"

namespace rnascl::data {

enum class Split { Train, Test };

struct Dataset {
    std::size_t channels = 3;
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t classes = 0;
    std::vector<double> images;  // N×C×H×W, values in [0, 1]
    std::vector<int> labels;
    Split split = Split::Train;

    [[nodiscard]] std::size_t size() const { return labels.size(); }
    [[nodiscard]] std::size_t sample_numel() const { return channels * height * width; }

    [[nodiscard]] Tensor images_at(std::span<const std::size_t> indices) const;
    [[nodiscard]] std::vector<int> labels_at(std::span<const std::size_t> indices) const;
    [[nodiscard]] Dataset subset(std::span<const std::size_t> indices) const;
    [[nodiscard]] std::vector<std::size_t> class_counts() const;

    /// Throws if pixels leave [0,1], labels leave [0, classes), or sizes disagree.
    void validate() const;
};

/// Class-conditional synthetic images. Each class pairs a large, high-contrast
/// shape (horizontal bar, vertical bar, plus, ring, ...) with a faint
/// class-specific high-frequency texture whose amplitude is below the attack
/// budget. Both cues predict the label; only the shape survives an l∞ attack.
struct SynthConfig {
    std::size_t classes = 4;
    std::size_t n_per_class = 128;
    std::size_t size = 16;
    std::size_t channels = 3;
    std::uint64_t seed = 0;
    double shape_contrast_lo = 0.25;
    double shape_contrast_hi = 0.45;
    double texture_amplitude = 4.0 / 255.0;
    double noise_sd = 0.08;
    std::size_t jitter = 2;
    Split split = Split::Train;
};

Dataset synth_dataset(const SynthConfig& cfg);

// On-disk format (all integers little-endian):
//   offset 0   4 bytes  magic "RNDS"
//   offset 4   u32      sample count N
//   offset 8   u32      class count K
//   offset 12  u32      channels C
//   offset 16  u32      height H
//   offset 20  u32      width W
//   offset 24  N·C·H·W  u8 pixels, sample-major, channel-major inside a sample
//   then       N        u16 labels
// Pixels map to [0,1] as value / 255.
void save_dataset(const std::filesystem::path& path, const Dataset& ds);
Dataset load_dataset(const std::filesystem::path& path);
/// First n_per_class samples of each class, in file order.
Dataset load_subset(const std::filesystem::path& path, std::size_t n_per_class);

/// Reads CIFAR-10 binary batches (1 label byte + 3072 pixel bytes per record)
/// and keeps the first n_per_class images of each class.
Dataset ingest_cifar10(const std::vector<std::filesystem::path>& batches, std::size_t n_per_class, Split split);

/// Horizontal flip with probability 0.5 per sample (when enabled), then zero
/// pad by crop_pad and take a random window of the original size.
Tensor augment(const Tensor& batch, bool flip, std::size_t crop_pad, std::uint64_t seed);

/// Sample order for one epoch; a pure function of (seed, epoch).
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch);

/// Splits an epoch order into batches; a trailing short batch is dropped
/// when drop_last is set.
std::vector<std::vector<std::size_t>> make_batches(const std::vector<std::size_t>& order, std::size_t batch_size,
                                                   bool drop_last);

}  // namespace rnascl::data

#endif  // RNASCL_DATA_HPP
