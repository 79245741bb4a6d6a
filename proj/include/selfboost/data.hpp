#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "selfboost/tensor.hpp"

namespace selfboost {

enum class CifarVariant { cifar10, cifar100 };

/// Bytes per record: label byte(s) followed by 3 x 32 x 32 pixel planes.
std::size_t cifar_record_bytes(CifarVariant variant);
std::size_t cifar_classes(CifarVariant variant);

struct Standardization {
  std::vector<double> mean;
  std::vector<double> stddev;
};

/// Labelled images in NCHW order, pixel values in [0, 1] until standardized.
struct Dataset {
  std::size_t channels = 3, height = 32, width = 32;
  std::size_t classes = 10;
  std::vector<float> images;
  std::vector<int> labels;
  std::vector<int> coarse_labels;  // cifar100 only
  std::string split = "train";
  std::optional<Standardization> standardization;

  std::size_t size() const { return labels.size(); }
  std::size_t image_size() const { return channels * height * width; }
  std::span<const float> image(std::size_t i) const { return {images.data() + i * image_size(), image_size()}; }

  /// Checks N > 0, buffer length and label range.
  void validate() const;
};

/// Reads one CIFAR binary batch file. Throws FormatError naming the byte
/// offset of a truncated trailing record or an out-of-range label.
Dataset load_cifar_binary(const std::filesystem::path& path, CifarVariant variant);
/// Concatenation of several batch files.
Dataset load_cifar_binary(std::span<const std::filesystem::path> paths, CifarVariant variant);
/// Inverse of the loader for unstandardized 3x32x32 data (pixels rounded to bytes).
void write_cifar_binary(const Dataset& data, const std::filesystem::path& path, CifarVariant variant);

Standardization compute_standardization(const Dataset& data);
void apply_standardization(Dataset& data, const Standardization& stats);

/// Class-conditional coloured shapes on a noisy background. Balanced labels;
/// fully determined by the seed.
Dataset synth_dataset(std::uint64_t seed, std::size_t n, std::size_t classes, std::size_t size = 32);

/// Random crop offsets (into the 4-pixel padded image) and flip coin.
struct AugmentDraw {
  std::size_t dy = 4, dx = 4;
  bool flip = false;
};

AugmentDraw draw_augment(std::uint64_t seed, std::size_t epoch, std::size_t index);
std::vector<float> reflect_pad(std::span<const float> image, std::size_t channels, std::size_t height,
                               std::size_t width, std::size_t pad);
std::vector<float> crop(std::span<const float> image, std::size_t channels, std::size_t height, std::size_t width,
                        std::size_t dy, std::size_t dx, std::size_t out_height, std::size_t out_width);
void hflip(std::span<float> image, std::size_t channels, std::size_t height, std::size_t width);
/// Reflect-pad by 4, crop back to the original size at the drawn offset, then flip if drawn.
std::vector<float> augment(std::span<const float> image, std::size_t channels, std::size_t height, std::size_t width,
                           const AugmentDraw& draw);

/// Seeded permutation of `pool` cut into batches; the last batch may be short.
std::vector<std::vector<std::size_t>> epoch_batches(std::span<const std::size_t> pool, std::size_t batch_size,
                                                    std::uint64_t seed, std::size_t epoch);
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                                    std::size_t epoch);

/// Two disjoint index sets of sizes ceil(n/2) and floor(n/2) covering 0..n-1.
struct HalfSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};
HalfSplit split_dataset_half(std::size_t n, std::uint64_t seed);

template <typename S>
struct Batch {
  Tensor<S> images;
  std::vector<int> labels;
  std::vector<std::size_t> indices;
};

struct AugmentSchedule {
  std::uint64_t seed = 0;
  std::size_t epoch = 0;
};

/// Gathers `indices` into an (B, C, H, W) tensor; augments when `schedule` is set.
template <typename S>
Batch<S> make_batch(const Dataset& data, std::span<const std::size_t> indices,
                    const std::optional<AugmentSchedule>& schedule = std::nullopt);

/// Stateless 64-bit mixer used to derive per-purpose seeds.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

/// Sidecar text: split, sizes, class count and standardization statistics (JSON).
std::string dataset_metadata(const Dataset& data);

}  // namespace selfboost
