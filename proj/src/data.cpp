#include "selfboost/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>

#include <json.hpp>

namespace selfboost {

namespace {

constexpr std::size_t kCifarSide = 32;
constexpr std::size_t kCifarPixels = 3 * kCifarSide * kCifarSide;
constexpr std::size_t kAugmentPad = 4;

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  // splitmix64 finalizer over a combined word
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::size_t cifar_record_bytes(CifarVariant variant) {
  return (variant == CifarVariant::cifar10 ? 1 : 2) + kCifarPixels;
}

std::size_t cifar_classes(CifarVariant variant) { return variant == CifarVariant::cifar10 ? 10 : 100; }

void Dataset::validate() const {
  if (labels.empty()) throw InputError("dataset is empty");
  if (images.size() != labels.size() * image_size()) throw DimensionError("dataset image buffer has the wrong length");
  for (auto y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= classes) throw InputError("dataset label out of range");
  }
}

Dataset load_cifar_binary(const std::filesystem::path& path, CifarVariant variant) {
  const auto bytes = read_file(path);
  const std::size_t record = cifar_record_bytes(variant);
  const std::size_t label_bytes = record - kCifarPixels;
  const std::size_t complete = bytes.size() / record;
  if (bytes.size() % record != 0) {
    throw FormatError("'" + path.string() + "': truncated record at byte offset " + std::to_string(complete * record) +
                      " (file size " + std::to_string(bytes.size()) + " is not a multiple of " +
                      std::to_string(record) + ")");
  }
  if (complete == 0) throw FormatError("'" + path.string() + "': no records");

  Dataset out;
  out.classes = cifar_classes(variant);
  out.images.resize(complete * kCifarPixels);
  out.labels.resize(complete);
  if (variant == CifarVariant::cifar100) out.coarse_labels.resize(complete);
  for (std::size_t i = 0; i < complete; ++i) {
    const unsigned char* rec = bytes.data() + i * record;
    const int label = rec[label_bytes - 1];
    if (static_cast<std::size_t>(label) >= out.classes) {
      throw FormatError("'" + path.string() + "': label " + std::to_string(label) + " at byte offset " +
                        std::to_string(i * record + label_bytes - 1) + " exceeds class count " +
                        std::to_string(out.classes));
    }
    out.labels[i] = label;
    if (variant == CifarVariant::cifar100) out.coarse_labels[i] = rec[0];
    float* dst = out.images.data() + i * kCifarPixels;
    for (std::size_t p = 0; p < kCifarPixels; ++p) dst[p] = static_cast<float>(rec[label_bytes + p]) / 255.0f;
  }
  return out;
}

Dataset load_cifar_binary(std::span<const std::filesystem::path> paths, CifarVariant variant) {
  if (paths.empty()) throw InputError("no CIFAR files given");
  Dataset out = load_cifar_binary(paths.front(), variant);
  for (std::size_t i = 1; i < paths.size(); ++i) {
    Dataset more = load_cifar_binary(paths[i], variant);
    out.images.insert(out.images.end(), more.images.begin(), more.images.end());
    out.labels.insert(out.labels.end(), more.labels.begin(), more.labels.end());
    out.coarse_labels.insert(out.coarse_labels.end(), more.coarse_labels.begin(), more.coarse_labels.end());
  }
  return out;
}

void write_cifar_binary(const Dataset& data, const std::filesystem::path& path, CifarVariant variant) {
  data.validate();
  if (data.channels != 3 || data.height != kCifarSide || data.width != kCifarSide) {
    throw DimensionError("CIFAR records hold 3x32x32 images");
  }
  if (data.standardization) throw InputError("cannot write standardized images as CIFAR bytes");
  if (data.classes > cifar_classes(variant)) throw InputError("too many classes for this CIFAR variant");
  const std::size_t record = cifar_record_bytes(variant);
  const std::size_t label_bytes = record - kCifarPixels;
  std::vector<unsigned char> bytes(data.size() * record);
  for (std::size_t i = 0; i < data.size(); ++i) {
    unsigned char* rec = bytes.data() + i * record;
    if (variant == CifarVariant::cifar100) {
      rec[0] = static_cast<unsigned char>(data.coarse_labels.empty() ? 0 : data.coarse_labels[i]);
    }
    rec[label_bytes - 1] = static_cast<unsigned char>(data.labels[i]);
    const auto img = data.image(i);
    for (std::size_t p = 0; p < kCifarPixels; ++p) {
      const float v = std::clamp(img[p], 0.0f, 1.0f);
      rec[label_bytes + p] = static_cast<unsigned char>(std::lround(v * 255.0f));
    }
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Standardization compute_standardization(const Dataset& data) {
  data.validate();
  const std::size_t plane = data.height * data.width;
  Standardization s;
  s.mean.assign(data.channels, 0.0);
  s.stddev.assign(data.channels, 0.0);
  for (std::size_t c = 0; c < data.channels; ++c) {
    double sum = 0.0, sq = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      const float* p = data.images.data() + i * data.image_size() + c * plane;
      for (std::size_t k = 0; k < plane; ++k) {
        sum += p[k];
        sq += static_cast<double>(p[k]) * p[k];
      }
    }
    const double count = static_cast<double>(data.size() * plane);
    s.mean[c] = sum / count;
    s.stddev[c] = std::sqrt(std::max(sq / count - s.mean[c] * s.mean[c], 1e-12));
  }
  return s;
}

void apply_standardization(Dataset& data, const Standardization& stats) {
  if (data.standardization) throw InputError("dataset is already standardized");
  if (stats.mean.size() != data.channels || stats.stddev.size() != data.channels) {
    throw DimensionError("standardization statistics do not match the channel count");
  }
  const std::size_t plane = data.height * data.width;
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (std::size_t c = 0; c < data.channels; ++c) {
      float* p = data.images.data() + i * data.image_size() + c * plane;
      const double m = stats.mean[c], s = stats.stddev[c];
      for (std::size_t k = 0; k < plane; ++k) p[k] = static_cast<float>((p[k] - m) / s);
    }
  }
  data.standardization = stats;
}

namespace {

struct Rgb {
  double r, g, b;
};

Rgb hue_to_rgb(double hue, double saturation, double value) {
  const double h = std::fmod(hue, 1.0) * 6.0;
  const double c = value * saturation;
  const double x = c * (1.0 - std::abs(std::fmod(h, 2.0) - 1.0));
  const double m = value - c;
  Rgb out{0, 0, 0};
  switch (static_cast<int>(h)) {
    case 0: out = {c, x, 0}; break;
    case 1: out = {x, c, 0}; break;
    case 2: out = {0, c, x}; break;
    case 3: out = {0, x, c}; break;
    case 4: out = {x, 0, c}; break;
    default: out = {c, 0, x}; break;
  }
  return {out.r + m, out.g + m, out.b + m};
}

/// Membership test for the shape family of a class, in units of the radius.
bool inside_shape(std::size_t kind, double u, double v) {
  switch (kind % 8) {
    case 0: return u * u + v * v <= 1.0;
    case 1: return std::max(std::abs(u), std::abs(v)) <= 0.8;
    case 2: {
      const double d = std::sqrt(u * u + v * v);
      return d <= 1.0 && d >= 0.55;
    }
    case 3: return (std::abs(u) <= 0.3 && std::abs(v) <= 1.0) || (std::abs(v) <= 0.3 && std::abs(u) <= 1.0);
    case 4: return v >= -0.9 && v <= 0.9 && std::abs(u) <= (v + 0.9) * 0.55;
    case 5: return std::abs(u) + std::abs(v) <= 1.0;
    case 6: return std::abs(v) <= 0.35 && std::abs(u) <= 1.0;
    default: return std::abs(u) <= 0.35 && std::abs(v) <= 1.0;
  }
}

// Difficulty knobs of the synthetic task.
constexpr double kPixelNoise = 0.12;
constexpr double kClassColourProbability = 0.6;
constexpr double kDistractorProbability = 0.5;

void paint_shape(std::vector<float>& img, std::size_t side, std::size_t kind, double cx, double cy, double radius,
                 const Rgb& colour, double opacity) {
  const std::size_t plane = side * side;
  const double ch[3] = {colour.r, colour.g, colour.b};
  for (std::size_t y = 0; y < side; ++y) {
    for (std::size_t x = 0; x < side; ++x) {
      const double u = (static_cast<double>(x) + 0.5 - cx) / radius;
      const double v = (static_cast<double>(y) + 0.5 - cy) / radius;
      if (!inside_shape(kind, u, v)) continue;
      for (std::size_t c = 0; c < 3; ++c) {
        float& p = img[c * plane + y * side + x];
        p = static_cast<float>((1.0 - opacity) * p + opacity * ch[c]);
      }
    }
  }
}

}  // namespace

Dataset synth_dataset(std::uint64_t seed, std::size_t n, std::size_t classes, std::size_t size) {
  if (classes < 2) throw InputError("synthetic data needs at least 2 classes");
  if (n < classes) throw InputError("synthetic data needs n >= classes");
  if (size < 8) throw InputError("synthetic images must be at least 8 pixels wide");
  std::mt19937_64 rng(mix_seed(seed, 0x5e7d));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);

  Dataset out;
  out.channels = 3;
  out.height = out.width = size;
  out.classes = classes;
  out.split = "synthetic";
  out.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.labels[i] = static_cast<int>(i % classes);
  std::shuffle(out.labels.begin(), out.labels.end(), rng);

  const double side = static_cast<double>(size);
  const std::size_t plane = size * size;
  out.images.resize(n * 3 * plane);
  for (std::size_t i = 0; i < n; ++i) {
    const auto label = static_cast<std::size_t>(out.labels[i]);
    std::vector<float> img(3 * plane);

    // Background: per-channel level plus a random linear ramp.
    const double gx = normal(rng) * 0.15, gy = normal(rng) * 0.15;
    for (std::size_t c = 0; c < 3; ++c) {
      const double level = 0.25 + 0.3 * unit(rng);
      for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x) {
          img[c * plane + y * size + x] = static_cast<float>(
              level + gx * (static_cast<double>(x) / side - 0.5) + gy * (static_cast<double>(y) / side - 0.5));
        }
    }

    if (unit(rng) < kDistractorProbability) {
      const std::size_t kind = static_cast<std::size_t>(unit(rng) * 8.0);
      const Rgb colour = hue_to_rgb(unit(rng), 0.6, 0.8);
      paint_shape(img, size, kind, side * (0.2 + 0.6 * unit(rng)), side * (0.2 + 0.6 * unit(rng)),
                  side * (0.06 + 0.05 * unit(rng)), colour, 0.8);
    }

    const double hue = unit(rng) < kClassColourProbability
                           ? std::fmod(static_cast<double>(label) * 0.6180339887 + 0.05 * normal(rng) + 1.0, 1.0)
                           : unit(rng);
    const Rgb colour = hue_to_rgb(hue, 0.55 + 0.35 * unit(rng), 0.65 + 0.3 * unit(rng));
    const double radius = side * (0.16 + 0.12 * unit(rng));
    const double cx = side * (0.3 + 0.4 * unit(rng)), cy = side * (0.3 + 0.4 * unit(rng));
    paint_shape(img, size, label, cx, cy, radius, colour, 0.75 + 0.25 * unit(rng));

    float* dst = out.images.data() + i * 3 * plane;
    for (std::size_t k = 0; k < 3 * plane; ++k) {
      dst[k] = static_cast<float>(std::clamp(img[k] + kPixelNoise * normal(rng), 0.0, 1.0));
    }
  }
  return out;
}

AugmentDraw draw_augment(std::uint64_t seed, std::size_t epoch, std::size_t index) {
  std::mt19937_64 rng(mix_seed(mix_seed(seed, epoch), index));
  std::uniform_int_distribution<std::size_t> offset(0, 2 * kAugmentPad);
  AugmentDraw d;
  d.dy = offset(rng);
  d.dx = offset(rng);
  d.flip = std::uniform_int_distribution<int>(0, 1)(rng) == 1;
  return d;
}

std::vector<float> reflect_pad(std::span<const float> image, std::size_t channels, std::size_t height,
                               std::size_t width, std::size_t pad) {
  if (pad >= height || pad >= width) throw DimensionError("reflect padding must be smaller than the image");
  const std::size_t H = height + 2 * pad, W = width + 2 * pad;
  auto reflect = [](long i, long n) {
    if (i < 0) return -i;
    if (i >= n) return 2 * (n - 1) - i;
    return i;
  };
  std::vector<float> out(channels * H * W);
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t y = 0; y < H; ++y) {
      const long sy = reflect(static_cast<long>(y) - static_cast<long>(pad), static_cast<long>(height));
      for (std::size_t x = 0; x < W; ++x) {
        const long sx = reflect(static_cast<long>(x) - static_cast<long>(pad), static_cast<long>(width));
        out[(c * H + y) * W + x] = image[(c * height + static_cast<std::size_t>(sy)) * width + static_cast<std::size_t>(sx)];
      }
    }
  return out;
}

std::vector<float> crop(std::span<const float> image, std::size_t channels, std::size_t height, std::size_t width,
                        std::size_t dy, std::size_t dx, std::size_t out_height, std::size_t out_width) {
  if (dy + out_height > height || dx + out_width > width) throw DimensionError("crop window exceeds the image");
  std::vector<float> out(channels * out_height * out_width);
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t y = 0; y < out_height; ++y)
      std::copy_n(image.data() + (c * height + y + dy) * width + dx, out_width,
                  out.data() + (c * out_height + y) * out_width);
  return out;
}

void hflip(std::span<float> image, std::size_t channels, std::size_t height, std::size_t width) {
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t y = 0; y < height; ++y) {
      float* row = image.data() + (c * height + y) * width;
      std::reverse(row, row + width);
    }
}

std::vector<float> augment(std::span<const float> image, std::size_t channels, std::size_t height, std::size_t width,
                           const AugmentDraw& draw) {
  const auto padded = reflect_pad(image, channels, height, width, kAugmentPad);
  auto out = crop(padded, channels, height + 2 * kAugmentPad, width + 2 * kAugmentPad, draw.dy, draw.dx, height, width);
  if (draw.flip) hflip(out, channels, height, width);
  return out;
}

std::vector<std::vector<std::size_t>> epoch_batches(std::span<const std::size_t> pool, std::size_t batch_size,
                                                    std::uint64_t seed, std::size_t epoch) {
  if (batch_size < 1) throw InputError("batch size must be >= 1");
  std::vector<std::size_t> order(pool.begin(), pool.end());
  std::mt19937_64 rng(mix_seed(seed, epoch));
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t stop = std::min(order.size(), start + batch_size);
    batches.emplace_back(order.begin() + static_cast<long>(start), order.begin() + static_cast<long>(stop));
  }
  return batches;
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                                    std::size_t epoch) {
  std::vector<std::size_t> pool(n);
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  return epoch_batches(pool, batch_size, seed, epoch);
}

HalfSplit split_dataset_half(std::size_t n, std::uint64_t seed) {
  if (n < 2) throw InputError("cannot split fewer than 2 samples in half");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(mix_seed(seed, 0x4a1f));
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t first = (n + 1) / 2;
  HalfSplit split;
  split.train.assign(order.begin(), order.begin() + static_cast<long>(first));
  split.test.assign(order.begin() + static_cast<long>(first), order.end());
  return split;
}

template <typename S>
Batch<S> make_batch(const Dataset& data, std::span<const std::size_t> indices,
                    const std::optional<AugmentSchedule>& schedule) {
  if (indices.empty()) throw InputError("empty batch");
  Batch<S> batch;
  batch.indices.assign(indices.begin(), indices.end());
  const std::size_t per = data.image_size();
  std::vector<S> pixels(indices.size() * per);
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const std::size_t i = indices[b];
    if (i >= data.size()) throw InputError("batch index out of range");
    batch.labels.push_back(data.labels[i]);
    S* dst = pixels.data() + b * per;
    if (schedule) {
      const auto img = augment(data.image(i), data.channels, data.height, data.width,
                               draw_augment(schedule->seed, schedule->epoch, i));
      std::copy(img.begin(), img.end(), dst);
    } else {
      const auto img = data.image(i);
      std::copy(img.begin(), img.end(), dst);
    }
  }
  batch.images = Tensor<S>({indices.size(), data.channels, data.height, data.width}, std::move(pixels));
  return batch;
}

std::string dataset_metadata(const Dataset& data) {
  nlohmann::ordered_json j;
  j["split"] = data.split;
  j["samples"] = data.size();
  j["classes"] = data.classes;
  j["channels"] = data.channels;
  j["height"] = data.height;
  j["width"] = data.width;
  std::vector<std::size_t> counts(data.classes, 0);
  for (auto y : data.labels) ++counts[static_cast<std::size_t>(y)];
  j["class_counts"] = counts;
  if (data.standardization) {
    j["standardization"] = {{"mean", data.standardization->mean}, {"stddev", data.standardization->stddev}};
  } else {
    j["standardization"] = nullptr;
  }
  return j.dump(2) + "\n";
}

template Batch<float> make_batch<float>(const Dataset&, std::span<const std::size_t>, const std::optional<AugmentSchedule>&);
template Batch<double> make_batch<double>(const Dataset&, std::span<const std::size_t>, const std::optional<AugmentSchedule>&);

}  // namespace selfboost
