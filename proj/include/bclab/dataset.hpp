#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "bclab/rng.hpp"
#include "bclab/tensor.hpp"

namespace bclab {

inline constexpr std::size_t kImageChannels = 3;
inline constexpr std::size_t kImageSide = 32;
inline constexpr std::size_t kImagePixels = kImageChannels * kImageSide * kImageSide;
inline constexpr std::size_t kAugmentPad = 4;

enum class CifarVariant { cifar10, cifar100 };
enum class Split { train, test };

std::size_t num_classes(CifarVariant which);
CifarVariant parse_cifar_variant(const std::string& name);

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ImageExample {
  Tensor32 pixels;  // 3x32x32, raw [0,255] at load
  std::uint32_t label = 0;
};

struct ChannelStats {
  std::array<double, 3> mean{};
  std::array<double, 3> std{};
  // Channels whose population std fell below kStdFloor and was replaced by it.
  std::array<bool, 3> guarded{};

  static constexpr double kStdFloor = 1e-6;
};

struct ImageStats {
  double mean = 0.0;
  double std = 0.0;
};

// Record size in bytes for one image of the given variant.
std::size_t cifar_record_bytes(CifarVariant which);

// Parses one binary batch file holding exactly `expected_records` records.
std::vector<ImageExample> read_cifar_file(const std::filesystem::path& file,
                                          CifarVariant which,
                                          std::size_t expected_records);

// Inverse of read_cifar_file. Pixel values are rounded and clamped to [0,255].
// CIFAR-100 records get coarse label 0.
void write_cifar_file(const std::filesystem::path& file, CifarVariant which,
                      std::span<const ImageExample> examples);

// `root` may be the extracted batch directory itself or its parent.
std::vector<ImageExample> load_cifar(const std::filesystem::path& root, CifarVariant which,
                                     Split split);

// First `count / num_classes` examples of every class in file order.
std::vector<ImageExample> stratified_subset(std::span<const ImageExample> examples,
                                            std::size_t count, std::size_t classes);

ChannelStats channel_stats(std::span<const ImageExample> train);

Tensor32 normalize(const Tensor32& pixels, const ChannelStats& stats);
inline Tensor32 normalize(const ImageExample& x, const ChannelStats& stats) {
  return normalize(x.pixels, stats);
}
Tensor32 denormalize(const Tensor32& normalized, const ChannelStats& stats);

struct AugmentParams {
  std::size_t offset_y = kAugmentPad;  // crop origin in the padded image, 0..8
  std::size_t offset_x = kAugmentPad;
  bool flip = false;
};

AugmentParams sample_augment(Rng& rng);

// Zero-pad by 4, crop 32x32 at the given origin, optionally mirror
// horizontally. Operates on CHW tensors of any channel count.
Tensor32 augment_with(const Tensor32& x, const AugmentParams& params);
Tensor32 augment(const Tensor32& x, Rng& rng);

// Population mean/std over every entry.
template <typename T>
ImageStats per_image_stats(std::span<const T> values) {
  if (values.empty()) return {};
  double sum = 0.0;
  for (T v : values) sum += static_cast<double>(v);
  const double mean = sum / static_cast<double>(values.size());
  double sq = 0.0;
  for (T v : values) {
    const double d = static_cast<double>(v) - mean;
    sq += d * d;
  }
  return {mean, std::sqrt(sq / static_cast<double>(values.size()))};
}

template <typename T>
ImageStats per_image_stats(const Tensor<T>& x) {
  return per_image_stats(x.data());
}

}  // namespace bclab
