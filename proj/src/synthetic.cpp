#include "bclab/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "bclab/report.hpp"
#include "bclab/rng.hpp"

namespace bclab {

std::vector<ImageExample> make_synthetic_images(const SyntheticSpec& spec, Split split) {
  Rng rng = Rng::derive(spec.seed, split == Split::train ? "synthetic-train" : "synthetic-test");
  constexpr std::size_t plane = kImageSide * kImageSide;
  std::vector<ImageExample> out;
  out.reserve(spec.num_classes * spec.per_class);
  // Interleave classes so that any prefix is roughly balanced.
  for (std::size_t i = 0; i < spec.per_class; ++i) {
    for (std::size_t c = 0; c < spec.num_classes; ++c) {
      const double angle = std::numbers::pi * static_cast<double>(c % 5) / 5.0;
      const double freq = 2.0 * std::numbers::pi * (2.0 + static_cast<double>(c / 5 % 4)) / 32.0;
      const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
      ImageExample ex{Tensor32(Shape{3, kImageSide, kImageSide}), static_cast<std::uint32_t>(c)};
      for (std::size_t ch = 0; ch < 3; ++ch) {
        const double base = 128.0 + 50.0 * std::cos(2.0 * std::numbers::pi *
                                                     (static_cast<double>(c) / spec.num_classes +
                                                      static_cast<double>(ch) / 3.0));
        for (std::size_t y = 0; y < kImageSide; ++y) {
          for (std::size_t x = 0; x < kImageSide; ++x) {
            const double u = std::cos(angle) * x + std::sin(angle) * y;
            const double v = base + 45.0 * std::sin(freq * u + phase) + spec.noise * rng.normal();
            ex.pixels[ch * plane + y * kImageSide + x] =
                static_cast<float>(std::clamp(std::round(v), 0.0, 255.0));
          }
        }
      }
      out.push_back(std::move(ex));
    }
  }
  return out;
}

void write_synthetic_cifar(const std::filesystem::path& root, CifarVariant which,
                           std::uint64_t seed, double noise) {
  const std::size_t k = num_classes(which);
  SyntheticSpec spec{k, 50000 / k, seed, noise};
  const auto train = make_synthetic_images(spec, Split::train);
  spec.per_class = 10000 / k;
  const auto test = make_synthetic_images(spec, Split::test);
  if (which == CifarVariant::cifar10) {
    const auto dir = root / "cifar-10-batches-bin";
    std::filesystem::create_directories(dir);
    for (std::size_t b = 0; b < 5; ++b) {
      write_cifar_file(dir / ("data_batch_" + std::to_string(b + 1) + ".bin"), which,
                       std::span<const ImageExample>(train).subspan(b * 10000, 10000));
    }
    write_cifar_file(dir / "test_batch.bin", which, test);
  } else {
    const auto dir = root / "cifar-100-binary";
    std::filesystem::create_directories(dir);
    write_cifar_file(dir / "train.bin", which, train);
    write_cifar_file(dir / "test.bin", which, test);
  }
  const auto dir = root / (which == CifarVariant::cifar10 ? "cifar-10-batches-bin" : "cifar-100-binary");
  write_file_atomic(dir / kSyntheticMarker, "synthetic images, seed " + std::to_string(seed) + "\n");
}

bool is_synthetic_cifar(const std::filesystem::path& root) {
  for (const auto* sub : {"", "cifar-10-batches-bin", "cifar-100-binary"}) {
    if (std::filesystem::exists(root / sub / kSyntheticMarker)) return true;
  }
  return false;
}

}  // namespace bclab
