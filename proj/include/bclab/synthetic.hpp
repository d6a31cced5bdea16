#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "bclab/dataset.hpp"

namespace bclab {

// Class-conditional stand-in images in CIFAR layout: every class owns a
// colour and an oriented stripe pattern, and each image adds a random phase
// shift plus Gaussian pixel noise. Useful for pipeline tests; not a
// substitute for the real dataset.
struct SyntheticSpec {
  std::size_t num_classes = 10;
  std::size_t per_class = 100;
  std::uint64_t seed = 1;
  double noise = 40.0;  // pixel-unit standard deviation
};

std::vector<ImageExample> make_synthetic_images(const SyntheticSpec& spec, Split split);

// Writes full-size binary batches (50000 train + 10000 test records) under
// `root`, in the directory layout load_cifar expects, plus a marker file
// named kSyntheticMarker beside the batches.
void write_synthetic_cifar(const std::filesystem::path& root, CifarVariant which,
                           std::uint64_t seed, double noise = 40.0);

inline constexpr const char* kSyntheticMarker = "SYNTHETIC";

// True when `root` (or its batch directory) carries the synthetic marker.
bool is_synthetic_cifar(const std::filesystem::path& root);

}  // namespace bclab
