#include "bclab/dataset.hpp"

#include <algorithm>
#include <fstream>

#include "bclab/instrumentation.hpp"

namespace bclab {

namespace instrumentation {
Counters& counters() {
  static Counters c;
  return c;
}
}  // namespace instrumentation

std::size_t num_classes(CifarVariant which) {
  return which == CifarVariant::cifar10 ? 10 : 100;
}

CifarVariant parse_cifar_variant(const std::string& name) {
  if (name == "cifar10") return CifarVariant::cifar10;
  if (name == "cifar100") return CifarVariant::cifar100;
  throw std::invalid_argument("unknown dataset '" + name + "' (expected cifar10 or cifar100)");
}

std::size_t cifar_record_bytes(CifarVariant which) {
  return (which == CifarVariant::cifar10 ? 1 : 2) + kImagePixels;
}

std::vector<ImageExample> read_cifar_file(const std::filesystem::path& file,
                                          CifarVariant which,
                                          std::size_t expected_records) {
  std::error_code ec;
  const auto actual = std::filesystem::file_size(file, ec);
  if (ec) throw FormatError("cannot stat " + file.string() + ": " + ec.message());
  const std::size_t record = cifar_record_bytes(which);
  const std::size_t expected = record * expected_records;
  if (actual != expected) {
    throw FormatError(file.string() + ": expected " + std::to_string(expected) +
                      " bytes, found " + std::to_string(actual));
  }
  std::ifstream in(file, std::ios::binary);
  if (!in) throw FormatError("cannot open " + file.string());
  std::vector<unsigned char> buf(expected);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(expected));
  if (!in) throw FormatError("short read from " + file.string());

  const std::size_t classes = num_classes(which);
  const std::size_t label_bytes = record - kImagePixels;
  std::vector<ImageExample> out;
  out.reserve(expected_records);
  for (std::size_t r = 0; r < expected_records; ++r) {
    const unsigned char* rec = buf.data() + r * record;
    // CIFAR-100 stores (coarse, fine); the fine label is the class.
    const std::uint32_t label = rec[label_bytes - 1];
    if (label >= classes) {
      throw FormatError(file.string() + ": record " + std::to_string(r) + " has label " +
                        std::to_string(label) + " >= " + std::to_string(classes) +
                        " (corrupt file?)");
    }
    ImageExample ex{Tensor32({kImageChannels, kImageSide, kImageSide}), label};
    const unsigned char* px = rec + label_bytes;
    for (std::size_t i = 0; i < kImagePixels; ++i) ex.pixels[i] = static_cast<float>(px[i]);
    out.push_back(std::move(ex));
  }
  return out;
}

void write_cifar_file(const std::filesystem::path& file, CifarVariant which,
                      std::span<const ImageExample> examples) {
  const std::size_t record = cifar_record_bytes(which);
  std::vector<unsigned char> buf(record * examples.size());
  for (std::size_t r = 0; r < examples.size(); ++r) {
    const auto& ex = examples[r];
    if (ex.pixels.size() != kImagePixels) {
      throw ShapeError("write_cifar_file: image " + std::to_string(r) + " has shape " +
                       shape_str(ex.pixels.shape()));
    }
    unsigned char* rec = buf.data() + r * record;
    if (which == CifarVariant::cifar100) *rec++ = 0;
    *rec++ = static_cast<unsigned char>(ex.label);
    for (std::size_t i = 0; i < kImagePixels; ++i) {
      const float v = std::clamp(std::round(ex.pixels[i]), 0.0f, 255.0f);
      rec[i] = static_cast<unsigned char>(v);
    }
  }
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + file.string());
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

namespace {

std::filesystem::path resolve_dir(const std::filesystem::path& root, const char* subdir,
                                  const char* probe) {
  if (std::filesystem::exists(root / probe)) return root;
  if (std::filesystem::exists(root / subdir / probe)) return root / subdir;
  throw FormatError("no " + std::string(probe) + " under " + root.string() + " or " +
                    (root / subdir).string());
}

}  // namespace

std::vector<ImageExample> load_cifar(const std::filesystem::path& root, CifarVariant which,
                                     Split split) {
  if (which == CifarVariant::cifar10) {
    const auto dir = resolve_dir(root, "cifar-10-batches-bin", "test_batch.bin");
    if (split == Split::test) return read_cifar_file(dir / "test_batch.bin", which, 10000);
    std::vector<ImageExample> all;
    all.reserve(50000);
    for (int i = 1; i <= 5; ++i) {
      auto part = read_cifar_file(dir / ("data_batch_" + std::to_string(i) + ".bin"), which, 10000);
      std::move(part.begin(), part.end(), std::back_inserter(all));
    }
    return all;
  }
  const auto dir = resolve_dir(root, "cifar-100-binary", "test.bin");
  return split == Split::test ? read_cifar_file(dir / "test.bin", which, 10000)
                              : read_cifar_file(dir / "train.bin", which, 50000);
}

std::vector<ImageExample> stratified_subset(std::span<const ImageExample> examples,
                                            std::size_t count, std::size_t classes) {
  if (count == 0 || count >= examples.size()) return {examples.begin(), examples.end()};
  const std::size_t per_class = count / classes;
  std::vector<std::size_t> taken(classes, 0);
  std::vector<ImageExample> out;
  out.reserve(per_class * classes);
  for (const auto& ex : examples) {
    if (ex.label < classes && taken[ex.label] < per_class) {
      ++taken[ex.label];
      out.push_back(ex);
    }
  }
  return out;
}

ChannelStats channel_stats(std::span<const ImageExample> train) {
  if (train.empty()) throw std::invalid_argument("channel_stats: empty training set");
  constexpr std::size_t plane = kImageSide * kImageSide;
  ChannelStats s;
  std::array<double, 3> sum{}, sq{};
  for (const auto& ex : train) {
    for (std::size_t c = 0; c < 3; ++c) {
      const float* p = ex.pixels.raw() + c * plane;
      for (std::size_t i = 0; i < plane; ++i) sum[c] += p[i];
    }
  }
  const double n = static_cast<double>(train.size() * plane);
  for (std::size_t c = 0; c < 3; ++c) s.mean[c] = sum[c] / n;
  for (const auto& ex : train) {
    for (std::size_t c = 0; c < 3; ++c) {
      const float* p = ex.pixels.raw() + c * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const double d = p[i] - s.mean[c];
        sq[c] += d * d;
      }
    }
  }
  for (std::size_t c = 0; c < 3; ++c) {
    s.std[c] = std::sqrt(sq[c] / n);
    if (s.std[c] < ChannelStats::kStdFloor) {
      s.std[c] = ChannelStats::kStdFloor;
      s.guarded[c] = true;
    }
  }
  return s;
}

namespace {

void require_image(const Tensor32& x, const char* op) {
  if (x.rank() != 3 || x.dim(0) != 3) {
    throw ShapeError(std::string(op) + ": expected a 3xHxW image, got " + shape_str(x.shape()));
  }
}

}  // namespace

Tensor32 normalize(const Tensor32& pixels, const ChannelStats& stats) {
  require_image(pixels, "normalize");
  const std::size_t plane = pixels.dim(1) * pixels.dim(2);
  Tensor32 out(pixels.shape());
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < plane; ++i) {
      const std::size_t k = c * plane + i;
      out[k] = static_cast<float>((pixels[k] - stats.mean[c]) / stats.std[c]);
    }
  return out;
}

Tensor32 denormalize(const Tensor32& normalized, const ChannelStats& stats) {
  require_image(normalized, "denormalize");
  const std::size_t plane = normalized.dim(1) * normalized.dim(2);
  Tensor32 out(normalized.shape());
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < plane; ++i) {
      const std::size_t k = c * plane + i;
      out[k] = static_cast<float>(normalized[k] * stats.std[c] + stats.mean[c]);
    }
  return out;
}

AugmentParams sample_augment(Rng& rng) {
  AugmentParams p;
  p.offset_y = rng.below(2 * kAugmentPad + 1);
  p.offset_x = rng.below(2 * kAugmentPad + 1);
  p.flip = rng.bernoulli(0.5);
  return p;
}

Tensor32 augment_with(const Tensor32& x, const AugmentParams& params) {
  if (x.rank() != 3) throw ShapeError("augment: expected CHW, got " + shape_str(x.shape()));
  if (params.offset_y > 2 * kAugmentPad || params.offset_x > 2 * kAugmentPad) {
    throw std::invalid_argument("augment: crop offset outside the padded image");
  }
  instrumentation::counters().augment_calls.fetch_add(1, std::memory_order_relaxed);
  const std::size_t ch = x.dim(0), h = x.dim(1), w = x.dim(2);
  Tensor32 out(x.shape());
  for (std::size_t c = 0; c < ch; ++c)
    for (std::size_t y = 0; y < h; ++y) {
      const auto sy = static_cast<std::ptrdiff_t>(y + params.offset_y) -
                      static_cast<std::ptrdiff_t>(kAugmentPad);
      if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
      for (std::size_t xo = 0; xo < w; ++xo) {
        const auto sx = static_cast<std::ptrdiff_t>(xo + params.offset_x) -
                        static_cast<std::ptrdiff_t>(kAugmentPad);
        if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(w)) continue;
        const std::size_t dst_x = params.flip ? w - 1 - xo : xo;
        out[(c * h + y) * w + dst_x] =
            x[(c * h + static_cast<std::size_t>(sy)) * w + static_cast<std::size_t>(sx)];
      }
    }
  return out;
}

Tensor32 augment(const Tensor32& x, Rng& rng) { return augment_with(x, sample_augment(rng)); }

}  // namespace bclab
