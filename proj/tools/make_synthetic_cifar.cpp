// Writes a CIFAR-format dataset of synthetic class-conditional images, for
// exercising the pipeline where the real dataset is unavailable.
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "bclab/synthetic.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Generate a synthetic CIFAR-format dataset", "make_synthetic_cifar"};
  std::string out;
  std::string variant = "cifar10";
  std::uint64_t seed = 1;
  double noise = 40.0;
  app.add_option("--out", out, "Dataset root to create")->required();
  app.add_option("--variant", variant, "cifar10 or cifar100")->capture_default_str();
  app.add_option("--seed", seed, "Generator seed")->capture_default_str();
  app.add_option("--noise", noise, "Pixel noise standard deviation")->capture_default_str();
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  try {
    bclab::write_synthetic_cifar(out, bclab::parse_cifar_variant(variant), seed, noise);
  } catch (const std::exception& e) {
    std::cerr << "make_synthetic_cifar: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
