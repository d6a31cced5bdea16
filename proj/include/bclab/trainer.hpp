#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "bclab/dataset.hpp"
#include "bclab/manifest.hpp"
#include "bclab/network.hpp"

namespace bclab {

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Initial LR divided by 10 once per milestone at or before `epoch`, and once
// more inside the extra-epoch extension.
double lr_at(const Schedule& schedule, std::size_t epoch);

// Normalized train/test images ready for the network.
struct PreparedData {
  std::vector<Tensor32> train_images;
  std::vector<std::uint32_t> train_labels;
  std::vector<Tensor32> test_images;
  std::vector<std::uint32_t> test_labels;
  ChannelStats stats;
  std::size_t num_classes = 0;
};

// Channel statistics come from `train` only.
PreparedData prepare_data(std::span<const ImageExample> train, std::span<const ImageExample> test,
                          std::size_t num_classes);

// Loads the manifest's dataset from `data_dir` and applies the subsets.
PreparedData load_prepared(const Manifest& m, const std::filesystem::path& data_dir);

template <typename T>
struct SgdState {
  std::vector<LayerParams<T>> velocity;  // weight/bias/gamma/beta only
};

// v <- momentum v + (g + weight_decay w);  w <- w - lr v.
template <typename T>
void sgd_step(Parameters<T>& params, const Gradients<T>& grads, SgdState<T>& state, double lr,
              double momentum, double weight_decay);

std::size_t steps_per_epoch(const Manifest& m, std::size_t train_examples);

struct EpochResult {
  std::vector<double> step_losses;
  double mean_loss = 0.0;
};

// One epoch (or its first `max_steps` steps). Every random draw comes from
// streams derived from (seed, purpose, epoch or step), so results do not
// depend on threading or on the order seeds run in.
EpochResult train_epoch(Parameters<float>& params, SgdState<float>& sgd, const PreparedData& data,
                        const Manifest& m, std::uint64_t seed, std::size_t epoch,
                        std::size_t max_steps = std::numeric_limits<std::size_t>::max());

// Top-1 error on pure images; first index wins exact ties.
double evaluate(const Parameters<float>& params, std::span<const Tensor32> images,
                std::span<const std::uint32_t> labels, std::size_t batch_size = 500);

// Arg-max with the first index winning ties.
std::size_t argmax_first(std::span<const float> row);

struct EpochMetrics {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double test_error = 0.0;
};

struct SeedResult {
  std::uint64_t seed = 0;
  bool completed = false;
  std::string error;
  std::vector<EpochMetrics> curve;
  double final_error = 0.0;
};

struct MeanAndError {
  double mean = 0.0;
  std::optional<double> standard_error;  // absent for fewer than two values
};

// Sample standard deviation (n - 1) divided by sqrt(n).
MeanAndError mean_and_standard_error(std::span<const double> values);

struct ExperimentReport {
  nlohmann::json manifest;
  std::vector<SeedResult> seeds;
  MeanAndError final_error;
  std::size_t completed = 0;

  nlohmann::json summary() const;
};

// Fresh parameters for a seed.
Parameters<float> initial_parameters(const Manifest& m, std::uint64_t seed);

// Trains a single seed to completion. `on_epoch` sees each epoch's metrics.
SeedResult train_seed(const Manifest& m, const PreparedData& data, std::uint64_t seed,
                      Parameters<float>* final_params = nullptr,
                      const std::function<void(const EpochMetrics&)>& on_epoch = {});

struct ExperimentOptions {
  std::size_t jobs = 1;
  bool write_artifacts = true;
  bool save_checkpoints = true;
  std::function<void(std::uint64_t seed, const EpochMetrics&)> progress;
};

// Runs every seed, writing into m.out_dir:
//   manifest.json, metrics.csv (seed,epoch,lr,train_loss,test_error),
//   summary.json, curves.svg, and per seed seed-<s>/{manifest.json,
//   metrics.csv, checkpoint.bin}.
ExperimentReport run_experiment(const Manifest& m, const PreparedData& data,
                                const ExperimentOptions& options = {});

std::string metrics_csv(std::span<const SeedResult> seeds);

}  // namespace bclab
