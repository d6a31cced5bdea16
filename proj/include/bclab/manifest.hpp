#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "bclab/dataset.hpp"
#include "bclab/loss.hpp"
#include "bclab/mixing.hpp"

namespace bclab {

class ManifestError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline constexpr int kManifestVersion = 1;

struct Schedule {
  std::size_t epochs = 40;
  double initial_lr = 0.1;
  std::vector<std::size_t> milestones{20, 30};  // LR divided by 10 at each
  std::size_t extra_epochs = 0;                 // appended at a further LR/10

  std::size_t total_epochs() const { return epochs + extra_epochs; }
  void validate() const;
};

struct MixingConfig {
  bool enabled = false;
  MixMethod method = MixMethod::simple;
  PairPolicy policy = PairPolicy::n2;
  std::string tap = "input";
  // Pins the anchor's ratio instead of sampling it.
  std::optional<double> fixed_ratio;
};

// Manifest schema, version 1 (every key optional, defaults shown):
//
// {
//   "version": 1,
//   "dataset": "cifar10",            // or "cifar100"
//   "data_dir": "",                  // empty: --data-dir or BCLAB_DATA_DIR
//   "train_subset": 10000,           // 0 keeps the full training split
//   "test_subset": 0,                // 0 keeps the full test split
//   "augment": true,                 // pad-4 random crop + horizontal flip
//   "preset": "cnn-small",           // or "cnn11"
//   "mixing": {"enabled": false, "method": "simple", "policy": "N2",
//              "tap": "input", "fixed_ratio": null},
//   "loss": "cross_entropy",         // ratio | single | multi when mixing
//   "schedule": {"epochs": 40, "initial_lr": 0.1, "milestones": [20, 30],
//                "extra_epochs": 0},
//   "batch_size": 128,
//   "steps_per_epoch": 0,            // 0: floor(training examples / batch)
//   "momentum": 0.9,
//   "weight_decay": 0.0005,
//   "seeds": [1, 2, 3],
//   "eval_batch_size": 500,
//   "out_dir": "runs/default"
// }
struct Manifest {
  int version = kManifestVersion;
  std::string dataset = "cifar10";
  std::string data_dir;
  std::size_t train_subset = 10000;
  std::size_t test_subset = 0;
  bool augment = true;
  std::string preset = "cnn-small";
  MixingConfig mixing;
  LossKind loss = LossKind::cross_entropy;
  Schedule schedule;
  std::size_t batch_size = 128;
  std::size_t steps_per_epoch = 0;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::size_t eval_batch_size = 500;
  std::string out_dir = "runs/default";

  std::size_t num_classes() const { return bclab::num_classes(parse_cifar_variant(dataset)); }
  // Throws ManifestError naming the first inconsistency.
  void validate() const;
};

nlohmann::json to_json(const Manifest& m);

// Keys absent from `j` keep their defaults; unknown keys are rejected.
Manifest manifest_from_json(const nlohmann::json& j);
Manifest load_manifest(const std::filesystem::path& path);

// Applies "dotted.key=value" to a manifest document. The value is parsed as
// JSON when possible and taken as a bare string otherwise. The key must name
// an existing manifest field.
void apply_override(nlohmann::json& doc, const std::string& assignment);

// Parses, overrides, validates.
Manifest resolve_manifest(const nlohmann::json& doc, const std::vector<std::string>& overrides);

}  // namespace bclab
