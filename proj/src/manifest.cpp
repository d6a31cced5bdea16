#include "bclab/manifest.hpp"

#include <algorithm>
#include <set>

#include "bclab/network.hpp"
#include "bclab/report.hpp"

namespace bclab {

namespace {

using nlohmann::json;

void check_known_keys(const json& doc, const json& reference, const std::string& prefix) {
  if (!doc.is_object()) {
    throw ManifestError("manifest" + (prefix.empty() ? std::string() : " key '" + prefix + "'") +
                        " must be a JSON object");
  }
  for (const auto& [key, value] : doc.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!reference.contains(key)) throw ManifestError("unknown manifest key '" + path + "'");
    if (reference.at(key).is_object()) check_known_keys(value, reference.at(key), path);
  }
}

template <typename V>
V field(const json& doc, const std::string& path) {
  const json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    node = &node->at(path.substr(start, dot - start));
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  try {
    return node->get<V>();
  } catch (const json::exception&) {
    throw ManifestError("manifest key '" + path + "' has the wrong type: " + node->dump());
  }
}

}  // namespace

void Schedule::validate() const {
  if (epochs == 0) throw ManifestError("schedule.epochs must be positive");
  if (!(initial_lr > 0.0)) throw ManifestError("schedule.initial_lr must be positive");
  for (std::size_t i = 0; i < milestones.size(); ++i) {
    if (milestones[i] >= epochs) {
      throw ManifestError("schedule milestone " + std::to_string(milestones[i]) +
                          " is not below epochs " + std::to_string(epochs));
    }
    if (i > 0 && milestones[i] <= milestones[i - 1]) {
      throw ManifestError("schedule milestones must be strictly increasing");
    }
  }
}

void Manifest::validate() const {
  if (version != kManifestVersion) {
    throw ManifestError("unsupported manifest version " + std::to_string(version));
  }
  CifarVariant variant;
  try {
    variant = parse_cifar_variant(dataset);
  } catch (const std::exception& e) {
    throw ManifestError(e.what());
  }
  const std::size_t classes = bclab::num_classes(variant);
  NetworkConfig net;
  try {
    net = build_preset(preset, classes);
  } catch (const std::exception& e) {
    throw ManifestError(e.what());
  }
  schedule.validate();
  if (batch_size == 0) throw ManifestError("batch_size must be positive");
  if (eval_batch_size == 0) throw ManifestError("eval_batch_size must be positive");
  if (momentum < 0.0 || momentum >= 1.0) throw ManifestError("momentum must lie in [0, 1)");
  if (weight_decay < 0.0) throw ManifestError("weight_decay must be non-negative");
  if (seeds.empty()) throw ManifestError("seeds must not be empty");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
    throw ManifestError("seeds must be distinct");
  }
  if (train_subset != 0 && train_subset < classes) {
    throw ManifestError("train_subset must hold at least one example per class");
  }
  if (test_subset != 0 && test_subset < classes) {
    throw ManifestError("test_subset must hold at least one example per class");
  }
  if (out_dir.empty()) throw ManifestError("out_dir must not be empty");

  if (mixing.enabled) {
    if (loss == LossKind::cross_entropy) {
      throw ManifestError("loss cross_entropy is the standard-learning loss; mixing needs ratio, "
                          "single or multi");
    }
    if (!net.has_tap(mixing.tap)) {
      throw ManifestError("preset " + preset + " has no tap '" + mixing.tap + "'");
    }
    if (net.tap_boundary(mixing.tap) > 0) {
      if (mixing.method != MixMethod::simple) {
        throw ManifestError("mixing at hidden tap '" + mixing.tap + "' requires method simple");
      }
      if (mixing.policy == PairPolicy::n2_or_3 || mixing.policy == PairPolicy::n3) {
        throw ManifestError("mixing at hidden tap '" + mixing.tap + "' supports pairs only");
      }
    }
    if (mixing.fixed_ratio && !(*mixing.fixed_ratio >= 0.0 && *mixing.fixed_ratio <= 1.0)) {
      throw ManifestError("mixing.fixed_ratio must lie in [0, 1]");
    }
  } else {
    if (loss != LossKind::cross_entropy) {
      throw ManifestError("loss " + to_string(loss) + " requires mixing.enabled");
    }
    if (mixing.fixed_ratio) throw ManifestError("mixing.fixed_ratio requires mixing.enabled");
  }
}

nlohmann::json to_json(const Manifest& m) {
  json j;
  j["version"] = m.version;
  j["dataset"] = m.dataset;
  j["data_dir"] = m.data_dir;
  j["train_subset"] = m.train_subset;
  j["test_subset"] = m.test_subset;
  j["augment"] = m.augment;
  j["preset"] = m.preset;
  j["mixing"] = {{"enabled", m.mixing.enabled},
                 {"method", to_string(m.mixing.method)},
                 {"policy", to_string(m.mixing.policy)},
                 {"tap", m.mixing.tap},
                 {"fixed_ratio", m.mixing.fixed_ratio ? json(*m.mixing.fixed_ratio) : json(nullptr)}};
  j["loss"] = to_string(m.loss);
  j["schedule"] = {{"epochs", m.schedule.epochs},
                   {"initial_lr", m.schedule.initial_lr},
                   {"milestones", m.schedule.milestones},
                   {"extra_epochs", m.schedule.extra_epochs}};
  j["batch_size"] = m.batch_size;
  j["steps_per_epoch"] = m.steps_per_epoch;
  j["momentum"] = m.momentum;
  j["weight_decay"] = m.weight_decay;
  j["seeds"] = m.seeds;
  j["eval_batch_size"] = m.eval_batch_size;
  j["out_dir"] = m.out_dir;
  return j;
}

Manifest manifest_from_json(const nlohmann::json& j) {
  const json defaults = to_json(Manifest{});
  check_known_keys(j, defaults, "");
  json doc = defaults;
  doc.merge_patch(j);
  // merge_patch drops null members; the only nullable key is fixed_ratio.
  if (!doc["mixing"].contains("fixed_ratio")) doc["mixing"]["fixed_ratio"] = nullptr;

  Manifest m;
  m.version = field<int>(doc, "version");
  if (m.version != kManifestVersion) {
    throw ManifestError("unsupported manifest version " + std::to_string(m.version));
  }
  m.dataset = field<std::string>(doc, "dataset");
  m.data_dir = field<std::string>(doc, "data_dir");
  m.train_subset = field<std::size_t>(doc, "train_subset");
  m.test_subset = field<std::size_t>(doc, "test_subset");
  m.augment = field<bool>(doc, "augment");
  m.preset = field<std::string>(doc, "preset");
  m.mixing.enabled = field<bool>(doc, "mixing.enabled");
  try {
    m.mixing.method = parse_mix_method(field<std::string>(doc, "mixing.method"));
    m.mixing.policy = parse_pair_policy(field<std::string>(doc, "mixing.policy"));
    m.loss = parse_loss_kind(field<std::string>(doc, "loss"));
  } catch (const ManifestError&) {
    throw;
  } catch (const std::exception& e) {
    throw ManifestError(e.what());
  }
  m.mixing.tap = field<std::string>(doc, "mixing.tap");
  if (!doc["mixing"]["fixed_ratio"].is_null()) {
    m.mixing.fixed_ratio = field<double>(doc, "mixing.fixed_ratio");
  }
  m.schedule.epochs = field<std::size_t>(doc, "schedule.epochs");
  m.schedule.initial_lr = field<double>(doc, "schedule.initial_lr");
  m.schedule.milestones = field<std::vector<std::size_t>>(doc, "schedule.milestones");
  m.schedule.extra_epochs = field<std::size_t>(doc, "schedule.extra_epochs");
  m.batch_size = field<std::size_t>(doc, "batch_size");
  m.steps_per_epoch = field<std::size_t>(doc, "steps_per_epoch");
  m.momentum = field<double>(doc, "momentum");
  m.weight_decay = field<double>(doc, "weight_decay");
  m.seeds = field<std::vector<std::uint64_t>>(doc, "seeds");
  m.eval_batch_size = field<std::size_t>(doc, "eval_batch_size");
  m.out_dir = field<std::string>(doc, "out_dir");
  return m;
}

Manifest load_manifest(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const std::runtime_error& e) {
    throw ManifestError(e.what());
  }
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw ManifestError("cannot parse manifest " + path.string() + ": " + e.what());
  }
  Manifest m = manifest_from_json(doc);
  m.validate();
  return m;
}

void apply_override(nlohmann::json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ManifestError("override '" + assignment + "' is not of the form key=value");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);

  const json defaults = to_json(Manifest{});
  const json* ref = &defaults;
  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot - start);
    if (!ref->is_object() || !ref->contains(part)) {
      throw ManifestError("override names unknown manifest key '" + key + "'");
    }
    ref = &ref->at(part);
    if (!node->is_object()) *node = json::object();
    node = &(*node)[part];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  if (ref->is_object()) throw ManifestError("override key '" + key + "' names a section");

  json value;
  try {
    value = json::parse(text);
  } catch (const json::exception&) {
    value = text;
  }
  *node = std::move(value);
}

Manifest resolve_manifest(const nlohmann::json& doc, const std::vector<std::string>& overrides) {
  json working = doc.is_null() ? json::object() : doc;
  for (const auto& o : overrides) apply_override(working, o);
  Manifest m = manifest_from_json(working);
  m.validate();
  return m;
}

}  // namespace bclab
