#include "bclab/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include "bclab/checkpoint.hpp"
#include "bclab/instrumentation.hpp"
#include "bclab/loss.hpp"
#include "bclab/mixing.hpp"
#include "bclab/report.hpp"

namespace bclab {

double lr_at(const Schedule& schedule, std::size_t epoch) {
  if (epoch >= schedule.total_epochs()) {
    throw std::out_of_range("lr_at: epoch " + std::to_string(epoch) + " outside schedule of " +
                            std::to_string(schedule.total_epochs()) + " epochs");
  }
  double lr = schedule.initial_lr;
  for (auto m : schedule.milestones) {
    if (epoch >= m) lr /= 10.0;
  }
  if (epoch >= schedule.epochs) lr /= 10.0;
  return lr;
}

PreparedData prepare_data(std::span<const ImageExample> train, std::span<const ImageExample> test,
                          std::size_t num_classes) {
  if (train.empty()) throw std::invalid_argument("prepare_data: empty training set");
  PreparedData d;
  d.num_classes = num_classes;
  d.stats = channel_stats(train);
  d.train_images.reserve(train.size());
  d.train_labels.reserve(train.size());
  for (const auto& x : train) {
    if (x.label >= num_classes) throw std::invalid_argument("prepare_data: label out of range");
    d.train_images.push_back(normalize(x, d.stats));
    d.train_labels.push_back(x.label);
  }
  d.test_images.reserve(test.size());
  d.test_labels.reserve(test.size());
  for (const auto& x : test) {
    if (x.label >= num_classes) throw std::invalid_argument("prepare_data: label out of range");
    d.test_images.push_back(normalize(x, d.stats));
    d.test_labels.push_back(x.label);
  }
  return d;
}

PreparedData load_prepared(const Manifest& m, const std::filesystem::path& data_dir) {
  const auto variant = parse_cifar_variant(m.dataset);
  const std::size_t k = num_classes(variant);
  auto train = load_cifar(data_dir, variant, Split::train);
  auto test = load_cifar(data_dir, variant, Split::test);
  if (m.train_subset != 0) train = stratified_subset(train, m.train_subset, k);
  if (m.test_subset != 0) test = stratified_subset(test, m.test_subset, k);
  return prepare_data(train, test, k);
}

namespace {

template <typename T>
void sgd_tensor(Tensor<T>& w, const Tensor<T>& g, Tensor<T>& v, T lr, T mu, T wd) {
  if (g.size() == 0) return;
  if (g.shape() != w.shape()) {
    throw ShapeError("sgd: gradient " + shape_str(g.shape()) + " vs parameter " +
                     shape_str(w.shape()));
  }
  if (v.shape() != w.shape()) v = Tensor<T>(w.shape());
  T* wp = w.raw();
  T* vp = v.raw();
  const T* gp = g.raw();
  for (std::size_t i = 0; i < w.size(); ++i) {
    const T step = gp[i] + wd * wp[i];
    vp[i] = mu * vp[i] + step;
    wp[i] -= lr * vp[i];
  }
}

}  // namespace

template <typename T>
void sgd_step(Parameters<T>& params, const Gradients<T>& grads, SgdState<T>& state, double lr,
              double momentum, double weight_decay) {
  if (state.velocity.size() != params.layers.size()) state.velocity.resize(params.layers.size());
  const T l = static_cast<T>(lr), mu = static_cast<T>(momentum), wd = static_cast<T>(weight_decay);
  const std::size_t n = std::min(grads.layers.size(), params.layers.size());
  for (std::size_t i = 0; i < n; ++i) {
    auto& p = params.layers[i];
    const auto& g = grads.layers[i];
    auto& v = state.velocity[i];
    sgd_tensor(p.weight, g.weight, v.weight, l, mu, wd);
    sgd_tensor(p.bias, g.bias, v.bias, l, mu, wd);
    sgd_tensor(p.gamma, g.gamma, v.gamma, l, mu, wd);
    sgd_tensor(p.beta, g.beta, v.beta, l, mu, wd);
  }
  ++params.version;
}

template void sgd_step(Parameters<float>&, const Gradients<float>&, SgdState<float>&, double,
                       double, double);
template void sgd_step(Parameters<double>&, const Gradients<double>&, SgdState<double>&, double,
                       double, double);

std::size_t steps_per_epoch(const Manifest& m, std::size_t train_examples) {
  if (m.steps_per_epoch != 0) return m.steps_per_epoch;
  const std::size_t steps = train_examples / m.batch_size;
  if (steps == 0) {
    throw std::invalid_argument("batch size " + std::to_string(m.batch_size) + " exceeds the " +
                                std::to_string(train_examples) + " training examples");
  }
  return steps;
}

namespace {

// Anchor order: a fresh shuffle of the training set for every pass through
// it, so epochs longer than one pass keep drawing without replacement.
class AnchorOrder {
 public:
  AnchorOrder(std::size_t n, std::uint64_t seed, std::size_t epoch)
      : n_(n), base_(Rng::derive_seed(seed, "anchor-order", epoch)) {}

  std::size_t at(std::size_t k) {
    const std::size_t cycle = k / n_;
    if (cycle != cycle_ || perm_.empty()) {
      perm_.resize(n_);
      std::iota(perm_.begin(), perm_.end(), std::size_t{0});
      Rng rng = Rng::derive(base_, "cycle", cycle);
      rng.shuffle(perm_.begin(), perm_.end());
      cycle_ = cycle;
    }
    return perm_[k % n_];
  }

 private:
  std::size_t n_;
  std::uint64_t base_;
  std::size_t cycle_ = 0;
  std::vector<std::size_t> perm_;
};

// Target row for one training example.
void fill_target(Tensor<double>& targets, std::size_t row, LossKind kind,
                 std::span<const std::uint32_t> classes, std::span<const double> coeffs) {
  const std::size_t k = targets.dim(1);
  double* t = targets.raw() + row * k;
  std::fill(t, t + k, 0.0);
  switch (kind) {
    case LossKind::cross_entropy:
    case LossKind::ratio:
      for (std::size_t i = 0; i < classes.size(); ++i) t[classes[i]] += coeffs[i];
      break;
    case LossKind::single: {
      std::uint32_t target;
      if (classes.size() == 2) {
        target = single_label_target(classes[0], classes[1], coeffs[0]);
      } else {
        std::size_t best = 0;
        for (std::size_t i = 1; i < classes.size(); ++i) {
          if (coeffs[i] > coeffs[best]) best = i;
        }
        target = classes[best];
      }
      t[target] = 1.0;
      break;
    }
    case LossKind::multi:
      for (auto c : classes) t[c] = 1.0;
      break;
  }
}

std::string diverged_message(double loss, std::size_t epoch, std::size_t step, double lr,
                             const std::string& detail) {
  std::ostringstream os;
  os << "non-finite training loss (" << loss << ") at epoch " << epoch << ", batch " << step
     << ", lr " << format_number(lr);
  if (!detail.empty()) os << ": " << detail;
  return os.str();
}

}  // namespace

EpochResult train_epoch(Parameters<float>& params, SgdState<float>& sgd, const PreparedData& data,
                        const Manifest& m, std::uint64_t seed, std::size_t epoch,
                        std::size_t max_steps) {
  const std::size_t n = data.train_images.size();
  const std::size_t k = data.num_classes;
  const std::size_t batch = m.batch_size;
  const std::size_t steps = std::min(steps_per_epoch(m, n), max_steps);
  const double lr = lr_at(m.schedule, epoch);
  const std::size_t layers = params.config.layers.size();
  const std::size_t boundary = m.mixing.enabled ? params.config.tap_boundary(m.mixing.tap) : 0;
  const std::size_t full_steps = steps_per_epoch(m, n);

  std::optional<PairSampler> sampler;
  if (m.mixing.enabled) {
    sampler.emplace(data.train_labels, k);
    sampler->validate(m.mixing.policy);
  }

  AnchorOrder order(n, seed, epoch);
  EpochResult result;
  result.step_losses.reserve(steps);
  params.mode = Mode::train;

  for (std::size_t step = 0; step < steps; ++step) {
    const std::uint64_t global = static_cast<std::uint64_t>(epoch) * full_steps + step;
    Rng aug1 = Rng::derive(seed, "augment-anchor", global);
    Rng aug2 = Rng::derive(seed, "augment-partner", global);
    Rng partner_rng = Rng::derive(seed, "partners", global);
    Rng ratio_rng = Rng::derive(seed, "ratio", global);
    Rng dropout_rng = Rng::derive(seed, "dropout", global);

    Tensor<double> targets(Shape{batch, k});
    std::vector<Tensor32> inputs;        // network input (mixed at the input tap)
    std::vector<Tensor32> branch2;       // partner images for hidden-tap mixing
    std::vector<double> branch_ratio;
    inputs.reserve(batch);

    for (std::size_t i = 0; i < batch; ++i) {
      const std::size_t anchor = order.at(step * batch + i);
      auto prep = [&](std::size_t idx, Rng& rng) {
        return m.augment ? augment(data.train_images[idx], rng) : data.train_images[idx];
      };
      if (!m.mixing.enabled) {
        inputs.push_back(prep(anchor, aug1));
        const std::uint32_t cls = data.train_labels[anchor];
        const double one = 1.0;
        fill_target(targets, i, LossKind::cross_entropy, {&cls, 1}, {&one, 1});
        continue;
      }

      const auto chosen = sampler->partners(anchor, m.mixing.policy, partner_rng);
      std::vector<Tensor32> images;
      std::vector<std::uint32_t> classes;
      images.reserve(chosen.size());
      for (std::size_t j = 0; j < chosen.size(); ++j) {
        images.push_back(prep(chosen[j], j == 0 ? aug1 : aug2));
        classes.push_back(data.train_labels[chosen[j]]);
      }
      std::vector<double> coeffs;
      if (chosen.size() == 2) {
        const double r = m.mixing.fixed_ratio ? *m.mixing.fixed_ratio : sample_ratio(ratio_rng);
        coeffs = {r, 1.0 - r};
      } else if (m.mixing.fixed_ratio) {
        const double r = *m.mixing.fixed_ratio;
        coeffs = {r, (1.0 - r) / 2.0, (1.0 - r) / 2.0};
      } else {
        coeffs = sample_simplex(ratio_rng, chosen.size());
      }
      fill_target(targets, i, m.loss, classes, coeffs);

      if (boundary > 0) {
        inputs.push_back(std::move(images[0]));
        branch2.push_back(std::move(images[1]));
        branch_ratio.push_back(coeffs[0]);
        continue;
      }
      std::vector<const Tensor32*> ptrs;
      std::vector<double> gains;
      for (const auto& img : images) {
        ptrs.push_back(&img);
        if (m.mixing.method == MixMethod::sound_db) {
          const double sigma = std::max(per_image_stats(img).std, kSigmaFloor);
          gains.push_back(20.0 * std::log10(sigma));
        }
      }
      inputs.push_back(mix_images<float>(ptrs, coeffs, m.mixing.method, gains).image);
    }

    const Tensor32 x = stack(inputs);
    BatchLoss<float> bl;
    Gradients<float> grads;
    try {
      if (boundary == 0) {
        auto fwd = forward(params, x, Mode::train, &dropout_rng);
        bl = batch_loss(m.mixing.enabled ? m.loss : LossKind::cross_entropy, targets, fwd.output);
        if (!std::isfinite(bl.loss)) {
          throw TrainingDiverged(diverged_message(bl.loss, epoch, step, lr, ""));
        }
        grads = backward(params, fwd.cache, bl.grad);
      } else {
        const Tensor32 x2 = stack(branch2);
        auto h1 = forward_range(params, x, 0, boundary, Mode::train, &dropout_rng);
        auto h2 = forward_range(params, x2, 0, boundary, Mode::train, &dropout_rng);
        Tensor32 h(h1.output.shape());
        const std::size_t row = h.size() / batch;
        for (std::size_t i = 0; i < batch; ++i) {
          const double r = branch_ratio[i];
          for (std::size_t j = i * row; j < (i + 1) * row; ++j) {
            h[j] = static_cast<float>(r * h1.output[j] + (1.0 - r) * h2.output[j]);
          }
        }
        instrumentation::counters().mix_calls.fetch_add(batch, std::memory_order_relaxed);
        auto top = forward_range(params, h, boundary, layers, Mode::train, &dropout_rng);
        bl = batch_loss(m.loss, targets, top.output);
        if (!std::isfinite(bl.loss)) {
          throw TrainingDiverged(diverged_message(bl.loss, epoch, step, lr, ""));
        }
        const Tensor32 dh = backward_range(params, top.cache, bl.grad, grads, true);
        Tensor32 d1(dh.shape()), d2(dh.shape());
        for (std::size_t i = 0; i < batch; ++i) {
          const double r = branch_ratio[i];
          for (std::size_t j = i * row; j < (i + 1) * row; ++j) {
            d1[j] = static_cast<float>(r * dh[j]);
            d2[j] = static_cast<float>((1.0 - r) * dh[j]);
          }
        }
        backward_range(params, h1.cache, d1, grads, false);
        backward_range(params, h2.cache, d2, grads, false);
      }
    } catch (const NumericError& e) {
      throw TrainingDiverged(diverged_message(std::nan(""), epoch, step, lr, e.what()));
    }
    sgd_step(params, grads, sgd, lr, m.momentum, m.weight_decay);
    result.step_losses.push_back(bl.loss);
  }
  double total = 0.0;
  for (double l : result.step_losses) total += l;
  result.mean_loss = result.step_losses.empty() ? 0.0 : total / static_cast<double>(steps);
  return result;
}

std::size_t argmax_first(std::span<const float> row) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < row.size(); ++j) {
    if (row[j] > row[best]) best = j;
  }
  return best;
}

double evaluate(const Parameters<float>& params, std::span<const Tensor32> images,
                std::span<const std::uint32_t> labels, std::size_t batch_size) {
  if (images.size() != labels.size()) {
    throw std::invalid_argument("evaluate: image and label counts differ");
  }
  if (images.empty()) throw std::invalid_argument("evaluate: empty test set");
  if (batch_size == 0) throw std::invalid_argument("evaluate: batch size must be positive");
  const std::size_t layers = params.config.layers.size();
  std::size_t wrong = 0;
  for (std::size_t start = 0; start < images.size(); start += batch_size) {
    const std::size_t end = std::min(images.size(), start + batch_size);
    std::vector<Tensor32> chunk(images.begin() + start, images.begin() + end);
    const Tensor32 logits = infer_range(params, stack(chunk), 0, layers);
    const std::size_t k = logits.dim(1);
    for (std::size_t i = 0; i < end - start; ++i) {
      const std::size_t pred = argmax_first({logits.raw() + i * k, k});
      if (pred != labels[start + i]) ++wrong;
    }
  }
  return static_cast<double>(wrong) / static_cast<double>(images.size());
}

MeanAndError mean_and_standard_error(std::span<const double> values) {
  MeanAndError out;
  if (values.empty()) return out;
  double sum = 0.0;
  for (double v : values) sum += v;
  const double n = static_cast<double>(values.size());
  out.mean = sum / n;
  if (values.size() >= 2) {
    double sq = 0.0;
    for (double v : values) sq += (v - out.mean) * (v - out.mean);
    out.standard_error = std::sqrt(sq / (n - 1.0)) / std::sqrt(n);
  }
  return out;
}

nlohmann::json ExperimentReport::summary() const {
  nlohmann::json j;
  j["manifest"] = manifest;
  j["seeds"] = nlohmann::json::array();
  nlohmann::json incomplete = nlohmann::json::array();
  for (const auto& s : seeds) {
    nlohmann::json e{{"seed", s.seed},
                     {"completed", s.completed},
                     {"epochs_run", s.curve.size()}};
    if (s.completed) {
      e["final_test_error"] = s.final_error;
    } else {
      e["error"] = s.error;
      incomplete.push_back(s.seed);
    }
    j["seeds"].push_back(std::move(e));
  }
  j["completed"] = completed;
  j["incomplete_seeds"] = incomplete;
  j["mean_test_error"] = completed > 0 ? nlohmann::json(final_error.mean) : nlohmann::json(nullptr);
  j["standard_error"] = final_error.standard_error ? nlohmann::json(*final_error.standard_error)
                                                   : nlohmann::json(nullptr);
  return j;
}

Parameters<float> initial_parameters(const Manifest& m, std::uint64_t seed) {
  Rng rng = Rng::derive(seed, "init");
  return init_weights<float>(build_preset(m.preset, m.num_classes()), rng);
}

SeedResult train_seed(const Manifest& m, const PreparedData& data, std::uint64_t seed,
                      Parameters<float>* final_params,
                      const std::function<void(const EpochMetrics&)>& on_epoch) {
  SeedResult out;
  out.seed = seed;
  try {
    Parameters<float> params = initial_parameters(m, seed);
    if (params.config.num_classes != data.num_classes) {
      throw std::invalid_argument("dataset has " + std::to_string(data.num_classes) +
                                  " classes, manifest expects " +
                                  std::to_string(params.config.num_classes));
    }
    SgdState<float> sgd;
    for (std::size_t epoch = 0; epoch < m.schedule.total_epochs(); ++epoch) {
      const auto res = train_epoch(params, sgd, data, m, seed, epoch);
      EpochMetrics em{epoch, lr_at(m.schedule, epoch), res.mean_loss,
                      evaluate(params, data.test_images, data.test_labels, m.eval_batch_size)};
      out.curve.push_back(em);
      if (on_epoch) on_epoch(em);
    }
    out.final_error = out.curve.back().test_error;
    out.completed = true;
    params.mode = Mode::eval;
    if (final_params) *final_params = std::move(params);
  } catch (const std::exception& e) {
    out.completed = false;
    out.error = e.what();
  }
  return out;
}

std::string metrics_csv(std::span<const SeedResult> seeds) {
  std::string out = csv_row({"seed", "epoch", "lr", "train_loss", "test_error"});
  for (const auto& s : seeds) {
    for (const auto& e : s.curve) {
      out += csv_row({std::to_string(s.seed), std::to_string(e.epoch), format_number(e.lr),
                      format_number(e.train_loss), format_number(e.test_error)});
    }
  }
  return out;
}

ExperimentReport run_experiment(const Manifest& m, const PreparedData& data,
                                const ExperimentOptions& options) {
  m.validate();
  namespace fs = std::filesystem;
  const fs::path out_dir = m.out_dir;
  const std::string manifest_text = to_json(m).dump(2) + "\n";
  if (options.write_artifacts) {
    fs::create_directories(out_dir);
    write_file_atomic(out_dir / "manifest.json", manifest_text);
  }

  ExperimentReport report;
  report.manifest = to_json(m);
  report.seeds.resize(m.seeds.size());
  std::mutex progress_mutex;
  std::atomic<std::size_t> next{0};

  auto worker = [&] {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= m.seeds.size()) return;
      const std::uint64_t seed = m.seeds[i];
      Parameters<float> params;
      auto on_epoch = [&](const EpochMetrics& e) {
        if (!options.progress) return;
        std::lock_guard<std::mutex> lock(progress_mutex);
        options.progress(seed, e);
      };
      SeedResult r = train_seed(m, data, seed, &params, on_epoch);
      if (options.write_artifacts) {
        const fs::path dir = out_dir / ("seed-" + std::to_string(seed));
        fs::create_directories(dir);
        write_file_atomic(dir / "manifest.json", manifest_text);
        write_file_atomic(dir / "metrics.csv", metrics_csv({&r, 1}));
        if (r.completed && options.save_checkpoints) {
          save_checkpoint(dir / "checkpoint.bin", params,
                          {{"seed", seed},
                           {"final_test_error", r.final_error},
                           {"manifest", to_json(m)}});
        }
      }
      report.seeds[i] = std::move(r);
    }
  };

  const std::size_t jobs = std::max<std::size_t>(1, std::min(options.jobs, m.seeds.size()));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < jobs; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  std::vector<double> finals;
  for (const auto& s : report.seeds) {
    if (s.completed) finals.push_back(s.final_error);
  }
  report.completed = finals.size();
  report.final_error = mean_and_standard_error(finals);

  if (options.write_artifacts) {
    write_file_atomic(out_dir / "metrics.csv", metrics_csv(report.seeds));
    write_file_atomic(out_dir / "summary.json", report.summary().dump(2) + "\n");
    std::vector<Series> err, loss;
    for (const auto& s : report.seeds) {
      Series e{"seed " + std::to_string(s.seed), {}, {}};
      Series l = e;
      for (const auto& p : s.curve) {
        e.x.push_back(static_cast<double>(p.epoch + 1));
        e.y.push_back(p.test_error);
        l.x.push_back(static_cast<double>(p.epoch + 1));
        l.y.push_back(p.train_loss);
      }
      err.push_back(std::move(e));
      loss.push_back(std::move(l));
    }
    write_file_atomic(out_dir / "curves.svg",
                      svg_line_chart("Test error", "epoch", "top-1 error", err));
    write_file_atomic(out_dir / "train_loss.svg",
                      svg_line_chart("Training loss", "epoch", "loss", loss));
  }
  return report;
}

}  // namespace bclab
