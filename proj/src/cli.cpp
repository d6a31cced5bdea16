#include "bclab/cli.hpp"

#include <cmath>
#include <cstdlib>
#include <iostream>
#include <map>
#include <set>

#include <CLI11.hpp>

#include "bclab/analysis.hpp"
#include "bclab/checkpoint.hpp"
#include "bclab/manifest.hpp"
#include "bclab/report.hpp"
#include "bclab/trainer.hpp"

namespace bclab::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Common {
  std::string manifest;
  std::vector<std::string> sets;
  std::size_t jobs = 1;
  std::string data_dir;
  std::string out;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--manifest", c.manifest, "Manifest JSON (defaults when omitted)");
  sub->add_option("--set", c.sets, "Override a manifest key: dotted.key=value (repeatable)");
  sub->add_option("--jobs", c.jobs, "Seeds trained in parallel")->check(CLI::PositiveNumber);
  sub->add_option("--data-dir", c.data_dir,
                  std::string("Dataset root (else manifest data_dir, else $") + kDataDirEnv + ")");
  sub->add_option("--out", c.out, "Output directory (overrides out_dir)");
}

std::string one_line(std::string s) {
  for (auto& ch : s) {
    if (ch == '\n' || ch == '\r') ch = ' ';
  }
  return s;
}

json manifest_doc(const Common& c, const json& fallback) {
  if (c.manifest.empty()) return fallback;
  std::string text;
  try {
    text = read_file(c.manifest);
  } catch (const std::runtime_error& e) {
    throw ManifestError(e.what());
  }
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw ManifestError("cannot parse manifest " + c.manifest + ": " + e.what());
  }
}

Manifest resolve(const Common& c, const json& fallback = json::object()) {
  auto sets = c.sets;
  if (!c.out.empty()) sets.push_back("out_dir=" + json(c.out).dump());
  return resolve_manifest(manifest_doc(c, fallback), sets);
}

fs::path data_root(const Common& c, const Manifest& m) {
  if (!c.data_dir.empty()) return c.data_dir;
  if (!m.data_dir.empty()) return m.data_dir;
  if (const char* env = std::getenv(kDataDirEnv); env && *env) return env;
  throw UsageError(std::string("no dataset root: pass --data-dir, set data_dir, or set ") +
                   kDataDirEnv);
}

void echo_manifest(const fs::path& dir, const Manifest& m) {
  fs::create_directories(dir);
  write_file_atomic(dir / "manifest.json", to_json(m).dump(2) + "\n");
}

std::string format_optional(const std::optional<double>& v) {
  return v ? format_number(*v) : std::string("NA");
}

int cmd_train(const Common& c, std::ostream& out, std::ostream& err) {
  const Manifest m = resolve(c);
  const PreparedData data = load_prepared(m, data_root(c, m));
  ExperimentOptions opt;
  opt.jobs = c.jobs;
  opt.progress = [&out](std::uint64_t seed, const EpochMetrics& e) {
    out << "seed " << seed << " epoch " << e.epoch << " lr " << format_number(e.lr)
        << " train_loss " << format_number(e.train_loss) << " test_error "
        << format_number(e.test_error) << "\n";
  };
  const auto report = run_experiment(m, data, opt);
  out << "mean test error " << format_number(report.final_error.mean) << " standard error "
      << format_optional(report.final_error.standard_error) << " over " << report.completed
      << " seed(s); artifacts in " << m.out_dir << "\n";
  if (report.completed != report.seeds.size()) {
    std::string msg;
    for (const auto& s : report.seeds) {
      if (!s.completed) msg += (msg.empty() ? "" : "; ") + ("seed " + std::to_string(s.seed) + ": " + s.error);
    }
    err << "bclab: " << (report.seeds.size() - report.completed) << " of " << report.seeds.size()
        << " seeds failed: " << one_line(msg) << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}

json checkpoint_manifest(const LoadedCheckpoint& ck) {
  if (ck.metadata.contains("manifest")) return ck.metadata.at("manifest");
  return json::object();
}

int cmd_evaluate(const Common& c, const std::string& checkpoint, std::ostream& out) {
  const auto ck = load_checkpoint(checkpoint);
  const Manifest m = resolve(c, checkpoint_manifest(ck));
  const PreparedData data = load_prepared(m, data_root(c, m));
  const double error = evaluate(ck.params, data.test_images, data.test_labels, m.eval_batch_size);
  const fs::path dir = m.out_dir;
  echo_manifest(dir, m);
  json report{{"checkpoint", checkpoint},
              {"test_error", error},
              {"test_examples", data.test_images.size()}};
  write_file_atomic(dir / "evaluation.json", report.dump(2) + "\n");
  out << "test error " << format_number(error) << " on " << data.test_images.size()
      << " examples\n";
  return kExitOk;
}

struct AnalyzeOptions {
  std::string checkpoint;
  std::string tap = "fc6-input";
  std::size_t dims = 3;
  std::size_t max_examples = 1000;
  std::vector<std::uint32_t> classes;
  std::vector<std::size_t> pair;
  std::size_t steps = 11;
};

int cmd_analyze(const Common& c, const AnalyzeOptions& a, std::ostream& out) {
  const auto ck = load_checkpoint(a.checkpoint);
  const Manifest m = resolve(c, checkpoint_manifest(ck));
  const PreparedData data = load_prepared(m, data_root(c, m));
  const std::size_t k = data.num_classes;
  const fs::path dir = c.out.empty() ? fs::path(m.out_dir) / "analysis" : fs::path(c.out);
  echo_manifest(dir, m);

  // Per-class prefix of each split, capped at max_examples overall.
  auto pick = [&](const std::vector<Tensor32>& images, const std::vector<std::uint32_t>& labels) {
    const std::size_t per_class = std::max<std::size_t>(1, a.max_examples / k);
    std::vector<std::size_t> taken(k, 0);
    std::pair<std::vector<Tensor32>, std::vector<std::uint32_t>> sel;
    for (std::size_t i = 0; i < images.size(); ++i) {
      if (taken[labels[i]] >= per_class) continue;
      ++taken[labels[i]];
      sel.first.push_back(images[i]);
      sel.second.push_back(labels[i]);
    }
    return sel;
  };
  const auto train = pick(data.train_images, data.train_labels);
  const auto test = pick(data.test_images, data.test_labels);
  const auto f_train = extract_features(ck.params, train.first, train.second, a.tap, Split::train);
  const auto f_test = extract_features(ck.params, test.first, test.second, a.tap, Split::test);

  std::vector<std::uint32_t> shown = a.classes;
  if (shown.empty()) {
    for (std::uint32_t i = 0; i < k; ++i) shown.push_back(i);
  }
  for (auto cl : shown) {
    if (cl >= k) throw UsageError("--classes entry " + std::to_string(cl) + " exceeds class count");
  }
  const std::set<std::uint32_t> shown_set(shown.begin(), shown.end());
  auto restrict = [&](const FeatureMatrix& f) {
    std::vector<std::vector<double>> rows;
    std::vector<std::uint32_t> labels;
    for (std::size_t i = 0; i < f.count(); ++i) {
      if (!shown_set.count(f.labels[i])) continue;
      const auto r = f.row(i);
      rows.emplace_back(r.begin(), r.end());
      labels.push_back(f.labels[i]);
    }
    return make_feature_matrix(std::move(rows), std::move(labels), f.split, f.tap);
  };
  const auto shown_train = restrict(f_train);
  const auto shown_test = restrict(f_test);

  const std::size_t dims = std::min(a.dims, shown_train.dim());
  const PcaModel pca = pca_fit(shown_train, dims);
  const Tensor64 train_coords = pca.project(shown_train.rows);
  const Tensor64 test_coords = pca.project(shown_test.rows);
  std::string csv = projection_csv(train_coords, shown_train.labels, Split::train);
  const std::string test_csv = projection_csv(test_coords, shown_test.labels, Split::test);
  csv += test_csv.substr(test_csv.find('\n') + 1);
  write_file_atomic(dir / "pca_projection.csv", csv);

  std::map<std::uint32_t, int> group;
  std::vector<std::string> group_names;
  for (auto cl : shown_set) {
    group[cl] = static_cast<int>(group_names.size());
    group_names.push_back("class " + std::to_string(cl));
  }
  auto scatter = [&](const Tensor64& coords, const std::vector<std::uint32_t>& labels) {
    std::vector<ScatterPoint> pts;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      pts.push_back({coords(i, 0), dims > 1 ? coords(i, 1) : 0.0, group[labels[i]]});
    }
    return pts;
  };
  write_file_atomic(dir / "pca_train.svg",
                    svg_scatter("PCA of " + a.tap + " (train)", scatter(train_coords, shown_train.labels), group_names));
  write_file_atomic(dir / "pca_test.svg",
                    svg_scatter("PCA of " + a.tap + " (test)", scatter(test_coords, shown_test.labels), group_names));

  const auto fisher_train = mean_fisher(f_train);
  const auto fisher_test = mean_fisher(f_test);
  write_file_atomic(dir / "fisher_pairs_train.csv", csv_grid(fisher_train.pair_values));
  write_file_atomic(dir / "fisher_pairs_test.csv", csv_grid(fisher_test.pair_values));

  const Tensor64 act = activation_matrix(ck.params, test.first, test.second);
  std::vector<std::vector<double>> grid(k, std::vector<double>(k));
  std::vector<std::string> names;
  for (std::size_t i = 0; i < k; ++i) {
    names.push_back(std::to_string(i));
    for (std::size_t j = 0; j < k; ++j) grid[i][j] = act(i, j);
  }
  write_file_atomic(dir / "activation_matrix.csv", csv_grid(grid));
  write_file_atomic(dir / "activation_matrix.svg",
                    svg_heatmap("Mean final-layer activation (row: neuron, column: class)", grid,
                                names, names));

  // Trajectory between two test images of the first two displayed classes.
  std::vector<std::size_t> pair = a.pair;
  if (pair.empty()) {
    for (std::uint32_t want : {shown.front(), shown.size() > 1 ? shown[1] : shown.front()}) {
      for (std::size_t i = 0; i < data.test_labels.size(); ++i) {
        if (data.test_labels[i] == want && (pair.empty() || pair[0] != i)) {
          pair.push_back(i);
          break;
        }
      }
    }
  }
  if (pair.size() != 2 || pair[0] >= data.test_images.size() || pair[1] >= data.test_images.size()) {
    throw UsageError("--pair needs two test-set indices");
  }
  const auto traj = mix_trajectory(ck.params, data.test_images[pair[0]], data.test_images[pair[1]],
                                   a.tap, a.steps, pca);
  std::string tcsv = csv_row({"r", "x", "y", "z"});
  std::vector<ScatterPoint> path;
  for (std::size_t s = 0; s < traj.size(); ++s) {
    const double r = static_cast<double>(s) / static_cast<double>(a.steps - 1);
    std::vector<std::string> cells{format_number(r)};
    for (std::size_t d = 0; d < 3; ++d) cells.push_back(format_number(d < traj[s].size() ? traj[s][d] : 0.0));
    tcsv += csv_row(cells);
    path.push_back({traj[s][0], traj[s].size() > 1 ? traj[s][1] : 0.0, 0});
  }
  write_file_atomic(dir / "trajectory.csv", tcsv);
  write_file_atomic(dir / "trajectory.svg",
                    svg_scatter("Mixture trajectory at " + a.tap,
                                scatter(train_coords, shown_train.labels), group_names, path));

  json meta{{"checkpoint", a.checkpoint},
            {"tap", a.tap},
            {"feature_dim", f_train.dim()},
            {"train_examples", f_train.count()},
            {"test_examples", f_test.count()},
            {"pca",
             {{"dims", dims},
              {"fit", "joint over the displayed classes, training split"},
              {"displayed_classes", shown},
              {"explained_ratio", pca.explained_ratio},
              {"eigenvalues", pca.eigenvalues},
              {"gram", pca.gram}}},
            {"fisher",
             {{"train", {{"mean", fisher_train.value}, {"pairs", fisher_train.pairs},
                         {"any_singular", fisher_train.any_singular},
                         {"max_lambda", fisher_train.max_lambda}}},
              {"test", {{"mean", fisher_test.value}, {"pairs", fisher_test.pairs},
                        {"any_singular", fisher_test.any_singular},
                        {"max_lambda", fisher_test.max_lambda}}}}},
            {"trajectory", {{"x1_test_index", pair[0]}, {"x2_test_index", pair[1]}, {"steps", a.steps}}}};
  write_file_atomic(dir / "analysis.json", meta.dump(2) + "\n");
  out << "mean Fisher criterion train " << format_number(fisher_train.value) << " test "
      << format_number(fisher_test.value) << "; artifacts in " << dir.string() << "\n";
  return kExitOk;
}

struct PreviewOptions {
  std::optional<std::size_t> index1;
  std::optional<std::size_t> index2;
  std::vector<double> ratios{0.0, 0.25, 0.5, 0.75, 1.0};
  std::string method;
};

int cmd_mix_preview(const Common& c, const PreviewOptions& p, std::ostream& out) {
  const Manifest m = resolve(c);
  const PreparedData data = load_prepared(m, data_root(c, m));
  MixMethod method = m.mixing.method;
  if (!p.method.empty()) {
    try {
      method = parse_mix_method(p.method);
    } catch (const std::exception& e) {
      throw UsageError(e.what());
    }
  }
  const std::size_t n = data.train_images.size();
  const std::size_t i1 = p.index1.value_or(0);
  std::size_t i2 = n;
  if (p.index2) {
    i2 = *p.index2;
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      if (data.train_labels[i] != data.train_labels[i1]) {
        i2 = i;
        break;
      }
    }
  }
  if (i1 >= n || i2 >= n) throw UsageError("mix-preview indices must be below " + std::to_string(n));
  const fs::path dir = m.out_dir;
  echo_manifest(dir, m);
  const Tensor32& x1 = data.train_images[i1];
  const Tensor32& x2 = data.train_images[i2];
  write_file_atomic(dir / "x1.ppm", encode_ppm(denormalize(x1, data.stats)));
  write_file_atomic(dir / "x2.ppm", encode_ppm(denormalize(x2, data.stats)));
  json listing = json::array();
  for (double r : p.ratios) {
    if (!(r >= 0.0 && r <= 1.0)) throw UsageError("mixing ratios must lie in [0, 1]");
    const Tensor32* inputs[2] = {&x1, &x2};
    const double ratios[2] = {r, 1.0 - r};
    std::vector<double> gains;
    if (method == MixMethod::sound_db) {
      for (const auto* x : inputs) {
        gains.push_back(20.0 * std::log10(std::max(per_image_stats(*x).std, kSigmaFloor)));
      }
    }
    const auto mixed = mix_images<float>(inputs, ratios, method, gains);
    const std::string name = "mix_r" + format_number(r) + ".ppm";
    write_file_atomic(dir / name, encode_ppm(denormalize(mixed.image, data.stats)));
    listing.push_back({{"file", name}, {"r", r}, {"coefficients", mixed.coefficients}});
  }
  json meta{{"method", to_string(method)},
            {"index1", i1},
            {"index2", i2},
            {"label1", data.train_labels[i1]},
            {"label2", data.train_labels[i2]},
            {"images", listing}};
  write_file_atomic(dir / "preview.json", meta.dump(2) + "\n");
  out << "wrote " << p.ratios.size() << " mixtures to " << dir.string() << "\n";
  return kExitOk;
}

struct AblateOptions {
  std::vector<std::string> methods;
  std::vector<std::string> losses;
  std::vector<std::string> policies;
  std::vector<std::string> taps;
};

int cmd_ablate(const Common& c, const AblateOptions& a, std::ostream& out, std::ostream& err) {
  Manifest base = resolve(c);
  auto methods = a.methods.empty() ? std::vector<std::string>{to_string(base.mixing.method)} : a.methods;
  auto losses = a.losses;
  if (losses.empty()) {
    losses.push_back(base.loss == LossKind::cross_entropy ? "ratio" : to_string(base.loss));
  }
  auto policies = a.policies.empty() ? std::vector<std::string>{to_string(base.mixing.policy)} : a.policies;
  auto taps = a.taps.empty() ? std::vector<std::string>{base.mixing.tap} : a.taps;

  // Check every axis value before any training starts.
  try {
    for (const auto& s : methods) parse_mix_method(s);
    for (const auto& s : losses) {
      if (parse_loss_kind(s) == LossKind::cross_entropy) {
        throw UsageError("ablate compares mixing variants; loss cross_entropy is not one");
      }
    }
    for (const auto& s : policies) parse_pair_policy(s);
  } catch (const UsageError&) {
    throw;
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }

  const PreparedData data = load_prepared(base, data_root(c, base));
  const fs::path root = base.out_dir;
  echo_manifest(root, base);
  std::string csv = csv_row({"method", "loss", "policy", "tap", "status", "completed", "seeds",
                             "mean_test_error", "standard_error", "out_dir"});
  int status = kExitOk;
  for (const auto& method : methods) {
    for (const auto& loss : losses) {
      for (const auto& policy : policies) {
        for (const auto& tap : taps) {
          Manifest v = base;
          v.mixing.enabled = true;
          v.mixing.method = parse_mix_method(method);
          v.loss = parse_loss_kind(loss);
          v.mixing.policy = parse_pair_policy(policy);
          v.mixing.tap = tap;
          const fs::path dir = root / method / loss / policy / tap;
          v.out_dir = dir.string();
          std::vector<std::string> row{method, loss, policy, tap};
          try {
            v.validate();
          } catch (const ManifestError& e) {
            row.insert(row.end(), {"invalid: " + one_line(e.what()), "0",
                                   std::to_string(v.seeds.size()), "NA", "NA", v.out_dir});
            csv += csv_row(row);
            continue;
          }
          ExperimentOptions opt;
          opt.jobs = c.jobs;
          const auto rep = run_experiment(v, data, opt);
          const bool ok = rep.completed == rep.seeds.size();
          if (!ok) status = kExitRuntime;
          row.insert(row.end(),
                     {ok ? "ok" : "incomplete", std::to_string(rep.completed),
                      std::to_string(rep.seeds.size()),
                      rep.completed ? format_number(rep.final_error.mean) : "NA",
                      format_optional(rep.final_error.standard_error), v.out_dir});
          csv += csv_row(row);
          out << method << " " << loss << " " << policy << " " << tap << ": mean test error "
              << (rep.completed ? format_number(rep.final_error.mean) : "NA") << "\n";
        }
      }
    }
  }
  write_file_atomic(root / "summary.csv", csv);
  if (status != kExitOk) err << "bclab: some ablation runs had failed seeds; see " << (root / "summary.csv").string() << "\n";
  return status;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Between-class mixing experiments on CIFAR", "bclab"};
  app.require_subcommand(1);

  Common train_c, eval_c, analyze_c, preview_c, ablate_c;
  auto* train = app.add_subcommand("train", "Train every seed of a manifest");
  add_common(train, train_c);

  auto* evaluate_cmd = app.add_subcommand("evaluate", "Test error of a checkpoint");
  add_common(evaluate_cmd, eval_c);
  std::string eval_checkpoint;
  evaluate_cmd->add_option("--checkpoint", eval_checkpoint, "Checkpoint file")->required();

  auto* analyze = app.add_subcommand("analyze", "PCA, Fisher, activation and trajectory analyses");
  add_common(analyze, analyze_c);
  AnalyzeOptions aopt;
  analyze->add_option("--checkpoint", aopt.checkpoint, "Checkpoint file")->required();
  analyze->add_option("--tap", aopt.tap, "Feature tap")->capture_default_str();
  analyze->add_option("--dims", aopt.dims, "PCA dimensions")->check(CLI::Range(1, 3))->capture_default_str();
  analyze->add_option("--max-examples", aopt.max_examples, "Examples per split")
      ->check(CLI::PositiveNumber)->capture_default_str();
  analyze->add_option("--classes", aopt.classes, "Classes shown in PCA plots")->delimiter(',');
  analyze->add_option("--pair", aopt.pair, "Two test-set indices for the trajectory")
      ->delimiter(',')->expected(2);
  analyze->add_option("--steps", aopt.steps, "Trajectory points")->check(CLI::Range(2, 10000))->capture_default_str();

  auto* preview = app.add_subcommand("mix-preview", "Write mixed images as PPM files");
  add_common(preview, preview_c);
  PreviewOptions popt;
  preview->add_option("--index1", popt.index1, "Training index of the first image");
  preview->add_option("--index2", popt.index2, "Training index of the second image");
  preview->add_option("--ratios", popt.ratios, "Mixing ratios")->delimiter(',');
  preview->add_option("--method", popt.method, "Mixing method (default: manifest)");

  auto* ablate = app.add_subcommand("ablate", "Grid over method x label x policy x tap");
  add_common(ablate, ablate_c);
  AblateOptions bopt;
  ablate->add_option("--methods", bopt.methods, "Mixing methods")->delimiter(',');
  ablate->add_option("--losses", bopt.losses, "Label variants: ratio, single, multi")->delimiter(',');
  ablate->add_option("--policies", bopt.policies, "Pair policies: N1, N1or2, N2, N2or3, N3")->delimiter(',');
  ablate->add_option("--taps", bopt.taps, "Mixing taps")->delimiter(',');

  std::vector<const char*> argv{"bclab"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "bclab: usage error: " << one_line(e.what()) << "\n";
    return kExitUsage;
  }

  try {
    if (*train) return cmd_train(train_c, out, err);
    if (*evaluate_cmd) return cmd_evaluate(eval_c, eval_checkpoint, out);
    if (*analyze) return cmd_analyze(analyze_c, aopt, out);
    if (*preview) return cmd_mix_preview(preview_c, popt, out);
    if (*ablate) return cmd_ablate(ablate_c, bopt, out, err);
  } catch (const ManifestError& e) {
    err << "bclab: manifest error: " << one_line(e.what()) << "\n";
    return kExitUsage;
  } catch (const UsageError& e) {
    err << "bclab: usage error: " << one_line(e.what()) << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "bclab: error: " << one_line(e.what()) << "\n";
    return kExitRuntime;
  }
  err << "bclab: usage error: no subcommand\n";
  return kExitUsage;
}

int run(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args, std::cout, std::cerr);
}

}  // namespace bclab::cli
