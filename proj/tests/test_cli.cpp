#include <doctest.h>

#include <sys/wait.h>
#include <algorithm>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "bclab/checkpoint.hpp"
#include "bclab/cli.hpp"
#include "bclab/report.hpp"

namespace fs = std::filesystem;
using bclab::cli::run;
using nlohmann::json;

namespace {

std::string env(const char* name) {
  const char* v = std::getenv(name);
  REQUIRE_MESSAGE(v != nullptr, std::string(name) << " must point at the built tool");
  return v;
}

int shell(const std::string& cmd) {
  const int raw = std::system(cmd.c_str());
  return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
}

const fs::path& work_dir() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / "bclab_cli_test";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

// Full-size synthetic CIFAR-10 tree, written once per test process.
const fs::path& data_dir() {
  static const fs::path dir = [] {
    const fs::path d = work_dir() / "data";
    REQUIRE(shell(env("BCLAB_SYNTH") + " --out " + d.string() + " --seed 3") == 0);
    return d;
  }();
  return dir;
}

fs::path small_manifest() {
  const fs::path path = work_dir() / "small.json";
  const json m{{"train_subset", 20},
               {"test_subset", 20},
               {"batch_size", 4},
               {"steps_per_epoch", 1},
               {"schedule", {{"epochs", 2}, {"milestones", {1}}}},
               {"seeds", {1, 2}},
               {"eval_batch_size", 10}};
  bclab::write_file_atomic(path, m.dump());
  return path;
}

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run(args, out, err);
  return {code, out.str(), err.str()};
}

std::size_t lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST_CASE("help and usage errors") {
  CHECK(cli({"--help"}).code == bclab::cli::kExitOk);
  CHECK(cli({"train", "--help"}).code == bclab::cli::kExitOk);
  const auto none = cli({});
  CHECK(none.code == bclab::cli::kExitUsage);
  const auto bad = cli({"frobnicate"});
  CHECK(bad.code == bclab::cli::kExitUsage);
  CHECK(lines(bad.err) == 1);
  CHECK(bad.err.rfind("bclab: ", 0) == 0);
  CHECK(cli({"train", "--set", "batchsize=3", "--data-dir", "/tmp"}).code == bclab::cli::kExitUsage);
  CHECK(cli({"train", "--set", "mixing.enabled=true", "--data-dir", "/tmp"}).code == bclab::cli::kExitUsage);
  CHECK(cli({"train", "--manifest", "/nonexistent.json"}).code == bclab::cli::kExitUsage);
  CHECK(cli({"evaluate"}).code == bclab::cli::kExitUsage);
  CHECK(cli({"analyze", "--checkpoint", "x", "--dims", "4"}).code == bclab::cli::kExitUsage);
  CHECK(cli({"ablate", "--methods", "blend", "--data-dir", "/tmp"}).code == bclab::cli::kExitUsage);

  // The installed binary reports the same codes.
  const std::string bin = env("BCLAB_CLI");
  CHECK(shell(bin + " --help > /dev/null") == 0);
  CHECK(shell(bin + " bogus 2> /dev/null") == 2);
}

TEST_CASE("runtime errors") {
  const auto missing = cli({"train", "--data-dir", (work_dir() / "no-data").string(), "--manifest",
                            small_manifest().string(), "--out", (work_dir() / "x").string()});
  CHECK(missing.code == bclab::cli::kExitRuntime);
  CHECK(lines(missing.err) == 1);
  CHECK(cli({"evaluate", "--checkpoint", (work_dir() / "none.bin").string()}).code ==
        bclab::cli::kExitRuntime);
}

TEST_CASE("train, evaluate and analyze a synthetic dataset") {
  const fs::path out = work_dir() / "train";
  const auto r = cli({"train", "--manifest", small_manifest().string(), "--data-dir",
                      data_dir().string(), "--out", out.string(), "--jobs", "2"});
  INFO(r.err);
  REQUIRE(r.code == 0);
  CHECK(r.out.find("seed 1 epoch 1") != std::string::npos);
  // Header plus epochs x seeds rows.
  CHECK(lines(bclab::read_file(out / "metrics.csv")) == 1 + 2 * 2);
  const auto summary = json::parse(bclab::read_file(out / "summary.json"));
  CHECK(summary["completed"] == 2);
  CHECK(summary["standard_error"].is_number());
  for (const auto* f : {"manifest.json", "curves.svg", "seed-1/checkpoint.bin", "seed-2/manifest.json"})
    CHECK(fs::exists(out / f));
  const auto echoed = json::parse(bclab::read_file(out / "manifest.json"));
  CHECK(echoed["batch_size"] == 4);
  CHECK(echoed["out_dir"] == out.string());

  // The manifest travels with the checkpoint.
  const fs::path ckpt = out / "seed-1" / "checkpoint.bin";
  const auto meta = bclab::load_checkpoint(ckpt).metadata;
  const double final_error = meta["final_test_error"];
  setenv(bclab::cli::kDataDirEnv, data_dir().c_str(), 1);
  const fs::path eval_out = work_dir() / "eval";
  const auto e = cli({"evaluate", "--checkpoint", ckpt.string(), "--out", eval_out.string()});
  unsetenv(bclab::cli::kDataDirEnv);
  INFO(e.err);
  REQUIRE(e.code == 0);
  const auto ev = json::parse(bclab::read_file(eval_out / "evaluation.json"));
  CHECK(ev["test_error"] == final_error);
  CHECK(ev["test_examples"] == 20);

  const fs::path an = work_dir() / "analysis";
  const auto a = cli({"analyze", "--checkpoint", ckpt.string(), "--data-dir", data_dir().string(),
                      "--out", an.string(), "--classes", "0,1,2", "--steps", "4"});
  INFO(a.err);
  REQUIRE(a.code == 0);
  for (const auto* f : {"pca_projection.csv", "pca_train.svg", "pca_test.svg", "fisher_pairs_train.csv",
                        "activation_matrix.csv", "activation_matrix.svg", "trajectory.csv",
                        "trajectory.svg", "analysis.json", "manifest.json"})
    CHECK(fs::exists(an / f));
  const auto aj = json::parse(bclab::read_file(an / "analysis.json"));
  CHECK(aj["feature_dim"] == 256);
  CHECK(aj["pca"]["displayed_classes"] == json::array({0, 1, 2}));
  CHECK(lines(bclab::read_file(an / "trajectory.csv")) == 5);
  CHECK(lines(bclab::read_file(an / "activation_matrix.csv")) == 10);
  CHECK(cli({"analyze", "--checkpoint", ckpt.string(), "--data-dir", data_dir().string(), "--out",
             an.string(), "--classes", "12"})
            .code == bclab::cli::kExitUsage);
}

TEST_CASE("mix-preview") {
  const fs::path out = work_dir() / "preview";
  const auto r = cli({"mix-preview", "--manifest", small_manifest().string(), "--data-dir",
                      data_dir().string(), "--out", out.string(), "--ratios", "0,0.5,1"});
  INFO(r.err);
  REQUIRE(r.code == 0);
  const auto meta = json::parse(bclab::read_file(out / "preview.json"));
  CHECK(meta["label1"] != meta["label2"]);
  CHECK(meta["images"].size() == 3);
  // r = 1 reproduces the first image and r = 0 the second.
  CHECK(bclab::read_file(out / "mix_r1.ppm") == bclab::read_file(out / "x1.ppm"));
  CHECK(bclab::read_file(out / "mix_r0.ppm") == bclab::read_file(out / "x2.ppm"));
  CHECK(bclab::read_file(out / "x1.ppm").size() == 13 + 32 * 32 * 3);
  CHECK(cli({"mix-preview", "--data-dir", data_dir().string(), "--out", out.string(), "--ratios", "1.5"})
            .code == bclab::cli::kExitUsage);
  CHECK(cli({"mix-preview", "--data-dir", data_dir().string(), "--out", out.string(), "--index1",
             "999999"})
            .code == bclab::cli::kExitUsage);
}

TEST_CASE("ablate over label variants") {
  const fs::path out = work_dir() / "ablate";
  const auto r = cli({"ablate", "--manifest", small_manifest().string(), "--data-dir",
                      data_dir().string(), "--out", out.string(), "--losses", "single,multi,ratio",
                      "--set", "seeds=[1]", "--set", "schedule.epochs=1", "--set",
                      "schedule.milestones=[]"});
  INFO(r.err);
  REQUIRE(r.code == 0);
  const auto csv = bclab::read_file(out / "summary.csv");
  CHECK(lines(csv) == 4);
  for (const auto* loss : {"single", "multi", "ratio"}) {
    CHECK(csv.find(std::string(",") + loss + ",") != std::string::npos);
    CHECK(fs::exists(out / "simple" / loss / "N2" / "input" / "summary.json"));
  }
  CHECK(csv.find("invalid") == std::string::npos);

  // Hidden-tap rows with an incompatible method are recorded, not run.
  const auto inv = cli({"ablate", "--manifest", small_manifest().string(), "--data-dir",
                        data_dir().string(), "--out", (work_dir() / "ablate2").string(),
                        "--methods", "bc_plus", "--taps", "fc6-input", "--set", "seeds=[1]"});
  REQUIRE(inv.code == 0);
  CHECK(bclab::read_file(work_dir() / "ablate2" / "summary.csv").find("invalid: ") != std::string::npos);
}
