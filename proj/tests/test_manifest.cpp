#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "bclab/manifest.hpp"

using namespace bclab;
using nlohmann::json;

namespace {

Manifest bc() {
  return resolve_manifest(json::object(), {"mixing.enabled=true", "loss=\"ratio\""});
}

}  // namespace

TEST_CASE("defaults") {
  const Manifest m = manifest_from_json(json::object());
  CHECK_NOTHROW(m.validate());
  CHECK(m.dataset == "cifar10");
  CHECK(m.num_classes() == 10);
  CHECK(m.loss == LossKind::cross_entropy);
  CHECK_FALSE(m.mixing.enabled);
  CHECK_FALSE(m.mixing.fixed_ratio.has_value());
  CHECK(m.schedule.total_epochs() == 40);
  CHECK(m.seeds.size() == 3);
  CHECK(m.batch_size == 128);
  CHECK(m.momentum == 0.9);
  CHECK(m.weight_decay == 5e-4);
}

TEST_CASE("json round trip") {
  Manifest m = bc();
  m.dataset = "cifar100";
  m.mixing.method = MixMethod::bc_plus;
  m.mixing.policy = PairPolicy::n2_or_3;
  m.mixing.fixed_ratio = 0.25;
  m.schedule.milestones = {5, 8};
  m.schedule.epochs = 10;
  m.seeds = {7, 9};
  const auto j = to_json(m);
  const Manifest back = manifest_from_json(j);
  CHECK(to_json(back) == j);
  CHECK(back.num_classes() == 100);
  CHECK(back.mixing.fixed_ratio == 0.25);
  CHECK(j["mixing"]["policy"] == "N2or3");
  CHECK(j["mixing"]["method"] == "bc_plus");
}

TEST_CASE("unknown keys and wrong types are rejected") {
  CHECK_THROWS_WITH_AS(manifest_from_json(json{{"batchsize", 4}}), doctest::Contains("batchsize"),
                       ManifestError);
  CHECK_THROWS_AS(manifest_from_json(json{{"mixing", {{"ratio", 1}}}}), ManifestError);
  CHECK_THROWS_AS(manifest_from_json(json{{"batch_size", "big"}}), ManifestError);
  CHECK_THROWS_AS(manifest_from_json(json{{"version", 2}}), ManifestError);
  CHECK_THROWS_AS(manifest_from_json(json{{"loss", "hinge"}}), ManifestError);
}

TEST_CASE("overrides") {
  json doc = json::object();
  apply_override(doc, "schedule.epochs=3");
  apply_override(doc, "dataset=cifar100");  // bare string
  apply_override(doc, "seeds=[4,5]");
  apply_override(doc, "mixing.enabled=true");
  apply_override(doc, "loss=ratio");
  const Manifest m = resolve_manifest(doc, {"schedule.milestones=[1]", "mixing.fixed_ratio=0.5"});
  CHECK(m.schedule.epochs == 3);
  CHECK(m.schedule.milestones == std::vector<std::size_t>{1});
  CHECK(m.dataset == "cifar100");
  CHECK(m.seeds == std::vector<std::uint64_t>{4, 5});
  CHECK(m.mixing.fixed_ratio == 0.5);
  CHECK_THROWS_AS(apply_override(doc, "schedule.warmup=3"), ManifestError);
  CHECK_THROWS_AS(apply_override(doc, "epochs"), ManifestError);
  CHECK_THROWS_AS(apply_override(doc, "schedule=3"), ManifestError);
}

TEST_CASE("consistency rules") {
  auto fails = [](std::vector<std::string> o) {
    CHECK_THROWS_AS(resolve_manifest(json::object(), o), ManifestError);
  };
  fails({"mixing.enabled=true"});                                   // CE with mixing
  fails({"loss=ratio"});                                            // ratio without mixing
  fails({"mixing.fixed_ratio=1.0"});                                // fixed ratio without mixing
  fails({"mixing.enabled=true", "loss=ratio", "mixing.fixed_ratio=1.5"});
  fails({"mixing.enabled=true", "loss=ratio", "mixing.tap=conv9"});
  fails({"mixing.enabled=true", "loss=ratio", "mixing.tap=fc6-input", "mixing.method=bc_plus"});
  fails({"mixing.enabled=true", "loss=ratio", "mixing.tap=fc6-input", "mixing.policy=N3"});
  fails({"seeds=[]"});
  fails({"seeds=[1,1]"});
  fails({"batch_size=0"});
  fails({"train_subset=5"});
  fails({"schedule.milestones=[30,20]"});
  fails({"schedule.milestones=[50]"});
  fails({"dataset=mnist"});
  fails({"preset=vgg"});
  CHECK_NOTHROW(bc());
  CHECK_NOTHROW(resolve_manifest(json::object(), {"mixing.enabled=true", "loss=multi",
                                                  "mixing.tap=fc6-input", "mixing.policy=N1or2"}));
}

TEST_CASE("loading from disk") {
  const auto path = std::filesystem::temp_directory_path() / "bclab_manifest_test.json";
  {
    std::ofstream(path) << R"({"schedule": {"epochs": 2, "milestones": []}, "seeds": [11]})";
  }
  const Manifest m = load_manifest(path);
  CHECK(m.schedule.epochs == 2);
  CHECK(m.seeds == std::vector<std::uint64_t>{11});
  {
    std::ofstream(path) << "{not json";
  }
  CHECK_THROWS_AS(load_manifest(path), ManifestError);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_manifest(path), ManifestError);
}
