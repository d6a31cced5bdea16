#include <doctest.h>

#include <cmath>
#include <map>

#include "bclab/loss.hpp"
#include "bclab/mixing.hpp"
#include "bclab/network.hpp"
#include "oracles.hpp"

using namespace bclab;

namespace {

LayerSpec conv(const std::string& name, std::size_t filters, std::size_t k = 3, std::size_t pad = 1) {
  return {LayerKind::conv, name, k, 1, pad, filters, 0, 0.0};
}
LayerSpec fc(const std::string& name, std::size_t units) {
  return {LayerKind::fc, name, 0, 1, 0, 0, units, 0.0};
}
LayerSpec simple(LayerKind kind, const std::string& name) { return {kind, name}; }
LayerSpec pool(const std::string& name) { return {LayerKind::maxpool, name, 2, 2}; }
LayerSpec dropout(const std::string& name, double p) { return {LayerKind::dropout, name, 0, 1, 0, 0, 0, p}; }

// conv-bn-relu-pool-flatten-fc-relu-dropout-fc on 2x6x6 inputs, 3 classes.
NetworkConfig tiny_config() {
  return make_config({2, 6, 6},
                     {conv("c1", 3), simple(LayerKind::batchnorm, "bn1"), simple(LayerKind::relu, "r1"),
                      pool("p1"), simple(LayerKind::flatten, "flat"), fc("f1", 5),
                      simple(LayerKind::relu, "r2"), dropout("d1", 0.3), fc("f2", 3)},
                     3, {{"hidden", 5}});
}

Tensor64 random_targets(std::size_t n, std::size_t k, std::uint64_t seed) {
  Rng rng(seed);
  Tensor64 t(Shape{n, k});
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += t[i * k + j] = rng.uniform(0.1, 1.0);
    for (std::size_t j = 0; j < k; ++j) t[i * k + j] /= s;
  }
  return t;
}

}  // namespace

TEST_CASE("presets shape-check") {
  auto big = build_preset("cnn11", 10);
  CHECK_NOTHROW(big.validate());
  const auto shapes = big.boundary_shapes();
  CHECK(shapes.front() == Shape{3, 32, 32});
  CHECK(shapes.back() == Shape{10});
  CHECK(shapes[big.tap_boundary("fc6-input")] == Shape{1024});
  CHECK(shapes[big.tap_boundary("layer10-features")] == Shape{1024});
  std::size_t convs = 0, fcs = 0;
  for (const auto& l : big.layers) {
    convs += l.kind == LayerKind::conv;
    fcs += l.kind == LayerKind::fc;
  }
  CHECK(convs == 8);
  CHECK(fcs == 3);

  auto small = build_preset("cnn-small", 100);
  CHECK(small.boundary_shapes().back() == Shape{100});
  for (const auto& tap : {"input", "layer10-features", "fc6-input"}) CHECK(small.has_tap(tap));
  CHECK_THROWS_AS(small.tap_boundary("conv9"), UnknownTapError);
  CHECK_THROWS(build_preset("resnet", 10));
  CHECK_THROWS_AS(make_config({3, 5, 5}, {pool("p")}, 2), ShapeError);
}

TEST_CASE("per-layer gradients match central differences") {
  constexpr double kTol = 1e-4;
  auto check_layer = [&](NetworkConfig cfg, Shape in_shape, std::uint64_t seed) {
    Rng init(seed);
    auto params = init_weights<double>(cfg, init);
    auto x = oracle::random_away_from_zero<double>(in_shape, seed + 1);
    auto fwd = forward(params, x, Mode::train);
    const auto r = oracle::random_tensor<double>(fwd.output.shape(), seed + 2);
    auto grads = backward(params, fwd.cache, r, true);
    auto f = [&] { return oracle::probe(forward(params, x, Mode::train).output, r); };
    CHECK(oracle::rel_error(grads.input, oracle::numeric_grad(x, f)) < kTol);
    auto named = grads.named(params.config);
    std::map<std::string, const Tensor64*> by_name(named.begin(), named.end());
    for (auto& [name, t] : params.trainable()) {
      INFO(name);
      REQUIRE(by_name.count(name));
      CHECK(oracle::rel_error(*by_name[name], oracle::numeric_grad(*t, f)) < kTol);
    }
  };
  SUBCASE("conv") { check_layer(make_config({2, 5, 5}, {conv("c", 3), simple(LayerKind::flatten, "fl")}, 3 * 25), {2, 2, 5, 5}, 10); }
  SUBCASE("batchnorm over channels") {
    auto cfg = make_config({3, 2, 2}, {simple(LayerKind::batchnorm, "bn"), simple(LayerKind::flatten, "fl")}, 12);
    Rng init(11);
    auto params = init_weights<double>(cfg, init);
    // Non-trivial scale and shift so their gradients are exercised.
    params.layers[0].gamma = oracle::random_tensor<double>({3}, 12, 0.5, 2.0);
    params.layers[0].beta = oracle::random_tensor<double>({3}, 13);
    auto x = oracle::random_tensor<double>({4, 3, 2, 2}, 14);
    auto fwd = forward(params, x, Mode::train);
    const auto r = oracle::random_tensor<double>(fwd.output.shape(), 15);
    auto grads = backward(params, fwd.cache, r, true);
    auto f = [&] { return oracle::probe(forward(params, x, Mode::train).output, r); };
    CHECK(oracle::rel_error(grads.input, oracle::numeric_grad(x, f)) < kTol);
    CHECK(oracle::rel_error(grads.layers[0].gamma, oracle::numeric_grad(params.layers[0].gamma, f)) < kTol);
    CHECK(oracle::rel_error(grads.layers[0].beta, oracle::numeric_grad(params.layers[0].beta, f)) < kTol);
  }
  SUBCASE("fc") { check_layer(make_config({7}, {fc("f", 4)}, 4), {3, 7}, 16); }
  SUBCASE("relu") { check_layer(make_config({6}, {simple(LayerKind::relu, "r")}, 6), {2, 6}, 17); }
  SUBCASE("flatten then fc") {
    check_layer(make_config({2, 3, 3}, {simple(LayerKind::flatten, "fl"), fc("f", 2)}, 2), {2, 2, 3, 3}, 18);
  }
}

TEST_CASE("maxpool layer gradient") {
  auto cfg = make_config({2, 4, 4}, {pool("p"), simple(LayerKind::flatten, "fl")}, 8);
  Rng init(19);
  auto params = init_weights<double>(cfg, init);
  auto x = oracle::random_distinct<double>({2, 2, 4, 4}, 20);
  auto fwd = forward(params, x, Mode::train);
  const auto r = oracle::random_tensor<double>(fwd.output.shape(), 21);
  auto grads = backward(params, fwd.cache, r, true);
  auto f = [&] { return oracle::probe(forward(params, x, Mode::train).output, r); };
  CHECK(oracle::rel_error(grads.input, oracle::numeric_grad(x, f)) < 1e-4);
}

TEST_CASE("end-to-end network gradient") {
  const auto cfg = tiny_config();
  Rng init(30);
  auto params = init_weights<double>(cfg, init);
  auto x = oracle::random_tensor<double>({4, 2, 6, 6}, 31);
  const auto targets = random_targets(4, 3, 32);
  // The same dropout mask on every evaluation.
  auto loss_of = [&]() {
    Rng drop(33);
    auto out = forward(params, x, Mode::train, &drop);
    return batch_loss(LossKind::ratio, targets, out.output);
  };
  Rng drop(33);
  auto fwd = forward(params, x, Mode::train, &drop);
  auto loss = batch_loss(LossKind::ratio, targets, fwd.output);
  auto grads = backward(params, fwd.cache, loss.grad, true);
  auto f = [&] { return loss_of().loss; };
  CHECK(oracle::rel_error(grads.input, oracle::numeric_grad(x, f, 1e-5)) < 1e-3);
  auto named = grads.named(params.config);
  std::map<std::string, const Tensor64*> by_name(named.begin(), named.end());
  for (auto& [name, t] : params.trainable()) {
    INFO(name);
    const auto numeric = oracle::numeric_grad(*t, f, 1e-5);
    if (name == "c1.bias") {
      // Batch norm removes any per-channel shift, so this gradient is zero.
      CHECK(oracle::max_abs(numeric) < 1e-9);
      CHECK(oracle::max_abs(*by_name[name]) < 1e-12);
      continue;
    }
    CHECK(oracle::rel_error(*by_name[name], numeric) < 1e-3);
  }
}

TEST_CASE("split forward through a tap equals the full forward") {
  const auto cfg = tiny_config();
  Rng init(40);
  auto params = init_weights<double>(cfg, init);
  auto x = oracle::random_tensor<double>({3, 2, 6, 6}, 41);
  auto full = infer_range(params, x, 0, cfg.layers.size());
  auto head = forward_to_tap(params, x, "hidden", Mode::eval);
  auto tail = resume_from_tap(params, head.output, "hidden", Mode::eval);
  CHECK(tail.output == full);
  CHECK(forward(params, x, Mode::eval).output == full);
  CHECK_THROWS_AS(forward_to_tap(params, x, "nope", Mode::eval), UnknownTapError);
  CHECK_THROWS_AS(infer_range(params, Tensor64(Shape{1, 3, 6, 6}), 0, 2), ShapeError);
}

TEST_CASE("evaluation is per-example and leaves parameters untouched") {
  const auto cfg = tiny_config();
  Rng init(50);
  auto params = init_weights<double>(cfg, init);
  auto x = oracle::random_tensor<double>({5, 2, 6, 6}, 51);
  const auto before = params.layers[1].running_mean;
  auto all = infer_range(params, x, 0, cfg.layers.size());
  for (std::size_t i = 0; i < 5; ++i) {
    auto one = infer_range(params, stack<double>({unstack_row(x, i)}), 0, cfg.layers.size());
    for (std::size_t k = 0; k < 3; ++k) CHECK(one[k] == all[i * 3 + k]);
  }
  CHECK(params.layers[1].running_mean == before);
  CHECK(params.version == 0);
}

TEST_CASE("batchnorm statistics") {
  auto cfg = make_config({2, 3, 3}, {simple(LayerKind::batchnorm, "bn"), simple(LayerKind::flatten, "fl")}, 18);
  Rng init(60);
  auto params = init_weights<double>(cfg, init);
  auto x = oracle::random_tensor<double>({8, 2, 3, 3}, 61, 2.0, 9.0);
  auto y = forward(params, x, Mode::train).output;
  for (std::size_t c = 0; c < 2; ++c) {
    double s = 0.0, sq = 0.0;
    const std::size_t m = 8 * 9;
    for (std::size_t n = 0; n < 8; ++n)
      for (std::size_t p = 0; p < 9; ++p) {
        const double v = y[(n * 2 + c) * 9 + p];
        s += v;
        sq += v * v;
      }
    CHECK(std::abs(s / m) < 1e-9);
    CHECK(sq / m == doctest::Approx(1.0).epsilon(1e-3));
  }
  // Running statistics moved from (0, 1) toward the batch statistics.
  CHECK(params.layers[0].running_mean[0] > 0.0);
  CHECK(params.layers[0].running_mean[0] < 9.0);
  // Eval mode uses the running statistics: fresh parameters act as identity
  // up to the epsilon.
  auto fresh = init_weights<double>(cfg, init);
  auto e = forward(fresh, x, Mode::eval).output;
  CHECK(oracle::rel_error(e, x) < 1e-4);
}

TEST_CASE("stale caches are rejected") {
  const auto cfg = tiny_config();
  Rng init(70);
  auto params = init_weights<double>(cfg, init);
  auto x = oracle::random_tensor<double>({2, 2, 6, 6}, 71);
  Rng drop(72);
  auto fwd = forward(params, x, Mode::train, &drop);
  Tensor64 g(fwd.output.shape(), 1.0);
  ++params.version;
  CHECK_THROWS_AS(backward(params, fwd.cache, g), StaleCacheError);
  auto no_cache = forward_range(params, x, 0, cfg.layers.size(), Mode::train, &drop, false);
  CHECK_THROWS_AS(backward(params, no_cache.cache, g), StaleCacheError);
}

TEST_CASE("dropout") {
  auto cfg = make_config({1000}, {dropout("d", 0.5)}, 1000);
  Rng init(80);
  auto params = init_weights<double>(cfg, init);
  Tensor64 x(Shape{1, 1000}, 1.0);
  CHECK(forward(params, x, Mode::eval).output == x);
  CHECK_THROWS(forward(params, x, Mode::train));
  Rng drop(81);
  auto y = forward(params, x, Mode::train, &drop).output;
  std::size_t zeros = 0;
  for (double v : y.data()) {
    CHECK((v == 0.0 || v == 2.0));
    zeros += v == 0.0;
  }
  CHECK(std::abs(static_cast<double>(zeros) - 500.0) < 60.0);
}

TEST_CASE("initialisation") {
  auto cfg = build_preset("cnn-small", 10);
  Rng a(90), b(90);
  auto p1 = init_weights<float>(cfg, a);
  auto p2 = init_weights<float>(cfg, b);
  auto t1 = p1.all_tensors();
  auto t2 = p2.all_tensors();
  REQUIRE(t1.size() == t2.size());
  for (std::size_t i = 0; i < t1.size(); ++i) CHECK(*t1[i].second == *t2[i].second);
  // He-normal conv weights: sample std close to sqrt(2 / fan_in).
  const auto& w = p1.layers[0].weight;
  double sq = 0.0;
  for (float v : w.data()) sq += static_cast<double>(v) * v;
  CHECK(std::sqrt(sq / w.size()) == doctest::Approx(std::sqrt(2.0 / 27.0)).epsilon(0.1));
  auto p64 = p1.cast<double>();
  CHECK(p64.all_tensors().size() == t1.size());
}

TEST_CASE("listed network examples") {
  SUBCASE("fc initialisation bound") {
    auto cfg = make_config({1024}, {fc("f", 10)}, 10);
    Rng rng(100);
    const auto p = init_weights<double>(cfg, rng);
    for (double w : p.layers[0].weight.data()) {
      CHECK(w > -0.03125);
      CHECK(w < 0.03125);
    }
  }
  SUBCASE("conv initialisation spread") {
    auto cfg = make_config({3, 4, 4}, {conv("c", 64), simple(LayerKind::flatten, "fl")}, 64 * 16);
    double sq = 0.0;
    std::size_t count = 0;
    for (std::uint64_t s = 0; s < 6; ++s) {  // > 1e4 draws
      Rng rng(200 + s);
      for (double w : init_weights<double>(cfg, rng).layers[0].weight.data()) sq += w * w, ++count;
    }
    CHECK(count >= 10000);
    CHECK(std::abs(std::sqrt(sq / count) / std::sqrt(2.0 / 27.0) - 1.0) < 0.05);
  }
  SUBCASE("zero final layer gives uniform outputs") {
    const auto cfg = tiny_config();
    Rng init(101);
    auto params = init_weights<double>(cfg, init);
    for (auto& v : params.layers.back().weight.data()) v = 0.0;
    auto y = infer_range(params, oracle::random_tensor<double>({2, 2, 6, 6}, 102), 0, cfg.layers.size());
    for (double v : y.data()) CHECK(v == 0.0);
    const auto sm = softmax_rows(y);
    for (double v : sm.data()) CHECK(v == doctest::Approx(1.0 / 3.0));
  }
  SUBCASE("zero upstream gradient") {
    const auto cfg = tiny_config();
    Rng init(103), drop(104);
    auto params = init_weights<double>(cfg, init);
    auto fwd = forward(params, oracle::random_tensor<double>({2, 2, 6, 6}, 105), Mode::train, &drop);
    auto g = backward(params, fwd.cache, Tensor64(fwd.output.shape()));
    for (auto& [name, t] : g.named(params.config))
      for (double v : t->data()) CHECK(v == 0.0);
  }
  SUBCASE("mixing through taps") {
    const auto cfg = tiny_config();
    Rng init(106);
    auto params = init_weights<double>(cfg, init);
    const std::size_t n = cfg.layers.size();
    auto x1 = oracle::random_tensor<double>({1, 2, 6, 6}, 107);
    auto x2 = oracle::random_tensor<double>({1, 2, 6, 6}, 108);
    // At the input tap, tap mixing is image mixing.
    auto h1 = forward_to_tap(params, x1, "input", Mode::eval).output;
    auto h2 = forward_to_tap(params, x2, "input", Mode::eval).output;
    auto via_tap = resume_from_tap(params, mix_simple(h1, h2, 0.3), "input", Mode::eval).output;
    CHECK(via_tap == infer_range(params, mix_simple(x1, x2, 0.3), 0, n));
    // Hidden activations mix into valid predictions.
    auto a1 = forward_to_tap(params, x1, "hidden", Mode::eval).output;
    auto a2 = forward_to_tap(params, x2, "hidden", Mode::eval).output;
    auto logits = resume_from_tap(params, mix_simple(a1, a2, 0.5), "hidden", Mode::eval).output;
    CHECK(logits.shape() == Shape{1, 3});
    CHECK(all_finite(logits));
    double s = 0.0;
    const auto probs = softmax_rows(logits);
    for (double v : probs.data()) s += v;
    CHECK(s == doctest::Approx(1.0));
  }
  SUBCASE("split and resume at every tap of both presets") {
    for (const auto* preset : {"cnn-small", "cnn11"}) {
      Rng init(109);
      auto params = init_weights<float>(build_preset(preset, 10), init);
      auto x = oracle::random_tensor<float>({1, 3, 32, 32}, 110);
      const auto full = infer_range(params, x, 0, params.config.layers.size());
      for (const auto& tap : params.config.tap_names()) {
        auto h = forward_to_tap(params, x, tap, Mode::eval).output;
        CHECK(resume_from_tap(params, h, tap, Mode::eval).output == full);
      }
      CHECK(infer_range(params, x, 0, params.config.layers.size()) == full);
    }
  }
  SUBCASE("eval-mode dropout passes gradients through") {
    auto cfg = make_config({5}, {dropout("d", 0.5)}, 5);
    Rng init(111);
    auto params = init_weights<double>(cfg, init);
    auto x = oracle::random_tensor<double>({2, 5}, 112);
    auto fwd = forward_range(params, x, 0, 1, Mode::eval);
    const auto r = oracle::random_tensor<double>({2, 5}, 113);
    CHECK(backward(params, fwd.cache, r, true).input == r);
  }
}
