#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <limits>

#include "freqlab/models.hpp"
#include "support.hpp"

using namespace freqlab;
using namespace freqlab::models;

namespace {

Tensor forward(const Model& m, const Params& p, const Tensor& x) { return predict(m, p, x); }

/// Two Gaussian blobs in pixel space, separated along a random direction.
data::Split separable_pair(std::uint64_t seed, std::size_t per_class) {
  SplitMix64 rng(seed);
  std::vector<double> dir(64);
  for (double& v : dir) v = rng.normal();
  double n = 0;
  for (double v : dir) n += v * v;
  for (double& v : dir) v /= std::sqrt(n);
  auto make = [&](std::size_t count) {
    data::Dataset ds;
    ds.classes = 2;
    std::vector<double> px;
    for (std::size_t i = 0; i < 2 * count; ++i) {
      const std::size_t y = i % 2;
      ds.labels.push_back(y);
      for (std::size_t p = 0; p < 64; ++p)
        px.push_back(std::clamp(0.5 + (y ? 0.15 : -0.15) * dir[p] + 0.02 * rng.normal(), 0.0, 1.0));
    }
    ds.images = Tensor(Shape{2 * count, 1, 8, 8}, px);
    return ds;
  };
  data::Split s;
  s.train = make(per_class);
  s.test = make(per_class);
  return s;
}

/// Plain logistic regression by full-batch gradient descent.
double logistic_oracle(const data::Split& s) {
  std::vector<double> w(64, 0.0);
  double b = 0;
  for (int it = 0; it < 500; ++it) {
    std::vector<double> gw(64, 0.0);
    double gb = 0;
    for (std::size_t i = 0; i < s.train.size(); ++i) {
      const auto x = s.train.images.row(i);
      double z = b;
      for (std::size_t p = 0; p < 64; ++p) z += w[p] * (x[p] - 0.5);
      const double err = 1.0 / (1.0 + std::exp(-z)) - static_cast<double>(s.train.labels[i]);
      for (std::size_t p = 0; p < 64; ++p) gw[p] += err * (x[p] - 0.5);
      gb += err;
    }
    for (std::size_t p = 0; p < 64; ++p) w[p] -= 0.5 * gw[p] / static_cast<double>(s.train.size());
    b -= 0.5 * gb / static_cast<double>(s.train.size());
  }
  std::size_t hit = 0;
  for (std::size_t i = 0; i < s.test.size(); ++i) {
    const auto x = s.test.images.row(i);
    double z = b;
    for (std::size_t p = 0; p < 64; ++p) z += w[p] * (x[p] - 0.5);
    hit += (z > 0) == (s.test.labels[i] == 1);
  }
  return static_cast<double>(hit) / static_cast<double>(s.test.size());
}

}  // namespace

TEST_CASE("FC hidden layer on the CIFAR shape is 3072 by 3072") {
  const ModelSpec spec = family_spec(Family::FC, 1, 0, 3, Activation::None, 3, 32, 32, 10);
  const Model m = build_model(spec, 1);
  CHECK(m.params[m.layer_params[0][0]].shape() == Shape{3072, 3072});
  CHECK(m.parameter_count() == 3072 * 3072 + 10 * 3072 + 10);
}

TEST_CASE("spec validation") {
  CHECK_THROWS_AS(family_spec(Family::BWC, 1, 17, 1, Activation::None, 1, 16, 16, 10), Error);
  CHECK_THROWS_AS(vit_spec(3, true, 1, 16, 16, 10), Error);
  ModelSpec bad = family_spec(Family::FC, 1, 0, 1, Activation::None, 1, 8, 8, 10);
  bad.layers.back().activation = Activation::ReLU;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad.layers.clear();
  CHECK_THROWS_AS(bad.validate(), Error);
  CHECK(parse_family("bwc") == Family::BWC);
  CHECK_THROWS_AS(parse_family("cnn"), Error);
}

TEST_CASE("spec json and checkpoints round trip") {
  ModelSpec spec = family_spec(Family::LC, 2, 3, 2, Activation::ReLU, 1, 8, 8, 10);
  spec.layers[0].padding = Padding::Zero;
  const ModelSpec back = spec_from_json(spec_to_json(spec));
  CHECK(spec_to_json(back) == spec_to_json(spec));

  const Model m = build_model(spec, 3);
  const auto dir = std::filesystem::temp_directory_path() / "freqlab_ckpt_test";
  save_checkpoint((dir / "m").string(), m, m.params);
  auto [loaded, params] = load_checkpoint((dir / "m").string());
  REQUIRE(params.size() == m.params.size());
  for (std::size_t s = 0; s < params.size(); ++s) CHECK(params[s] == m.params[s]);
  const Tensor x = testing::random_tensor({2, 1, 8, 8}, 5, 0, 1);
  CHECK(forward(loaded, params, x) == forward(m, m.params, x));
  std::filesystem::remove_all(dir);
}

TEST_CASE("same seed gives identical initial weights") {
  const ModelSpec spec = family_spec(Family::BWC, 2, 3, 2, Activation::None, 1, 8, 8, 10);
  const Model a = build_model(spec, 9), b = build_model(spec, 9), c = build_model(spec, 10);
  for (std::size_t s = 0; s < a.params.size(); ++s) CHECK(a.params[s] == b.params[s]);
  CHECK_FALSE(a.params[0] == c.params[0]);
}

TEST_CASE("bounded convolution at full width equals the full-width convolution") {
  ModelSpec full = family_spec(Family::FWC, 1, 0, 2, Activation::None, 1, 8, 8, 10);
  ModelSpec bounded = family_spec(Family::BWC, 1, 8, 2, Activation::None, 1, 8, 8, 10);
  const Model a = build_model(full, 4);
  Model b = build_model(bounded, 4);
  CHECK(a.parameter_count() == b.parameter_count());
  b.params = a.params;
  const Tensor x = testing::random_tensor({3, 1, 8, 8}, 6, 0, 1);
  CHECK(max_abs_diff(forward(a, a.params, x), forward(b, b.params, x)) == 0.0);
  Tensor y(Shape{3}, std::vector<double>{1, 4, 7});
  const Workspace wa = evaluate(a.graph, a.params, {{"x", x}, {"y", y}}, a.loss);
  const Workspace wb = evaluate(b.graph, b.params, {{"x", x}, {"y", y}}, b.loss);
  const Gradients ga = backward(a.graph, a.params, wa, a.loss), gb = backward(b.graph, b.params, wb, b.loss);
  for (std::size_t s = 0; s < ga.params.size(); ++s) CHECK(max_abs_diff(ga.params[s], gb.params[s]) == 0.0);
  CHECK(max_abs_diff(ga.inputs.at("x"), gb.inputs.at("x")) == 0.0);
}

TEST_CASE("locally connected layer with tied weights equals the bounded convolution") {
  for (Padding pad : {Padding::Circular, Padding::Zero}) {
    ModelSpec conv = family_spec(Family::BWC, 1, 3, 2, Activation::ReLU, 1, 8, 8, 10);
    ModelSpec local = family_spec(Family::LC, 1, 3, 2, Activation::ReLU, 1, 8, 8, 10);
    conv.layers[0].padding = local.layers[0].padding = pad;
    const Model a = build_model(conv, 2);
    Model b = build_model(local, 2);
    const Tensor& w = a.params[0];  // [2, 1, 3, 3]
    Tensor& lw = b.params[0];       // [2, 8, 8, 1, 3, 3]
    for (std::size_t co = 0; co < 2; ++co)
      for (std::size_t pos = 0; pos < 64; ++pos)
        for (std::size_t t = 0; t < 9; ++t) lw[(co * 64 + pos) * 9 + t] = w[co * 9 + t];
    b.params[1] = a.params[1];
    b.params[2] = a.params[2];
    const Tensor x = testing::random_tensor({2, 1, 8, 8}, 8, 0, 1);
    CHECK(max_abs_diff(forward(a, a.params, x), forward(b, b.params, x)) < 1e-12);
  }
}

TEST_CASE("input centering leaves input gradients unchanged") {
  ModelSpec spec = family_spec(Family::FC, 1, 0, 1, Activation::ReLU, 1, 4, 4, 3);
  const Model centered = build_model(spec, 1);
  spec.input_center = 0.0;
  const Model plain = build_model(spec, 1);
  const Tensor x = testing::random_tensor({1, 1, 4, 4}, 2, 0, 1);
  Tensor shifted = x;
  for (double& v : shifted.values()) v -= 0.5;
  CHECK(max_abs_diff(forward(centered, centered.params, x), forward(plain, plain.params, shifted)) < 1e-15);
}

TEST_CASE("zero epochs keep the initialization") {
  const data::Split s = separable_pair(1, 10);
  const Model m = build_model(family_spec(Family::FC, 1, 0, 1, Activation::None, 1, 8, 8, 2), 5);
  TrainConfig cfg;
  cfg.epochs = 0;
  const TrainedModel tm = train(m, s.train, s.test, cfg);
  REQUIRE(tm.checkpoints.size() == 1);
  for (std::size_t i = 0; i < m.params.size(); ++i) CHECK(tm.checkpoints[0][i] == m.params[i]);
  CHECK(tm.best_epoch == 0);
}

TEST_CASE("linear FC model learns a linearly separable pair") {
  const data::Split s = separable_pair(2, 100);
  CHECK(logistic_oracle(s) >= 0.99);
  const Model m = build_model(family_spec(Family::FC, 1, 0, 1, Activation::None, 1, 8, 8, 2), 5);
  TrainConfig cfg;
  cfg.epochs = 10;
  cfg.max_lr = 0.05;
  cfg.decay = 1.0;
  const TrainedModel tm = train(m, s.train, s.test, cfg);
  CHECK(tm.checkpoints.size() == 11);
  CHECK(tm.test_accuracy[tm.best_epoch] >= 0.95);
  for (std::size_t e = 0; e < tm.test_accuracy.size(); ++e) CHECK(tm.test_accuracy[e] <= tm.test_accuracy[tm.best_epoch]);
}

TEST_CASE("training is seed deterministic and divergence names the epoch") {
  const data::Split s = separable_pair(3, 20);
  const Model m = build_model(family_spec(Family::BWC, 1, 3, 1, Activation::ReLU, 1, 8, 8, 2), 5);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.seed = 4;
  const TrainedModel a = train(m, s.train, s.test, cfg), b = train(m, s.train, s.test, cfg);
  CHECK(a.test_accuracy == b.test_accuracy);
  CHECK(a.train_loss == b.train_loss);
  for (std::size_t i = 0; i < a.best().size(); ++i) CHECK(a.best()[i] == b.best()[i]);

  cfg.max_lr = 1e200;
  try {
    train(m, s.train, s.test, cfg);
    FAIL("expected divergence");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("epoch 1") != std::string::npos);
  }
}

TEST_CASE("learning-rate schedule decays per epoch and resets") {
  TrainConfig cfg;
  cfg.max_lr = 1.0;
  cfg.decay = 0.3;
  cfg.reset_period = 20;
  CHECK(cfg.lr_at(0) == 1.0);
  CHECK(cfg.lr_at(2) == doctest::Approx(0.09));
  CHECK(cfg.lr_at(20) == 1.0);
  cfg.decay = 0.0;
  CHECK_THROWS_AS(cfg.validate(), Error);
}

TEST_CASE("accuracy ties go to the lowest class") {
  Model m = build_model(family_spec(Family::FC, 1, 0, 1, Activation::None, 1, 4, 4, 5), 1);
  for (Tensor& p : m.params) p.fill(0.0);
  data::Dataset ds;
  ds.classes = 5;
  ds.images = Tensor(Shape{4, 1, 4, 4}, 0.3);
  ds.labels = {0, 0, 0, 0};
  CHECK(accuracy(m, m.params, ds) == 1.0);
  ds.labels = {3, 3, 3, 3};
  CHECK(accuracy(m, m.params, ds) == 0.0);
  CHECK(argmax_rows(Tensor(Shape{1, 3}, std::vector<double>{2, 5, 5}))[0] == 1);
}

TEST_CASE("random weights sit at chance on balanced ten-class data") {
  data::SynthConfig cfg;
  cfg.train_per_class = 1;
  cfg.test_per_class = 100;
  const data::Split s = data::synth_dataset(cfg, 3);
  double mean = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Model m = build_model(family_spec(Family::BWC, 1, 3, 1, Activation::ReLU, 1, 16, 16, 10), seed);
    mean += accuracy(m, m.params, s.test) / 5.0;
  }
  CHECK(mean == doctest::Approx(0.10).epsilon(0.3));
}

TEST_CASE("mini ViT identities") {
  SUBCASE("one patch covering the image is a dense layer") {
    const Model m = build_mini_vit(16, true, 1);
    const Tensor x = testing::random_tensor({2, 1, 16, 16}, 4, 0, 1);
    const Workspace ws = evaluate(m.graph, m.params, {{"x", x}}, m.layer_outputs[0]);
    const Tensor& emb = ws[m.layer_outputs[0]];  // [2, 1, 64]
    const Tensor& w = m.params[m.layer_params[0][0]];
    const Tensor& b = m.params[m.layer_params[0][1]];
    const Tensor& pos = m.params[m.layer_params[0][2]];
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t e = 0; e < 64; ++e) {
        double want = b[e] + pos[e];
        for (std::size_t p = 0; p < 256; ++p) want += w[e * 256 + p] * (x[n * 256 + p] - 0.5);
        CHECK(emb[n * 64 + e] == doctest::Approx(want).epsilon(1e-12));
      }
  }
  SUBCASE("untied patches with copied weights equal the shared embedding") {
    const Model shared = build_mini_vit(4, true, 2);
    Model loc = build_mini_vit(4, false, 2);
    REQUIRE(shared.params.size() == loc.params.size());
    loc.params = shared.params;
    const Tensor& w = shared.params[0];  // [64, 16]
    Tensor tied(Shape{16, 64, 16});
    for (std::size_t t = 0; t < 16; ++t)
      for (std::size_t i = 0; i < w.size(); ++i) tied[t * w.size() + i] = w[i];
    loc.params[0] = tied;
    const Tensor x = testing::random_tensor({2, 1, 16, 16}, 5, 0, 1);
    CHECK(max_abs_diff(predict(shared, shared.params, x), predict(loc, loc.params, x)) < 1e-12);
  }
}

TEST_CASE("mini ViT builds on 32x32 and trains above chance") {
  data::SynthConfig cfg;
  cfg.height = cfg.width = 32;
  cfg.classes = 2;
  cfg.alpha = std::numeric_limits<double>::infinity();
  cfg.signal = 0.2;
  cfg.noise = 0.05;
  cfg.train_per_class = 16;
  cfg.test_per_class = 16;
  const data::Split s = data::synth_dataset(cfg, 8);
  for (std::size_t p : {2, 4, 8}) {
    const Model m = build_mini_vit(p, true, 1, 1, 32, 32, 2);
    TrainConfig tc;
    tc.epochs = 4;
    tc.max_lr = p == 2 ? 0.01 : 0.05;
    tc.decay = 1.0;
    tc.batch_size = 8;
    const TrainedModel tm = train(m, s.train, s.test, tc);
    CHECK(tm.test_accuracy[tm.best_epoch] > 0.75);
  }
}
