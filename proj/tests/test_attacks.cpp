#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "freqlab/attacks.hpp"
#include "support.hpp"

using namespace freqlab;
using namespace freqlab::attacks;
using models::Activation;
using models::Family;

namespace {

/// Dense head only, two classes: logits = W (x - 0.5) + b.
models::Model linear_pair(std::uint64_t seed) {
  return models::build_model(models::family_spec(Family::FC, 0, 0, 1, Activation::None, 1, 8, 8, 2), seed);
}

Tensor gray_image(double v) { return Tensor(Shape{1, 8, 8}, v); }

/// w_other - w_target for the two-class head.
std::vector<double> ascent_direction(const models::Model& m, std::size_t target) {
  const Tensor& w = m.params[m.layer_params.back()[0]];
  std::vector<double> d(64);
  for (std::size_t i = 0; i < 64; ++i) d[i] = w[(1 - target) * 64 + i] - w[target * 64 + i];
  return d;
}

double margin(const models::Model& m, const Tensor& image, std::size_t target) {
  const Tensor logits = models::predict(m, m.params, image.reshaped({1, 1, 8, 8}));
  return logits[target] - logits[1 - target];
}

/// L1 projection by bisection on the soft threshold.
std::vector<double> l1_oracle(std::vector<double> v, double eps) {
  double total = 0;
  for (double x : v) total += std::abs(x);
  if (total <= eps) return v;
  double lo = 0, hi = 0;
  for (double x : v) hi = std::max(hi, std::abs(x));
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    double s = 0;
    for (double x : v) s += std::max(0.0, std::abs(x) - mid);
    (s > eps ? lo : hi) = mid;
  }
  const double lam = 0.5 * (lo + hi);
  for (double& x : v) x = std::copysign(std::max(0.0, std::abs(x) - lam), x);
  return v;
}

}  // namespace

TEST_CASE("linf PGD on a linear model reaches the closed-form sign perturbation") {
  const models::Model m = linear_pair(3);
  const Tensor x = gray_image(0.5);
  const std::size_t target = margin(m, x, 0) > 0 ? 0 : 1;
  AttackConfig cfg;
  cfg.epsilon = 0.05;
  cfg.rate = 0.1;
  cfg.steps = 30;
  const Perturbation p = pgd(m, m.params, x, target, cfg);
  const auto dir = ascent_direction(m, target);
  double gain = 0;
  for (std::size_t i = 0; i < 64; ++i) {
    const double want = dir[i] > 0 ? cfg.epsilon : -cfg.epsilon;
    CHECK(std::abs(p.delta[i] - want) < 1e-3);
    gain += cfg.epsilon * std::abs(dir[i]);
  }
  Tensor adv = x;
  for (std::size_t i = 0; i < 64; ++i) adv[i] += p.delta[i];
  CHECK(std::abs((margin(m, x, target) - margin(m, adv, target)) - gain) < 1e-3);
  CHECK(p.final_norm <= cfg.epsilon + 1e-12);
}

TEST_CASE("l2 PGD on a linear model aligns with the weight difference") {
  const models::Model m = linear_pair(4);
  const Tensor x = gray_image(0.5);
  AttackConfig cfg;
  cfg.norm = Norm::L2;
  cfg.epsilon = 0.3;
  cfg.steps = 40;
  const Perturbation p = pgd(m, m.params, x, 0, cfg);
  const auto dir = ascent_direction(m, 0);
  const double n = norm_value(dir, Norm::L2);
  for (std::size_t i = 0; i < 64; ++i) CHECK(std::abs(p.delta[i] - cfg.epsilon * dir[i] / n) < 1e-3);
}

TEST_CASE("l1 projection matches a bisection oracle") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Tensor v = testing::random_tensor({50}, seed, -2.0, 2.0);
    const double eps = 0.5 + static_cast<double>(seed);
    const auto want = l1_oracle(v.values(), eps);
    project_l1(v.data(), eps);
    for (std::size_t i = 0; i < 50; ++i) CHECK(std::abs(v[i] - want[i]) < 1e-8);
    CHECK(norm_value(v.data(), Norm::L1) <= eps + 1e-9);
  }
}

TEST_CASE("projection leaves points inside the ball alone and rescales l2") {
  Tensor v = testing::random_tensor({10}, 1, -0.01, 0.01);
  const Tensor before = v;
  for (Norm n : {Norm::Linf, Norm::L2, Norm::L1}) {
    project(v.data(), n, 1.0);
    CHECK(v == before);
  }
  Tensor w(Shape{4}, std::vector<double>{2.0, 2.0, 2.0, 2.0});  // l2 norm 4
  project(w.data(), Norm::L2, 2.0);
  for (double x : w.values()) CHECK(x == doctest::Approx(1.0));
  Tensor u(Shape{3}, std::vector<double>{0.3, -2.0, 0.1});
  project(u.data(), Norm::Linf, 0.5);
  CHECK(u == Tensor(Shape{3}, std::vector<double>{0.3, -0.5, 0.1}));
}

TEST_CASE("iterates stay feasible for tiny budgets and near the pixel bounds") {
  const models::Model m = linear_pair(5);
  for (Norm n : {Norm::Linf, Norm::L2, Norm::L1}) {
    for (double level : {0.0, 0.5, 1.0}) {
      AttackConfig cfg;
      cfg.norm = n;
      cfg.epsilon = level == 0.5 ? 1e-9 : 0.3;
      cfg.steps = 10;
      cfg.random_start = true;
      const Perturbation p = pgd(m, m.params, gray_image(level), 0, cfg);
      CHECK(norm_value(p.delta.data(), n) <= cfg.epsilon * (1 + 1e-12));
      for (double d : p.delta.values()) {
        CHECK(level + d >= 0.0);
        CHECK(level + d <= 1.0);
      }
    }
  }
}

TEST_CASE("a generous budget always flips a linear model") {
  const models::Model m = linear_pair(6);
  const Tensor x = testing::random_tensor({1, 8, 8}, 6, 0.45, 0.55);
  const std::size_t clean = margin(m, x, 0) > 0 ? 0 : 1;
  const auto dir = ascent_direction(m, clean);
  const double n2 = norm_value(dir, Norm::L2);
  const double needed = std::abs(margin(m, x, clean)) / n2;
  double peak = 0;
  for (double d : dir) peak = std::max(peak, 2.0 * needed * std::abs(d) / n2);
  REQUIRE(peak < 0.5);  // the box cannot bind
  AttackConfig cfg;
  cfg.norm = Norm::L2;
  cfg.epsilon = 2.0 * needed;
  cfg.steps = 50;
  const Perturbation p = pgd(m, m.params, x, clean, cfg);
  CHECK(p.success);
  CHECK(p.adversarial_prediction != clean);
  CHECK(p.clean_prediction == clean);
}

TEST_CASE("the objective never decreases on a linear model") {
  const models::Model m = linear_pair(7);
  const Tensor x = testing::random_tensor({1, 8, 8}, 2, 0.2, 0.8);
  double last = -margin(m, x, 0);
  for (std::size_t steps = 1; steps <= 12; ++steps) {
    AttackConfig cfg;
    cfg.epsilon = 0.1;
    cfg.rate = 0.15;
    cfg.steps = steps;
    const Perturbation p = pgd(m, m.params, x, 0, cfg);
    Tensor adv = x;
    for (std::size_t i = 0; i < 64; ++i) adv[i] += p.delta[i];
    const double obj = -margin(m, adv, 0);
    CHECK(obj >= last - 1e-12);
    last = obj;
  }
}

TEST_CASE("stop on success freezes the first flipping iterate") {
  const models::Model m = linear_pair(8);
  const Tensor x = testing::random_tensor({1, 8, 8}, 8, 0.4, 0.6);
  const std::size_t clean = margin(m, x, 0) > 0 ? 0 : 1;
  AttackConfig cfg;
  cfg.epsilon = 0.5;
  cfg.rate = 0.001;
  cfg.steps = 2000;
  cfg.stop_on_success = true;
  const Perturbation p = pgd(m, m.params, x, clean, cfg);
  REQUIRE(p.success);
  CHECK(p.steps_taken < cfg.steps);
  REQUIRE(p.steps_taken > 1);
  AttackConfig shorter = cfg;
  shorter.steps = p.steps_taken - 1;
  shorter.stop_on_success = false;
  CHECK_FALSE(pgd(m, m.params, x, clean, shorter).success);
}

TEST_CASE("random starts are seeded") {
  const models::Model m = linear_pair(9);
  const Tensor x = gray_image(0.5);
  AttackConfig cfg;
  cfg.norm = Norm::L1;
  cfg.epsilon = 1.0;
  cfg.steps = 3;
  cfg.random_start = true;
  cfg.seed = 4;
  const Perturbation a = pgd(m, m.params, x, 0, cfg), b = pgd(m, m.params, x, 0, cfg);
  CHECK(a.delta == b.delta);
  cfg.seed = 5;
  CHECK(max_abs_diff(a.delta, pgd(m, m.params, x, 0, cfg).delta) > 0.0);
}

TEST_CASE("suite handles empty inputs and round-trips through disk") {
  const models::Model m = linear_pair(10);
  data::SynthConfig sc;
  sc.height = sc.width = 8;
  sc.classes = 2;
  sc.train_per_class = 3;
  sc.test_per_class = 1;
  const data::Dataset ds = data::synth_dataset(sc, 1).train;

  const PerturbationSet none = attack_suite(m, m.params, ds, {});
  CHECK(none.results.empty());
  CHECK(none.table.empty());

  AttackConfig a;
  a.steps = 5;
  AttackConfig b;
  b.norm = Norm::L2;
  b.epsilon = 0.5;
  b.steps = 5;
  const PerturbationSet set = attack_suite(m, m.params, ds, {a, b}, 4);
  REQUIRE(set.results.size() == 2);
  CHECK(set.results[0].size() == ds.size());
  CHECK(set.table[1].attempted == ds.size());
  const auto clean = models::argmax_rows(models::predict(m, m.params, ds.images));
  for (const Perturbation& p : set.results[1]) CHECK(p.clean_prediction == clean[p.example]);

  const auto dir = std::filesystem::temp_directory_path() / "freqlab_attack_test";
  std::filesystem::create_directories(dir);
  const std::string stem = (dir / "pert").string();
  save_perturbations(stem, set);
  const PerturbationSet back = load_perturbations(stem);
  REQUIRE(back.results.size() == 2);
  for (std::size_t c = 0; c < 2; ++c) {
    CHECK(back.configs[c].name() == set.configs[c].name());
    CHECK(back.deltas(c) == set.deltas(c));
    CHECK(back.table[c].success_rate == set.table[c].success_rate);
    for (std::size_t i = 0; i < ds.size(); ++i) {
      CHECK(back.results[c][i].success == set.results[c][i].success);
      CHECK(back.results[c][i].adversarial_prediction == set.results[c][i].adversarial_prediction);
    }
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("invalid attack configs are rejected") {
  AttackConfig cfg;
  cfg.epsilon = -1;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = AttackConfig{};
  cfg.rate = 0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  CHECK_THROWS_AS(parse_norm("l3"), Error);
  CHECK(parse_norm("l2") == Norm::L2);
}
