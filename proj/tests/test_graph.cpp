#include "doctest.h"

#include <cmath>
#include <numbers>

#include "freqlab/graph.hpp"
#include "support.hpp"

using namespace freqlab;

namespace {

Params random_params(const Graph& g, std::uint64_t seed, double scale = 0.5) {
  Params p;
  for (std::size_t s = 0; s < g.params().size(); ++s) {
    p.push_back(testing::random_tensor(g.params()[s].shape, seed + 101 * s, -scale, scale));
  }
  return p;
}

/// Sum of a fixed random linear functional of `node` per example: keeps the
/// loss linear in the node so linear kernels can be checked tightly.
NodeId linear_readout(Graph& g, NodeId node, std::size_t features) {
  NodeId flat = g.reshape(node, {features});
  NodeId r = g.param("readout", {1, features}, features);
  NodeId z = g.matmul(flat, r);
  return g.pick_logit(z, g.input("pick", false));
}

Bindings with_pick(Bindings b, std::size_t batch) {
  b["pick"] = Tensor(Shape{batch}, 0.0);
  return b;
}

}  // namespace

TEST_CASE("identity graph and identity matmul") {
  Graph g;
  NodeId x = g.input("x");
  NodeId w = g.param("w", {4, 4}, 4);
  NodeId y = g.matmul(x, w);
  Tensor eye(Shape{4, 4});
  for (std::size_t i = 0; i < 4; ++i) eye[i * 5] = 1.0;
  Tensor xv = testing::random_tensor({3, 4}, 1);
  Workspace ws = evaluate(g, {eye}, {{"x", xv}});
  CHECK(ws[x] == xv);
  CHECK(ws[y] == xv);
}

TEST_CASE("three-layer graph matches a hand-composed oracle") {
  Graph g;
  NodeId x = g.input("x");
  NodeId w1 = g.param("w1", {6, 5}, 5), b1 = g.param("b1", {6}, 1);
  NodeId w2 = g.param("w2", {4, 6}, 6), w3 = g.param("w3", {3, 4}, 4);
  NodeId h = g.relu(g.add_bias(g.matmul(x, w1), b1));
  h = g.gelu(g.matmul(h, w2));
  NodeId out = g.matmul(h, w3);
  Params p = random_params(g, 3);
  Tensor xv = testing::random_tensor({2, 5}, 4);
  Workspace ws = evaluate(g, p, {{"x", xv}});

  for (std::size_t b = 0; b < 2; ++b) {
    double h1[6], h2[4];
    for (int i = 0; i < 6; ++i) {
      double s = p[1][i];
      for (int j = 0; j < 5; ++j) s += p[0][i * 5 + j] * xv[b * 5 + j];
      h1[i] = std::max(s, 0.0);
    }
    for (int i = 0; i < 4; ++i) {
      double s = 0;
      for (int j = 0; j < 6; ++j) s += p[2][i * 6 + j] * h1[j];
      h2[i] = 0.5 * s * (1 + std::erf(s / std::sqrt(2.0)));
    }
    for (int i = 0; i < 3; ++i) {
      double s = 0;
      for (int j = 0; j < 4; ++j) s += p[3][i * 4 + j] * h2[j];
      CHECK(std::abs(ws[out][b * 3 + i] - s) < 1e-12);
    }
  }
}

TEST_CASE("linear model input gradient equals the weights") {
  Graph g;
  NodeId x = g.input("x");
  NodeId z = g.matmul(x, g.param("w", {1, 6}, 6));
  NodeId loss = g.pick_logit(z, g.input("i", false));
  Tensor w = testing::random_tensor({1, 6}, 5);
  Workspace ws = evaluate(g, {w}, {{"x", testing::random_tensor({1, 6}, 6)}, {"i", Tensor(Shape{1})}});
  Gradients gr = backward(g, {w}, ws, loss);
  (void)x;
  CHECK(gr.inputs.at("x").values() == w.values());
  CHECK(gr.inputs.count("i") == 0);
}

TEST_CASE("relu at negative pre-activation passes no gradient") {
  Graph g;
  NodeId x = g.input("x");
  NodeId loss = linear_readout(g, g.relu(x), 3);
  Tensor xv(Shape{1, 3}, std::vector<double>{-1.0, -0.5, 2.0});
  Params p{Tensor(Shape{1, 3}, 1.0)};
  Gradients gr = backward(g, p, evaluate(g, p, with_pick({{"x", xv}}, 1)), loss);
  CHECK(gr.inputs.at("x")[0] == 0.0);
  CHECK(gr.inputs.at("x")[1] == 0.0);
  CHECK(gr.inputs.at("x")[2] == 1.0);
}

TEST_CASE("errors name the failing node") {
  Graph g;
  NodeId x = g.input("x");
  g.matmul(x, g.param("w", {3, 4}, 4), "proj");
  try {
    evaluate(g, {Tensor(Shape{3, 4})}, {{"x", Tensor(Shape{2, 5})}});
    FAIL("expected a shape error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("matmul 'proj'") != std::string::npos);
  }
  Workspace ws = evaluate(g, {Tensor(Shape{3, 4})}, {{"x", Tensor(Shape{2, 4})}});
  CHECK_THROWS_AS(backward(g, {Tensor(Shape{3, 4})}, ws, 2), Error);
  CHECK_THROWS_AS(evaluate(g, {Tensor(Shape{3, 4})}, {}), Error);
}

TEST_CASE("sgd_step rule and failures") {
  Graph g;
  g.param("p", {1}, 1);
  Params p{Tensor(Shape{1}, 1.0)};
  Gradients gr;
  gr.params = {Tensor(Shape{1}, 2.0)};
  sgd_step(g, p, gr, 0.0);
  CHECK(p[0][0] == 1.0);
  sgd_step(g, p, gr, 0.5);
  CHECK(p[0][0] == 0.0);
  gr.params[0][0] = NAN;
  try {
    sgd_step(g, p, gr, 0.1);
    FAIL("expected failure");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("'p'") != std::string::npos);
  }
}

TEST_CASE("sgd on a quadratic bowl reaches the closed-form minimizer") {
  // f(p) = 0.5 (p - c)^T A (p - c) with diagonal A; minimizer c.
  Graph g;
  g.param("p", {3}, 3);
  const double a[3] = {1.0, 0.5, 1.5}, c[3] = {0.3, -2.0, 4.0};
  Params p{Tensor(Shape{3}, 0.0)};
  for (int it = 0; it < 100; ++it) {
    Gradients gr;
    gr.params = {Tensor(Shape{3})};
    for (int i = 0; i < 3; ++i) gr.params[0][i] = a[i] * (p[0][i] - c[i]);
    sgd_step(g, p, gr, 2.0 / 3.0);
  }
  for (int i = 0; i < 3; ++i) CHECK(std::abs(p[0][i] - c[i]) < 1e-6);
}

TEST_CASE("grad_check rejects bad steps") {
  Graph g;
  NodeId x = g.input("x");
  NodeId loss = linear_readout(g, x, 2);
  Params p{Tensor(Shape{1, 2}, 1.0)};
  CHECK_THROWS_AS(grad_check(g, p, with_pick({{"x", Tensor(Shape{1, 2})}}, 1), loss, 0.0), Error);
  CHECK_THROWS_AS(grad_check(g, p, with_pick({{"x", Tensor(Shape{1, 2})}}, 1), loss, 1e-2), Error);
  CHECK(grad_check(g, p, with_pick({{"x", Tensor(Shape{1, 2})}}, 1), loss, 1e-5) < 1e-9);
}

// ---- adjoint checks, one per kernel

TEST_CASE("adjoints of linear kernels") {
  const double h = 1e-5;
  SUBCASE("matmul") {
    Graph g;
    NodeId y = g.matmul(g.input("x"), g.param("w", {4, 5}, 5));
    NodeId loss = linear_readout(g, y, 4);
    CHECK(grad_check(g, random_params(g, 1), with_pick({{"x", testing::random_tensor({3, 5}, 2)}}, 3), loss, h) < 1e-7);
  }
  SUBCASE("token matmul") {
    Graph g;
    NodeId y = g.token_matmul(g.input("x"), g.param("w", {3, 2, 4}, 4));
    NodeId loss = linear_readout(g, y, 6);
    CHECK(grad_check(g, random_params(g, 3), with_pick({{"x", testing::random_tensor({2, 3, 4}, 4)}}, 2), loss, h) < 1e-7);
  }
  SUBCASE("add-bias and add") {
    Graph g;
    NodeId x = g.input("x");
    NodeId y = g.add(g.add_bias(x, g.param("b", {2, 3}, 1)), x);
    NodeId loss = linear_readout(g, y, 6);
    CHECK(grad_check(g, random_params(g, 5), with_pick({{"x", testing::random_tensor({2, 2, 3}, 6)}}, 2), loss, h) < 1e-7);
  }
  for (Padding pad : {Padding::Circular, Padding::Zero}) {
    CAPTURE(static_cast<int>(pad));
    SUBCASE("conv2d") {
      Graph g;
      NodeId y = g.conv2d(g.input("x"), g.param("w", {2, 3, 3, 3}, 27), pad);
      NodeId loss = linear_readout(g, y, 2 * 36);
      CHECK(grad_check(g, random_params(g, 7), with_pick({{"x", testing::random_tensor({2, 3, 6, 6}, 8)}}, 2), loss, h) < 1e-7);
    }
    SUBCASE("local2d") {
      Graph g;
      NodeId y = g.local2d(g.input("x"), g.param("w", {2, 4, 4, 2, 3, 3}, 18), pad);
      NodeId loss = linear_readout(g, y, 32);
      CHECK(grad_check(g, random_params(g, 9), with_pick({{"x", testing::random_tensor({2, 2, 4, 4}, 10)}}, 2), loss, h) < 1e-7);
    }
  }
  SUBCASE("mean-pool, reshape, patchify") {
    Graph g;
    NodeId t = g.patchify(g.input("x"), 2);
    NodeId pooled = g.mean_pool(t);
    NodeId loss = linear_readout(g, pooled, 8);
    CHECK(grad_check(g, random_params(g, 11), with_pick({{"x", testing::random_tensor({2, 2, 4, 4}, 12)}}, 2), loss, h) < 1e-7);
  }
  SUBCASE("pick-logit") {
    Graph g;
    NodeId loss = g.pick_logit(g.input("z"), g.input("i", false));
    Bindings b{{"z", testing::random_tensor({3, 4}, 13)}, {"i", Tensor(Shape{3}, std::vector<double>{0, 3, 1})}};
    CHECK(grad_check(g, {}, b, loss, h) < 1e-7);
  }
}

TEST_CASE("adjoints of nonlinear kernels") {
  const double h = 1e-5;
  SUBCASE("relu away from kinks") {
    Graph g;
    NodeId loss = linear_readout(g, g.relu(g.input("x")), 6);
    Tensor x = testing::random_tensor({2, 6}, 20);
    for (double& v : x.values()) v += v > 0 ? 0.1 : -0.1;
    CHECK(grad_check(g, random_params(g, 21), with_pick({{"x", x}}, 2), loss, h) < 1e-5);
  }
  SUBCASE("gelu") {
    Graph g;
    NodeId loss = linear_readout(g, g.gelu(g.input("x")), 6);
    CHECK(grad_check(g, random_params(g, 22), with_pick({{"x", testing::random_tensor({2, 6}, 23, -3, 3)}}, 2), loss, h) < 1e-4);
  }
  SUBCASE("layer-norm") {
    Graph g;
    NodeId x = g.input("x");
    NodeId gain = g.param("gain", {5}, 1), shift = g.param("shift", {5}, 1);
    NodeId y = g.layer_norm(x, gain, shift);
    NodeId loss = linear_readout(g, y, 15);
    CHECK(grad_check(g, random_params(g, 24), with_pick({{"x", testing::random_tensor({2, 3, 5}, 25)}}, 2), loss, h) < 1e-4);
  }
  SUBCASE("softmax") {
    Graph g;
    NodeId loss = linear_readout(g, g.softmax(g.input("x")), 8);
    CHECK(grad_check(g, random_params(g, 26), with_pick({{"x", testing::random_tensor({2, 2, 4}, 27, -2, 2)}}, 2), loss, h) < 1e-4);
  }
  SUBCASE("attention block") {
    Graph g;
    NodeId x = g.input("x");
    NodeId wq = g.param("wq", {8, 8}, 8), wk = g.param("wk", {8, 8}, 8), wv = g.param("wv", {8, 8}, 8);
    NodeId q = g.matmul(x, wq), k = g.matmul(x, wk), v = g.matmul(x, wv);
    NodeId a = g.add(x, g.attention(q, k, v, 2));
    NodeId loss = linear_readout(g, a, 32);
    CHECK(grad_check(g, random_params(g, 28, 0.8), with_pick({{"x", testing::random_tensor({2, 4, 8}, 29)}}, 2), loss, h) < 1e-4);
  }
  SUBCASE("cross-entropy") {
    Graph g;
    NodeId z = g.matmul(g.input("x"), g.param("w", {4, 3}, 3));
    NodeId loss = g.cross_entropy(z, g.input("y", false));
    Bindings b{{"x", testing::random_tensor({3, 3}, 30)}, {"y", Tensor(Shape{3}, std::vector<double>{2, 0, 3})}};
    CHECK(grad_check(g, random_params(g, 31), b, loss, h) < 1e-4);
  }
}

TEST_CASE("random small net passes the finite-difference check and is deterministic") {
  Graph g;
  NodeId x = g.input("x");
  NodeId c1 = g.param("c1", {2, 1, 3, 3}, 9), w = g.param("w", {3, 32}, 32), bias = g.param("b", {3}, 1);
  NodeId h = g.gelu(g.conv2d(x, c1, Padding::Circular));
  h = g.reshape(h, {32});
  NodeId z = g.add_bias(g.matmul(h, w), bias);
  NodeId loss = g.cross_entropy(z, g.input("y", false));
  Params p = random_params(g, 40);
  Bindings b{{"x", testing::random_tensor({2, 1, 4, 4}, 41)}, {"y", Tensor(Shape{2}, std::vector<double>{1, 2})}};
  CHECK(grad_check(g, p, b, loss, 1e-5) < 1e-4);

  Workspace w1 = evaluate(g, p, b), w2 = evaluate(g, p, b);
  Gradients g1 = backward(g, p, w1, loss), g2 = backward(g, p, w2, loss);
  CHECK(w1[loss] == w2[loss]);
  for (std::size_t s = 0; s < p.size(); ++s) CHECK(g1.params[s] == g2.params[s]);
  CHECK(g1.inputs.at("x") == g2.inputs.at("x"));
}
