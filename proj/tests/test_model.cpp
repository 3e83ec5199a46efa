#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "comma/model.hpp"

using namespace comma;

namespace {

ModelParams micro_model(int n, int c, int d, std::uint64_t seed = 0, int hidden = 0) {
  Rng rng(seed);
  return ModelParams::init(n, c, d, hidden, hidden, rng);
}

std::vector<Vector> random_inputs(int n, int d, Rng& rng) {
  std::vector<Vector> v;
  for (int i = 0; i < n; ++i) {
    Vector x(d);
    for (int j = 0; j < d; ++j) x(j) = rng.normal();
    v.push_back(x);
  }
  return v;
}

void zero_mlp(MlpParams& p) {
  for (auto& w : p.weights) w.setZero();
  for (auto& b : p.biases) b.setZero();
}

}  // namespace

TEST_CASE("agent_forward with zero weights emits each head's bias") {
  ModelParams m = micro_model(3, 2, 4);
  for (int i = 0; i < 3; ++i) {
    zero_mlp(m.agent_heads[i]);
    m.agent_heads[i].biases.back() << 0.1 * (i + 1), -0.2 * (i + 1);
  }
  Rng rng(1);
  Matrix h = agent_forward(m, random_inputs(3, 4, rng));
  for (int i = 0; i < 3; ++i) {
    CHECK(h(i, 0) == doctest::Approx(0.1 * (i + 1)));
    CHECK(h(i, 1) == doctest::Approx(-0.2 * (i + 1)));
  }
}

TEST_CASE("agent rows are independent of other agents' inputs") {
  ModelParams m = micro_model(4, 3, 5, 7);
  Rng rng(2);
  auto inputs = random_inputs(4, 5, rng);
  Matrix h0 = agent_forward(m, inputs);
  inputs[2](0) += 10.0;
  Matrix h1 = agent_forward(m, inputs);
  for (int i = 0; i < 4; ++i) {
    if (i == 2) continue;
    for (int k = 0; k < 3; ++k) CHECK(h0(i, k) == h1(i, k));
  }
  CHECK(h0.row(2) != h1.row(2));
}

TEST_CASE("agent_forward micro-model matches a straight-line hand evaluation") {
  // N=2, C=2, D=3, linear heads
  ModelParams m = micro_model(2, 2, 3, 0);
  Rng rng(5);
  auto inputs = random_inputs(2, 3, rng);
  Matrix h = agent_forward(m, inputs);
  for (int i = 0; i < 2; ++i)
    for (int k = 0; k < 2; ++k) {
      double s = m.agent_heads[i].biases[0](k);
      for (int d = 0; d < 3; ++d) s += m.agent_heads[i].weights[0](k, d) * inputs[i](d);
      CHECK(h(i, k) == doctest::Approx(s).epsilon(1e-14));
    }
}

TEST_CASE("agent_forward rejects wrong input count") {
  ModelParams m = micro_model(3, 2, 4);
  Rng rng(0);
  auto inputs = random_inputs(2, 4, rng);
  CHECK_THROWS_AS(agent_forward(m, inputs), ConfigError);
}

TEST_CASE("aggregate on an empty coalition is zero") {
  Matrix h(2, 3), w(2, 3);
  h.setRandom();
  w.setConstant(1.0 / 6);
  Vector z = aggregate(h, w, CoalitionMask::empty(2));
  CHECK(z.norm() == 0.0);
}

TEST_CASE("aggregate direct evaluation with and without masking") {
  Matrix w(2, 1), h(2, 1);
  w << 0.25, 0.75;
  h << 2, 4;
  Vector z = aggregate(h, w, CoalitionMask::full(2));
  CHECK(z(0) == doctest::Approx(3.5));
  z = aggregate(h, w, CoalitionMask::full(2).without(1));
  CHECK(z(0) == doctest::Approx(0.5));
}

TEST_CASE("aggregation linearity: adding one agent adds exactly its term") {
  Rng rng(9);
  int n = 5, c = 4;
  Matrix h(n, c);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < c; ++k) h(i, k) = rng.normal();
  Matrix logits(n, c);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < c; ++k) logits(i, k) = rng.normal();
  Matrix w = softmax_flat(logits);

  for (std::uint32_t bits = 0; bits < (1u << n); ++bits) {
    CoalitionMask s = CoalitionMask::from_bits(bits, n);
    for (int i = 0; i < n; ++i) {
      if (s(i)) continue;
      Vector with_i = aggregate(h, w, s.with(i));
      Vector without_i = aggregate(h, w, s);
      Vector term = (w.row(i).array() * h.row(i).array()).matrix().transpose();
      CHECK((with_i - without_i - term).cwiseAbs().maxCoeff() < 1e-15);
    }
  }
}

TEST_CASE("global_mix with equal mixture logits weights both streams 0.5") {
  ModelParams m = micro_model(1, 2, 3);
  m.mixture_logits.setZero();
  Eigen::Vector2d w = m.mixture_weights();
  CHECK(w(0) == doctest::Approx(0.5));
  CHECK(w(1) == doctest::Approx(0.5));
}

TEST_CASE("global_mix direct evaluation with identity fusion and zero global head") {
  ModelParams m = micro_model(1, 2, 3);
  zero_mlp(m.global_head);
  m.fusion_head.weights[0] = Matrix::Identity(2, 2);
  m.fusion_head.biases[0].setZero();
  m.mixture_logits.setZero();
  Vector z(2);
  z << 2, -2;
  Vector y = global_mix(m, z, Vector::Zero(3));
  CHECK(y(0) == doctest::Approx(1.0));
  CHECK(y(1) == doctest::Approx(-1.0));
}

TEST_CASE("zero aggregated input and zero global head give case-independent output") {
  ModelParams m = micro_model(1, 2, 3, 4);
  zero_mlp(m.global_head);
  Vector g1(3), g2(3);
  g1 << 1, 2, 3;
  g2 << -5, 0, 9;
  Vector y1 = global_mix(m, Vector::Zero(2), g1);
  Vector y2 = global_mix(m, Vector::Zero(2), g2);
  CHECK((y1 - y2).norm() == 0.0);
}

TEST_CASE("predict_coalition full mask equals the explicit composition") {
  ModelParams m = micro_model(3, 2, 4, 11, 5);
  Rng rng(4);
  EmbeddedCase c;
  c.agent_inputs = random_inputs(3, 4, rng);
  c.global_input = random_inputs(1, 4, rng)[0];
  c.labels = Vector::Zero(2);
  Vector direct = predict_coalition(m, c, CoalitionMask::full(3));
  Matrix h = agent_forward(m, c.agent_inputs);
  Vector z = aggregate(h, m.decision_matrix(), CoalitionMask::full(3));
  Vector composed = global_mix(m, z, c.global_input);
  CHECK((direct - composed).norm() == 0.0);
}

TEST_CASE("excluding a near-zero-weight agent barely moves the prediction input") {
  ModelParams m = micro_model(3, 2, 4, 13);
  // push agent 0's decision logits far down; its W row mass is ~0
  m.decision_logits.row(0).setConstant(-30.0);
  Rng rng(6);
  EmbeddedCase c;
  c.agent_inputs = random_inputs(3, 4, rng);
  c.global_input = random_inputs(1, 4, rng)[0];
  Matrix h = agent_forward(m, c.agent_inputs);
  Matrix w = m.decision_matrix();
  Vector z_full = aggregate(h, w, CoalitionMask::full(3));
  Vector z_masked = aggregate(h, w, CoalitionMask::full(3).without(0));
  double bound = w.row(0).cwiseAbs().maxCoeff() * h.row(0).cwiseAbs().maxCoeff() * 2;
  CHECK((z_full - z_masked).cwiseAbs().maxCoeff() <= bound + 1e-18);
  CHECK((z_full - z_masked).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("N=1 with the only agent excluded runs on the global stream") {
  ModelParams m = micro_model(1, 2, 3, 3);
  Rng rng(8);
  EmbeddedCase c;
  c.agent_inputs = random_inputs(1, 3, rng);
  c.global_input = random_inputs(1, 3, rng)[0];
  Vector masked = predict_coalition(m, c, CoalitionMask::empty(1));
  Vector central = centralized_forward(m, c.global_input);
  CHECK((masked - central).norm() == 0.0);
}

TEST_CASE("contributing rows are exactly the mask's included set") {
  ModelParams m = micro_model(4, 3, 4, 21);
  Rng rng(10);
  EmbeddedCase c;
  c.agent_inputs = random_inputs(4, 4, rng);
  c.global_input = random_inputs(1, 4, rng)[0];
  Matrix h = agent_forward(m, c.agent_inputs);
  Matrix w = m.decision_matrix();
  for (std::uint32_t bits = 0; bits < 16; ++bits) {
    CoalitionMask mask = CoalitionMask::from_bits(bits, 4);
    Vector z = aggregate(h, w, mask);
    // rebuilding from only the included rows reproduces z exactly
    Vector rebuilt = Vector::Zero(3);
    for (int i = 0; i < 4; ++i)
      if (mask(i)) rebuilt += (w.row(i).array() * h.row(i).array()).matrix().transpose();
    CHECK((z - rebuilt).norm() == 0.0);
  }
}

TEST_CASE("centralized_forward with a zero global head is constant") {
  ModelParams m = micro_model(0, 2, 3, 31);
  zero_mlp(m.global_head);
  Vector a(3), b(3);
  a << 1, 2, 3;
  b << 9, -1, 0;
  CHECK((centralized_forward(m, a) - centralized_forward(m, b)).norm() == 0.0);
}

TEST_CASE("centralized_forward micro case matches hand evaluation") {
  // linear global head, identity fusion
  ModelParams m = micro_model(0, 2, 3);
  m.fusion_head.weights[0] = Matrix::Identity(2, 2);
  m.fusion_head.biases[0].setZero();
  m.mixture_logits.setZero();
  Vector x(3);
  x << 0.5, -1.0, 2.0;
  Vector y = centralized_forward(m, x);
  for (int k = 0; k < 2; ++k) {
    double s = m.global_head.biases[0](k);
    for (int d = 0; d < 3; ++d) s += m.global_head.weights[0](k, d) * x(d);
    CHECK(y(k) == doctest::Approx(0.5 * s).epsilon(1e-14));
  }
}

TEST_CASE("flatten/unflatten round-trips bit-exactly") {
  ModelParams m = micro_model(3, 4, 5, 17, 6);
  Vector flat = m.flatten();
  ModelParams m2 = ModelParams::zeros_like(m);
  m2.unflatten(flat);
  CHECK((m2.flatten() - flat).norm() == 0.0);
  CHECK(m2.decision_logits == m.decision_logits);
}
