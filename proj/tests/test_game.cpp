#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <bit>
#include <cmath>

#include "comma/game.hpp"

using namespace comma;

namespace {

ModelParams micro_model(int n, int c, int d, std::uint64_t seed = 0, int hidden = 0) {
  Rng rng(seed);
  return ModelParams::init(n, c, d, hidden, hidden, rng);
}

std::vector<EmbeddedCase> random_batch(int b, int n, int c, int d, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<EmbeddedCase> batch;
  for (int t = 0; t < b; ++t) {
    EmbeddedCase cs;
    for (int i = 0; i < n; ++i) {
      Vector x(d);
      for (int j = 0; j < d; ++j) x(j) = rng.normal();
      cs.agent_inputs.push_back(x);
    }
    Vector g(d);
    for (int j = 0; j < d; ++j) g(j) = rng.normal();
    cs.global_input = g;
    cs.labels.resize(c);
    for (int k = 0; k < c; ++k) cs.labels(k) = static_cast<double>(rng.below(2));
    batch.push_back(std::move(cs));
  }
  return batch;
}

GameTable table_from_values(int n, const std::vector<double>& v) {
  GameTable t;
  t.n_agents = n;
  t.n_classes = 1;
  for (double x : v) {
    Vector one(1);
    one << x;
    t.values.push_back(one);
  }
  return t;
}

}  // namespace

TEST_CASE("rewards are equal and advantage vanishes for symmetric agents") {
  int n = 3, c = 2, d = 4;
  ModelParams m = micro_model(n, c, d, 5, 4);
  for (int i = 1; i < n; ++i) m.agent_heads[i] = m.agent_heads[0];
  m.decision_logits.setZero();  // uniform W
  auto batch = random_batch(4, n, c, d, 7);
  for (auto& cs : batch)
    for (int i = 1; i < n; ++i) cs.agent_inputs[i] = cs.agent_inputs[0];

  RewardAdvantage ra = rewards_and_advantage(m, batch);
  for (int i = 1; i < n; ++i)
    CHECK((ra.rewards.row(i) - ra.rewards.row(0)).cwiseAbs().maxCoeff() < 1e-14);
  CHECK(ra.advantage.cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("advantage is reward minus the column mean") {
  Matrix r(3, 1);
  r << 0.3, 0.1, 0.2;
  Vector b = r.colwise().mean().transpose();
  CHECK(b(0) == doctest::Approx(0.2));
  Matrix a = r.rowwise() - b.transpose();
  CHECK(a(0, 0) == doctest::Approx(0.1));
  CHECK(a(1, 0) == doctest::Approx(-0.1));
  CHECK(a(2, 0) == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("rewards match two explicit coalition evaluations differenced by hand") {
  int n = 3, c = 2, d = 4;
  ModelParams m = micro_model(n, c, d, 2, 4);
  auto batch = random_batch(3, n, c, d, 3);
  RewardAdvantage ra = rewards_and_advantage(m, batch);
  for (int i = 0; i < n; ++i) {
    Vector full = coalition_bce(m, batch, CoalitionMask::full(n));
    Vector drop = coalition_bce(m, batch, CoalitionMask::full(n).without(i));
    CHECK((ra.rewards.row(i).transpose() - (drop - full)).cwiseAbs().maxCoeff() < 1e-15);
  }
}

TEST_CASE("advantage is zero-sum over agents on random batches") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    int n = 2 + static_cast<int>(seed % 4);
    ModelParams m = micro_model(n, 3, 5, seed, 4);
    auto batch = random_batch(4, n, 3, 5, seed + 100);
    RewardAdvantage ra = rewards_and_advantage(m, batch);
    Vector col_sums = ra.advantage.colwise().sum().transpose();
    CHECK(col_sums.cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("policy gradient loss is zero for zero advantage") {
  Matrix w = Matrix::Constant(5, 8, 0.025);
  Matrix a = Matrix::Zero(5, 8);
  CHECK(policy_gradient_loss(w, a) == 0.0);
  CHECK(policy_gradient_loss_grad_w(w, a).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("policy gradient loss direct evaluation on uniform W") {
  Matrix w = Matrix::Constant(5, 8, 0.025);
  Matrix a = Matrix::Zero(5, 8);
  a(2, 3) = 1.0;
  CHECK(policy_gradient_loss(w, a) == doctest::Approx(-std::log(0.025)).epsilon(1e-12));
}

TEST_CASE("policy gradient sign pushes a negative-advantage logit down") {
  Matrix logits = Matrix::Zero(2, 2);
  Matrix a = Matrix::Zero(2, 2);
  a(0, 0) = -1.0;
  Matrix w = softmax_flat(logits);
  Matrix grad_logits = softmax_flat_backward(w, policy_gradient_loss_grad_w(w, a));
  // positive gradient means the optimizer will decrease logit (0,0)
  CHECK(grad_logits(0, 0) > 0.0);

  // finite-difference confirmation on the (0,0) logit
  double eps = 1e-6;
  Matrix lp = logits, lm = logits;
  lp(0, 0) += eps;
  lm(0, 0) -= eps;
  double fd = (policy_gradient_loss(softmax_flat(lp), a) -
               policy_gradient_loss(softmax_flat(lm), a)) /
              (2 * eps);
  CHECK(grad_logits(0, 0) == doctest::Approx(fd).epsilon(1e-6));
}

TEST_CASE("exact Shapley on the worked 2-agent game") {
  GameTable t = table_from_values(2, {0.9, 0.5, 0.7, 0.4});
  ExactShapley ex = shapley_exact(t);
  CHECK(ex.phi(0, 0) == doctest::Approx(0.35).epsilon(1e-12));
  CHECK(ex.phi(1, 0) == doctest::Approx(0.15).epsilon(1e-12));
  // efficiency
  CHECK(ex.phi.col(0).sum() == doctest::Approx(0.9 - 0.4).epsilon(1e-12));
}

TEST_CASE("exact Shapley of a constant-drop game returns the drops") {
  // v(S) = 1 - sum_{i in S} d_i
  std::vector<double> d = {0.05, 0.2, 0.1};
  std::vector<double> values;
  for (std::uint32_t s = 0; s < 8; ++s) {
    double v = 1.0;
    for (int i = 0; i < 3; ++i)
      if (s & (1u << i)) v -= d[i];
    values.push_back(v);
  }
  ExactShapley ex = shapley_exact(table_from_values(3, values));
  for (int i = 0; i < 3; ++i) CHECK(ex.phi(i, 0) == doctest::Approx(d[i]).epsilon(1e-12));
}

TEST_CASE("exact Shapley dummy axiom") {
  // agent 1 never changes the value
  std::vector<double> values(8);
  for (std::uint32_t s = 0; s < 8; ++s) {
    double v = 1.0;
    if (s & 1u) v -= 0.3;
    if (s & 4u) v -= 0.2;
    values[s] = v;
  }
  ExactShapley ex = shapley_exact(table_from_values(3, values));
  CHECK(ex.phi(1, 0) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(ex.phi_rectified(1, 0) == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("exact Shapley refuses oversized games") {
  GameTable t;
  t.n_agents = 13;
  t.n_classes = 1;
  CHECK_THROWS_AS(shapley_exact(t), ConfigError);
}

TEST_CASE("exact-oracle efficiency on random micro-models") {
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    int n = 2 + static_cast<int>(seed % 5);  // up to 6
    ModelParams m = micro_model(n, 2, 4, seed, 3);
    auto batch = random_batch(3, n, 2, 4, seed + 50);
    GameTable t = GameTable::build(m, batch);
    ExactShapley ex = shapley_exact(t);
    Vector empty_loss = t.values[0];
    Vector full_loss = t.values[(1u << n) - 1];
    for (int k = 0; k < 2; ++k)
      CHECK(std::abs(ex.phi.col(k).sum() - (empty_loss(k) - full_loss(k))) < 1e-10);
  }
}

TEST_CASE("duplicated agents receive exactly equal exact Shapley values") {
  int n = 3, c = 2, d = 4;
  ModelParams m = micro_model(n, c, d, 9, 3);
  m.agent_heads[1] = m.agent_heads[0];
  m.decision_logits.row(1) = m.decision_logits.row(0);
  auto batch = random_batch(3, n, c, d, 11);
  for (auto& cs : batch) cs.agent_inputs[1] = cs.agent_inputs[0];
  ExactShapley ex = shapley_exact(GameTable::build(m, batch));
  CHECK((ex.phi.row(0) - ex.phi.row(1)).cwiseAbs().maxCoeff() < 1e-14);
  CHECK((ex.phi_rectified.row(0) - ex.phi_rectified.row(1)).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("a dummy agent gets a zero MC Shapley row before normalization") {
  int n = 3, c = 2, d = 4;
  ModelParams m = micro_model(n, c, d, 1, 0);
  // zero head and a large negative decision row make agent 2 inert
  for (auto& w : m.agent_heads[2].weights) w.setZero();
  for (auto& b : m.agent_heads[2].biases) b.setZero();
  m.decision_logits.row(2).setConstant(-40.0);
  auto batch = random_batch(4, n, c, d, 13);
  Rng rng(0);
  Matrix phi = shapley_mc(m, batch, 64, rng);
  // normalized matrix keeps the row at (numerically) zero
  CHECK(phi.row(2).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("symmetric agents have equal rows under the exact rectified oracle") {
  int n = 4, c = 2, d = 4;
  ModelParams m = micro_model(n, c, d, 17, 3);
  m.agent_heads[3] = m.agent_heads[2];
  m.decision_logits.row(3) = m.decision_logits.row(2);
  auto batch = random_batch(3, n, c, d, 19);
  for (auto& cs : batch) cs.agent_inputs[3] = cs.agent_inputs[2];
  ExactShapley ex = shapley_exact(GameTable::build(m, batch));
  CHECK((ex.phi_rectified.row(2) - ex.phi_rectified.row(3)).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("MC Shapley converges to the exact rectified value") {
  int n = 4, c = 2, d = 4;
  ModelParams m = micro_model(n, c, d, 23, 3);
  auto batch = random_batch(4, n, c, d, 29);
  ExactShapley ex = shapley_exact(GameTable::build(m, batch));

  Rng rng_small(0);
  Matrix coarse = shapley_mc(m, batch, 50, rng_small);
  Rng rng_big(0);
  Matrix fine = shapley_mc(m, batch, 5000, rng_big);

  double err_small = (coarse - ex.phi_rectified).cwiseAbs().maxCoeff();
  double err_big = (fine - ex.phi_rectified).cwiseAbs().maxCoeff();
  CHECK(err_big < 0.02);
  CHECK(err_big <= err_small);
}

TEST_CASE("ema_update with decay 0 copies the instantaneous matrix") {
  ShapleyState s;
  s.decay = 0.0;
  Matrix a = Matrix::Constant(1, 2, 0.5);
  ema_update(s, a);
  Matrix b(1, 2);
  b << 0.9, 0.1;
  ema_update(s, b);
  CHECK((s.phi_ema - b).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("ema_update converges geometrically to a constant target") {
  ShapleyState s;
  s.decay = 0.5;
  Matrix start(1, 2), target(1, 2);
  start << 1, 0;
  target << 0.5, 0.5;
  ema_update(s, start);
  for (int t = 0; t < 5; ++t) ema_update(s, target);
  double gap = (s.phi_ema - target).cwiseAbs().maxCoeff();
  CHECK(gap == doctest::Approx(0.5 * std::pow(0.5, 5)).epsilon(1e-9));
}

TEST_CASE("ema_update direct evaluation at decay 0.9") {
  ShapleyState s;
  s.decay = 0.9;
  Matrix first(1, 2), second(1, 2);
  first << 1, 0;
  second << 0, 1;
  ema_update(s, first);
  ema_update(s, second);
  CHECK(s.phi_ema(0, 0) == doctest::Approx(0.9).epsilon(1e-12));
  CHECK(s.phi_ema(0, 1) == doctest::Approx(0.1).epsilon(1e-12));
}

TEST_CASE("kl_loss identity and closed-form values") {
  Matrix w(1, 2), phi(1, 2);
  w << 0.5, 0.5;
  phi << 0.5, 0.5;
  CHECK(std::abs(kl_loss(w, phi)) < 1e-6);

  phi << 0.25, 0.75;
  double expect = 0.5 * std::log(2.0) + 0.5 * std::log(2.0 / 3.0);
  CHECK(kl_loss(w, phi) == doctest::Approx(expect).epsilon(1e-6));
}

TEST_CASE("kl_loss is nonnegative up to smoothing for random simplex pairs") {
  Rng rng(31);
  for (int t = 0; t < 500; ++t) {
    int n = 1 + static_cast<int>(rng.below(4));
    int c = 1 + static_cast<int>(rng.below(4));
    Matrix wl(n, c), pl(n, c);
    for (int i = 0; i < n; ++i)
      for (int k = 0; k < c; ++k) {
        wl(i, k) = rng.uniform(-4, 4);
        pl(i, k) = rng.uniform(-4, 4);
      }
    CHECK(kl_loss(softmax_flat(wl), softmax_flat(pl)) >= -1e-6);
  }
}

TEST_CASE("kl gradient against finite differences") {
  Rng rng(37);
  Matrix logits(2, 3), phi_logits(2, 3);
  for (int i = 0; i < 2; ++i)
    for (int k = 0; k < 3; ++k) {
      logits(i, k) = rng.normal();
      phi_logits(i, k) = rng.normal();
    }
  Matrix phi = softmax_flat(phi_logits);
  Matrix w = softmax_flat(logits);
  Matrix grad = softmax_flat_backward(w, kl_loss_grad_w(w, phi));
  double eps = 1e-6;
  for (int i = 0; i < 2; ++i)
    for (int k = 0; k < 3; ++k) {
      Matrix lp = logits, lm = logits;
      lp(i, k) += eps;
      lm(i, k) -= eps;
      double fd = (kl_loss(softmax_flat(lp), phi) - kl_loss(softmax_flat(lm), phi)) / (2 * eps);
      CHECK(grad(i, k) == doctest::Approx(fd).epsilon(1e-5));
    }
}

TEST_CASE("sample budget follows ceil(2^(N/2))") {
  CHECK(sample_budget(2) == 2);
  CHECK(sample_budget(4) == 4);
  CHECK(sample_budget(5) == 6);
  CHECK(sample_budget(8) == 16);
}

TEST_CASE("shapley_mc normalization falls back to uniform when nothing is credited") {
  // constant game: every marginal is zero
  int n = 2, c = 2, d = 3;
  ModelParams m = micro_model(n, c, d, 41, 0);
  for (int i = 0; i < n; ++i) {
    for (auto& w : m.agent_heads[i].weights) w.setZero();
    for (auto& b : m.agent_heads[i].biases) b.setZero();
  }
  auto batch = random_batch(2, n, c, d, 43);
  Rng rng(1);
  Matrix phi = shapley_mc(m, batch, 8, rng);
  CHECK(phi.minCoeff() == doctest::Approx(0.25));
  CHECK(phi.sum() == doctest::Approx(1.0));
}
