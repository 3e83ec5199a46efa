#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "comma/mlp.hpp"

using namespace comma;

namespace {

MlpParams single_layer(const Matrix& w, const Vector& b) {
  MlpParams p;
  p.weights.push_back(w);
  p.biases.push_back(b);
  return p;
}

}  // namespace

TEST_CASE("mlp_forward identity layer passes input through") {
  MlpParams p = single_layer(Matrix::Identity(2, 2), Vector::Zero(2));
  Vector x(2);
  x << 1, 2;
  Vector y = mlp_forward(p, x);
  CHECK(y(0) == 1.0);
  CHECK(y(1) == 2.0);
}

TEST_CASE("mlp_forward zero weights yield the bias") {
  Vector b(1);
  b << 0.5;
  MlpParams p = single_layer(Matrix::Zero(1, 3), b);
  Vector x(3);
  x << -7, 3, 100;
  CHECK(mlp_forward(p, x)(0) == 0.5);
}

TEST_CASE("mlp_forward matches an independent straight-line evaluation") {
  // 2-layer net, hidden width 3, seed-0 parameters, input of ones
  Rng rng(0);
  MlpParams p = MlpParams::init({2, 3, 2}, rng);
  Vector x = Vector::Ones(2);
  Vector got = mlp_forward(p, x);

  // straight-line recomputation of the same arithmetic
  Vector z1(3);
  for (int r = 0; r < 3; ++r) {
    double s = p.biases[0](r);
    for (int c = 0; c < 2; ++c) s += p.weights[0](r, c) * x(c);
    z1(r) = s > 0.0 ? s : 0.0;
  }
  Vector z2(2);
  for (int r = 0; r < 2; ++r) {
    double s = p.biases[1](r);
    for (int c = 0; c < 3; ++c) s += p.weights[1](r, c) * z1(c);
    z2(r) = s;
  }
  CHECK(got(0) == doctest::Approx(z2(0)).epsilon(1e-14));
  CHECK(got(1) == doctest::Approx(z2(1)).epsilon(1e-14));
}

TEST_CASE("mlp_forward is bit-deterministic") {
  Rng rng(3);
  MlpParams p = MlpParams::init({4, 5, 3}, rng);
  Vector x(4);
  x << 0.1, -0.2, 0.3, 1.5;
  Vector a = mlp_forward(p, x);
  Vector b = mlp_forward(p, x);
  for (int i = 0; i < 3; ++i) CHECK(a(i) == b(i));
}

TEST_CASE("mlp_forward rejects shape mismatch") {
  MlpParams p = single_layer(Matrix::Identity(2, 2), Vector::Zero(2));
  Vector x(3);
  x.setZero();
  CHECK_THROWS_AS(mlp_forward(p, x), ConfigError);
}

TEST_CASE("mlp_backward identity Jacobian") {
  MlpParams p = single_layer(Matrix::Identity(2, 2), Vector::Zero(2));
  MlpTape tape;
  Vector x(2);
  x << 3, -4;
  mlp_forward(p, x, &tape);
  MlpParams g = MlpParams::zeros_like(p);
  Vector dout(2);
  dout << 1, 0;
  Vector din = mlp_backward(p, tape, dout, g);
  CHECK(din(0) == 1.0);
  CHECK(din(1) == 0.0);
}

TEST_CASE("mlp_backward zero output gradient gives zero gradients") {
  Rng rng(1);
  MlpParams p = MlpParams::init({3, 4, 2}, rng);
  MlpTape tape;
  Vector x(3);
  x << 1, 2, 3;
  mlp_forward(p, x, &tape);
  MlpParams g = MlpParams::zeros_like(p);
  Vector din = mlp_backward(p, tape, Vector::Zero(2), g);
  CHECK(din.norm() == 0.0);
  for (const auto& w : g.weights) CHECK(w.norm() == 0.0);
  for (const auto& b : g.biases) CHECK(b.norm() == 0.0);
}

TEST_CASE("mlp_backward rejects a missing tape") {
  Rng rng(1);
  MlpParams p = MlpParams::init({3, 2}, rng);
  MlpTape empty_tape;
  MlpParams g = MlpParams::zeros_like(p);
  CHECK_THROWS_AS(mlp_backward(p, empty_tape, Vector::Zero(2), g), ConfigError);
}

namespace {

// packs an MlpParams into a flat vector and back for fd checks
double net_loss(const MlpParams& shape, const Vector& flat, const Vector& x, const Vector& target) {
  MlpParams p = shape;
  long off = 0;
  unpack(flat, p, off);
  Vector y = mlp_forward(p, x);
  return 0.5 * (y - target).squaredNorm();
}

}  // namespace

TEST_CASE("mlp_backward matches finite differences on random nets") {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    Rng rng(seed);
    std::vector<int> widths = seed % 2 == 0 ? std::vector<int>{5, 8, 3}
                                            : std::vector<int>{4, 16, 7, 2};
    MlpParams p = MlpParams::init(widths, rng);
    Vector x(widths.front());
    for (int i = 0; i < x.size(); ++i) x(i) = rng.normal();
    Vector target(widths.back());
    for (int i = 0; i < target.size(); ++i) target(i) = rng.normal();

    MlpTape tape;
    Vector y = mlp_forward(p, x, &tape);
    MlpParams g = MlpParams::zeros_like(p);
    mlp_backward(p, tape, y - target, g);

    Vector flat(p.param_count()), grad_flat(p.param_count());
    long off = 0;
    pack(p, flat, off);
    off = 0;
    pack(g, grad_flat, off);

    double err = fd_check(
        [&](const Vector& f) { return net_loss(p, f, x, target); }, flat, grad_flat, 1e-5);
    CHECK(err < 1e-6);
  }
}

TEST_CASE("softmax_flat basics") {
  Matrix l(1, 2);
  l << 0, 0;
  Matrix s = softmax_flat(l);
  CHECK(s(0, 0) == doctest::Approx(0.5));
  CHECK(s(0, 1) == doctest::Approx(0.5));

  l << 0, std::log(3.0);
  s = softmax_flat(l);
  CHECK(s(0, 0) == doctest::Approx(0.25));
  CHECK(s(0, 1) == doctest::Approx(0.75));

  Matrix z = Matrix::Zero(5, 8);
  Matrix u = softmax_flat(z);
  CHECK(u.minCoeff() == doctest::Approx(0.025));
  CHECK(u.maxCoeff() == doctest::Approx(0.025));
}

TEST_CASE("softmax_flat stays on the simplex and shift-invariant for random logits") {
  Rng rng(42);
  for (int trial = 0; trial < 10000; ++trial) {
    int rows = 1 + static_cast<int>(rng.below(6));
    int cols = 1 + static_cast<int>(rng.below(8));
    Matrix l(rows, cols);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) l(r, c) = rng.uniform(-50, 50);
    Matrix s = softmax_flat(l);
    CHECK(s.minCoeff() > 0.0);
    CHECK(std::abs(s.sum() - 1.0) < 1e-12);
    Matrix shifted = softmax_flat((l.array() + 17.5).matrix());
    CHECK((s - shifted).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("bce_with_logits closed-form values") {
  Vector z(1), y(1);
  z << 0;
  y << 1;
  CHECK(bce_with_logits(z, y).second == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  z << 40;
  CHECK(bce_with_logits(z, y).second < 1e-15);
  z << 1;
  y << 0;
  CHECK(bce_with_logits(z, y).second ==
        doctest::Approx(std::log1p(std::exp(1.0))).epsilon(1e-12));
}

TEST_CASE("bce_with_logits rejects non-binary labels") {
  Vector z(1), y(1);
  z << 0;
  y << 0.5;
  CHECK_THROWS_AS(bce_with_logits(z, y), InputError);
}

TEST_CASE("bce_with_logits nonnegative and label-flip symmetric") {
  Rng rng(7);
  for (int trial = 0; trial < 1000; ++trial) {
    int c = 1 + static_cast<int>(rng.below(6));
    Vector z(c), y(c);
    for (int k = 0; k < c; ++k) {
      z(k) = rng.uniform(-30, 30);
      y(k) = rng.below(2);
    }
    auto [losses, mean] = bce_with_logits(z, y);
    CHECK(losses.minCoeff() >= 0.0);
    auto [flipped, fmean] = bce_with_logits(-z, (1.0 - y.array()).matrix());
    CHECK(std::abs(mean - fmean) < 1e-12);
  }
}

TEST_CASE("adam zero gradient from a fresh state leaves parameters unchanged") {
  Vector p = Vector::Constant(3, 1.5);
  AdamState s = AdamState::init(3, 1e-3);
  Vector before = p;
  adam_step(p, Vector::Zero(3), s);
  CHECK((p - before).cwiseAbs().maxCoeff() == 0.0);
  CHECK(s.step == 1);
}

TEST_CASE("adam zero gradient decays existing moments") {
  Vector p = Vector::Constant(3, 1.5);
  AdamState s = AdamState::init(3, 1e-3);
  s.m = Vector::Constant(3, 0.2);
  s.v = Vector::Constant(3, 0.1);
  adam_step(p, Vector::Zero(3), s);
  CHECK(s.m(0) == doctest::Approx(0.18));
  CHECK(s.v(0) == doctest::Approx(0.0999));
}

TEST_CASE("adam first step with unit gradient moves by -lr") {
  Vector p = Vector::Zero(4);
  AdamState s = AdamState::init(4, 1e-3);
  adam_step(p, Vector::Ones(4), s);
  for (int i = 0; i < 4; ++i) CHECK(std::abs(p(i) + 1e-3) < 1e-6);
}

TEST_CASE("adam two steps reproduce a scripted hand calculation") {
  Vector p = Vector::Zero(1);
  AdamState s = AdamState::init(1, 1e-3);
  adam_step(p, Vector::Ones(1), s);
  adam_step(p, Vector::Ones(1), s);

  // scripted two-step oracle with g = 1
  double m = 0, v = 0, theta = 0;
  for (int t = 1; t <= 2; ++t) {
    m = 0.9 * m + 0.1 * 1.0;
    v = 0.999 * v + 0.001 * 1.0;
    double mhat = m / (1.0 - std::pow(0.9, t));
    double vhat = v / (1.0 - std::pow(0.999, t));
    theta -= 1e-3 * mhat / (std::sqrt(vhat) + 1e-8);
  }
  CHECK(p(0) == doctest::Approx(theta).epsilon(1e-14));
}

TEST_CASE("adam rejects shape mismatch") {
  Vector p = Vector::Zero(3);
  AdamState s = AdamState::init(4, 1e-3);
  CHECK_THROWS_AS(adam_step(p, Vector::Zero(3), s), ConfigError);
}

TEST_CASE("fd_check exact for quadratics") {
  Vector theta(5);
  theta << 1, -2, 3, 0.5, -0.25;
  auto loss = [](const Vector& t) { return 0.5 * t.squaredNorm(); };
  CHECK(fd_check(loss, theta, theta, 1e-5) < 1e-9);
}

TEST_CASE("fd_check constant loss reports zero error") {
  Vector theta = Vector::Ones(3);
  auto loss = [](const Vector&) { return 4.2; };
  CHECK(fd_check(loss, theta, Vector::Zero(3), 1e-5) == 0.0);
}

TEST_CASE("fd_check throws on non-finite loss") {
  Vector theta = Vector::Ones(2);
  auto loss = [](const Vector& t) { return std::log(-1.0) * t(0); };
  CHECK_THROWS_AS(fd_check(loss, theta, Vector::Zero(2), 1e-5), ConfigError);
}
