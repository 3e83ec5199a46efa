#include "comma/game.hpp"

#include <bit>
#include <cmath>
#include <numeric>

namespace comma {

Vector coalition_bce(const ModelParams& params,
                     const std::vector<EmbeddedCase>& batch,
                     const CoalitionMask& mask) {
  require(!batch.empty(), "coalition_bce: empty batch");
  Vector total = Vector::Zero(params.n_classes);
  for (const EmbeddedCase& c : batch) {
    Vector yhat = predict_coalition(params, c, mask);
    total += bce_with_logits(yhat, c.labels).first;
  }
  return total / static_cast<double>(batch.size());
}

const Vector& CoalitionValues::operator()(const CoalitionMask& mask) {
  auto [it, inserted] = memo_.try_emplace(mask.bits());
  if (inserted) it->second = coalition_bce(params_, batch_, mask);
  return it->second;
}

RewardAdvantage rewards_and_advantage(const ModelParams& params,
                                      const std::vector<EmbeddedCase>& batch) {
  int n = params.n_agents, c = params.n_classes;
  CoalitionValues values(params, batch);
  const Vector full_loss = values(CoalitionMask::full(n));
  RewardAdvantage out;
  out.rewards.resize(n, c);
  for (int i = 0; i < n; ++i) {
    Vector drop = values(CoalitionMask::full(n).without(i));
    out.rewards.row(i) = (drop - full_loss).transpose();
  }
  out.baseline = out.rewards.colwise().mean().transpose();
  out.advantage = out.rewards.rowwise() - out.baseline.transpose();
  return out;
}

double policy_gradient_loss(const Matrix& decision_matrix, const Matrix& advantage) {
  require(decision_matrix.rows() == advantage.rows() &&
              decision_matrix.cols() == advantage.cols(),
          "policy_gradient_loss: shape mismatch");
  return -(decision_matrix.array().log() * advantage.array()).sum();
}

Matrix policy_gradient_loss_grad_w(const Matrix& decision_matrix, const Matrix& advantage) {
  return (-advantage.array() / decision_matrix.array()).matrix();
}

Matrix normalize_simplex(const Matrix& m) {
  double total = m.sum();
  if (total < 1e-12)
    return Matrix::Constant(m.rows(), m.cols(), 1.0 / static_cast<double>(m.size()));
  return m / total;
}

Matrix shapley_mc(CoalitionValues& values, int n_agents, int n_classes,
                  int permutations, Rng& rng) {
  require(permutations >= 1, "shapley_mc: need at least one permutation");
  Matrix acc = Matrix::Zero(n_agents, n_classes);
  std::vector<int> perm(n_agents);
  for (int m = 0; m < permutations; ++m) {
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    CoalitionMask mask = CoalitionMask::empty(n_agents);
    Vector before = values(mask);
    for (int i : perm) {
      mask.included[i] = 1;
      Vector after = values(mask);
      acc.row(i) += (before - after).cwiseMax(0.0).transpose();
      before = after;
    }
  }
  acc /= static_cast<double>(permutations);
  return normalize_simplex(acc);
}

Matrix shapley_mc(const ModelParams& params, const std::vector<EmbeddedCase>& batch,
                  int permutations, Rng& rng) {
  CoalitionValues values(params, batch);
  return shapley_mc(values, params.n_agents, params.n_classes, permutations, rng);
}

GameTable GameTable::build(const ModelParams& params,
                           const std::vector<EmbeddedCase>& batch) {
  require(params.n_agents <= 12, "GameTable: refusing to enumerate 2^N coalitions for N > 12");
  GameTable t;
  t.n_agents = params.n_agents;
  t.n_classes = params.n_classes;
  std::uint32_t count = 1u << params.n_agents;
  t.values.resize(count);
  for (std::uint32_t bits = 0; bits < count; ++bits)
    t.values[bits] = coalition_bce(params, batch, CoalitionMask::from_bits(bits, params.n_agents));
  return t;
}

ExactShapley shapley_exact(const GameTable& table) {
  int n = table.n_agents;
  require(n >= 1 && n <= 12,
          "shapley_exact: exact enumeration is limited to 1 <= N <= 12 (2^N table)");
  require(table.values.size() == (1u << n), "shapley_exact: incomplete game table");

  std::vector<double> factorial(n + 1, 1.0);
  for (int i = 1; i <= n; ++i) factorial[i] = factorial[i - 1] * i;

  ExactShapley out;
  out.phi = Matrix::Zero(n, table.n_classes);
  Matrix rectified = Matrix::Zero(n, table.n_classes);
  for (int i = 0; i < n; ++i) {
    for (std::uint32_t s = 0; s < (1u << n); ++s) {
      if (s & (1u << i)) continue;
      int size = std::popcount(s);
      double weight = factorial[size] * factorial[n - size - 1] / factorial[n];
      // marginal utility as loss reduction: v(S) - v(S + {i})
      Vector marginal = table.values[s] - table.values[s | (1u << i)];
      out.phi.row(i) += weight * marginal.transpose();
      rectified.row(i) += weight * marginal.cwiseMax(0.0).transpose();
    }
  }
  out.phi_rectified = normalize_simplex(rectified);
  return out;
}

void ema_update(ShapleyState& state, const Matrix& phi_instant) {
  state.phi_instant = phi_instant;
  if (!state.initialized) {
    state.phi_ema = phi_instant;
    state.initialized = true;
    return;
  }
  require(state.phi_ema.rows() == phi_instant.rows() &&
              state.phi_ema.cols() == phi_instant.cols(),
          "ema_update: shape mismatch");
  state.phi_ema = state.decay * state.phi_ema + (1.0 - state.decay) * phi_instant;
  state.phi_ema = normalize_simplex(state.phi_ema);
}

namespace {

Matrix smoothed_target(const Matrix& phi) {
  Matrix t = (phi.array() + kKlEpsilon).matrix();
  return t / t.sum();
}

}  // namespace

double kl_loss(const Matrix& decision_matrix, const Matrix& phi) {
  require(decision_matrix.rows() == phi.rows() && decision_matrix.cols() == phi.cols(),
          "kl_loss: shape mismatch");
  Matrix target = smoothed_target(phi);
  return (decision_matrix.array() * (decision_matrix.array() / target.array()).log()).sum();
}

Matrix kl_loss_grad_w(const Matrix& decision_matrix, const Matrix& phi) {
  Matrix target = smoothed_target(phi);
  return ((decision_matrix.array() / target.array()).log() + 1.0).matrix();
}

int sample_budget(int n_agents) {
  require(n_agents >= 1, "sample_budget: need at least one agent");
  return static_cast<int>(std::ceil(std::pow(2.0, n_agents / 2.0)));
}

}  // namespace comma
