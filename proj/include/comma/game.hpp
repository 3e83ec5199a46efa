#pragma once

#include <functional>
#include <map>
#include <vector>

#include "comma/model.hpp"
#include "comma/rng.hpp"
#include "comma/types.hpp"

namespace comma {

/// Per-class batch-mean BCE of the coalition's prediction; the characteristic
/// function of the cooperative game.
Vector coalition_bce(const ModelParams& params,
                     const std::vector<EmbeddedCase>& batch,
                     const CoalitionMask& mask);

/// Memoizes coalition values by mask bits; one instance per (params, batch).
class CoalitionValues {
 public:
  CoalitionValues(const ModelParams& params, const std::vector<EmbeddedCase>& batch)
      : params_(params), batch_(batch) {}
  const Vector& operator()(const CoalitionMask& mask);

 private:
  const ModelParams& params_;
  const std::vector<EmbeddedCase>& batch_;
  std::map<std::uint32_t, Vector> memo_;
};

struct RewardAdvantage {
  Matrix rewards;    // r'_{i,k}: marginal loss reduction from including agent i
  Matrix advantage;  // A = r' - b, zero-sum over agents per class
  Vector baseline;   // b_k = mean_i r'_{i,k}
};

RewardAdvantage rewards_and_advantage(const ModelParams& params,
                                      const std::vector<EmbeddedCase>& batch);

/// L_pg = -sum_{i,k} log(W_{i,k}) * A_{i,k}; the advantage is a constant.
double policy_gradient_loss(const Matrix& decision_matrix, const Matrix& advantage);

/// dL_pg / dW = -A / W (elementwise).
Matrix policy_gradient_loss_grad_w(const Matrix& decision_matrix, const Matrix& advantage);

struct ShapleyState {
  Matrix phi_instant;  // N x C, on the simplex
  Matrix phi_ema;      // N x C, on the simplex
  double decay = 0.9;
  int sample_budget = 0;
  bool initialized = false;
};

/// Monte-Carlo Shapley over M random permutations: for each permutation each
/// agent contributes the rectified marginal [L_k(S) - L_k(S+{i})]_+ with S
/// its predecessors. The accumulated matrix is normalized to sum 1 (uniform
/// fallback when everything rectifies to zero).
Matrix shapley_mc(const ModelParams& params, const std::vector<EmbeddedCase>& batch,
                  int permutations, Rng& rng);
Matrix shapley_mc(CoalitionValues& values, int n_agents, int n_classes,
                  int permutations, Rng& rng);

/// Complete game table over all 2^N coalitions per class.
struct GameTable {
  int n_agents = 0;
  int n_classes = 0;
  std::vector<Vector> values;  // indexed by coalition bitmask

  static GameTable build(const ModelParams& params,
                         const std::vector<EmbeddedCase>& batch);
};

struct ExactShapley {
  Matrix phi;                  // classical, possibly negative
  Matrix phi_rectified;        // per-marginal ReLU, normalized to sum 1
};

/// Subset-weighted exact Shapley; refuses N > 12.
ExactShapley shapley_exact(const GameTable& table);

/// phi_ema <- decay * phi_ema + (1 - decay) * phi_instant, renormalized;
/// the first call copies phi_instant.
void ema_update(ShapleyState& state, const Matrix& phi_instant);

inline constexpr double kKlEpsilon = 1e-8;

/// KL(W || normalize(phi + eps)); phi is a constant target.
double kl_loss(const Matrix& decision_matrix, const Matrix& phi);
Matrix kl_loss_grad_w(const Matrix& decision_matrix, const Matrix& phi);

/// M = ceil(2^{N/2}).
int sample_budget(int n_agents);

/// Normalize a nonnegative matrix to sum 1; uniform when the total vanishes.
Matrix normalize_simplex(const Matrix& m);

}  // namespace comma
