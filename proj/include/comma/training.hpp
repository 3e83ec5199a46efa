#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "comma/game.hpp"
#include "comma/model.hpp"

namespace comma {

struct TrainConfig {
  int n_agents = 5;
  int n_classes = 4;
  int dim = 32;
  int agent_hidden = 64;
  int fusion_hidden = 32;
  int epochs = 200;
  int batch_size = 4;
  double learning_rate = 5e-3;
  double lambda_pg = 1.0;
  double lambda_shap = 10.0;
  double ema_decay = 0.9;
  int mc_permutations = 0;  // 0 -> sample_budget(n_agents)
  int shapley_interval = 1;
  int log_interval = 10;
  std::uint64_t seed = 0;
  bool centralized_only = false;
  bool no_decision_matrix = false;
  bool no_contribution_losses = false;

  int effective_permutations() const {
    return mc_permutations > 0 ? mc_permutations : sample_budget(n_agents);
  }

  /// Hyperparameter presets: "hcc-like" (1000 epochs, lr 5e-5) and
  /// "mtb-like" (30 epochs, lr 5e-3), both batch 4, five agents,
  /// lambda_pg 1, lambda_shap 10.
  static TrainConfig preset(const std::string& name);

  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct LossBreakdown {
  double bce = 0.0;
  double pg = 0.0;
  double shap = 0.0;
  double total = 0.0;
};

struct TotalLossResult {
  LossBreakdown breakdown;
  Matrix advantage;  // empty when the pg term is off
};

/// Composite loss on one batch: batch-mean BCE of the full-coalition
/// prediction plus the policy-gradient and KL terms. The advantage and the
/// Shapley target are constants; their gradients flow only into the
/// decision-matrix logits. When `grads` is non-null, gradients for every
/// parameter block are accumulated into it (it must start zeroed).
TotalLossResult total_loss(const ModelParams& params,
                           const std::vector<EmbeddedCase>& batch,
                           const Matrix& phi_ema, const TrainConfig& cfg,
                           ModelParams* grads);

/// Value-only variant with frozen advantage/target, used by the
/// finite-difference harness (the analytic gradient treats both as
/// constants, so the differentiated function must too).
double total_loss_value(const ModelParams& params,
                        const std::vector<EmbeddedCase>& batch,
                        const Matrix& advantage_frozen, const Matrix& phi_frozen,
                        const TrainConfig& cfg);

struct Checkpoint {
  int version = 1;
  TrainConfig config;
  ModelParams model;
  AdamState adam;
  ShapleyState shapley;
  long long step = 0;
  int epoch = 0;
};

void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

using TraceSink = std::function<void(const nlohmann::json&)>;

/// Seeded training loop. All randomness derives from cfg.seed through named
/// sub-streams (init, shuffle per epoch, shapley per step), so a run resumed
/// from a checkpoint at an epoch boundary is bit-identical to an
/// uninterrupted one.
Checkpoint train(const TrainConfig& cfg, const std::vector<EmbeddedCase>& cases,
                 const TraceSink& trace = nullptr,
                 const Checkpoint* resume = nullptr);

/// Vector-mode pass-through or provider-backed embedding of a dataset.
class Provider;
class EmbeddingCache;
struct Dataset;
std::vector<EmbeddedCase> embed_dataset(const Dataset& ds, Provider* provider,
                                        EmbeddingCache* cache);

}  // namespace comma
