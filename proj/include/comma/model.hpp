#pragma once

#include <vector>

#include "comma/mlp.hpp"
#include "comma/types.hpp"

namespace comma {

/// A case after embedding: N partition vectors plus the global anchor.
struct EmbeddedCase {
  std::vector<Vector> agent_inputs;
  Vector global_input;
  Vector labels;  // C entries in {0,1}
};

struct CoalitionMask {
  std::vector<char> included;

  static CoalitionMask full(int n) { return {std::vector<char>(n, 1)}; }
  static CoalitionMask empty(int n) { return {std::vector<char>(n, 0)}; }
  static CoalitionMask from_bits(std::uint32_t bits, int n);

  int size() const { return static_cast<int>(included.size()); }
  bool operator()(int i) const { return included[i] != 0; }
  CoalitionMask with(int i) const;
  CoalitionMask without(int i) const;
  std::uint32_t bits() const;
};

/// All learnable state: N agent heads (D->C), the global head (D->C), the
/// decision-matrix logits (N x C), the two mixture logits, and the fusion
/// head MLP_phi (C->C).
struct ModelParams {
  int n_agents = 0;
  int n_classes = 0;
  int dim = 0;
  std::vector<MlpParams> agent_heads;
  MlpParams global_head;
  Matrix decision_logits;          // N x C
  Eigen::Vector2d mixture_logits;  // (agent-stream, global-stream)
  MlpParams fusion_head;

  /// W = softmax over all N*C decision logits jointly.
  Matrix decision_matrix() const {
    if (decision_logits.size() == 0) return decision_logits;
    return softmax_flat(decision_logits);
  }

  /// (w_agent, w_global) = softmax over the mixture logit pair.
  Eigen::Vector2d mixture_weights() const;

  long param_count() const;
  Vector flatten() const;
  void unflatten(const Vector& flat);
  static ModelParams zeros_like(const ModelParams& other);

  static ModelParams init(int n_agents, int n_classes, int dim,
                          int agent_hidden, int fusion_hidden, Rng& rng);
};

/// Per-case activation record for the full forward pass.
struct ForwardTape {
  std::vector<MlpTape> agent_tapes;
  MlpTape global_tape;
  MlpTape fusion_tape;
  Matrix h;        // N x C agent logits
  Vector global_logits;
  Vector aggregated;  // z_A
  Vector mixed;       // input to the fusion head
  Vector prediction;  // yhat
};

/// Row i holds agent i's class logits; rows are independent.
Matrix agent_forward(const ModelParams& params,
                     const std::vector<Vector>& agent_inputs,
                     std::vector<MlpTape>* tapes = nullptr);

/// z_{A,k} = sum over included agents of W_{i,k} * h_{i,k}. W is not
/// renormalized under masking; excluded agents contribute exactly zero.
Vector aggregate(const Matrix& h, const Matrix& decision_matrix,
                 const CoalitionMask& mask);

/// yhat = MLP_phi(w_A * z_A + w_G * global_head(x_global)).
Vector global_mix(const ModelParams& params, const Vector& aggregated,
                  const Vector& global_input, ForwardTape* tape = nullptr);

/// Full composition; the global stream is always on regardless of the mask.
Vector predict_coalition(const ModelParams& params, const EmbeddedCase& c,
                         const CoalitionMask& mask,
                         ForwardTape* tape = nullptr);

/// Centralized ablation: the prediction uses only the global stream
/// (equivalent to an empty coalition).
Vector centralized_forward(const ModelParams& params, const Vector& global_input);

}  // namespace comma
