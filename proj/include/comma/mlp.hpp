#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "comma/rng.hpp"
#include "comma/types.hpp"

namespace comma {

/// Dense MLP parameters: rectifier on hidden layers, identity on the output
/// layer. Weight matrices are (out x in).
struct MlpParams {
  std::vector<Matrix> weights;
  std::vector<Vector> biases;

  int input_dim() const { return static_cast<int>(weights.front().cols()); }
  int output_dim() const { return static_cast<int>(weights.back().rows()); }
  int num_layers() const { return static_cast<int>(weights.size()); }
  long param_count() const;

  /// widths = {in, hidden..., out}; weights drawn uniform in [-a, a] with
  /// a = sqrt(6 / (fan_in + fan_out)), biases zero.
  static MlpParams init(const std::vector<int>& widths, Rng& rng);
  static MlpParams zeros(const std::vector<int>& widths);
  static MlpParams zeros_like(const MlpParams& other);

  void add_scaled(const MlpParams& other, double scale);
};

/// Activation record from one forward pass; suffices for exact gradients.
struct MlpTape {
  Vector input;
  std::vector<Vector> pre_activations;   // z_l per layer
  std::vector<Vector> post_activations;  // a_l per layer (a_last == output)
};

Vector mlp_forward(const MlpParams& params, const Vector& input,
                   MlpTape* tape = nullptr);

/// Accumulates parameter gradients into `grads` (+=) and returns the input
/// gradient. `grads` must be zeros_like(params) shaped.
Vector mlp_backward(const MlpParams& params, const MlpTape& tape,
                    const Vector& output_gradient, MlpParams& grads);

/// Softmax over every entry of the matrix jointly; the result sums to 1.
Matrix softmax_flat(const Matrix& logits);

/// Chain rule through softmax_flat: given dL/dW, returns dL/dlogits.
Matrix softmax_flat_backward(const Matrix& softmax_out, const Matrix& grad_out);

/// Per-class binary cross-entropy in softplus form, plus the mean.
/// loss_k = softplus(z_k) - y_k * z_k.
std::pair<Vector, double> bce_with_logits(const Vector& logits,
                                          const Vector& labels);

/// d(loss_k)/d(z_k) = sigmoid(z_k) - y_k.
Vector bce_with_logits_grad(const Vector& logits, const Vector& labels);

double softplus(double x);
double sigmoid(double x);

/// Adam over one flat parameter vector.
struct AdamState {
  Vector m;
  Vector v;
  long long step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double learning_rate = 1e-3;

  static AdamState init(long dim, double learning_rate);
};

void adam_step(Vector& params, const Vector& grads, AdamState& state);

/// Max relative error between an analytic gradient and central finite
/// differences of `loss_fn` at `params`.
double fd_check(const std::function<double(const Vector&)>& loss_fn,
                const Vector& params, const Vector& analytic_grad,
                double step);

/// Computes the full analytic gradient of `loss_fn`-style functions is the
/// caller's job; this overload derives the analytic gradient via a supplied
/// gradient function.
double fd_check(const std::function<double(const Vector&)>& loss_fn,
                const std::function<Vector(const Vector&)>& grad_fn,
                const Vector& params, double step);

// Flat-vector packing for whole parameter sets.
void pack(const MlpParams& p, Vector& out, long& offset);
void unpack(const Vector& in, MlpParams& p, long& offset);

}  // namespace comma
