#include "comma/mlp.hpp"

#include <cmath>
#include <sstream>

namespace comma {

long MlpParams::param_count() const {
  long n = 0;
  for (std::size_t l = 0; l < weights.size(); ++l)
    n += weights[l].size() + biases[l].size();
  return n;
}

MlpParams MlpParams::init(const std::vector<int>& widths, Rng& rng) {
  require(widths.size() >= 2, "MLP needs at least input and output widths");
  MlpParams p;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    int in = widths[l], out = widths[l + 1];
    require(in > 0 && out > 0, "MLP widths must be positive");
    double a = std::sqrt(6.0 / (in + out));
    Matrix w(out, in);
    for (int r = 0; r < out; ++r)
      for (int c = 0; c < in; ++c) w(r, c) = rng.uniform(-a, a);
    p.weights.push_back(std::move(w));
    p.biases.push_back(Vector::Zero(out));
  }
  return p;
}

MlpParams MlpParams::zeros(const std::vector<int>& widths) {
  MlpParams p;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    p.weights.push_back(Matrix::Zero(widths[l + 1], widths[l]));
    p.biases.push_back(Vector::Zero(widths[l + 1]));
  }
  return p;
}

MlpParams MlpParams::zeros_like(const MlpParams& other) {
  MlpParams p;
  for (std::size_t l = 0; l < other.weights.size(); ++l) {
    p.weights.push_back(Matrix::Zero(other.weights[l].rows(), other.weights[l].cols()));
    p.biases.push_back(Vector::Zero(other.biases[l].size()));
  }
  return p;
}

void MlpParams::add_scaled(const MlpParams& other, double scale) {
  for (std::size_t l = 0; l < weights.size(); ++l) {
    weights[l] += scale * other.weights[l];
    biases[l] += scale * other.biases[l];
  }
}

Vector mlp_forward(const MlpParams& params, const Vector& input, MlpTape* tape) {
  if (input.size() != params.input_dim()) {
    std::ostringstream os;
    os << "mlp_forward: input length " << input.size()
       << " does not match first layer width " << params.input_dim();
    throw ConfigError(os.str());
  }
  if (tape) {
    tape->input = input;
    tape->pre_activations.clear();
    tape->post_activations.clear();
  }
  Vector a = input;
  int last = params.num_layers() - 1;
  for (int l = 0; l <= last; ++l) {
    Vector z = params.weights[l] * a + params.biases[l];
    a = (l == last) ? z : z.cwiseMax(0.0);
    if (tape) {
      tape->pre_activations.push_back(z);
      tape->post_activations.push_back(a);
    }
  }
  return a;
}

Vector mlp_backward(const MlpParams& params, const MlpTape& tape,
                    const Vector& output_gradient, MlpParams& grads) {
  if (tape.pre_activations.size() != params.weights.size() || tape.input.size() == 0)
    throw ConfigError("mlp_backward: tape does not match parameters");
  int last = params.num_layers() - 1;
  if (output_gradient.size() != params.output_dim())
    throw ConfigError("mlp_backward: output_gradient length mismatch");
  Vector da = output_gradient;
  for (int l = last; l >= 0; --l) {
    Vector dz = da;
    if (l != last) {
      const Vector& z = tape.pre_activations[l];
      for (int i = 0; i < dz.size(); ++i)
        if (z(i) <= 0.0) dz(i) = 0.0;
    }
    const Vector& a_in = (l == 0) ? tape.input : tape.post_activations[l - 1];
    grads.weights[l].noalias() += dz * a_in.transpose();
    grads.biases[l] += dz;
    da = params.weights[l].transpose() * dz;
  }
  return da;
}

Matrix softmax_flat(const Matrix& logits) {
  require(logits.allFinite(), "softmax_flat: logits must be finite");
  double mx = logits.maxCoeff();
  Matrix e = (logits.array() - mx).exp();
  return e / e.sum();
}

Matrix softmax_flat_backward(const Matrix& softmax_out, const Matrix& grad_out) {
  double dot = (softmax_out.array() * grad_out.array()).sum();
  return (softmax_out.array() * (grad_out.array() - dot)).matrix();
}

double softplus(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

std::pair<Vector, double> bce_with_logits(const Vector& logits, const Vector& labels) {
  if (logits.size() != labels.size())
    throw InputError("bce_with_logits: logits/labels length mismatch");
  Vector losses(logits.size());
  for (int k = 0; k < logits.size(); ++k) {
    double y = labels(k);
    if (y != 0.0 && y != 1.0)
      throw InputError("bce_with_logits: labels must be 0 or 1");
    losses(k) = softplus(logits(k)) - y * logits(k);
  }
  double mean = logits.size() > 0 ? losses.mean() : 0.0;
  return {losses, mean};
}

Vector bce_with_logits_grad(const Vector& logits, const Vector& labels) {
  Vector g(logits.size());
  for (int k = 0; k < logits.size(); ++k) g(k) = sigmoid(logits(k)) - labels(k);
  return g;
}

AdamState AdamState::init(long dim, double learning_rate) {
  AdamState s;
  s.m = Vector::Zero(dim);
  s.v = Vector::Zero(dim);
  s.learning_rate = learning_rate;
  return s;
}

void adam_step(Vector& params, const Vector& grads, AdamState& state) {
  if (params.size() != grads.size() || params.size() != state.m.size())
    throw ConfigError("adam_step: parameter/gradient/state shape mismatch");
  state.step += 1;
  state.m = state.beta1 * state.m + (1.0 - state.beta1) * grads;
  state.v = state.beta2 * state.v.array().matrix() +
            (1.0 - state.beta2) * grads.array().square().matrix();
  double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  Vector mhat = state.m / bc1;
  Vector vhat = state.v / bc2;
  params -= state.learning_rate *
            (mhat.array() / (vhat.array().sqrt() + state.eps)).matrix();
}

double fd_check(const std::function<double(const Vector&)>& loss_fn,
                const Vector& params, const Vector& analytic_grad, double step) {
  require(params.size() == analytic_grad.size(),
          "fd_check: gradient shape mismatch");
  double worst = 0.0;
  Vector p = params;
  for (long i = 0; i < p.size(); ++i) {
    double saved = p(i);
    p(i) = saved + step;
    double lp = loss_fn(p);
    p(i) = saved - step;
    double lm = loss_fn(p);
    p(i) = saved;
    if (!std::isfinite(lp) || !std::isfinite(lm))
      throw ConfigError("fd_check: loss evaluated non-finite");
    double fd = (lp - lm) / (2.0 * step);
    double an = analytic_grad(i);
    double rel = std::abs(an - fd) / (std::abs(an) + std::abs(fd) + 1e-12);
    worst = std::max(worst, rel);
  }
  return worst;
}

double fd_check(const std::function<double(const Vector&)>& loss_fn,
                const std::function<Vector(const Vector&)>& grad_fn,
                const Vector& params, double step) {
  return fd_check(loss_fn, params, grad_fn(params), step);
}

void pack(const MlpParams& p, Vector& out, long& offset) {
  for (std::size_t l = 0; l < p.weights.size(); ++l) {
    const Matrix& w = p.weights[l];
    for (int r = 0; r < w.rows(); ++r)
      for (int c = 0; c < w.cols(); ++c) out(offset++) = w(r, c);
    const Vector& b = p.biases[l];
    for (int i = 0; i < b.size(); ++i) out(offset++) = b(i);
  }
}

void unpack(const Vector& in, MlpParams& p, long& offset) {
  for (std::size_t l = 0; l < p.weights.size(); ++l) {
    Matrix& w = p.weights[l];
    for (int r = 0; r < w.rows(); ++r)
      for (int c = 0; c < w.cols(); ++c) w(r, c) = in(offset++);
    Vector& b = p.biases[l];
    for (int i = 0; i < b.size(); ++i) b(i) = in(offset++);
  }
}

}  // namespace comma
