#include "comma/model.hpp"

#include <sstream>

namespace comma {

CoalitionMask CoalitionMask::from_bits(std::uint32_t bits, int n) {
  CoalitionMask m = empty(n);
  for (int i = 0; i < n; ++i)
    if (bits & (1u << i)) m.included[i] = 1;
  return m;
}

CoalitionMask CoalitionMask::with(int i) const {
  CoalitionMask m = *this;
  m.included[i] = 1;
  return m;
}

CoalitionMask CoalitionMask::without(int i) const {
  CoalitionMask m = *this;
  m.included[i] = 0;
  return m;
}

std::uint32_t CoalitionMask::bits() const {
  std::uint32_t b = 0;
  for (int i = 0; i < size(); ++i)
    if (included[i]) b |= (1u << i);
  return b;
}

Eigen::Vector2d ModelParams::mixture_weights() const {
  double mx = mixture_logits.maxCoeff();
  Eigen::Vector2d e = (mixture_logits.array() - mx).exp();
  return e / e.sum();
}

long ModelParams::param_count() const {
  long n = 0;
  for (const MlpParams& p : agent_heads) n += p.param_count();
  n += global_head.param_count();
  n += decision_logits.size();
  n += 2;
  n += fusion_head.param_count();
  return n;
}

Vector ModelParams::flatten() const {
  Vector out(param_count());
  long off = 0;
  for (const MlpParams& p : agent_heads) pack(p, out, off);
  pack(global_head, out, off);
  for (int i = 0; i < decision_logits.rows(); ++i)
    for (int k = 0; k < decision_logits.cols(); ++k) out(off++) = decision_logits(i, k);
  out(off++) = mixture_logits(0);
  out(off++) = mixture_logits(1);
  pack(fusion_head, out, off);
  return out;
}

void ModelParams::unflatten(const Vector& flat) {
  require(flat.size() == param_count(), "unflatten: flat vector length mismatch");
  long off = 0;
  for (MlpParams& p : agent_heads) unpack(flat, p, off);
  unpack(flat, global_head, off);
  for (int i = 0; i < decision_logits.rows(); ++i)
    for (int k = 0; k < decision_logits.cols(); ++k) decision_logits(i, k) = flat(off++);
  mixture_logits(0) = flat(off++);
  mixture_logits(1) = flat(off++);
  unpack(flat, fusion_head, off);
}

ModelParams ModelParams::zeros_like(const ModelParams& other) {
  ModelParams p;
  p.n_agents = other.n_agents;
  p.n_classes = other.n_classes;
  p.dim = other.dim;
  for (const MlpParams& h : other.agent_heads) p.agent_heads.push_back(MlpParams::zeros_like(h));
  p.global_head = MlpParams::zeros_like(other.global_head);
  p.decision_logits = Matrix::Zero(other.decision_logits.rows(), other.decision_logits.cols());
  p.mixture_logits.setZero();
  p.fusion_head = MlpParams::zeros_like(other.fusion_head);
  return p;
}

ModelParams ModelParams::init(int n_agents, int n_classes, int dim,
                              int agent_hidden, int fusion_hidden, Rng& rng) {
  require(n_agents >= 0 && n_classes > 0 && dim > 0, "ModelParams::init: bad sizes");
  ModelParams p;
  p.n_agents = n_agents;
  p.n_classes = n_classes;
  p.dim = dim;
  std::vector<int> head_widths = agent_hidden > 0
                                     ? std::vector<int>{dim, agent_hidden, n_classes}
                                     : std::vector<int>{dim, n_classes};
  for (int i = 0; i < n_agents; ++i) p.agent_heads.push_back(MlpParams::init(head_widths, rng));
  p.global_head = MlpParams::init(head_widths, rng);
  p.decision_logits = Matrix::Zero(n_agents, n_classes);
  p.mixture_logits.setZero();
  std::vector<int> fusion_widths = fusion_hidden > 0
                                       ? std::vector<int>{n_classes, fusion_hidden, n_classes}
                                       : std::vector<int>{n_classes, n_classes};
  p.fusion_head = MlpParams::init(fusion_widths, rng);
  return p;
}

Matrix agent_forward(const ModelParams& params,
                     const std::vector<Vector>& agent_inputs,
                     std::vector<MlpTape>* tapes) {
  if (static_cast<int>(agent_inputs.size()) != params.n_agents) {
    std::ostringstream os;
    os << "agent_forward: got " << agent_inputs.size() << " inputs for "
       << params.n_agents << " agents";
    throw ConfigError(os.str());
  }
  Matrix h(params.n_agents, params.n_classes);
  if (tapes) tapes->assign(params.n_agents, MlpTape{});
  for (int i = 0; i < params.n_agents; ++i) {
    Vector row = mlp_forward(params.agent_heads[i], agent_inputs[i],
                             tapes ? &(*tapes)[i] : nullptr);
    h.row(i) = row.transpose();
  }
  return h;
}

Vector aggregate(const Matrix& h, const Matrix& decision_matrix,
                 const CoalitionMask& mask) {
  require(h.rows() == decision_matrix.rows() && h.cols() == decision_matrix.cols(),
          "aggregate: h and W shape mismatch");
  require(mask.size() == h.rows(), "aggregate: mask length mismatch");
  Vector z = Vector::Zero(h.cols());
  for (int i = 0; i < h.rows(); ++i) {
    if (!mask(i)) continue;
    z += (decision_matrix.row(i).array() * h.row(i).array()).matrix().transpose();
  }
  return z;
}

Vector global_mix(const ModelParams& params, const Vector& aggregated,
                  const Vector& global_input, ForwardTape* tape) {
  Eigen::Vector2d w = params.mixture_weights();
  Vector g = mlp_forward(params.global_head, global_input,
                         tape ? &tape->global_tape : nullptr);
  Vector mixed = w(0) * aggregated + w(1) * g;
  Vector yhat = mlp_forward(params.fusion_head, mixed,
                            tape ? &tape->fusion_tape : nullptr);
  if (tape) {
    tape->global_logits = g;
    tape->aggregated = aggregated;
    tape->mixed = mixed;
    tape->prediction = yhat;
  }
  return yhat;
}

Vector predict_coalition(const ModelParams& params, const EmbeddedCase& c,
                         const CoalitionMask& mask, ForwardTape* tape) {
  Matrix h = agent_forward(params, c.agent_inputs, tape ? &tape->agent_tapes : nullptr);
  Vector z = aggregate(h, params.decision_matrix(), mask);
  if (tape) tape->h = h;
  return global_mix(params, z, c.global_input, tape);
}

Vector centralized_forward(const ModelParams& params, const Vector& global_input) {
  Vector z = Vector::Zero(params.n_classes);
  return global_mix(params, z, global_input, nullptr);
}

}  // namespace comma
