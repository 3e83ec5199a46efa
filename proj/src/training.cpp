#include "comma/training.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "comma/data.hpp"
#include "comma/embedding.hpp"
#include "comma/json_util.hpp"

namespace comma {

using nlohmann::json;

TrainConfig TrainConfig::preset(const std::string& name) {
  TrainConfig cfg;
  cfg.n_agents = 5;
  cfg.batch_size = 4;
  cfg.lambda_pg = 1.0;
  cfg.lambda_shap = 10.0;
  if (name == "hcc-like") {
    cfg.epochs = 1000;
    cfg.learning_rate = 5e-5;
  } else if (name == "mtb-like") {
    cfg.epochs = 30;
    cfg.learning_rate = 5e-3;
  } else {
    throw InputError("unknown preset: " + name + " (expected hcc-like or mtb-like)");
  }
  return cfg;
}

json TrainConfig::to_json() const {
  json j;
  j["n_agents"] = n_agents;
  j["n_classes"] = n_classes;
  j["dim"] = dim;
  j["agent_hidden"] = agent_hidden;
  j["fusion_hidden"] = fusion_hidden;
  j["epochs"] = epochs;
  j["batch_size"] = batch_size;
  j["learning_rate"] = learning_rate;
  j["lambda_pg"] = lambda_pg;
  j["lambda_shap"] = lambda_shap;
  j["ema_decay"] = ema_decay;
  j["mc_permutations"] = mc_permutations;
  j["shapley_interval"] = shapley_interval;
  j["log_interval"] = log_interval;
  j["seed"] = seed;
  j["centralized_only"] = centralized_only;
  j["no_decision_matrix"] = no_decision_matrix;
  j["no_contribution_losses"] = no_contribution_losses;
  return j;
}

TrainConfig TrainConfig::from_json(const json& j) {
  TrainConfig c;
  c.n_agents = j.at("n_agents").get<int>();
  c.n_classes = j.at("n_classes").get<int>();
  c.dim = j.at("dim").get<int>();
  c.agent_hidden = j.at("agent_hidden").get<int>();
  c.fusion_hidden = j.at("fusion_hidden").get<int>();
  c.epochs = j.at("epochs").get<int>();
  c.batch_size = j.at("batch_size").get<int>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.lambda_pg = j.at("lambda_pg").get<double>();
  c.lambda_shap = j.at("lambda_shap").get<double>();
  c.ema_decay = j.at("ema_decay").get<double>();
  c.mc_permutations = j.at("mc_permutations").get<int>();
  c.shapley_interval = j.at("shapley_interval").get<int>();
  c.log_interval = j.at("log_interval").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.centralized_only = j.at("centralized_only").get<bool>();
  c.no_decision_matrix = j.at("no_decision_matrix").get<bool>();
  c.no_contribution_losses = j.at("no_contribution_losses").get<bool>();
  return c;
}

namespace {

Matrix effective_decision_matrix(const ModelParams& params, const TrainConfig& cfg) {
  if (cfg.no_decision_matrix)
    return Matrix::Constant(params.n_agents, params.n_classes,
                            1.0 / (params.n_agents * params.n_classes));
  return params.decision_matrix();
}

}  // namespace

TotalLossResult total_loss(const ModelParams& params,
                           const std::vector<EmbeddedCase>& batch,
                           const Matrix& phi_ema, const TrainConfig& cfg,
                           ModelParams* grads) {
  require(!batch.empty(), "total_loss: empty batch");
  int n = params.n_agents, c = params.n_classes;
  int b = static_cast<int>(batch.size());
  Matrix w = effective_decision_matrix(params, cfg);
  Eigen::Vector2d mix = params.mixture_weights();
  CoalitionMask mask = cfg.centralized_only ? CoalitionMask::empty(n) : CoalitionMask::full(n);

  bool use_game = !cfg.centralized_only && !cfg.no_contribution_losses && n > 0;
  double lambda_pg = use_game ? cfg.lambda_pg : 0.0;
  double lambda_shap = use_game ? cfg.lambda_shap : 0.0;

  TotalLossResult result;
  double bce_sum = 0.0;
  Matrix dw_from_bce = Matrix::Zero(n, c);
  Eigen::Vector2d dmix_weights = Eigen::Vector2d::Zero();

  for (const EmbeddedCase& cs : batch) {
    ForwardTape tape;
    Matrix h = agent_forward(params, cs.agent_inputs, grads ? &tape.agent_tapes : nullptr);
    Vector z = aggregate(h, w, mask);
    Vector yhat = global_mix(params, z, cs.global_input, &tape);
    tape.h = h;
    auto [losses, mean] = bce_with_logits(yhat, cs.labels);
    bce_sum += mean;
    if (!grads) continue;

    // d(batch BCE)/d(yhat) for this case
    Vector dy = bce_with_logits_grad(yhat, cs.labels) / (static_cast<double>(b) * c);
    Vector dmixed = mlp_backward(params.fusion_head, tape.fusion_tape, dy, grads->fusion_head);
    Vector dz = mix(0) * dmixed;
    Vector dg = mix(1) * dmixed;
    dmix_weights(0) += dmixed.dot(tape.aggregated);
    dmix_weights(1) += dmixed.dot(tape.global_logits);
    mlp_backward(params.global_head, tape.global_tape, dg, grads->global_head);
    for (int i = 0; i < n; ++i) {
      if (!mask(i)) continue;
      Vector dh = (w.row(i).transpose().array() * dz.array()).matrix();
      mlp_backward(params.agent_heads[i], tape.agent_tapes[i], dh, grads->agent_heads[i]);
      dw_from_bce.row(i) += (h.row(i).transpose().array() * dz.array()).matrix().transpose();
    }
  }

  result.breakdown.bce = bce_sum / b;

  double pg = 0.0, shap = 0.0;
  Matrix dw_total = dw_from_bce;
  if (lambda_pg > 0.0) {
    RewardAdvantage ra = rewards_and_advantage(params, batch);
    result.advantage = ra.advantage;
    pg = policy_gradient_loss(w, ra.advantage);
    if (grads) dw_total += lambda_pg * policy_gradient_loss_grad_w(w, ra.advantage);
  }
  if (lambda_shap > 0.0) {
    require(phi_ema.rows() == n && phi_ema.cols() == c,
            "total_loss: Shapley target shape mismatch");
    shap = kl_loss(w, phi_ema);
    if (grads) dw_total += lambda_shap * kl_loss_grad_w(w, phi_ema);
  }
  result.breakdown.pg = pg;
  result.breakdown.shap = shap;
  result.breakdown.total = result.breakdown.bce + cfg.lambda_pg * pg + cfg.lambda_shap * shap;

  if (grads) {
    // mixture logits through the pair softmax
    double dot = mix(0) * dmix_weights(0) + mix(1) * dmix_weights(1);
    grads->mixture_logits(0) += mix(0) * (dmix_weights(0) - dot);
    grads->mixture_logits(1) += mix(1) * (dmix_weights(1) - dot);
    if (!cfg.no_decision_matrix && n > 0)
      grads->decision_logits += softmax_flat_backward(w, dw_total);
  }
  return result;
}

double total_loss_value(const ModelParams& params,
                        const std::vector<EmbeddedCase>& batch,
                        const Matrix& advantage_frozen, const Matrix& phi_frozen,
                        const TrainConfig& cfg) {
  int n = params.n_agents, c = params.n_classes;
  int b = static_cast<int>(batch.size());
  Matrix w = effective_decision_matrix(params, cfg);
  CoalitionMask mask = cfg.centralized_only ? CoalitionMask::empty(n) : CoalitionMask::full(n);
  double bce = 0.0;
  for (const EmbeddedCase& cs : batch) {
    Vector yhat = predict_coalition(params, cs, mask);
    bce += bce_with_logits(yhat, cs.labels).second;
  }
  bce /= b;
  double pg = advantage_frozen.size() > 0 ? policy_gradient_loss(w, advantage_frozen) : 0.0;
  double shap = phi_frozen.size() > 0 ? kl_loss(w, phi_frozen) : 0.0;
  return bce + cfg.lambda_pg * pg + cfg.lambda_shap * shap;
}

namespace {

json adam_to_json(const AdamState& s) {
  json j;
  j["m"] = to_json(s.m);
  j["v"] = to_json(s.v);
  j["step"] = s.step;
  j["beta1"] = s.beta1;
  j["beta2"] = s.beta2;
  j["eps"] = s.eps;
  j["learning_rate"] = s.learning_rate;
  return j;
}

AdamState adam_from_json(const json& j) {
  AdamState s;
  s.m = vector_from_json(j.at("m"));
  s.v = vector_from_json(j.at("v"));
  s.step = j.at("step").get<long long>();
  s.beta1 = j.at("beta1").get<double>();
  s.beta2 = j.at("beta2").get<double>();
  s.eps = j.at("eps").get<double>();
  s.learning_rate = j.at("learning_rate").get<double>();
  return s;
}

json shapley_to_json(const ShapleyState& s) {
  json j;
  j["phi_instant"] = to_json(s.phi_instant);
  j["phi_ema"] = to_json(s.phi_ema);
  j["decay"] = s.decay;
  j["sample_budget"] = s.sample_budget;
  j["initialized"] = s.initialized;
  return j;
}

ShapleyState shapley_from_json(const json& j) {
  ShapleyState s;
  s.phi_instant = matrix_from_json(j.at("phi_instant"));
  s.phi_ema = matrix_from_json(j.at("phi_ema"));
  s.decay = j.at("decay").get<double>();
  s.sample_budget = j.at("sample_budget").get<int>();
  s.initialized = j.at("initialized").get<bool>();
  return s;
}

ModelParams model_skeleton(const TrainConfig& cfg) {
  Rng rng(0);
  return ModelParams::init(cfg.n_agents, cfg.n_classes, cfg.dim, cfg.agent_hidden,
                           cfg.fusion_hidden, rng);
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  json j;
  j["version"] = ck.version;
  j["config"] = ck.config.to_json();
  j["params"] = to_json(ck.model.flatten());
  j["adam"] = adam_to_json(ck.adam);
  j["shapley"] = shapley_to_json(ck.shapley);
  j["step"] = ck.step;
  j["epoch"] = ck.epoch;
  std::ostringstream hx;
  hx << std::hex << fnv1a64(j.dump());
  j["digest"] = hx.str();
  std::ofstream out(path);
  if (!out) throw InputError("cannot write checkpoint: " + path);
  out << j.dump(2) << "\n";
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open checkpoint: " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw InputError("checkpoint integrity failure (unparseable): " + path);
  }
  if (!j.contains("digest")) throw InputError("checkpoint integrity failure (no digest): " + path);
  std::string digest = j["digest"].get<std::string>();
  j.erase("digest");
  std::ostringstream hx;
  hx << std::hex << fnv1a64(j.dump());
  if (hx.str() != digest)
    throw InputError("checkpoint integrity failure (digest mismatch): " + path);
  int version = j.at("version").get<int>();
  if (version != 1)
    throw InputError("unsupported checkpoint version " + std::to_string(version));
  Checkpoint ck;
  ck.version = version;
  ck.config = TrainConfig::from_json(j.at("config"));
  ck.model = model_skeleton(ck.config);
  ck.model.unflatten(vector_from_json(j.at("params")));
  ck.adam = adam_from_json(j.at("adam"));
  ck.shapley = shapley_from_json(j.at("shapley"));
  ck.step = j.at("step").get<long long>();
  ck.epoch = j.at("epoch").get<int>();
  return ck;
}

Checkpoint train(const TrainConfig& cfg, const std::vector<EmbeddedCase>& cases,
                 const TraceSink& trace, const Checkpoint* resume) {
  require(!cases.empty(), "train: empty training set");
  require(cfg.batch_size > 0 && cfg.epochs > 0, "train: epochs and batch_size must be positive");

  Checkpoint ck;
  if (resume) {
    ck = *resume;
  } else {
    ck.config = cfg;
    Rng init_rng = Rng::substream(cfg.seed, "init");
    ck.model = ModelParams::init(cfg.n_agents, cfg.n_classes, cfg.dim,
                                 cfg.agent_hidden, cfg.fusion_hidden, init_rng);
    ck.adam = AdamState::init(ck.model.param_count(), cfg.learning_rate);
    ck.shapley.decay = cfg.ema_decay;
    ck.shapley.sample_budget = cfg.effective_permutations();
  }

  bool use_game = !cfg.centralized_only && cfg.n_agents > 0;
  std::vector<int> order(cases.size());

  for (int epoch = ck.epoch; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng = Rng::substream(cfg.seed, "shuffle", static_cast<std::uint64_t>(epoch));
    shuffle_rng.shuffle(order);

    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      std::vector<EmbeddedCase> batch;
      for (std::size_t i = start; i < std::min(order.size(), start + cfg.batch_size); ++i)
        batch.push_back(cases[order[i]]);

      if (use_game && (ck.step % cfg.shapley_interval == 0 || !ck.shapley.initialized)) {
        Rng shap_rng = Rng::substream(cfg.seed, "shapley", static_cast<std::uint64_t>(ck.step));
        Matrix phi = shapley_mc(ck.model, batch, cfg.effective_permutations(), shap_rng);
        ema_update(ck.shapley, phi);
      }

      ModelParams grads = ModelParams::zeros_like(ck.model);
      TotalLossResult res = total_loss(ck.model, batch, ck.shapley.phi_ema, cfg, &grads);
      const LossBreakdown& lb = res.breakdown;
      if (!std::isfinite(lb.total)) {
        std::ostringstream os;
        os << "training aborted: non-finite loss at step " << ck.step << " (bce=" << lb.bce
           << ", pg=" << lb.pg << ", shap=" << lb.shap << ")";
        throw ConfigError(os.str());
      }

      Vector flat = ck.model.flatten();
      Vector g = grads.flatten();
      if (!g.allFinite()) {
        std::ostringstream os;
        os << "training aborted: non-finite gradient at step " << ck.step;
        throw ConfigError(os.str());
      }
      adam_step(flat, g, ck.adam);
      ck.model.unflatten(flat);

      if (trace && (ck.step % cfg.log_interval == 0)) {
        json rec;
        rec["step"] = ck.step;
        rec["epoch"] = epoch;
        rec["bce"] = lb.bce;
        rec["pg_loss"] = lb.pg;
        rec["shap_loss"] = lb.shap;
        rec["total"] = lb.total;
        if (res.advantage.size() > 0) rec["advantage"] = to_json(res.advantage);
        Matrix w = effective_decision_matrix(ck.model, cfg);
        rec["W"] = to_json(w);
        if (ck.shapley.initialized) {
          rec["phi_instant"] = to_json(ck.shapley.phi_instant);
          rec["phi_ema"] = to_json(ck.shapley.phi_ema);
          rec["kl"] = kl_loss(w, ck.shapley.phi_ema);
        }
        trace(rec);
      }
      ++ck.step;
    }
    ck.epoch = epoch + 1;
  }
  return ck;
}

std::vector<EmbeddedCase> embed_dataset(const Dataset& ds, Provider* provider,
                                        EmbeddingCache* cache) {
  std::vector<EmbeddedCase> out;
  out.reserve(ds.cases.size());
  for (const Case& c : ds.cases) {
    EmbeddedCase e;
    e.labels = c.labels.cast<double>();
    if (ds.vector_mode) {
      e.agent_inputs = c.partition_vecs;
      e.global_input = *c.global_vec;
    } else {
      require(provider != nullptr, "embed_dataset: text-mode dataset needs a provider");
      auto embed_one = [&](const std::string& text) {
        if (cache) return cache->get_or_compute(text, *provider).values;
        return provider->embed({text}).front().values;
      };
      for (const std::string& t : c.partition_texts) e.agent_inputs.push_back(embed_one(t));
      e.global_input = embed_one(*c.global_text);
    }
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace comma
