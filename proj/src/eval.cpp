#include "comma/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace comma {

using nlohmann::json;

std::optional<double> auc(const std::vector<double>& scores,
                          const std::vector<int>& labels) {
  if (scores.size() != labels.size())
    throw InputError("auc: scores/labels length mismatch");
  std::size_t n = scores.size();
  std::size_t n_pos = 0;
  for (int y : labels) {
    if (y != 0 && y != 1) throw InputError("auc: labels must be 0 or 1");
    n_pos += y;
  }
  std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) return std::nullopt;

  // rank-sum with average ranks over ties
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double pos_rank_sum = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && scores[idx[j]] == scores[idx[i]]) ++j;
    double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
    for (std::size_t t = i; t < j; ++t)
      if (labels[idx[t]] == 1) pos_rank_sum += avg_rank;
    i = j;
  }
  double u = pos_rank_sum - 0.5 * n_pos * (n_pos + 1);
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

ThresholdState fit_thresholds(const std::vector<std::vector<double>>& scores_per_class,
                              const std::vector<std::vector<int>>& labels_per_class) {
  require(scores_per_class.size() == labels_per_class.size(),
          "fit_thresholds: class count mismatch");
  int c = static_cast<int>(scores_per_class.size());
  ThresholdState state;
  state.thresholds.resize(c);
  state.train_scores.resize(c);
  for (int k = 0; k < c; ++k) {
    const auto& scores = scores_per_class[k];
    const auto& labels = labels_per_class[k];
    if (scores.empty()) throw ConfigError("fit_thresholds: empty training column");
    if (scores.size() != labels.size())
      throw InputError("fit_thresholds: scores/labels length mismatch");

    state.train_scores[k] = scores;
    std::sort(state.train_scores[k].begin(), state.train_scores[k].end());

    std::size_t n_pos = 0;
    for (int y : labels) n_pos += y;
    std::size_t n_neg = labels.size() - n_pos;
    if (n_pos == 0) {
      state.thresholds(k) = std::numeric_limits<double>::infinity();
      continue;
    }
    if (n_neg == 0) {
      state.thresholds(k) = -std::numeric_limits<double>::infinity();
      continue;
    }

    std::vector<double> distinct = state.train_scores[k];
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    std::vector<double> candidates;
    for (std::size_t i = 0; i + 1 < distinct.size(); ++i)
      candidates.push_back(0.5 * (distinct[i] + distinct[i + 1]));
    if (candidates.empty()) candidates.push_back(distinct.front());

    double best_j = -std::numeric_limits<double>::infinity();
    double best_t = candidates.front();
    for (double t : candidates) {
      std::size_t tp = 0, fp = 0;
      for (std::size_t i = 0; i < scores.size(); ++i) {
        if (scores[i] > t) {
          if (labels[i] == 1)
            ++tp;
          else
            ++fp;
        }
      }
      double j = static_cast<double>(tp) / n_pos - static_cast<double>(fp) / n_neg;
      if (j > best_j) {  // ties keep the smaller threshold (candidates ascend)
        best_j = j;
        best_t = t;
      }
    }
    state.thresholds(k) = best_t;
  }
  return state;
}

AccuracyResult accuracy(const std::vector<std::vector<double>>& scores_per_class,
                        const std::vector<std::vector<int>>& labels_per_class,
                        const Vector& thresholds) {
  if (scores_per_class.size() != labels_per_class.size() ||
      static_cast<int>(scores_per_class.size()) != thresholds.size())
    throw InputError("accuracy: shape mismatch");
  int c = static_cast<int>(scores_per_class.size());
  AccuracyResult out;
  out.per_class.resize(c);
  for (int k = 0; k < c; ++k) {
    const auto& scores = scores_per_class[k];
    const auto& labels = labels_per_class[k];
    if (scores.size() != labels.size())
      throw InputError("accuracy: scores/labels length mismatch");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      int decision = scores[i] > thresholds(k) ? 1 : 0;
      correct += (decision == labels[i]);
    }
    out.per_class(k) = scores.empty() ? 0.0 : static_cast<double>(correct) / scores.size();
  }
  out.macro = out.per_class.mean();
  return out;
}

double percentile_transform(double score, int class_index, const ThresholdState& state) {
  require(class_index >= 0 && class_index < static_cast<int>(state.train_scores.size()),
          "percentile_transform: class index out of range");
  const auto& dist = state.train_scores[class_index];
  require(!dist.empty(), "percentile_transform: empty training distribution");
  auto upper = std::upper_bound(dist.begin(), dist.end(), score);
  return 100.0 * static_cast<double>(upper - dist.begin()) / dist.size();
}

json MetricsSummary::to_json() const {
  json per_class = json::object();
  for (std::size_t k = 0; k < class_names.size(); ++k) {
    json entry;
    entry["auc"] = auc_per_class[k] ? json(*auc_per_class[k]) : json(nullptr);
    entry["accuracy"] = accuracy_per_class(static_cast<int>(k));
    per_class[class_names[k]] = entry;
  }
  json j;
  j["per_class"] = per_class;
  j["macro"] = {{"auc", macro_auc ? json(*macro_auc) : json(nullptr)},
                {"accuracy", macro_accuracy}};
  return j;
}

namespace {

AggregateStat aggregate_values(const std::vector<std::optional<double>>& vals) {
  AggregateStat s;
  double sum = 0.0;
  for (const auto& v : vals)
    if (v) {
      sum += *v;
      ++s.n_used;
    }
  if (s.n_used == 0) return s;
  s.mean = sum / s.n_used;
  double ss = 0.0;
  for (const auto& v : vals)
    if (v) ss += (*v - s.mean) * (*v - s.mean);
  s.std_dev = std::sqrt(ss / s.n_used);
  return s;
}

json stat_to_json(const AggregateStat& s) {
  json j;
  if (s.n_used == 0) {
    j["mean"] = nullptr;
    j["std"] = nullptr;
  } else {
    j["mean"] = s.mean;
    j["std"] = s.std_dev;
  }
  j["n_seeds"] = s.n_used;
  return j;
}

}  // namespace

json AggregatedMetrics::to_json() const {
  json per_class = json::object();
  for (std::size_t k = 0; k < class_names.size(); ++k) {
    per_class[class_names[k]] = {{"auc", stat_to_json(auc_per_class[k])},
                                 {"accuracy", stat_to_json(accuracy_per_class[k])}};
  }
  json j;
  j["per_class"] = per_class;
  j["macro"] = {{"auc", stat_to_json(macro_auc)}, {"accuracy", stat_to_json(macro_accuracy)}};
  return j;
}

AggregatedMetrics multi_seed_aggregate(const std::vector<MetricsSummary>& summaries) {
  require(!summaries.empty(), "multi_seed_aggregate: need at least one summary");
  const auto& names = summaries.front().class_names;
  for (const auto& s : summaries)
    if (s.class_names != names)
      throw InputError("multi_seed_aggregate: summaries carry different class sets");

  AggregatedMetrics out;
  out.class_names = names;
  for (std::size_t k = 0; k < names.size(); ++k) {
    std::vector<std::optional<double>> aucs, accs;
    for (const auto& s : summaries) {
      aucs.push_back(s.auc_per_class[k]);
      accs.push_back(s.accuracy_per_class(static_cast<int>(k)));
    }
    out.auc_per_class.push_back(aggregate_values(aucs));
    out.accuracy_per_class.push_back(aggregate_values(accs));
  }
  std::vector<std::optional<double>> m_auc, m_acc;
  for (const auto& s : summaries) {
    m_auc.push_back(s.macro_auc);
    m_acc.push_back(s.macro_accuracy);
  }
  out.macro_auc = aggregate_values(m_auc);
  out.macro_accuracy = aggregate_values(m_acc);
  return out;
}

AttributionReport attribution_report(const ModelParams& params, const EmbeddedCase& c,
                                     const std::string& case_id,
                                     const ThresholdState& thresholds,
                                     const ShapleyState& shapley) {
  AttributionReport report;
  report.case_id = case_id;
  Matrix h = agent_forward(params, c.agent_inputs);
  Matrix w = params.decision_matrix();
  Vector yhat = predict_coalition(params, c, CoalitionMask::full(params.n_agents));

  for (int k = 0; k < params.n_classes; ++k) {
    AttributionClassEntry e;
    e.logit = yhat(k);
    e.score_percentile = percentile_transform(yhat(k), k, thresholds);
    double t = thresholds.thresholds(k);
    if (std::isinf(t))
      e.threshold_percentile = t > 0 ? 100.0 : 0.0;
    else
      e.threshold_percentile = percentile_transform(t, k, thresholds);
    e.decision = yhat(k) > t;

    Vector terms = (w.col(k).array() * h.col(k).array()).matrix();
    double denom = terms.sum();
    if (denom != 0.0) {
      e.agent_shares.resize(params.n_agents);
      for (int i = 0; i < params.n_agents; ++i) e.agent_shares[i] = terms(i) / denom;
    }
    if (shapley.initialized) {
      e.phi_ema.resize(params.n_agents);
      for (int i = 0; i < params.n_agents; ++i) e.phi_ema[i] = shapley.phi_ema(i, k);
    }
    report.per_class.push_back(std::move(e));
  }
  return report;
}

json AttributionReport::to_json(const std::vector<std::string>& class_names,
                                const std::vector<std::string>& agent_names) const {
  json classes = json::object();
  for (std::size_t k = 0; k < per_class.size(); ++k) {
    const auto& e = per_class[k];
    json entry;
    entry["logit"] = e.logit;
    entry["score_percentile"] = e.score_percentile;
    entry["threshold_percentile"] = e.threshold_percentile;
    entry["decision"] = e.decision;
    if (!e.agent_shares.empty()) {
      json shares = json::object();
      for (std::size_t i = 0; i < e.agent_shares.size(); ++i)
        shares[agent_names[i]] = e.agent_shares[i];
      entry["agent_shares"] = shares;
    } else {
      entry["agent_shares"] = nullptr;
    }
    if (!e.phi_ema.empty()) {
      json phi = json::object();
      for (std::size_t i = 0; i < e.phi_ema.size(); ++i) phi[agent_names[i]] = e.phi_ema[i];
      entry["phi_ema"] = phi;
    }
    classes[class_names[k]] = entry;
  }
  json j;
  j["id"] = case_id;
  j["classes"] = classes;
  return j;
}

std::string AttributionReport::render_text(const std::vector<std::string>& class_names,
                                           const std::vector<std::string>& agent_names) const {
  std::ostringstream os;
  os << "Case " << case_id << "\n";
  for (std::size_t k = 0; k < per_class.size(); ++k) {
    const auto& e = per_class[k];
    os << "  " << class_names[k] << " scored at " << e.score_percentile
       << "th percentile; cutoff at " << e.threshold_percentile << "th percentile; decision "
       << (e.decision ? "positive" : "negative") << "\n";
    if (!e.agent_shares.empty()) {
      std::vector<std::size_t> order(e.agent_shares.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return e.agent_shares[a] > e.agent_shares[b];
      });
      os << "    top contributing agents:";
      for (std::size_t r = 0; r < std::min<std::size_t>(3, order.size()); ++r)
        os << " " << agent_names[order[r]] << " (" << e.agent_shares[order[r]] << ")";
      os << "\n";
    }
  }
  return os.str();
}

std::vector<std::vector<double>> score_cases(const ModelParams& params,
                                             const std::vector<EmbeddedCase>& cases) {
  std::vector<std::vector<double>> scores(params.n_classes);
  CoalitionMask full = CoalitionMask::full(params.n_agents);
  for (const EmbeddedCase& c : cases) {
    Vector yhat = predict_coalition(params, c, full);
    for (int k = 0; k < params.n_classes; ++k) scores[k].push_back(yhat(k));
  }
  return scores;
}

std::vector<std::vector<int>> labels_per_class(const std::vector<EmbeddedCase>& cases) {
  if (cases.empty()) return {};
  std::vector<std::vector<int>> labels(cases.front().labels.size());
  for (const EmbeddedCase& c : cases)
    for (int k = 0; k < c.labels.size(); ++k)
      labels[k].push_back(static_cast<int>(c.labels(k)));
  return labels;
}

MetricsSummary evaluate(const ModelParams& params,
                        const std::vector<EmbeddedCase>& test_cases,
                        const ThresholdState& thresholds,
                        const std::vector<std::string>& class_names) {
  MetricsSummary s;
  s.class_names = class_names;
  auto scores = score_cases(params, test_cases);
  auto labels = labels_per_class(test_cases);
  double auc_sum = 0.0;
  int auc_n = 0;
  for (int k = 0; k < params.n_classes; ++k) {
    auto a = auc(scores[k], labels[k]);
    s.auc_per_class.push_back(a);
    if (a) {
      auc_sum += *a;
      ++auc_n;
    }
  }
  s.macro_auc = auc_n > 0 ? std::optional<double>(auc_sum / auc_n) : std::nullopt;
  AccuracyResult acc = accuracy(scores, labels, thresholds.thresholds);
  s.accuracy_per_class = acc.per_class;
  s.macro_accuracy = acc.macro;
  return s;
}

}  // namespace comma
