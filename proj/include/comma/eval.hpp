#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "comma/game.hpp"
#include "comma/model.hpp"

namespace comma {

/// Mann-Whitney AUC with half-credit for ties; nullopt when only one class
/// is present.
std::optional<double> auc(const std::vector<double>& scores,
                          const std::vector<int>& labels);

/// Class-specific decision thresholds fitted on training predictions only.
/// The per-class training score distribution is retained for the percentile
/// transform.
struct ThresholdState {
  Vector thresholds;                              // t_k, logit space
  std::vector<std::vector<double>> train_scores;  // sorted, per class
};

/// t_k maximizes Youden's J (TPR - FPR) over midpoints between consecutive
/// distinct sorted scores; ties break toward the smaller threshold.
/// Degenerate columns: all-negative -> +inf, all-positive -> -inf.
ThresholdState fit_thresholds(const std::vector<std::vector<double>>& scores_per_class,
                              const std::vector<std::vector<int>>& labels_per_class);

struct AccuracyResult {
  Vector per_class;
  double macro = 0.0;
};

/// mean_i of indicator(indicator(score > t_k) == y), per class then macro.
AccuracyResult accuracy(const std::vector<std::vector<double>>& scores_per_class,
                        const std::vector<std::vector<int>>& labels_per_class,
                        const Vector& thresholds);

/// 100 * (#train scores <= score) / (#train scores) for class k.
double percentile_transform(double score, int class_index, const ThresholdState& state);

struct MetricsSummary {
  std::vector<std::string> class_names;
  std::vector<std::optional<double>> auc_per_class;
  Vector accuracy_per_class;
  std::optional<double> macro_auc;
  double macro_accuracy = 0.0;

  nlohmann::json to_json() const;
};

struct AggregateStat {
  double mean = 0.0;
  double std_dev = 0.0;  // population
  int n_used = 0;
};

struct AggregatedMetrics {
  std::vector<std::string> class_names;
  std::vector<AggregateStat> auc_per_class;
  std::vector<AggregateStat> accuracy_per_class;
  AggregateStat macro_auc;
  AggregateStat macro_accuracy;

  nlohmann::json to_json() const;
};

/// Mean and population std across seeds; undefined metrics are excluded
/// pairwise with the surviving count reported.
AggregatedMetrics multi_seed_aggregate(const std::vector<MetricsSummary>& summaries);

struct AttributionClassEntry {
  double logit = 0.0;
  double score_percentile = 0.0;
  double threshold_percentile = 0.0;
  bool decision = false;
  std::vector<double> agent_shares;  // W_{i,k} h_{i,k} normalized over i; empty if undefined
  std::vector<double> phi_ema;       // Phi_ema[., k]
};

struct AttributionReport {
  std::string case_id;
  std::vector<AttributionClassEntry> per_class;

  nlohmann::json to_json(const std::vector<std::string>& class_names,
                         const std::vector<std::string>& agent_names) const;
  std::string render_text(const std::vector<std::string>& class_names,
                          const std::vector<std::string>& agent_names) const;
};

AttributionReport attribution_report(const ModelParams& params, const EmbeddedCase& c,
                                     const std::string& case_id,
                                     const ThresholdState& thresholds,
                                     const ShapleyState& shapley);

/// Full-coalition logits for every case, arranged per class.
std::vector<std::vector<double>> score_cases(const ModelParams& params,
                                             const std::vector<EmbeddedCase>& cases);
std::vector<std::vector<int>> labels_per_class(const std::vector<EmbeddedCase>& cases);

MetricsSummary evaluate(const ModelParams& params,
                        const std::vector<EmbeddedCase>& test_cases,
                        const ThresholdState& thresholds,
                        const std::vector<std::string>& class_names);

}  // namespace comma
