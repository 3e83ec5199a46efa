#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "comma/rng.hpp"
#include "comma/types.hpp"

namespace comma {

/// One decision instance. Payloads are either raw text or precomputed
/// D-vectors; a dataset never mixes the two modes.
struct Case {
  std::string id;
  std::vector<std::string> partition_texts;
  std::vector<Vector> partition_vecs;
  std::optional<std::string> global_text;
  std::optional<Vector> global_vec;
  Eigen::VectorXi labels;
};

struct Dataset {
  std::vector<Case> cases;
  std::vector<std::string> partition_names;
  std::vector<std::string> class_names;
  bool vector_mode = false;

  int n_agents() const { return static_cast<int>(partition_names.size()); }
  int n_classes() const { return static_cast<int>(class_names.size()); }
  int dim() const;  // vector mode only
};

struct SplitSpec {
  double train_fraction = 0.75;
  std::uint64_t seed = 0;
};

struct SynthSpec {
  int n_cases = 200;
  int n_agents = 5;
  int n_classes = 4;
  int dim = 32;
  // informative_map[k] lists (agent, alpha) pairs planted for class k.
  std::vector<std::vector<std::pair<int, double>>> informative_map;
  double noise_std = 0.5;
  std::uint64_t seed = 0;
};

/// Separator used when the global payload is absent in text mode.
inline constexpr const char* kGlobalSeparator = "\n\n";

Dataset load_dataset(const std::string& path, int expected_agents,
                     int expected_classes);
void save_dataset(const Dataset& ds, const std::string& path);

/// Greedy rarest-label-first iterative stratification; deterministic under
/// the spec seed.
std::pair<Dataset, Dataset> stratified_split(const Dataset& ds,
                                             const SplitSpec& spec);

struct SplitManifest {
  std::uint64_t seed = 0;
  std::vector<std::string> train_ids;
  std::vector<std::string> test_ids;
};

void save_split_manifest(const SplitManifest& m, const std::string& path);
SplitManifest load_split_manifest(const std::string& path);
std::pair<Dataset, Dataset> apply_split_manifest(const Dataset& ds,
                                                 const SplitManifest& m);

/// Vector-mode dataset with planted per-agent informativeness. Agent i's
/// vector is sum_k alpha_{i,k} * (2 y_k - 1) * u_k + noise, with u_k fixed
/// orthonormal class directions; the global payload is the mean of the
/// partition vectors.
Dataset synth_generate(const SynthSpec& spec);

/// Fills informative_map with one planted agent per class (class k -> agent
/// k mod N) at the given strength.
void plant_one_agent_per_class(SynthSpec& spec, double alpha);

}  // namespace comma
