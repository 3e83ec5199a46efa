// comma: contribution-aware multi-agent classification pipeline.
//
// Subcommands: synth | train | eval | attribute | shapley-audit.
// Settings resolve with precedence flags > config file > defaults; the config
// file is flat "key = value" text with [section] headers.

#include "comma/data.hpp"
#include "comma/embedding.hpp"
#include "comma/eval.hpp"
#include "comma/game.hpp"
#include "comma/training.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

using namespace comma;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// ---------------------------------------------------------------------------
// Config file: flat key-value pairs grouped by [section]; keys are stored as
// "section.key" ("" section for keys above the first header).

struct KvConfig {
  std::map<std::string, std::string> values;

  static KvConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("config file not found: " + path);
    KvConfig cfg;
    std::string line, section;
    int line_no = 0;
    auto trim = [](std::string s) {
      std::size_t b = s.find_first_not_of(" \t\r");
      std::size_t e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    while (std::getline(in, line)) {
      ++line_no;
      std::string t = trim(line);
      if (t.empty() || t[0] == '#' || t[0] == ';') continue;
      if (t.front() == '[') {
        if (t.back() != ']')
          throw InputError(path + ":" + std::to_string(line_no) + ": malformed section header");
        section = trim(t.substr(1, t.size() - 2));
        continue;
      }
      std::size_t eq = t.find('=');
      if (eq == std::string::npos)
        throw InputError(path + ":" + std::to_string(line_no) + ": expected key = value");
      std::string key = trim(t.substr(0, eq));
      std::string value = trim(t.substr(eq + 1));
      if (key.empty())
        throw InputError(path + ":" + std::to_string(line_no) + ": empty key");
      cfg.values[section.empty() ? key : section + "." + key] = value;
    }
    return cfg;
  }

  bool has(const std::string& key) const { return values.count(key) > 0; }
  const std::string& at(const std::string& key) const { return values.at(key); }
};

template <typename T>
void parse_into(const std::string& text, const std::string& key, T& out) {
  std::istringstream in(text);
  in >> out;
  if (in.fail()) throw InputError("config key " + key + ": cannot parse '" + text + "'");
}

void parse_into(const std::string& text, const std::string&, std::string& out) { out = text; }

void parse_into(const std::string& text, const std::string& key, bool& out) {
  if (text == "true" || text == "1") out = true;
  else if (text == "false" || text == "0") out = false;
  else throw InputError("config key " + key + ": expected true/false, got '" + text + "'");
}

void parse_into(const std::string& text, const std::string& key,
                std::vector<std::uint64_t>& out) {
  out.clear();
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::uint64_t v;
    parse_into(item, key, v);
    out.push_back(v);
  }
}

/// Flag > config file > default: a value already set on the command line is
/// left alone; otherwise the config file entry (when present) replaces the
/// compiled-in default.
template <typename T>
void resolve(const CLI::Option* opt, const KvConfig& file, const std::string& key, T& value) {
  if (opt != nullptr && opt->count() > 0) return;
  if (!file.has(key)) return;
  parse_into(file.at(key), key, value);
}

// ---------------------------------------------------------------------------
// Shared option bundles.

struct TrainOptions {
  TrainConfig cfg;
  std::string preset;
  std::map<std::string, CLI::Option*> opts;

  void attach(CLI::App& app) {
    opts["preset"] = app.add_option("--preset", preset,
                                    "hyperparameter preset: hcc-like or mtb-like");
    opts["agents"] = app.add_option("--agents", cfg.n_agents, "number of agents N");
    opts["classes"] = app.add_option("--classes", cfg.n_classes, "number of classes C");
    opts["dim"] = app.add_option("--dim", cfg.dim, "embedding dimension D");
    opts["agent_hidden"] = app.add_option("--agent-hidden", cfg.agent_hidden,
                                          "agent head hidden width (0 = linear)");
    opts["fusion_hidden"] = app.add_option("--fusion-hidden", cfg.fusion_hidden,
                                           "fusion head hidden width (0 = linear)");
    opts["epochs"] = app.add_option("--epochs", cfg.epochs, "training epochs");
    opts["batch_size"] = app.add_option("--batch-size", cfg.batch_size, "batch size");
    opts["learning_rate"] = app.add_option("--learning-rate", cfg.learning_rate, "Adam step size");
    opts["lambda_pg"] = app.add_option("--lambda-pg", cfg.lambda_pg,
                                       "policy-gradient loss weight");
    opts["lambda_shap"] = app.add_option("--lambda-shap", cfg.lambda_shap,
                                         "Shapley KL loss weight");
    opts["ema_decay"] = app.add_option("--ema-decay", cfg.ema_decay, "Shapley EMA decay");
    opts["mc_permutations"] = app.add_option("--mc-permutations", cfg.mc_permutations,
                                             "Shapley permutations (0 = ceil(2^{N/2}))");
    opts["shapley_interval"] = app.add_option("--shapley-interval", cfg.shapley_interval,
                                              "steps between Shapley refreshes");
    opts["log_interval"] = app.add_option("--log-interval", cfg.log_interval,
                                          "steps between trace records");
    opts["centralized_only"] = app.add_flag("--centralized-only", cfg.centralized_only,
                                            "global stream only, no agents");
    opts["no_decision_matrix"] = app.add_flag("--no-decision-matrix", cfg.no_decision_matrix,
                                              "freeze W at uniform");
    opts["no_contribution_losses"] =
        app.add_flag("--no-contribution-losses", cfg.no_contribution_losses,
                     "drop the policy-gradient and KL terms");
  }

  TrainConfig resolve_with(const KvConfig& file) {
    resolve(opts["preset"], file, "run.preset", preset);
    TrainConfig out = preset.empty() ? TrainConfig() : TrainConfig::preset(preset);
    auto merge = [&](const char* name, const char* key, auto member) {
      // flag > file > preset/default, field by field
      if (opts[name]->count() > 0) out.*member = cfg.*member;
      else if (file.has(key)) parse_into(file.at(key), key, out.*member);
    };
    merge("agents", "train.agents", &TrainConfig::n_agents);
    merge("classes", "train.classes", &TrainConfig::n_classes);
    merge("dim", "train.dim", &TrainConfig::dim);
    merge("agent_hidden", "train.agent_hidden", &TrainConfig::agent_hidden);
    merge("fusion_hidden", "train.fusion_hidden", &TrainConfig::fusion_hidden);
    merge("epochs", "train.epochs", &TrainConfig::epochs);
    merge("batch_size", "train.batch_size", &TrainConfig::batch_size);
    merge("learning_rate", "train.learning_rate", &TrainConfig::learning_rate);
    merge("lambda_pg", "train.lambda_pg", &TrainConfig::lambda_pg);
    merge("lambda_shap", "train.lambda_shap", &TrainConfig::lambda_shap);
    merge("ema_decay", "train.ema_decay", &TrainConfig::ema_decay);
    merge("mc_permutations", "train.mc_permutations", &TrainConfig::mc_permutations);
    merge("shapley_interval", "train.shapley_interval", &TrainConfig::shapley_interval);
    merge("log_interval", "train.log_interval", &TrainConfig::log_interval);
    merge("centralized_only", "train.centralized_only", &TrainConfig::centralized_only);
    merge("no_decision_matrix", "train.no_decision_matrix", &TrainConfig::no_decision_matrix);
    merge("no_contribution_losses", "train.no_contribution_losses",
          &TrainConfig::no_contribution_losses);
    return out;
  }
};

struct ProviderOptions {
  std::string kind = "stub";
  ProviderConfig cfg;
  std::map<std::string, CLI::Option*> opts;

  void attach(CLI::App& app) {
    opts["kind"] = app.add_option("--provider", kind, "embedding provider: stub or remote");
    opts["dim"] = app.add_option("--embed-dim", cfg.dim, "provider embedding dimension");
    opts["endpoint"] = app.add_option("--endpoint", cfg.endpoint, "remote embedding endpoint");
    opts["model"] = app.add_option("--model", cfg.model, "remote embedding model name");
    opts["auth_env"] = app.add_option("--auth-env", cfg.auth_env,
                                      "env var holding the remote provider token");
    opts["timeout"] = app.add_option("--timeout", cfg.timeout_seconds,
                                     "remote request timeout in seconds");
    opts["max_retries"] = app.add_option("--max-retries", cfg.max_retries,
                                         "remote request retries");
  }

  ProviderConfig resolve_with(const KvConfig& file) {
    resolve(opts["kind"], file, "provider.kind", kind);
    resolve(opts["dim"], file, "provider.dim", cfg.dim);
    resolve(opts["endpoint"], file, "provider.endpoint", cfg.endpoint);
    resolve(opts["model"], file, "provider.model", cfg.model);
    resolve(opts["auth_env"], file, "provider.auth_env", cfg.auth_env);
    resolve(opts["timeout"], file, "provider.timeout", cfg.timeout_seconds);
    resolve(opts["max_retries"], file, "provider.max_retries", cfg.max_retries);
    if (kind == "stub") cfg.kind = ProviderConfig::Kind::Stub;
    else if (kind == "remote") cfg.kind = ProviderConfig::Kind::Remote;
    else throw InputError("--provider must be 'stub' or 'remote', got '" + kind + "'");
    return cfg;
  }
};

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

/// Loads + validates a dataset and embeds it with the configured provider.
/// Vector-mode datasets pass through and pin cfg.dim; text-mode datasets go
/// through the provider with an on-disk cache under out_dir.
struct EmbeddedDataset {
  Dataset raw;
  std::vector<EmbeddedCase> cases;
};

EmbeddedDataset load_and_embed(const std::string& data_path, TrainConfig& cfg,
                               const ProviderConfig& provider_cfg, const fs::path& cache_dir,
                               bool dim_given) {
  EmbeddedDataset out;
  out.raw = load_dataset(data_path, cfg.n_agents, cfg.n_classes);
  if (out.raw.vector_mode) {
    if (dim_given && cfg.dim != out.raw.dim())
      throw InputError("--dim " + std::to_string(cfg.dim) + " does not match dataset dimension " +
                       std::to_string(out.raw.dim()));
    cfg.dim = out.raw.dim();
    out.cases = embed_dataset(out.raw, nullptr, nullptr);
    return out;
  }
  ProviderConfig pc = provider_cfg;
  if (dim_given) pc.dim = cfg.dim;
  cfg.dim = pc.dim;
  std::unique_ptr<Provider> provider = make_provider(pc);
  fs::create_directories(cache_dir);
  EmbeddingCache cache(cache_dir.string());
  out.cases = embed_dataset(out.raw, provider.get(), &cache);
  return out;
}

std::vector<EmbeddedCase> embed_subset(const Dataset& subset, const TrainConfig& cfg,
                                       const ProviderConfig& provider_cfg,
                                       const fs::path& cache_dir, bool dim_given) {
  if (subset.vector_mode) return embed_dataset(subset, nullptr, nullptr);
  ProviderConfig pc = provider_cfg;
  if (dim_given) pc.dim = cfg.dim;
  std::unique_ptr<Provider> provider = make_provider(pc);
  fs::create_directories(cache_dir);
  EmbeddingCache cache(cache_dir.string());
  return embed_dataset(subset, provider.get(), &cache);
}

std::vector<std::string> agent_names_for(const Dataset& ds) { return ds.partition_names; }

json matrix_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index k = 0; k < m.cols(); ++k) row.push_back(m(i, k));
    rows.push_back(row);
  }
  return rows;
}

// ---------------------------------------------------------------------------
// synth

int cmd_synth(const SynthSpec& spec, double alpha, const fs::path& out_dir) {
  if (spec.dim < spec.n_classes)
    throw InputError("--dim must be >= --classes (got --dim " + std::to_string(spec.dim) +
                     ", --classes " + std::to_string(spec.n_classes) + ")");
  SynthSpec planted = spec;
  plant_one_agent_per_class(planted, alpha);
  Dataset ds = synth_generate(planted);
  fs::create_directories(out_dir);
  save_dataset(ds, (out_dir / "dataset.jsonl").string());

  json truth;
  truth["n_cases"] = planted.n_cases;
  truth["n_agents"] = planted.n_agents;
  truth["n_classes"] = planted.n_classes;
  truth["dim"] = planted.dim;
  truth["noise_std"] = planted.noise_std;
  truth["seed"] = planted.seed;
  json map = json::array();
  for (const auto& per_class : planted.informative_map) {
    json entries = json::array();
    for (const auto& [agent, strength] : per_class)
      entries.push_back({{"agent", agent}, {"alpha", strength}});
    map.push_back(entries);
  }
  truth["informative_map"] = map;
  write_json(out_dir / "informative_map.json", truth);
  std::cout << "wrote " << (out_dir / "dataset.jsonl").string() << " ("
            << ds.cases.size() << " cases) and " << (out_dir / "informative_map.json").string()
            << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train

int cmd_train(const std::string& data_path, const fs::path& out_dir,
              const std::vector<std::uint64_t>& seeds, TrainConfig base_cfg,
              const ProviderConfig& provider_cfg, double train_fraction, bool dim_given) {
  require(!seeds.empty(), "at least one --seeds value is required");
  TrainConfig probe = base_cfg;
  EmbeddedDataset data =
      load_and_embed(data_path, probe, provider_cfg, out_dir / "cache", dim_given);
  base_cfg.dim = probe.dim;

  for (std::uint64_t seed : seeds) {
    TrainConfig cfg = base_cfg;
    cfg.seed = seed;

    SplitSpec split_spec;
    split_spec.train_fraction = train_fraction;
    split_spec.seed = seed;
    auto [train_ds, test_ds] = stratified_split(data.raw, split_spec);
    SplitManifest manifest;
    manifest.seed = seed;
    for (const Case& c : train_ds.cases) manifest.train_ids.push_back(c.id);
    for (const Case& c : test_ds.cases) manifest.test_ids.push_back(c.id);
    fs::create_directories(out_dir);
    std::string tag = "seed" + std::to_string(seed);
    save_split_manifest(manifest, (out_dir / ("split_" + tag + ".json")).string());

    std::vector<EmbeddedCase> train_cases =
        embed_subset(train_ds, cfg, provider_cfg, out_dir / "cache", dim_given);

    std::ofstream trace(out_dir / ("trace_" + tag + ".jsonl"));
    if (!trace) throw InputError("cannot write " + (out_dir / ("trace_" + tag + ".jsonl")).string());
    Checkpoint ck = train(cfg, train_cases,
                          [&](const json& rec) { trace << rec.dump() << "\n"; });
    save_checkpoint((out_dir / ("checkpoint_" + tag + ".json")).string(), ck);
    std::cout << "seed " << seed << ": " << train_cases.size() << " train / "
              << test_ds.cases.size() << " test cases, " << ck.step << " steps, checkpoint_"
              << tag << ".json\n";
  }
  return 0;
}

// ---------------------------------------------------------------------------
// eval

void check_compatible(const Checkpoint& ck, const Dataset& ds, const std::string& which) {
  if (ck.config.n_agents != ds.n_agents() || ck.config.n_classes != ds.n_classes())
    throw InputError(which + ": checkpoint expects N=" + std::to_string(ck.config.n_agents) +
                     ", C=" + std::to_string(ck.config.n_classes) + " but dataset has N=" +
                     std::to_string(ds.n_agents()) + ", C=" + std::to_string(ds.n_classes()));
  if (ds.vector_mode && ck.config.dim != ds.dim())
    throw InputError(which + ": checkpoint expects D=" + std::to_string(ck.config.dim) +
                     " but dataset vectors have D=" + std::to_string(ds.dim()));
}

int cmd_eval(const std::string& data_path, const std::vector<std::string>& checkpoint_paths,
             const std::vector<std::string>& manifest_paths, const fs::path& out_file,
             const ProviderConfig& provider_cfg) {
  require(!checkpoint_paths.empty(), "at least one --checkpoint is required");
  require(manifest_paths.size() == checkpoint_paths.size(),
          "need exactly one --manifest per --checkpoint");

  std::vector<MetricsSummary> summaries;
  json per_seed = json::array();
  Dataset raw;
  for (std::size_t s = 0; s < checkpoint_paths.size(); ++s) {
    Checkpoint ck = load_checkpoint(checkpoint_paths[s]);
    if (s == 0) raw = load_dataset(data_path, ck.config.n_agents, ck.config.n_classes);
    check_compatible(ck, raw, checkpoint_paths[s]);

    SplitManifest manifest = load_split_manifest(manifest_paths[s]);
    auto [train_ds, test_ds] = apply_split_manifest(raw, manifest);
    fs::path cache_dir = out_file.parent_path() / "cache";
    std::vector<EmbeddedCase> train_cases =
        embed_subset(train_ds, ck.config, provider_cfg, cache_dir, false);
    std::vector<EmbeddedCase> test_cases =
        embed_subset(test_ds, ck.config, provider_cfg, cache_dir, false);

    ThresholdState thresholds =
        fit_thresholds(score_cases(ck.model, train_cases), labels_per_class(train_cases));
    MetricsSummary summary = evaluate(ck.model, test_cases, thresholds, raw.class_names);
    json entry;
    entry["checkpoint"] = checkpoint_paths[s];
    entry["seed"] = ck.config.seed;
    entry["metrics"] = summary.to_json();
    per_seed.push_back(entry);
    summaries.push_back(std::move(summary));
  }

  AggregatedMetrics agg = multi_seed_aggregate(summaries);
  json out;
  out["n_seeds"] = summaries.size();
  out["per_seed"] = per_seed;
  out["aggregate"] = agg.to_json();
  write_json(out_file, out);
  std::cout << "wrote " << out_file.string() << " (macro accuracy mean "
            << agg.macro_accuracy.mean << ", macro AUC mean " << agg.macro_auc.mean << " over "
            << agg.macro_auc.n_used << " seeds)\n";
  return 0;
}

// ---------------------------------------------------------------------------
// attribute

int cmd_attribute(const std::string& data_path, const std::string& checkpoint_path,
                  const std::string& manifest_path, std::vector<std::string> case_ids,
                  const std::string& cases_file, const fs::path& out_file, bool text,
                  const ProviderConfig& provider_cfg) {
  Checkpoint ck = load_checkpoint(checkpoint_path);
  Dataset raw = load_dataset(data_path, ck.config.n_agents, ck.config.n_classes);
  check_compatible(ck, raw, checkpoint_path);

  if (!cases_file.empty()) {
    std::ifstream in(cases_file);
    if (!in) throw InputError("cases file not found: " + cases_file);
    std::string line;
    while (std::getline(in, line))
      if (!line.empty()) case_ids.push_back(line);
  }
  require(!case_ids.empty(), "no case ids given (use --case or --cases-file)");

  SplitManifest manifest = load_split_manifest(manifest_path);
  auto [train_ds, test_ds] = apply_split_manifest(raw, manifest);
  fs::path cache_dir = out_file.parent_path() / "cache";
  std::vector<EmbeddedCase> train_cases =
      embed_subset(train_ds, ck.config, provider_cfg, cache_dir, false);
  ThresholdState thresholds =
      fit_thresholds(score_cases(ck.model, train_cases), labels_per_class(train_cases));

  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < raw.cases.size(); ++i) index[raw.cases[i].id] = i;

  Dataset wanted;
  wanted.partition_names = raw.partition_names;
  wanted.class_names = raw.class_names;
  wanted.vector_mode = raw.vector_mode;
  for (const std::string& id : case_ids) {
    auto it = index.find(id);
    if (it == index.end()) throw InputError("unknown case id: " + id);
    wanted.cases.push_back(raw.cases[it->second]);
  }
  std::vector<EmbeddedCase> wanted_cases =
      embed_subset(wanted, ck.config, provider_cfg, cache_dir, false);

  json reports = json::array();
  std::vector<std::string> agent_names = agent_names_for(raw);
  for (std::size_t i = 0; i < case_ids.size(); ++i) {
    AttributionReport rep =
        attribution_report(ck.model, wanted_cases[i], case_ids[i], thresholds, ck.shapley);
    reports.push_back(rep.to_json(raw.class_names, agent_names));
    if (text) std::cout << rep.render_text(raw.class_names, agent_names);
  }
  write_json(out_file, json{{"reports", reports}});
  if (!text)
    std::cout << "wrote " << out_file.string() << " (" << case_ids.size() << " reports)\n";
  return 0;
}

// ---------------------------------------------------------------------------
// shapley-audit

int cmd_shapley_audit(const std::string& data_path, const std::string& checkpoint_path,
                      const std::string& manifest_path, int permutations, bool exact,
                      std::uint64_t audit_seed, const fs::path& out_file,
                      const ProviderConfig& provider_cfg) {
  Checkpoint ck = load_checkpoint(checkpoint_path);
  Dataset raw = load_dataset(data_path, ck.config.n_agents, ck.config.n_classes);
  check_compatible(ck, raw, checkpoint_path);
  int n = ck.config.n_agents;
  if (exact && n > 12)
    throw InputError("--exact is limited to N <= 12 agents (2^N coalition evaluations); got N=" +
                     std::to_string(n));

  Dataset batch_ds = raw;
  if (!manifest_path.empty()) {
    SplitManifest manifest = load_split_manifest(manifest_path);
    batch_ds = apply_split_manifest(raw, manifest).first;
  }
  std::vector<EmbeddedCase> batch =
      embed_subset(batch_ds, ck.config, provider_cfg, out_file.parent_path() / "cache", false);

  if (permutations <= 0) permutations = ck.config.effective_permutations();
  Rng rng = Rng::substream(audit_seed, "shapley");
  Matrix phi_mc = shapley_mc(ck.model, batch, permutations, rng);
  RewardAdvantage ra = rewards_and_advantage(ck.model, batch);

  json out;
  out["n_agents"] = n;
  out["n_classes"] = ck.config.n_classes;
  out["n_cases"] = batch.size();
  out["permutations"] = permutations;
  out["agent_names"] = agent_names_for(raw);
  out["class_names"] = raw.class_names;
  out["phi_mc"] = matrix_json(phi_mc);
  if (ck.shapley.initialized) out["phi_ema"] = matrix_json(ck.shapley.phi_ema);
  out["rewards"] = matrix_json(ra.rewards);
  out["advantage"] = matrix_json(ra.advantage);

  if (exact) {
    GameTable table = GameTable::build(ck.model, batch);
    ExactShapley es = shapley_exact(table);
    out["phi_exact"] = matrix_json(es.phi);
    out["phi_exact_rectified"] = matrix_json(es.phi_rectified);
    Matrix gap = (phi_mc - es.phi_rectified).cwiseAbs();
    out["mc_gap"] = matrix_json(gap);
    out["max_abs_mc_gap"] = gap.maxCoeff();
  }
  write_json(out_file, out);
  std::cout << "wrote " << out_file.string();
  if (exact) std::cout << " (max |phi_mc - phi_exact_rectified| = "
                       << out["max_abs_mc_gap"].get<double>() << ")";
  std::cout << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"contribution-aware multi-agent classification pipeline"};
  app.require_subcommand(1);

  std::string config_path;
  app.add_option("--config", config_path, "flat key-value config file")->configurable(false);

  // --- synth ---
  CLI::App* synth = app.add_subcommand("synth", "generate a planted synthetic dataset");
  synth->fallthrough();
  SynthSpec synth_spec;
  double synth_alpha = 2.0;
  std::string synth_out = "synth";
  synth->add_option("--n-cases", synth_spec.n_cases, "number of cases");
  synth->add_option("--agents", synth_spec.n_agents, "number of agents N");
  synth->add_option("--classes", synth_spec.n_classes, "number of classes C");
  synth->add_option("--dim", synth_spec.dim, "vector dimension D (must be >= C)");
  synth->add_option("--noise-std", synth_spec.noise_std, "noise standard deviation");
  synth->add_option("--alpha", synth_alpha, "planted signal strength");
  synth->add_option("--seed", synth_spec.seed, "generator seed");
  synth->add_option("--out", synth_out, "output directory");

  // --- train ---
  CLI::App* train_cmd = app.add_subcommand("train", "split, embed, and train per seed");
  train_cmd->fallthrough();
  std::string train_data, train_out = "run";
  std::vector<std::uint64_t> train_seeds;
  double train_fraction = 0.75;
  TrainOptions train_opts;
  ProviderOptions train_provider;
  CLI::Option* train_data_opt = train_cmd->add_option("--data", train_data, "dataset JSONL path");
  CLI::Option* train_out_opt = train_cmd->add_option("--out", train_out, "output directory");
  CLI::Option* train_seeds_opt =
      train_cmd->add_option("--seeds", train_seeds, "training seeds")->delimiter(',');
  CLI::Option* train_frac_opt =
      train_cmd->add_option("--train-fraction", train_fraction, "train split fraction");
  train_opts.attach(*train_cmd);
  train_provider.attach(*train_cmd);

  // --- eval ---
  CLI::App* eval_cmd = app.add_subcommand("eval", "threshold-calibrated metrics across seeds");
  eval_cmd->fallthrough();
  std::string eval_data, eval_out = "metrics.json";
  std::vector<std::string> eval_ckpts, eval_manifests;
  ProviderOptions eval_provider;
  CLI::Option* eval_data_opt = eval_cmd->add_option("--data", eval_data, "dataset JSONL path");
  eval_cmd->add_option("--checkpoint", eval_ckpts, "checkpoint file (repeatable)");
  eval_cmd->add_option("--manifest", eval_manifests, "split manifest per checkpoint");
  CLI::Option* eval_out_opt = eval_cmd->add_option("--out", eval_out, "metrics output file");
  eval_provider.attach(*eval_cmd);

  // --- attribute ---
  CLI::App* attr_cmd = app.add_subcommand("attribute", "per-case attribution reports");
  attr_cmd->fallthrough();
  std::string attr_data, attr_ckpt, attr_manifest, attr_cases_file, attr_out = "attributions.json";
  std::vector<std::string> attr_ids;
  bool attr_text = false;
  ProviderOptions attr_provider;
  CLI::Option* attr_data_opt = attr_cmd->add_option("--data", attr_data, "dataset JSONL path");
  attr_cmd->add_option("--checkpoint", attr_ckpt, "trained checkpoint")->required();
  attr_cmd->add_option("--manifest", attr_manifest, "split manifest for threshold fitting")
      ->required();
  attr_cmd->add_option("--case", attr_ids, "case id (repeatable)");
  attr_cmd->add_option("--cases-file", attr_cases_file, "file with one case id per line");
  CLI::Option* attr_out_opt = attr_cmd->add_option("--out", attr_out, "report output file");
  attr_cmd->add_flag("--text", attr_text, "also print a text rendering");
  attr_provider.attach(*attr_cmd);

  // --- shapley-audit ---
  CLI::App* audit_cmd =
      app.add_subcommand("shapley-audit", "compare MC Shapley, exact Shapley, and advantage");
  audit_cmd->fallthrough();
  std::string audit_data, audit_ckpt, audit_manifest, audit_out = "audit.json";
  int audit_perms = 0;
  bool audit_exact = false;
  std::uint64_t audit_seed = 0;
  ProviderOptions audit_provider;
  CLI::Option* audit_data_opt = audit_cmd->add_option("--data", audit_data, "dataset JSONL path");
  audit_cmd->add_option("--checkpoint", audit_ckpt, "trained checkpoint")->required();
  audit_cmd->add_option("--manifest", audit_manifest,
                        "optional split manifest (audit the train split)");
  audit_cmd->add_option("--permutations", audit_perms,
                        "MC permutations (0 = checkpoint budget)");
  audit_cmd->add_flag("--exact", audit_exact, "also compute the exact values (N <= 12)");
  audit_cmd->add_option("--seed", audit_seed, "audit sampling seed");
  CLI::Option* audit_out_opt = audit_cmd->add_option("--out", audit_out, "audit output file");
  audit_provider.attach(*audit_cmd);

  CLI11_PARSE(app, argc, argv);

  try {
    KvConfig file;
    if (!config_path.empty()) file = KvConfig::load(config_path);

    if (synth->parsed()) return cmd_synth(synth_spec, synth_alpha, synth_out);

    if (train_cmd->parsed()) {
      resolve(train_data_opt, file, "run.dataset", train_data);
      resolve(train_out_opt, file, "run.out", train_out);
      resolve(train_seeds_opt, file, "run.seeds", train_seeds);
      resolve(train_frac_opt, file, "split.train_fraction", train_fraction);
      TrainConfig cfg = train_opts.resolve_with(file);
      ProviderConfig pc = train_provider.resolve_with(file);
      require(!train_data.empty(), "--data (or run.dataset in the config file) is required");
      bool dim_given = train_opts.opts["dim"]->count() > 0 || file.has("train.dim");
      return cmd_train(train_data, train_out, train_seeds, cfg, pc, train_fraction, dim_given);
    }
    if (eval_cmd->parsed()) {
      resolve(eval_data_opt, file, "run.dataset", eval_data);
      resolve(eval_out_opt, file, "run.out", eval_out);
      ProviderConfig pc = eval_provider.resolve_with(file);
      require(!eval_data.empty(), "--data (or run.dataset in the config file) is required");
      return cmd_eval(eval_data, eval_ckpts, eval_manifests, eval_out, pc);
    }
    if (attr_cmd->parsed()) {
      resolve(attr_data_opt, file, "run.dataset", attr_data);
      resolve(attr_out_opt, file, "run.out", attr_out);
      ProviderConfig pc = attr_provider.resolve_with(file);
      require(!attr_data.empty(), "--data (or run.dataset in the config file) is required");
      return cmd_attribute(attr_data, attr_ckpt, attr_manifest, attr_ids, attr_cases_file,
                           attr_out, attr_text, pc);
    }
    if (audit_cmd->parsed()) {
      resolve(audit_data_opt, file, "run.dataset", audit_data);
      resolve(audit_out_opt, file, "run.out", audit_out);
      ProviderConfig pc = audit_provider.resolve_with(file);
      require(!audit_data.empty(), "--data (or run.dataset in the config file) is required");
      return cmd_shapley_audit(audit_data, audit_ckpt, audit_manifest, audit_perms, audit_exact,
                               audit_seed, audit_out, pc);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
