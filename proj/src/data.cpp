#include "comma/data.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

namespace comma {

using nlohmann::json;

int Dataset::dim() const {
  require(vector_mode && !cases.empty(), "dim() requires a vector-mode dataset");
  return static_cast<int>(cases.front().partition_vecs.front().size());
}

namespace {

[[noreturn]] void line_error(const std::string& path, int line, const std::string& what) {
  std::ostringstream os;
  os << path << ":" << line << ": " << what;
  throw InputError(os.str());
}

Vector json_to_vector(const json& j) {
  Vector v(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<int>(i)) = j[i].get<double>();
  return v;
}

json vector_to_json(const Vector& v) {
  json j = json::array();
  for (int i = 0; i < v.size(); ++i) j.push_back(v(i));
  return j;
}

}  // namespace

Dataset load_dataset(const std::string& path, int expected_agents,
                     int expected_classes) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open dataset file: " + path);
  Dataset ds;
  std::string line;
  int lineno = 0;

  // header
  if (!std::getline(in, line)) throw InputError(path + ": empty file");
  ++lineno;
  json header;
  try {
    header = json::parse(line);
  } catch (const json::exception& e) {
    line_error(path, lineno, std::string("bad header: ") + e.what());
  }
  if (!header.contains("partition_names") || !header.contains("class_names"))
    line_error(path, lineno, "header must carry partition_names and class_names");
  for (const auto& n : header["partition_names"]) ds.partition_names.push_back(n.get<std::string>());
  for (const auto& n : header["class_names"]) ds.class_names.push_back(n.get<std::string>());
  if (static_cast<int>(ds.partition_names.size()) != expected_agents) {
    std::ostringstream os;
    os << "expected " << expected_agents << " partitions, header declares "
       << ds.partition_names.size();
    line_error(path, lineno, os.str());
  }
  if (static_cast<int>(ds.class_names.size()) != expected_classes) {
    std::ostringstream os;
    os << "expected " << expected_classes << " classes, header declares "
       << ds.class_names.size();
    line_error(path, lineno, os.str());
  }

  bool mode_known = false;
  int dim = -1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      line_error(path, lineno, std::string("bad case record: ") + e.what());
    }
    Case c;
    c.id = j.at("id").get<std::string>();
    const json& parts = j.at("partitions");
    if (parts.size() != ds.partition_names.size()) {
      std::ostringstream os;
      os << "case has " << parts.size() << " partitions, expected "
         << ds.partition_names.size();
      line_error(path, lineno, os.str());
    }
    bool case_vector = false;
    for (std::size_t i = 0; i < ds.partition_names.size(); ++i) {
      const std::string& name = ds.partition_names[i];
      if (!parts.contains(name))
        line_error(path, lineno, "missing partition '" + name + "'");
      const json& p = parts[name];
      if (p.is_array()) {
        case_vector = true;
        Vector v = json_to_vector(p);
        if (dim < 0) dim = static_cast<int>(v.size());
        if (v.size() != dim)
          line_error(path, lineno, "inconsistent vector dimension");
        c.partition_vecs.push_back(std::move(v));
      } else {
        c.partition_texts.push_back(p.get<std::string>());
      }
    }
    if (!c.partition_texts.empty() && !c.partition_vecs.empty())
      line_error(path, lineno, "case mixes text and vector partitions");
    if (mode_known && case_vector != ds.vector_mode)
      line_error(path, lineno, "mixed text/vector modes across cases");
    ds.vector_mode = case_vector;
    mode_known = true;

    if (j.contains("global") && !j["global"].is_null()) {
      if (case_vector) {
        Vector v = json_to_vector(j["global"]);
        if (v.size() != dim) line_error(path, lineno, "global vector dimension mismatch");
        c.global_vec = std::move(v);
      } else {
        c.global_text = j["global"].get<std::string>();
      }
    } else {
      if (case_vector)
        line_error(path, lineno, "vector-mode case requires an explicit global payload");
      // global = concatenation of partition texts in declared order
      std::string g;
      for (std::size_t i = 0; i < c.partition_texts.size(); ++i) {
        if (i) g += kGlobalSeparator;
        g += c.partition_texts[i];
      }
      c.global_text = g;
    }

    const json& labels = j.at("labels");
    if (labels.size() != ds.class_names.size()) {
      std::ostringstream os;
      os << "case has " << labels.size() << " labels, expected "
         << ds.class_names.size();
      line_error(path, lineno, os.str());
    }
    c.labels.resize(static_cast<int>(labels.size()));
    for (std::size_t k = 0; k < labels.size(); ++k) {
      int y = labels[k].get<int>();
      if (y != 0 && y != 1) line_error(path, lineno, "labels must be 0 or 1");
      c.labels(static_cast<int>(k)) = y;
    }
    ds.cases.push_back(std::move(c));
  }
  if (ds.cases.empty()) throw InputError(path + ": dataset has no cases");
  return ds;
}

void save_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write dataset file: " + path);
  json header;
  header["partition_names"] = ds.partition_names;
  header["class_names"] = ds.class_names;
  out << header.dump() << "\n";
  for (const Case& c : ds.cases) {
    json j;
    j["id"] = c.id;
    json parts = json::object();
    for (std::size_t i = 0; i < ds.partition_names.size(); ++i) {
      if (ds.vector_mode)
        parts[ds.partition_names[i]] = vector_to_json(c.partition_vecs[i]);
      else
        parts[ds.partition_names[i]] = c.partition_texts[i];
    }
    j["partitions"] = parts;
    if (ds.vector_mode) {
      j["global"] = vector_to_json(*c.global_vec);
    } else if (c.global_text) {
      j["global"] = *c.global_text;
    }
    json labels = json::array();
    for (int k = 0; k < c.labels.size(); ++k) labels.push_back(c.labels(k));
    j["labels"] = labels;
    out << j.dump() << "\n";
  }
}

std::pair<Dataset, Dataset> stratified_split(const Dataset& ds, const SplitSpec& spec) {
  require(!ds.cases.empty(), "stratified_split: empty dataset");
  int n = static_cast<int>(ds.cases.size());
  int n_train = static_cast<int>(std::lround(spec.train_fraction * n));
  if (n_train <= 0 || n_train >= n)
    throw ConfigError("stratified_split: train_fraction leaves one side empty");
  int c_classes = ds.n_classes();

  // remaining desired positive counts per side, fractional
  std::vector<double> want_train(c_classes, 0.0), want_test(c_classes, 0.0);
  std::vector<int> total_pos(c_classes, 0);
  for (const Case& c : ds.cases)
    for (int k = 0; k < c_classes; ++k) total_pos[k] += c.labels(k);
  for (int k = 0; k < c_classes; ++k) {
    want_train[k] = spec.train_fraction * total_pos[k];
    want_test[k] = (1.0 - spec.train_fraction) * total_pos[k];
  }

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng = Rng::substream(spec.seed, "split");
  rng.shuffle(order);

  std::vector<int> assignment(n, -1);  // 0 = train, 1 = test
  int cap_train = n_train, cap_test = n - n_train;
  std::vector<int> remaining_pos = total_pos;

  auto assign = [&](int idx, int side) {
    assignment[idx] = side;
    (side == 0 ? cap_train : cap_test) -= 1;
    for (int k = 0; k < c_classes; ++k)
      if (ds.cases[idx].labels(k)) {
        remaining_pos[k] -= 1;
        (side == 0 ? want_train : want_test)[k] -= 1.0;
      }
  };

  // rarest-label-first: repeatedly take the label with fewest unassigned
  // positives and place all of its remaining cases
  int assigned = 0;
  while (assigned < n) {
    int label = -1;
    int best = INT32_MAX;
    for (int k = 0; k < c_classes; ++k)
      if (remaining_pos[k] > 0 && remaining_pos[k] < best) {
        best = remaining_pos[k];
        label = k;
      }
    if (label < 0) break;  // only label-free cases remain
    for (int idx : order) {
      if (assignment[idx] != -1 || !ds.cases[idx].labels(label)) continue;
      int side;
      if (cap_train == 0)
        side = 1;
      else if (cap_test == 0)
        side = 0;
      else if (want_train[label] > want_test[label])
        side = 0;
      else if (want_test[label] > want_train[label])
        side = 1;
      else
        side = cap_train >= cap_test ? 0 : 1;
      assign(idx, side);
      ++assigned;
    }
  }
  for (int idx : order) {
    if (assignment[idx] != -1) continue;
    int side = cap_train == 0 ? 1 : (cap_test == 0 ? 0 : (cap_train >= cap_test ? 0 : 1));
    assign(idx, side);
    ++assigned;
  }

  Dataset train, test;
  train.partition_names = test.partition_names = ds.partition_names;
  train.class_names = test.class_names = ds.class_names;
  train.vector_mode = test.vector_mode = ds.vector_mode;
  for (int i = 0; i < n; ++i)
    (assignment[i] == 0 ? train : test).cases.push_back(ds.cases[i]);
  return {train, test};
}

void save_split_manifest(const SplitManifest& m, const std::string& path) {
  json j;
  j["seed"] = m.seed;
  j["train_ids"] = m.train_ids;
  j["test_ids"] = m.test_ids;
  std::ofstream out(path);
  if (!out) throw InputError("cannot write split manifest: " + path);
  out << j.dump(2) << "\n";
}

SplitManifest load_split_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open split manifest: " + path);
  json j = json::parse(in);
  SplitManifest m;
  m.seed = j.at("seed").get<std::uint64_t>();
  m.train_ids = j.at("train_ids").get<std::vector<std::string>>();
  m.test_ids = j.at("test_ids").get<std::vector<std::string>>();
  return m;
}

std::pair<Dataset, Dataset> apply_split_manifest(const Dataset& ds,
                                                 const SplitManifest& m) {
  std::map<std::string, const Case*> by_id;
  for (const Case& c : ds.cases) by_id[c.id] = &c;
  auto take = [&](const std::vector<std::string>& ids) {
    Dataset out;
    out.partition_names = ds.partition_names;
    out.class_names = ds.class_names;
    out.vector_mode = ds.vector_mode;
    for (const std::string& id : ids) {
      auto it = by_id.find(id);
      if (it == by_id.end()) throw InputError("split manifest names unknown case id: " + id);
      out.cases.push_back(*it->second);
    }
    return out;
  };
  return {take(m.train_ids), take(m.test_ids)};
}

Dataset synth_generate(const SynthSpec& spec) {
  require(spec.dim >= spec.n_classes,
          "synth_generate: dim must be >= number of classes for orthonormal class directions");
  require(spec.n_cases > 0 && spec.n_agents > 0 && spec.n_classes > 0,
          "synth_generate: sizes must be positive");
  require(static_cast<int>(spec.informative_map.size()) == spec.n_classes,
          "synth_generate: informative_map must cover every class");
  for (int k = 0; k < spec.n_classes; ++k) {
    require(!spec.informative_map[k].empty(),
            "synth_generate: every class needs at least one informative agent");
    for (auto& [agent, alpha] : spec.informative_map[k]) {
      require(agent >= 0 && agent < spec.n_agents, "synth_generate: agent index out of range");
      require(std::isfinite(alpha) && alpha >= 0.0, "synth_generate: alpha must be finite and >= 0");
    }
  }

  // alpha[i][k]
  Matrix alpha = Matrix::Zero(spec.n_agents, spec.n_classes);
  for (int k = 0; k < spec.n_classes; ++k)
    for (auto& [agent, a] : spec.informative_map[k]) alpha(agent, k) = a;

  Dataset ds;
  ds.vector_mode = true;
  for (int i = 0; i < spec.n_agents; ++i) ds.partition_names.push_back("agent" + std::to_string(i));
  for (int k = 0; k < spec.n_classes; ++k) ds.class_names.push_back("class" + std::to_string(k));

  Rng label_rng = Rng::substream(spec.seed, "synth-labels");
  Rng noise_rng = Rng::substream(spec.seed, "synth-noise");

  for (int c = 0; c < spec.n_cases; ++c) {
    Case cs;
    cs.id = "synth" + std::to_string(c);
    cs.labels.resize(spec.n_classes);
    for (int k = 0; k < spec.n_classes; ++k)
      cs.labels(k) = label_rng.uniform() < 0.5 ? 1 : 0;
    for (int i = 0; i < spec.n_agents; ++i) {
      Vector v = Vector::Zero(spec.dim);
      // class direction u_k = standard basis vector e_k
      for (int k = 0; k < spec.n_classes; ++k)
        v(k) += alpha(i, k) * (2.0 * cs.labels(k) - 1.0);
      if (spec.noise_std > 0.0)
        for (int d = 0; d < spec.dim; ++d) v(d) += spec.noise_std * noise_rng.normal();
      cs.partition_vecs.push_back(std::move(v));
    }
    Vector g = Vector::Zero(spec.dim);
    for (const Vector& v : cs.partition_vecs) g += v;
    g /= static_cast<double>(spec.n_agents);
    cs.global_vec = std::move(g);
    ds.cases.push_back(std::move(cs));
  }
  return ds;
}

void plant_one_agent_per_class(SynthSpec& spec, double alpha) {
  spec.informative_map.assign(spec.n_classes, {});
  for (int k = 0; k < spec.n_classes; ++k)
    spec.informative_map[k].push_back({k % spec.n_agents, alpha});
}

}  // namespace comma
