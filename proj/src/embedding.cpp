#include "comma/embedding.hpp"

#include <cctype>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "comma/rng.hpp"

namespace comma {

namespace fs = std::filesystem;
using nlohmann::json;

EmbeddingVector embed_stub(const std::string& text, int dim) {
  require(dim > 0, "embed_stub: dim must be > 0");
  Vector v = Vector::Zero(dim);
  std::string token;
  auto flush = [&] {
    if (token.empty()) return;
    std::uint64_t idx = fnv1a64(token, kStubIndexSeed);
    std::uint64_t sgn = fnv1a64(token, kStubSignSeed);
    v(static_cast<int>(idx % static_cast<std::uint64_t>(dim))) += (sgn & 1u) ? 1.0 : -1.0;
    token.clear();
  };
  for (unsigned char ch : text) {
    if (std::isalnum(ch))
      token.push_back(static_cast<char>(std::tolower(ch)));
    else
      flush();
  }
  flush();
  double norm = v.norm();
  if (norm > 0.0) v /= norm;
  EmbeddingVector out;
  out.values = std::move(v);
  out.provider_tag = "stub-d" + std::to_string(dim);
  out.content_hash = fnv1a64(text);
  return out;
}

std::vector<EmbeddingVector> StubProvider::embed(const std::vector<std::string>& texts) {
  std::vector<EmbeddingVector> out;
  out.reserve(texts.size());
  for (const std::string& t : texts) out.push_back(embed_stub(t, dim_));
  return out;
}

RemoteProvider::RemoteProvider(const ProviderConfig& cfg) : cfg_(cfg) {
  require(cfg.kind == ProviderConfig::Kind::Remote, "remote provider: wrong config kind");
  require(!cfg.endpoint.empty(), "remote provider: endpoint required");
  require(cfg.dim > 0, "remote provider: dim must be > 0");
}

std::string RemoteProvider::tag() const {
  return "remote:" + cfg_.model + ":d" + std::to_string(cfg_.dim);
}

namespace {

// splits "http://host:port/path" into (base, path)
std::pair<std::string, std::string> split_url(const std::string& url) {
  auto scheme_end = url.find("://");
  require(scheme_end != std::string::npos, "remote provider: endpoint must carry a scheme");
  auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

}  // namespace

std::vector<EmbeddingVector> RemoteProvider::embed(const std::vector<std::string>& texts) {
  auto [base, path] = split_url(cfg_.endpoint);
  httplib::Client client(base);
  client.set_read_timeout(static_cast<int>(cfg_.timeout_seconds), 0);
  client.set_connection_timeout(static_cast<int>(cfg_.timeout_seconds), 0);
  httplib::Headers headers;
  if (!cfg_.auth_env.empty()) {
    const char* token = std::getenv(cfg_.auth_env.c_str());
    if (token) headers.emplace("Authorization", std::string("Bearer ") + token);
  }

  json body;
  body["model"] = cfg_.model;
  body["input"] = texts;
  std::string payload = body.dump();

  httplib::Result res;
  for (int attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
    if (attempt > 0)
      std::this_thread::sleep_for(std::chrono::milliseconds(100 << (attempt - 1)));
    res = client.Post(path, headers, payload, "application/json");
    if (res && res->status == 200) break;
  }
  if (!res || res->status != 200) {
    std::ostringstream os;
    os << "embedding provider unreachable after " << cfg_.max_retries
       << " retries: " << cfg_.endpoint;
    throw InputError(os.str());
  }

  json reply = json::parse(res->body);
  std::vector<EmbeddingVector> out(texts.size());
  std::vector<bool> seen(texts.size(), false);
  for (const json& item : reply.at("data")) {
    int idx = item.at("index").get<int>();
    if (idx < 0 || idx >= static_cast<int>(texts.size()))
      throw InputError("embedding response index out of range");
    const json& emb = item.at("embedding");
    if (static_cast<int>(emb.size()) != cfg_.dim) {
      std::ostringstream os;
      os << "embedding dimension contract violated: expected " << cfg_.dim
         << ", got " << emb.size();
      throw InputError(os.str());
    }
    Vector v(cfg_.dim);
    for (int i = 0; i < cfg_.dim; ++i) {
      v(i) = emb[i].get<double>();
      if (!std::isfinite(v(i))) throw InputError("embedding response carries non-finite value");
    }
    out[idx].values = std::move(v);
    out[idx].provider_tag = tag();
    out[idx].content_hash = fnv1a64(texts[idx]);
    seen[idx] = true;
  }
  for (std::size_t i = 0; i < seen.size(); ++i)
    if (!seen[i]) throw InputError("embedding response missing index " + std::to_string(i));
  return out;
}

std::unique_ptr<Provider> make_provider(const ProviderConfig& cfg) {
  if (cfg.kind == ProviderConfig::Kind::Stub)
    return std::make_unique<StubProvider>(cfg.dim);
  return std::make_unique<RemoteProvider>(cfg);
}

EmbeddingCache::EmbeddingCache(std::string directory) : dir_(std::move(directory)) {
  fs::create_directories(dir_);
}

EmbeddingVector EmbeddingCache::get_or_compute(const std::string& text, Provider& provider) {
  std::uint64_t content = fnv1a64(text);
  std::uint64_t key = fnv1a64(provider.tag(), content);
  std::ostringstream name;
  name << std::hex << key << ".json";
  fs::path record = fs::path(dir_) / name.str();

  if (fs::exists(record)) {
    try {
      std::ifstream in(record);
      json j = json::parse(in);
      if (j.at("provider_tag").get<std::string>() == provider.tag() &&
          std::stoull(j.at("hash").get<std::string>(), nullptr, 16) == content &&
          j.at("dim").get<int>() == provider.dim()) {
        EmbeddingVector v;
        v.provider_tag = provider.tag();
        v.content_hash = content;
        const json& vals = j.at("values");
        v.values.resize(provider.dim());
        if (static_cast<int>(vals.size()) != provider.dim())
          throw InputError("cache record dimension mismatch");
        for (int i = 0; i < provider.dim(); ++i) v.values(i) = vals[i].get<double>();
        return v;
      }
    } catch (const std::exception& e) {
      std::cerr << "warning: corrupt embedding cache record " << record
                << " (" << e.what() << "); recomputing\n";
    }
  }

  EmbeddingVector fresh = provider.embed({text}).front();
  json j;
  j["provider_tag"] = fresh.provider_tag;
  std::ostringstream hx;
  hx << std::hex << fresh.content_hash;
  j["hash"] = hx.str();
  j["dim"] = static_cast<int>(fresh.values.size());
  json vals = json::array();
  for (int i = 0; i < fresh.values.size(); ++i) vals.push_back(fresh.values(i));
  j["values"] = vals;

  fs::path tmp = record;
  tmp += ".tmp" + std::to_string(static_cast<unsigned>(::getpid()));
  {
    std::ofstream out(tmp);
    out << j.dump();
  }
  fs::rename(tmp, record);
  return fresh;
}

}  // namespace comma
