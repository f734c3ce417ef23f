#include "toxgate/embeddings.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>

#include "http_util.hpp"

namespace toxgate::embed {

using nlohmann::json;

void LayerEmbeddings::validate() const {
  if (num_layers == 0 || hidden_size == 0) {
    throw ShapeError("layer embeddings must have at least one layer and one dimension");
  }
  if (data.size() != num_layers * hidden_size) {
    throw ShapeError("layer embeddings hold " + std::to_string(data.size()) +
                     " values, expected " + std::to_string(num_layers) + "x" +
                     std::to_string(hidden_size));
  }
  for (float v : data) {
    if (!std::isfinite(v)) throw ShapeError("layer embeddings contain a non-finite value");
  }
}

void MockProviderSpec::validate() const {
  if (num_layers < 1) throw Error("mock provider needs num_layers >= 1");
  if (hidden_size < 2) throw Error("mock provider needs hidden_size >= 2");
  if (!(noise_sigma >= 0.0)) throw Error("mock provider noise_sigma must be >= 0");
  std::set<std::string> seen;
  for (const auto& c : clusters) {
    if (c.keyword.empty()) throw Error("mock provider cluster keyword is empty");
    if (!seen.insert(c.keyword).second) {
      throw Error("duplicate mock provider keyword \"" + c.keyword + "\"");
    }
    if (!c.centroid.empty() && c.centroid.size() != hidden_size) {
      throw Error("explicit centroid for \"" + c.keyword + "\" has wrong length");
    }
  }
}

void to_json(json& j, const MockProviderSpec& spec) {
  json clusters = json::array();
  for (const auto& c : spec.clusters) {
    json item = {{"keyword", c.keyword}, {"centroid_seed", c.centroid_seed}};
    if (!c.centroid.empty()) item["centroid"] = c.centroid;
    clusters.push_back(std::move(item));
  }
  j = {{"num_layers", spec.num_layers},
       {"hidden_size", spec.hidden_size},
       {"seed", spec.seed},
       {"noise_sigma", spec.noise_sigma},
       {"clusters", std::move(clusters)}};
}

void from_json(const json& j, MockProviderSpec& spec) {
  spec.num_layers = j.value("num_layers", spec.num_layers);
  spec.hidden_size = j.value("hidden_size", spec.hidden_size);
  spec.seed = j.value("seed", spec.seed);
  spec.noise_sigma = j.value("noise_sigma", spec.noise_sigma);
  spec.clusters.clear();
  if (j.contains("clusters")) {
    for (const auto& item : j.at("clusters")) {
      KeywordCluster c;
      c.keyword = item.at("keyword").get<std::string>();
      c.centroid_seed = item.value("centroid_seed", std::uint64_t{0});
      if (item.contains("centroid")) c.centroid = item.at("centroid").get<std::vector<double>>();
      spec.clusters.push_back(std::move(c));
    }
  }
}

namespace {

std::vector<double> normalized(std::vector<double> v) {
  double norm = 0.0;
  for (double x : v) norm += x * x;
  norm = std::sqrt(norm);
  if (norm == 0.0) throw Error("cannot normalize a zero vector");
  for (double& x : v) x /= norm;
  return v;
}

std::vector<double> seeded_direction(std::uint64_t seed, std::size_t dim) {
  Rng rng(seed);
  std::vector<double> v(dim);
  for (double& x : v) x = rng.normal();
  return normalized(std::move(v));
}

std::string lowercase(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

constexpr std::uint64_t kDefaultCentroidSalt = 0x6d6f636b2d646566ULL;

}  // namespace

MockProvider::MockProvider(MockProviderSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  for (const auto& c : spec_.clusters) {
    centroids_.push_back(c.centroid.empty()
                             ? seeded_direction(c.centroid_seed, spec_.hidden_size)
                             : normalized(c.centroid));
  }
  centroids_.push_back(seeded_direction(spec_.seed ^ kDefaultCentroidSalt, spec_.hidden_size));
}

std::optional<std::size_t> MockProvider::matching_cluster(const std::string& text) const {
  const std::string lower = lowercase(text);
  for (std::size_t i = 0; i < spec_.clusters.size(); ++i) {
    if (lower.find(lowercase(spec_.clusters[i].keyword)) != std::string::npos) return i;
  }
  return std::nullopt;
}

LayerEmbeddings MockProvider::layer_embeddings(const std::string& text) const {
  if (text.empty()) throw Error("cannot embed empty text");
  const auto cluster = matching_cluster(text);
  const auto& centroid = centroids_[cluster ? *cluster : centroids_.size() - 1];
  const std::size_t d = spec_.hidden_size;

  Rng noise(spec_.seed ^ fnv1a64(text));
  LayerEmbeddings out;
  out.model_id = model_id();
  out.num_layers = spec_.num_layers;
  out.hidden_size = d;
  out.data.resize(spec_.num_layers * d);
  std::vector<double> row(d);
  for (std::size_t l = 0; l < spec_.num_layers; ++l) {
    const std::size_t shift = l % d;
    for (std::size_t i = 0; i < d; ++i) {
      row[i] = centroid[(i + d - shift) % d];
      if (spec_.noise_sigma > 0.0) row[i] += spec_.noise_sigma * noise.normal();
    }
    row = normalized(std::move(row));
    auto dst = out.row(l);
    for (std::size_t i = 0; i < d; ++i) dst[i] = static_cast<float>(row[i]);
  }
  return out;
}

std::vector<double> MockProvider::sentence_embedding(const std::string& text) const {
  const auto layers = layer_embeddings(text);
  const auto first = layers.row(0);
  return {first.begin(), first.end()};
}

Handshake parse_handshake(const json& body) {
  Handshake h;
  h.layer_model = body.at("layer_model").get<std::string>();
  h.sentence_model = body.at("sentence_model").get<std::string>();
  h.num_layers = body.at("num_layers").get<std::size_t>();
  h.hidden_size = body.at("hidden_size").get<std::size_t>();
  h.sentence_dim = body.at("sentence_dim").get<std::size_t>();
  h.context_window = body.at("context_window").get<std::size_t>();
  if (h.num_layers == 0 || h.hidden_size == 0 || h.sentence_dim == 0 || h.context_window == 0) {
    throw ShapeError("handshake dimensions must all be positive");
  }
  return h;
}

RemoteProvider::RemoteProvider(RemoteProviderConfig config)
    : config_(std::move(config)),
      layer_cache_(config_.cache_capacity),
      sentence_cache_(config_.cache_capacity) {
  const auto url = detail::parse_base_url(config_.base_url);
  auto client = detail::make_http_client(url, config_.timeout_ms);
  auto res = client->Get(url.path_prefix + "/v1/handshake");
  if (!res) {
    throw TransportError("embedding sidecar unreachable: " + httplib::to_string(res.error()), 1);
  }
  if (res->status != 200) {
    throw TransportError("embedding sidecar handshake returned HTTP " + std::to_string(res->status), 1);
  }
  try {
    handshake_ = parse_handshake(json::parse(res->body));
  } catch (const json::exception& e) {
    throw ShapeError(std::string("malformed handshake: ") + e.what());
  }
  if (!config_.layer_model.empty() && config_.layer_model != handshake_.layer_model) {
    throw Error("sidecar serves layer model \"" + handshake_.layer_model + "\", configured \"" +
                config_.layer_model + "\"");
  }
  if (!config_.sentence_model.empty() && config_.sentence_model != handshake_.sentence_model) {
    throw Error("sidecar serves sentence model \"" + handshake_.sentence_model +
                "\", configured \"" + config_.sentence_model + "\"");
  }
}

json RemoteProvider::post(const std::string& path, const json& body) const {
  const auto url = detail::parse_base_url(config_.base_url);
  auto client = detail::make_http_client(url, config_.timeout_ms);
  auto res = client->Post(url.path_prefix + path, body.dump(), "application/json");
  if (!res) {
    throw TransportError("embedding sidecar unreachable: " + httplib::to_string(res.error()), 1);
  }
  json reply;
  try {
    reply = json::parse(res->body);
  } catch (const json::exception&) {
    if (res->status == 200) throw ShapeError("sidecar returned a non-JSON body");
  }
  if (res->status == 413) {
    const std::size_t tokens = reply.is_object() ? reply.value("token_count", std::size_t{0}) : 0;
    throw CapacityError("text exceeds the sidecar context window (" + std::to_string(tokens) +
                            " tokens)",
                        tokens);
  }
  if (res->status >= 500) {
    throw TransportError("embedding sidecar failed with HTTP " + std::to_string(res->status), 1);
  }
  if (res->status != 200) {
    throw Error("embedding sidecar rejected request with HTTP " + std::to_string(res->status));
  }
  return reply;
}

LayerEmbeddings RemoteProvider::layer_embeddings(const std::string& text) const {
  if (text.empty()) throw Error("cannot embed empty text");
  const std::string key = handshake_.layer_model + '\0' +
                          (config_.apply_chat_template ? "t" : "r") + '\0' + text;
  if (auto hit = layer_cache_.get(key)) return *hit;

  const json reply =
      post("/v1/layer-embeddings", {{"text", text}, {"apply_chat_template", config_.apply_chat_template}});
  LayerEmbeddings out;
  try {
    out.model_id = reply.value("model_id", handshake_.layer_model);
    out.num_layers = reply.at("num_layers").get<std::size_t>();
    out.hidden_size = reply.at("hidden_size").get<std::size_t>();
    const auto& layers = reply.at("layers");
    if (out.num_layers != handshake_.num_layers || out.hidden_size != handshake_.hidden_size ||
        layers.size() != handshake_.num_layers) {
      throw ShapeError("layer embeddings shape " + std::to_string(layers.size()) + "x" +
                       std::to_string(out.hidden_size) + " disagrees with handshake " +
                       std::to_string(handshake_.num_layers) + "x" +
                       std::to_string(handshake_.hidden_size));
    }
    out.data.reserve(out.num_layers * out.hidden_size);
    for (const auto& row : layers) {
      if (row.size() != handshake_.hidden_size) {
        throw ShapeError("layer row of length " + std::to_string(row.size()) +
                         " disagrees with handshake hidden_size " +
                         std::to_string(handshake_.hidden_size));
      }
      for (const auto& v : row) {
        if (!v.is_number()) throw ShapeError("layer row contains a non-numeric entry");
        out.data.push_back(v.get<float>());
      }
    }
  } catch (const json::exception& e) {
    throw ShapeError(std::string("malformed layer embeddings: ") + e.what());
  }
  out.validate();
  layer_cache_.put(key, out);
  return out;
}

std::vector<double> RemoteProvider::sentence_embedding(const std::string& text) const {
  if (text.empty()) throw Error("cannot embed empty text");
  const std::string key = handshake_.sentence_model + '\0' + text;
  if (auto hit = sentence_cache_.get(key)) return *hit;

  const json reply = post("/v1/sentence-embedding", {{"text", text}});
  std::vector<double> vec;
  try {
    vec = reply.at("vector").get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw ShapeError(std::string("malformed sentence embedding: ") + e.what());
  }
  if (vec.size() != handshake_.sentence_dim) {
    throw ShapeError("sentence embedding has dimension " + std::to_string(vec.size()) +
                     ", handshake declares " + std::to_string(handshake_.sentence_dim));
  }
  for (double v : vec) {
    if (!std::isfinite(v)) throw ShapeError("sentence embedding contains a non-finite value");
  }
  sentence_cache_.put(key, vec);
  return vec;
}

void ProviderConfig::validate() const {
  if (kind == ProviderKind::remote && !base_url) {
    throw Error("remote provider requires base_url");
  }
  if (kind == ProviderKind::mock && base_url) {
    throw Error("mock provider must not set base_url");
  }
  if (timeout_ms <= 0) throw Error("provider timeout_ms must be positive");
  if (kind == ProviderKind::mock) mock.validate();
}

void to_json(json& j, const ProviderConfig& config) {
  j = {{"kind", config.kind == ProviderKind::mock ? "mock" : "remote"},
       {"layer_model", config.layer_model},
       {"sentence_model", config.sentence_model},
       {"timeout_ms", config.timeout_ms},
       {"apply_chat_template", config.apply_chat_template},
       {"mock", config.mock}};
  if (config.base_url) j["base_url"] = *config.base_url;
}

void from_json(const json& j, ProviderConfig& config) {
  const auto kind = j.value("kind", std::string("mock"));
  if (kind == "mock") {
    config.kind = ProviderKind::mock;
  } else if (kind == "remote") {
    config.kind = ProviderKind::remote;
  } else {
    throw Error("unknown provider kind \"" + kind + "\"");
  }
  if (j.contains("base_url")) {
    config.base_url = j.at("base_url").get<std::string>();
  } else {
    config.base_url.reset();
  }
  config.layer_model = j.value("layer_model", config.layer_model);
  config.sentence_model = j.value("sentence_model", config.sentence_model);
  config.timeout_ms = j.value("timeout_ms", config.timeout_ms);
  config.apply_chat_template = j.value("apply_chat_template", config.apply_chat_template);
  if (j.contains("mock")) config.mock = j.at("mock").get<MockProviderSpec>();
}

std::unique_ptr<EmbeddingProvider> make_provider(const ProviderConfig& config) {
  config.validate();
  if (config.kind == ProviderKind::mock) return std::make_unique<MockProvider>(config.mock);
  RemoteProviderConfig remote;
  remote.base_url = *config.base_url;
  remote.layer_model = config.layer_model;
  remote.sentence_model = config.sentence_model;
  remote.timeout_ms = config.timeout_ms;
  remote.apply_chat_template = config.apply_chat_template;
  return std::make_unique<RemoteProvider>(std::move(remote));
}

}  // namespace toxgate::embed
