#pragma once

#include <cstddef>
#include <cstdint>
#include <list>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "json.hpp"
#include "toxgate/common.hpp"

namespace toxgate::embed {

// Last-token hidden state after every transformer block, one row per
// block, stored row-major.
struct LayerEmbeddings {
  std::string model_id;
  std::size_t num_layers = 0;
  std::size_t hidden_size = 0;
  std::vector<float> data;

  std::span<const float> row(std::size_t layer) const {
    return {data.data() + layer * hidden_size, hidden_size};
  }
  std::span<float> row(std::size_t layer) {
    return {data.data() + layer * hidden_size, hidden_size};
  }

  // Throws ShapeError on a size mismatch or a non-finite entry.
  void validate() const;
};

// Text too long for the served model's context window.
class CapacityError : public Error {
 public:
  CapacityError(const std::string& what, std::size_t token_count)
      : Error(what), token_count_(token_count) {}
  std::size_t token_count() const { return token_count_; }

 private:
  std::size_t token_count_;
};

class SentenceEmbedder {
 public:
  virtual ~SentenceEmbedder() = default;
  virtual std::vector<double> sentence_embedding(const std::string& text) const = 0;
};

class EmbeddingProvider : public SentenceEmbedder {
 public:
  virtual LayerEmbeddings layer_embeddings(const std::string& text) const = 0;
  virtual std::size_t num_layers() const = 0;
  virtual std::size_t hidden_size() const = 0;
  virtual std::string model_id() const = 0;
};

struct KeywordCluster {
  std::string keyword;
  std::uint64_t centroid_seed = 0;
  // Overrides the seeded centroid when non-empty; must have hidden_size entries.
  std::vector<double> centroid;
};

struct MockProviderSpec {
  std::size_t num_layers = 4;
  std::size_t hidden_size = 32;
  std::uint64_t seed = 0;
  std::vector<KeywordCluster> clusters;
  double noise_sigma = 0.0;

  void validate() const;
};

void to_json(nlohmann::json& j, const MockProviderSpec& spec);
void from_json(const nlohmann::json& j, MockProviderSpec& spec);

// Deterministic stand-in for a served model. Texts containing a cluster
// keyword (case-insensitive, first listed cluster wins) land near that
// cluster's centroid; everything else lands near the default centroid.
// Row l is the centroid cyclically shifted by l positions, plus Gaussian
// noise seeded by seed ^ hash(text), then unit-normalized.
class MockProvider final : public EmbeddingProvider {
 public:
  explicit MockProvider(MockProviderSpec spec);

  LayerEmbeddings layer_embeddings(const std::string& text) const override;
  // The layer-0 row of layer_embeddings.
  std::vector<double> sentence_embedding(const std::string& text) const override;

  std::size_t num_layers() const override { return spec_.num_layers; }
  std::size_t hidden_size() const override { return spec_.hidden_size; }
  std::string model_id() const override { return "mock"; }

  const MockProviderSpec& spec() const { return spec_; }
  // Index into spec().clusters, or nullopt for the default centroid.
  std::optional<std::size_t> matching_cluster(const std::string& text) const;

 private:
  MockProviderSpec spec_;
  std::vector<std::vector<double>> centroids_;  // clusters..., then default
};

struct Handshake {
  std::string layer_model;
  std::string sentence_model;
  std::size_t num_layers = 0;
  std::size_t hidden_size = 0;
  std::size_t sentence_dim = 0;
  std::size_t context_window = 0;
};

Handshake parse_handshake(const nlohmann::json& body);

// Thread-safe least-recently-used map.
template <class Key, class Value, class Hash = std::hash<Key>>
class LruCache {
 public:
  explicit LruCache(std::size_t capacity) : capacity_(capacity) {}

  std::optional<Value> get(const Key& key) {
    std::lock_guard lock(mutex_);
    auto it = index_.find(key);
    if (it == index_.end()) return std::nullopt;
    order_.splice(order_.begin(), order_, it->second);
    return it->second->second;
  }

  void put(const Key& key, Value value) {
    std::lock_guard lock(mutex_);
    if (capacity_ == 0) return;
    auto it = index_.find(key);
    if (it != index_.end()) {
      it->second->second = std::move(value);
      order_.splice(order_.begin(), order_, it->second);
      return;
    }
    order_.emplace_front(key, std::move(value));
    index_.emplace(key, order_.begin());
    if (order_.size() > capacity_) {
      index_.erase(order_.back().first);
      order_.pop_back();
    }
  }

  std::size_t size() const {
    std::lock_guard lock(mutex_);
    return order_.size();
  }

 private:
  std::size_t capacity_;
  mutable std::mutex mutex_;
  std::list<std::pair<Key, Value>> order_;
  std::unordered_map<Key, typename std::list<std::pair<Key, Value>>::iterator, Hash> index_;
};

struct RemoteProviderConfig {
  std::string base_url;
  // When set, the handshake must report these models.
  std::string layer_model;
  std::string sentence_model;
  int timeout_ms = 30000;
  bool apply_chat_template = false;
  std::size_t cache_capacity = 10000;
};

// Consumer side of the embedding sidecar protocol. The handshake is fetched
// once at construction; every response is checked against it.
class RemoteProvider final : public EmbeddingProvider {
 public:
  explicit RemoteProvider(RemoteProviderConfig config);

  LayerEmbeddings layer_embeddings(const std::string& text) const override;
  std::vector<double> sentence_embedding(const std::string& text) const override;

  std::size_t num_layers() const override { return handshake_.num_layers; }
  std::size_t hidden_size() const override { return handshake_.hidden_size; }
  std::string model_id() const override { return handshake_.layer_model; }
  const Handshake& handshake() const { return handshake_; }

 private:
  nlohmann::json post(const std::string& path, const nlohmann::json& body) const;

  RemoteProviderConfig config_;
  Handshake handshake_;
  mutable LruCache<std::string, LayerEmbeddings> layer_cache_;
  mutable LruCache<std::string, std::vector<double>> sentence_cache_;
};

enum class ProviderKind { mock, remote };

struct ProviderConfig {
  ProviderKind kind = ProviderKind::mock;
  std::optional<std::string> base_url;
  std::string layer_model;
  std::string sentence_model;
  int timeout_ms = 30000;
  bool apply_chat_template = false;
  MockProviderSpec mock;

  void validate() const;
};

void to_json(nlohmann::json& j, const ProviderConfig& config);
void from_json(const nlohmann::json& j, ProviderConfig& config);

std::unique_ptr<EmbeddingProvider> make_provider(const ProviderConfig& config);

}  // namespace toxgate::embed
