#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "toxgate/common.hpp"
#include "toxgate/embeddings.hpp"
#include "toxgate/llm_client.hpp"

namespace toxgate::concepts {

enum class Origin { extracted, augmented, seed };

std::string_view to_string(Origin origin);
Origin parse_origin(std::string_view text);

struct ConceptPrompt {
  std::string text;
  Origin origin = Origin::seed;
  // Index of the concept this one was diversified from.
  std::optional<std::size_t> parent_index;

  bool operator==(const ConceptPrompt&) const = default;
};

// Insertion-ordered, free of exact-text duplicates.
struct ConceptSet {
  std::vector<ConceptPrompt> items;
  double threshold = 0.8;
  int rounds_run = 0;

  bool contains(const std::string& text) const;
  // Returns false (and leaves the set untouched) for a duplicate text.
  bool add(ConceptPrompt concept_prompt);
  std::vector<std::string> texts() const;
  bool empty() const { return items.empty(); }
  std::size_t size() const { return items.size(); }
};

void to_json(nlohmann::json& j, const ConceptSet& set);
void from_json(const nlohmann::json& j, ConceptSet& set);
void save_concepts(const ConceptSet& set, const std::filesystem::path& path);
ConceptSet load_concepts(const std::filesystem::path& path);

struct AugmentationEntry {
  std::string candidate;
  double max_similarity = 0.0;
  bool accepted = false;
  int round = 1;

  bool operator==(const AugmentationEntry&) const = default;
};

struct AugmentationLog {
  std::vector<AugmentationEntry> entries;

  void write_jsonl(std::ostream& out) const;
  static AugmentationLog read_jsonl(std::istream& in);
};

class ExtractionError : public Error {
 public:
  using Error::Error;
};

// Raised when the LLM or the embedder fails mid-augmentation; carries
// everything logged up to the failure.
class AugmentationError : public Error {
 public:
  AugmentationError(const std::string& what, AugmentationLog partial)
      : Error(what), partial_log_(std::move(partial)) {}
  const AugmentationLog& partial_log() const { return partial_log_; }

 private:
  AugmentationLog partial_log_;
};

// <a, b> / (|a| |b|). Throws on a length mismatch or a zero-norm input.
double cosine_similarity(std::span<const double> a, std::span<const double> b);

// Memoizes sentence embeddings for the lifetime of one run.
class EmbeddingMemo {
 public:
  explicit EmbeddingMemo(const embed::SentenceEmbedder& embedder) : embedder_(embedder) {}
  const std::vector<double>& get(const std::string& text);
  std::size_t size() const { return cache_.size(); }

 private:
  const embed::SentenceEmbedder& embedder_;
  std::unordered_map<std::string, std::vector<double>> cache_;
};

double max_similarity(const std::string& candidate, const std::vector<std::string>& pool,
                      EmbeddingMemo& memo);
double max_similarity(const std::string& candidate, const ConceptSet& set,
                      const embed::SentenceEmbedder& embedder);

std::string extraction_prompt(std::string_view toxic_prompt);
std::string augmentation_prompt(std::string_view concept_text, std::size_t count);

ConceptPrompt extract_concept(const std::string& toxic_prompt, llm::ChatClient& client);

struct AugmentOptions {
  std::size_t per_call = 5;
  int max_rounds = 10;
};

struct AugmentResult {
  ConceptSet set;
  AugmentationLog log;
};

// LLM-driven diversification loop. Every round asks the LLM for
// `per_call` variations of each concept present at the start of the round;
// a candidate is kept when its maximum cosine similarity against the set
// plus the candidates already kept this round is strictly below the set's
// threshold. Stops when a round keeps nothing or after max_rounds.
AugmentResult augment(const ConceptSet& initial, llm::ChatClient& client,
                      const embed::SentenceEmbedder& embedder, const AugmentOptions& options = {});

}  // namespace toxgate::concepts
