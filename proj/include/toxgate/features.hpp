#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "toxgate/concepts.hpp"
#include "toxgate/embeddings.hpp"

namespace toxgate::features {

// Concept prompts with their per-layer embeddings under the model being
// guarded. Immutable once built.
struct ConceptBank {
  std::vector<concepts::ConceptPrompt> concepts;
  std::vector<embed::LayerEmbeddings> embeddings;
  std::size_t num_layers = 0;
  std::size_t hidden_size = 0;

  std::size_t size() const { return concepts.size(); }
  // Throws ShapeError on an empty bank or inconsistent shapes.
  void validate() const;
};

class PartialBankError : public Error {
 public:
  PartialBankError(const std::string& what, std::size_t failed_index)
      : Error(what), failed_index_(failed_index) {}
  std::size_t failed_index() const { return failed_index_; }

 private:
  std::size_t failed_index_;
};

ConceptBank build_concept_bank(const concepts::ConceptSet& concepts,
                               const embed::EmbeddingProvider& provider);

// Binary file: "TOXGATE-BANK", u32 version, u32 header length, JSON header,
// then every concept's L x d float32 matrix in bank order (little-endian).
void save_bank(const ConceptBank& bank, const std::filesystem::path& path);
ConceptBank load_bank(const std::filesystem::path& path);

struct FeatureVector {
  std::vector<float> values;                  // L * d
  std::vector<std::size_t> selected_concepts;  // winning concept per layer
};

// Concept whose embedding at `layer` has the largest inner product with
// `user_layer`; ties go to the lowest index.
std::size_t select_concept(std::span<const float> user_layer, const ConceptBank& bank,
                           std::size_t layer);

// Per layer, the selected concept's embedding multiplied element-wise with
// the user's; the layer segments are concatenated in layer order.
FeatureVector build_feature(const embed::LayerEmbeddings& user, const ConceptBank& bank);

// Optional per-dimension z-scoring with statistics frozen from training data.
struct FeatureScaler {
  std::vector<double> mean;
  std::vector<double> scale;  // 1 / std, or 1 where std == 0

  static FeatureScaler fit(const std::vector<std::vector<float>>& features);
  void apply(std::vector<float>& feature) const;
  bool empty() const { return mean.empty(); }
};

void to_json(nlohmann::json& j, const FeatureScaler& scaler);
void from_json(const nlohmann::json& j, FeatureScaler& scaler);

struct FeatureRow {
  std::string label;
  std::string scenario;
  std::span<const float> values;
};

// CSV with header label,scenario,f_0,...,f_{n-1}.
void write_feature_csv(std::ostream& out, std::span<const FeatureRow> rows);

}  // namespace toxgate::features
