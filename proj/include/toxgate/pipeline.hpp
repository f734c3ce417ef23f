#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "toxgate/classifier.hpp"
#include "toxgate/concepts.hpp"
#include "toxgate/data.hpp"
#include "toxgate/embeddings.hpp"
#include "toxgate/features.hpp"
#include "toxgate/llm_client.hpp"
#include "toxgate/metrics.hpp"

namespace toxgate::pipeline {

enum class LlmKind { scripted, remote };

struct LlmConfig {
  LlmKind kind = LlmKind::scripted;
  llm::ScriptedClientSpec scripted;
  llm::RemoteClientConfig remote;
};

std::unique_ptr<llm::ChatClient> make_client(const LlmConfig& config);

struct Seeds {
  std::uint64_t split = 0;
  std::uint64_t init = 0;
  std::uint64_t shuffle = 0;
};

struct PipelineConfig {
  embed::ProviderConfig provider;
  LlmConfig llm;

  std::filesystem::path corpus_path = "corpus.jsonl";
  std::filesystem::path concepts_path = "concepts.json";
  std::filesystem::path augment_log_path = "augment_log.jsonl";
  std::filesystem::path bank_path = "bank.bin";
  std::filesystem::path model_path = "model.bin";
  std::filesystem::path output_dir = ".";

  double threshold = 0.8;           // concept similarity
  double decision_threshold = 0.5;  // p(toxic) cut-off
  std::size_t per_call = 5;
  int max_rounds = 10;

  std::array<std::size_t, mlp::kNumLayers - 1> hidden_dims{256, 128, 64, 32};
  mlp::TrainConfig train;  // shuffle_seed is taken from seeds
  Seeds seeds;
  data::Stratify stratify = data::Stratify::label;
  bool normalize_features = false;

  void validate() const;
  mlp::MlpConfig mlp_config(std::size_t input_dim) const;
  mlp::TrainConfig train_config() const;

  std::filesystem::path scaler_path() const;
  std::filesystem::path split_path() const { return output_dir / "split.json"; }
  std::filesystem::path train_report_path() const { return output_dir / "train_report.json"; }
  std::filesystem::path eval_report_path() const { return output_dir / "eval_report.json"; }
  std::filesystem::path roc_path() const { return output_dir / "roc.csv"; }
  std::filesystem::path predictions_path() const { return output_dir / "predictions.csv"; }
  std::filesystem::path features_path() const { return output_dir / "features.csv"; }
};

void to_json(nlohmann::json& j, const PipelineConfig& c);
void from_json(const nlohmann::json& j, PipelineConfig& c);
PipelineConfig load_config(const std::filesystem::path& path);

// Raised for pipeline-level input problems (missing files, empty corpora).
class StageError : public Error {
 public:
  using Error::Error;
};

// Extracts one concept per toxic sample and writes concepts_path.
concepts::ConceptSet run_extract(const PipelineConfig& config,
                                 const std::filesystem::path& toxic_samples,
                                 llm::ChatClient& client);

// Augments concepts_path in place and writes augment_log_path.
concepts::AugmentResult run_augment(const PipelineConfig& config, llm::ChatClient& client,
                                    const embed::SentenceEmbedder& embedder);

// Loaded model plus everything needed to score raw text.
class Detector {
 public:
  Detector(mlp::MlpModel model, features::ConceptBank bank,
           std::shared_ptr<const embed::EmbeddingProvider> provider,
           std::optional<features::FeatureScaler> scaler, double decision_threshold);

  static Detector load(const PipelineConfig& config,
                       std::shared_ptr<const embed::EmbeddingProvider> provider);

  struct Result {
    bool toxic = false;
    double score = 0.0;
    double latency_ms = 0.0;
  };

  Result detect(const std::string& text) const;
  std::vector<float> featurize(const std::string& text) const;
  mlp::Prediction classify(std::span<const float> feature) const;

  const features::ConceptBank& bank() const { return bank_; }
  const mlp::MlpModel& model() const { return model_; }

 private:
  mlp::MlpModel model_;
  features::ConceptBank bank_;
  std::shared_ptr<const embed::EmbeddingProvider> provider_;
  std::optional<features::FeatureScaler> scaler_;
  double decision_threshold_;
};

nlohmann::json to_json(const Detector::Result& r);

// Feature CSV over the whole corpus.
void run_featurize(const PipelineConfig& config, const embed::EmbeddingProvider& provider);

struct TrainOutcome {
  mlp::TrainReport report;
  data::DatasetSplit split;
  features::ConceptBank bank;
  mlp::MlpModel model;
};

// Trains on the training half of the corpus. Every artifact needed by
// evaluate and detect is written next to the model.
TrainOutcome run_train(const PipelineConfig& config, const embed::EmbeddingProvider& provider);

struct GroupMetrics {
  std::size_t n = 0;
  metrics::ConfusionCounts counts;
  double f1 = 0.0;
  std::optional<double> fpr;       // needs benign samples
  double accuracy = 0.0;
  std::optional<double> auc;       // needs both classes
};

struct EvalReport {
  GroupMetrics overall;
  std::map<std::string, GroupMetrics> scenarios;
  std::vector<std::string> jailbreak_templates;
};

nlohmann::json to_json(const GroupMetrics& g);
nlohmann::json to_json(const EvalReport& r);

struct PredictionRecord {
  std::string id;
  std::string scenario;
  Label label;
  double score;
  Label predicted;
};

struct EvalOutcome {
  EvalReport report;
  metrics::RocCurve roc;
  std::vector<PredictionRecord> predictions;
};

GroupMetrics group_metrics(std::span<const PredictionRecord> records);

// Scores the frozen test split (recomputed from the seeds when no split file
// exists). With templates, every toxic test prompt is replaced by its
// wrapped variants, one per template.
EvalOutcome run_evaluate(const PipelineConfig& config,
                         std::shared_ptr<const embed::EmbeddingProvider> provider,
                         const std::vector<data::JailbreakTemplate>* templates = nullptr);

void write_predictions_csv(std::ostream& out, std::span<const PredictionRecord> records);

}  // namespace toxgate::pipeline
