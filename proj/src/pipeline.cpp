#include "toxgate/pipeline.hpp"

#include <chrono>
#include <fstream>
#include <iostream>
#include <set>
#include <unordered_map>

namespace toxgate::pipeline {

using nlohmann::json;
namespace fs = std::filesystem;

std::unique_ptr<llm::ChatClient> make_client(const LlmConfig& config) {
  if (config.kind == LlmKind::scripted) {
    return std::make_unique<llm::ScriptedClient>(config.scripted);
  }
  return std::make_unique<llm::RemoteChatClient>(config.remote);
}

void PipelineConfig::validate() const {
  provider.validate();
  if (!(threshold > 0.0 && threshold <= 1.0)) throw Error("threshold must lie in (0, 1]");
  if (!(decision_threshold >= 0.0 && decision_threshold <= 1.0)) {
    throw Error("decision_threshold must lie in [0, 1]");
  }
  if (per_call < 1) throw Error("per_call must be positive");
  if (max_rounds < 1) throw Error("max_rounds must be positive");
  train_config().validate();
}

mlp::MlpConfig PipelineConfig::mlp_config(std::size_t input_dim) const {
  mlp::MlpConfig c;
  c.input_dim = input_dim;
  c.hidden_dims = hidden_dims;
  c.seed = seeds.init;
  return c;
}

mlp::TrainConfig PipelineConfig::train_config() const {
  auto tc = train;
  tc.shuffle_seed = seeds.shuffle;
  return tc;
}

fs::path PipelineConfig::scaler_path() const {
  auto p = model_path;
  p += ".scaler.json";
  return p;
}

void to_json(json& j, const PipelineConfig& c) {
  json llm_json;
  if (c.llm.kind == LlmKind::scripted) {
    llm_json = {{"kind", "scripted"},
                {"responses", c.llm.scripted.responses},
                {"on_exhaustion", c.llm.scripted.on_exhaustion == llm::OnExhaustion::repeat_last
                                      ? "repeat_last"
                                      : "error"}};
  } else {
    llm_json = {{"kind", "remote"},
                {"base_url", c.llm.remote.base_url},
                {"model", c.llm.remote.model},
                {"timeout_ms", c.llm.remote.timeout_ms}};
  }
  json train = c.train;
  train.erase("shuffle_seed");
  j = {{"provider", c.provider},
       {"llm", std::move(llm_json)},
       {"corpus_path", c.corpus_path.string()},
       {"concepts_path", c.concepts_path.string()},
       {"augment_log_path", c.augment_log_path.string()},
       {"bank_path", c.bank_path.string()},
       {"model_path", c.model_path.string()},
       {"output_dir", c.output_dir.string()},
       {"threshold", c.threshold},
       {"decision_threshold", c.decision_threshold},
       {"per_call", c.per_call},
       {"max_rounds", c.max_rounds},
       {"hidden_dims", c.hidden_dims},
       {"train", std::move(train)},
       {"seeds", {{"split", c.seeds.split}, {"init", c.seeds.init}, {"shuffle", c.seeds.shuffle}}},
       {"stratify", data::to_string(c.stratify)},
       {"normalize_features", c.normalize_features}};
}

void from_json(const json& j, PipelineConfig& c) {
  if (j.contains("provider")) c.provider = j.at("provider").get<embed::ProviderConfig>();
  if (j.contains("llm")) {
    const auto& l = j.at("llm");
    const auto kind = l.value("kind", std::string("scripted"));
    if (kind == "scripted") {
      c.llm.kind = LlmKind::scripted;
      c.llm.scripted.responses = l.value("responses", std::vector<std::string>{});
      const auto ex = l.value("on_exhaustion", std::string("error"));
      if (ex == "repeat_last") c.llm.scripted.on_exhaustion = llm::OnExhaustion::repeat_last;
      else if (ex == "error") c.llm.scripted.on_exhaustion = llm::OnExhaustion::error;
      else throw Error("unknown on_exhaustion \"" + ex + "\"");
    } else if (kind == "remote") {
      c.llm.kind = LlmKind::remote;
      c.llm.remote.base_url = l.at("base_url").get<std::string>();
      c.llm.remote.model = l.value("model", c.llm.remote.model);
      c.llm.remote.timeout_ms = l.value("timeout_ms", c.llm.remote.timeout_ms);
    } else {
      throw Error("unknown llm kind \"" + kind + "\"");
    }
  }
  auto path_field = [&](const char* key, fs::path& dst) {
    if (j.contains(key)) dst = j.at(key).get<std::string>();
  };
  path_field("corpus_path", c.corpus_path);
  path_field("concepts_path", c.concepts_path);
  path_field("augment_log_path", c.augment_log_path);
  path_field("bank_path", c.bank_path);
  path_field("model_path", c.model_path);
  path_field("output_dir", c.output_dir);
  c.threshold = j.value("threshold", c.threshold);
  c.decision_threshold = j.value("decision_threshold", c.decision_threshold);
  c.per_call = j.value("per_call", c.per_call);
  c.max_rounds = j.value("max_rounds", c.max_rounds);
  if (j.contains("hidden_dims")) {
    const auto dims = j.at("hidden_dims").get<std::vector<std::size_t>>();
    if (dims.size() != c.hidden_dims.size()) throw Error("hidden_dims must list exactly 4 widths");
    std::copy(dims.begin(), dims.end(), c.hidden_dims.begin());
  }
  if (j.contains("train")) c.train = j.at("train").get<mlp::TrainConfig>();
  if (j.contains("seeds")) {
    const auto& s = j.at("seeds");
    c.seeds.split = s.value("split", c.seeds.split);
    c.seeds.init = s.value("init", c.seeds.init);
    c.seeds.shuffle = s.value("shuffle", c.seeds.shuffle);
  }
  if (j.contains("stratify")) c.stratify = data::parse_stratify(j.at("stratify").get<std::string>());
  c.normalize_features = j.value("normalize_features", c.normalize_features);
}

PipelineConfig load_config(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StageError("cannot read config " + path.string());
  try {
    return json::parse(in).get<PipelineConfig>();
  } catch (const json::exception& e) {
    throw StageError("malformed config " + path.string() + ": " + e.what());
  }
}

namespace {

void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

void write_text(const fs::path& p, const std::string& text) {
  ensure_parent(p);
  std::ofstream out(p, std::ios::binary);
  if (!out) throw StageError("cannot write " + p.string());
  out << text;
}

std::vector<data::LabeledPrompt> load_corpus(const fs::path& path) {
  if (!fs::exists(path)) throw StageError("corpus not found: " + path.string());
  auto corpus = data::load_jsonl(path);
  if (corpus.empty()) throw StageError("corpus " + path.string() + " is empty");
  return corpus;
}

}  // namespace

concepts::ConceptSet run_extract(const PipelineConfig& config, const fs::path& toxic_samples,
                                 llm::ChatClient& client) {
  if (!fs::exists(toxic_samples)) throw StageError("toxic samples not found: " + toxic_samples.string());
  const auto samples = data::load_jsonl(toxic_samples);
  concepts::ConceptSet set;
  set.threshold = config.threshold;
  std::size_t toxic = 0;
  for (const auto& s : samples) {
    if (s.label != Label::toxic) continue;
    ++toxic;
    set.add(concepts::extract_concept(s.text, client));
  }
  if (toxic == 0) throw StageError("no toxic samples in " + toxic_samples.string());
  ensure_parent(config.concepts_path);
  concepts::save_concepts(set, config.concepts_path);
  return set;
}

concepts::AugmentResult run_augment(const PipelineConfig& config, llm::ChatClient& client,
                                    const embed::SentenceEmbedder& embedder) {
  auto initial = concepts::load_concepts(config.concepts_path);
  initial.threshold = config.threshold;
  concepts::AugmentOptions options;
  options.per_call = config.per_call;
  options.max_rounds = config.max_rounds;

  auto write_log = [&](const concepts::AugmentationLog& log) {
    ensure_parent(config.augment_log_path);
    std::ofstream out(config.augment_log_path, std::ios::binary);
    if (!out) throw StageError("cannot write " + config.augment_log_path.string());
    log.write_jsonl(out);
  };
  try {
    auto result = concepts::augment(initial, client, embedder, options);
    concepts::save_concepts(result.set, config.concepts_path);
    write_log(result.log);
    return result;
  } catch (const concepts::AugmentationError& e) {
    write_log(e.partial_log());
    throw;
  }
}

Detector::Detector(mlp::MlpModel model, features::ConceptBank bank,
                   std::shared_ptr<const embed::EmbeddingProvider> provider,
                   std::optional<features::FeatureScaler> scaler, double decision_threshold)
    : model_(std::move(model)),
      bank_(std::move(bank)),
      provider_(std::move(provider)),
      scaler_(std::move(scaler)),
      decision_threshold_(decision_threshold) {
  bank_.validate();
  if (model_.config.input_dim != bank_.num_layers * bank_.hidden_size) {
    throw ShapeError("model expects " + std::to_string(model_.config.input_dim) +
                     " features but the bank yields " +
                     std::to_string(bank_.num_layers * bank_.hidden_size));
  }
  if (provider_ && (provider_->num_layers() != bank_.num_layers ||
                    provider_->hidden_size() != bank_.hidden_size)) {
    throw ShapeError("provider shape differs from the concept bank");
  }
}

Detector Detector::load(const PipelineConfig& config,
                        std::shared_ptr<const embed::EmbeddingProvider> provider) {
  if (!fs::exists(config.model_path)) throw StageError("model not found: " + config.model_path.string());
  if (!fs::exists(config.bank_path)) throw StageError("concept bank not found: " + config.bank_path.string());
  auto model = mlp::load(config.model_path);
  auto bank = features::load_bank(config.bank_path);
  std::optional<features::FeatureScaler> scaler;
  if (config.normalize_features) {
    std::ifstream in(config.scaler_path(), std::ios::binary);
    if (!in) throw StageError("feature scaler not found: " + config.scaler_path().string());
    scaler = json::parse(in).get<features::FeatureScaler>();
  }
  return Detector(std::move(model), std::move(bank), std::move(provider), std::move(scaler),
                  config.decision_threshold);
}

std::vector<float> Detector::featurize(const std::string& text) const {
  auto f = features::build_feature(provider_->layer_embeddings(text), bank_).values;
  if (scaler_) scaler_->apply(f);
  return f;
}

mlp::Prediction Detector::classify(std::span<const float> feature) const {
  return mlp::predict(model_, feature, decision_threshold_);
}

Detector::Result Detector::detect(const std::string& text) const {
  if (text.empty()) throw Error("cannot classify empty text");
  const auto start = std::chrono::steady_clock::now();
  const auto feature = featurize(text);
  const auto pred = classify(feature);
  Result r;
  r.toxic = pred.label == Label::toxic;
  r.score = pred.score;
  r.latency_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return r;
}

json to_json(const Detector::Result& r) {
  return {{"toxic", r.toxic}, {"score", r.score}, {"latency_ms", r.latency_ms}};
}

void run_featurize(const PipelineConfig& config, const embed::EmbeddingProvider& provider) {
  const auto corpus = load_corpus(config.corpus_path);
  const features::ConceptBank bank = fs::exists(config.bank_path)
                                         ? features::load_bank(config.bank_path)
                                         : features::build_concept_bank(
                                               concepts::load_concepts(config.concepts_path), provider);
  std::vector<std::vector<float>> values;
  values.reserve(corpus.size());
  for (const auto& p : corpus) {
    values.push_back(features::build_feature(provider.layer_embeddings(p.text), bank).values);
  }
  std::vector<features::FeatureRow> rows;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    rows.push_back({std::string(to_string(corpus[i].label)), corpus[i].scenario.value_or(""), values[i]});
  }
  ensure_parent(config.features_path());
  std::ofstream out(config.features_path(), std::ios::binary);
  if (!out) throw StageError("cannot write " + config.features_path().string());
  features::write_feature_csv(out, rows);
}

TrainOutcome run_train(const PipelineConfig& config, const embed::EmbeddingProvider& provider) {
  config.validate();
  const auto corpus = load_corpus(config.corpus_path);
  const auto tc = config.train_config();

  TrainOutcome outcome;
  outcome.split = data::split(corpus, tc.train_fraction, config.seeds.split, config.stratify);
  if (outcome.split.train.size() < tc.batch_size) {
    throw StageError("training split has " + std::to_string(outcome.split.train.size()) +
                     " prompts, fewer than batch_size");
  }
  if (!fs::exists(config.concepts_path)) {
    throw StageError("concept file not found: " + config.concepts_path.string());
  }
  outcome.bank = features::build_concept_bank(concepts::load_concepts(config.concepts_path), provider);

  std::vector<std::vector<float>> feats;
  std::vector<Label> labels;
  for (const auto& p : outcome.split.train) {
    feats.push_back(features::build_feature(provider.layer_embeddings(p.text), outcome.bank).values);
    labels.push_back(p.label);
  }
  std::optional<features::FeatureScaler> scaler;
  if (config.normalize_features) {
    scaler = features::FeatureScaler::fit(feats);
    for (auto& f : feats) scaler->apply(f);
  }

  auto model = mlp::init<float>(config.mlp_config(outcome.bank.num_layers * outcome.bank.hidden_size));
  auto trained = mlp::train(std::move(model), feats, labels, tc);
  outcome.model = std::move(trained.model);
  outcome.report = std::move(trained.report);

  ensure_parent(config.bank_path);
  features::save_bank(outcome.bank, config.bank_path);
  ensure_parent(config.model_path);
  mlp::save(outcome.model, config.model_path);
  if (scaler) write_text(config.scaler_path(), json(*scaler).dump() + "\n");
  write_text(config.train_report_path(), json(outcome.report).dump(2) + "\n");

  json split_ids = {{"seed", outcome.split.seed},
                    {"fraction", outcome.split.fraction},
                    {"train", json::array()},
                    {"test", json::array()}};
  for (const auto& p : outcome.split.train) split_ids["train"].push_back(p.id);
  for (const auto& p : outcome.split.test) split_ids["test"].push_back(p.id);
  write_text(config.split_path(), split_ids.dump(2) + "\n");
  return outcome;
}

GroupMetrics group_metrics(std::span<const PredictionRecord> records) {
  GroupMetrics g;
  g.n = records.size();
  std::vector<Label> preds, truth;
  std::vector<double> scores;
  for (const auto& r : records) {
    preds.push_back(r.predicted);
    truth.push_back(r.label);
    scores.push_back(r.score);
  }
  g.counts = metrics::confusion(preds, truth);
  g.f1 = metrics::f1(g.counts);
  g.accuracy = metrics::accuracy(g.counts);
  if (g.counts.fp + g.counts.tn > 0) g.fpr = metrics::fpr(g.counts);
  const bool both = (g.counts.tp + g.counts.fn) > 0 && (g.counts.fp + g.counts.tn) > 0;
  if (both) g.auc = metrics::roc_auc(scores, truth).auc;
  return g;
}

json to_json(const GroupMetrics& g) {
  return {{"n", g.n},
          {"tp", g.counts.tp},
          {"fp", g.counts.fp},
          {"tn", g.counts.tn},
          {"fn", g.counts.fn},
          {"f1", g.f1},
          {"fpr", g.fpr ? json(*g.fpr) : json(nullptr)},
          {"accuracy", g.accuracy},
          {"auc", g.auc ? json(*g.auc) : json(nullptr)}};
}

json to_json(const EvalReport& r) {
  json scenarios = json::object();
  for (const auto& [name, g] : r.scenarios) scenarios[name] = to_json(g);
  json out = {{"overall", to_json(r.overall)}, {"scenarios", std::move(scenarios)}};
  if (!r.jailbreak_templates.empty()) out["jailbreak_templates"] = r.jailbreak_templates;
  return out;
}

namespace {

std::string csv_field(std::string_view text) {
  if (text.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(text);
  std::string out = "\"";
  for (char c : text) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<data::LabeledPrompt> test_prompts(const PipelineConfig& config,
                                              const std::vector<data::LabeledPrompt>& corpus) {
  if (!fs::exists(config.split_path())) {
    return data::split(corpus, config.train.train_fraction, config.seeds.split, config.stratify).test;
  }
  std::ifstream in(config.split_path(), std::ios::binary);
  const json split_ids = json::parse(in);
  std::unordered_map<std::string, const data::LabeledPrompt*> by_id;
  for (const auto& p : corpus) by_id.emplace(p.id, &p);
  std::vector<data::LabeledPrompt> out;
  for (const auto& id : split_ids.at("test")) {
    auto it = by_id.find(id.get<std::string>());
    if (it == by_id.end()) {
      throw StageError("split file names id \"" + id.get<std::string>() + "\" absent from the corpus");
    }
    out.push_back(*it->second);
  }
  return out;
}

}  // namespace

void write_predictions_csv(std::ostream& out, std::span<const PredictionRecord> records) {
  out << "id,scenario,label,score,predicted\n";
  for (const auto& r : records) {
    out << csv_field(r.id) << ',' << csv_field(r.scenario) << ',' << to_string(r.label) << ','
        << format_real(r.score) << ',' << to_string(r.predicted) << '\n';
  }
}

EvalOutcome run_evaluate(const PipelineConfig& config,
                         std::shared_ptr<const embed::EmbeddingProvider> provider,
                         const std::vector<data::JailbreakTemplate>* templates) {
  const Detector detector = Detector::load(config, std::move(provider));
  const auto corpus = load_corpus(config.corpus_path);
  auto test = test_prompts(config, corpus);
  if (test.empty()) throw StageError("test split is empty");

  if (templates && !templates->empty()) {
    std::vector<data::LabeledPrompt> wrapped;
    for (const auto& p : test) {
      if (p.label != Label::toxic) {
        wrapped.push_back(p);
        continue;
      }
      for (const auto& t : *templates) wrapped.push_back(data::wrap_with_template(t, p));
    }
    test = std::move(wrapped);
  }

  EvalOutcome outcome;
  for (const auto& p : test) {
    const auto pred = detector.classify(detector.featurize(p.text));
    outcome.predictions.push_back({p.id, p.scenario.value_or(""), p.label, pred.score, pred.label});
  }

  outcome.report.overall = group_metrics(outcome.predictions);
  std::map<std::string, std::vector<PredictionRecord>> by_scenario;
  for (const auto& r : outcome.predictions) {
    if (!r.scenario.empty()) by_scenario[r.scenario].push_back(r);
  }
  for (const auto& [name, records] : by_scenario) {
    outcome.report.scenarios[name] = group_metrics(records);
  }
  if (templates) {
    for (const auto& t : *templates) outcome.report.jailbreak_templates.push_back(t.name());
  }

  std::vector<double> scores;
  std::vector<Label> truth;
  for (const auto& r : outcome.predictions) {
    scores.push_back(r.score);
    truth.push_back(r.label);
  }
  if (outcome.report.overall.auc) outcome.roc = metrics::roc_auc(scores, truth);

  write_text(config.eval_report_path(), to_json(outcome.report).dump(2) + "\n");
  {
    ensure_parent(config.roc_path());
    std::ofstream out(config.roc_path(), std::ios::binary);
    metrics::write_roc_csv(out, outcome.roc);
  }
  {
    std::ofstream out(config.predictions_path(), std::ios::binary);
    write_predictions_csv(out, outcome.predictions);
  }
  return outcome;
}

}  // namespace toxgate::pipeline
