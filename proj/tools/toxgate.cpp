// toxgate: command-line driver for the toxic prompt detection pipeline.
//
// Exit codes: 0 success (detect: benign), 1 detect: toxic, 2 any stage
// failure, 3 training diverged.

#include <csignal>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "toxgate/pipeline.hpp"
#include "toxgate/service.hpp"

namespace {

using namespace toxgate;
using nlohmann::json;

constexpr int kExitError = 2;
constexpr int kExitDiverged = 3;

struct Overrides {
  std::string config_path;
  std::optional<double> threshold;
  std::optional<double> decision_threshold;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> provider;
};

pipeline::PipelineConfig resolve_config(const Overrides& o) {
  pipeline::PipelineConfig config;
  if (!o.config_path.empty()) config = pipeline::load_config(o.config_path);
  if (o.threshold) config.threshold = *o.threshold;
  if (o.decision_threshold) config.decision_threshold = *o.decision_threshold;
  if (o.seed) config.seeds = {*o.seed, *o.seed, *o.seed};
  if (o.provider) {
    if (*o.provider == "mock") {
      config.provider.kind = embed::ProviderKind::mock;
      config.provider.base_url.reset();
    } else {
      config.provider.kind = embed::ProviderKind::remote;
    }
  }
  config.validate();
  return config;
}

std::shared_ptr<const embed::EmbeddingProvider> provider_for(const pipeline::PipelineConfig& c) {
  return embed::make_provider(c.provider);
}

httplib::Server* g_server = nullptr;

void handle_signal(int) {
  if (g_server) g_server->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"toxgate - greybox toxic prompt detection"};
  app.require_subcommand(1);

  Overrides o;
  app.add_option("--config", o.config_path, "Pipeline configuration (JSON)");
  app.add_option("--threshold", o.threshold, "Concept similarity threshold")
      ->check(CLI::Range(0.0, 1.0));
  app.add_option("--decision-threshold", o.decision_threshold, "p(toxic) decision cut-off")
      ->check(CLI::Range(0.0, 1.0));
  app.add_option("--seed", o.seed, "Seed for the split, initialization and shuffling");
  app.add_option("--provider", o.provider, "Embedding provider")
      ->check(CLI::IsMember({"mock", "remote"}));

  std::string samples_path;
  auto* extract = app.add_subcommand("extract", "Extract concept prompts from toxic samples");
  extract->add_option("samples", samples_path, "Corpus JSONL; toxic records are used")->required();

  auto* augment = app.add_subcommand("augment", "Diversify the concept set with the LLM");
  auto* featurize = app.add_subcommand("featurize", "Export corpus feature vectors as CSV");
  auto* train = app.add_subcommand("train", "Build the concept bank and train the classifier");

  std::string jailbreak_path;
  auto* evaluate = app.add_subcommand("evaluate", "Score the test split and write reports");
  evaluate->add_option("--jailbreak", jailbreak_path, "Jailbreak template file (JSON)");

  std::string text;
  auto* detect = app.add_subcommand("detect", "Classify one prompt");
  detect->add_option("text", text, "Prompt text")->required();

  int port = 8080;
  std::string host = "127.0.0.1";
  auto* serve = app.add_subcommand("serve", "Run the detection HTTP service");
  serve->add_option("--port", port, "Listen port");
  serve->add_option("--host", host, "Listen address");

  CLI11_PARSE(app, argc, argv);

  try {
    const auto config = resolve_config(o);

    if (*extract) {
      auto client = pipeline::make_client(config.llm);
      const auto set = pipeline::run_extract(config, samples_path, *client);
      std::cout << "extracted " << set.size() << " concept prompts -> "
                << config.concepts_path.string() << '\n';
    } else if (*augment) {
      auto client = pipeline::make_client(config.llm);
      auto provider = provider_for(config);
      const auto result = pipeline::run_augment(config, *client, *provider);
      std::cout << "concept set has " << result.set.size() << " prompts after "
                << result.set.rounds_run << " rounds; " << result.log.entries.size()
                << " candidates logged\n";
    } else if (*featurize) {
      auto provider = provider_for(config);
      pipeline::run_featurize(config, *provider);
      std::cout << "features -> " << config.features_path().string() << '\n';
    } else if (*train) {
      auto provider = provider_for(config);
      const auto outcome = pipeline::run_train(config, *provider);
      const auto& last = outcome.report.per_epoch.back();
      std::cout << "trained " << outcome.report.per_epoch.size() << " epochs in "
                << outcome.report.wall_time_s << " s; final loss " << last.mean_loss
                << ", train accuracy " << last.train_accuracy << '\n';
    } else if (*evaluate) {
      std::vector<data::JailbreakTemplate> templates;
      if (!jailbreak_path.empty()) templates = data::load_templates(jailbreak_path);
      const auto outcome =
          pipeline::run_evaluate(config, provider_for(config), jailbreak_path.empty() ? nullptr : &templates);
      std::cout << pipeline::to_json(outcome.report.overall).dump() << '\n';
    } else if (*detect) {
      if (text.empty()) {
        std::cerr << "error: text is empty\n";
        return kExitError;
      }
      const auto detector = pipeline::Detector::load(config, provider_for(config));
      const auto result = detector.detect(text);
      std::cout << pipeline::to_json(result).dump() << '\n';
      return result.toxic ? 1 : 0;
    } else if (*serve) {
      const auto detector = pipeline::Detector::load(config, provider_for(config));
      httplib::Server server;
      service::install_routes(server, detector);
      server.set_tcp_nodelay(true);
      g_server = &server;
      std::signal(SIGINT, handle_signal);
      std::signal(SIGTERM, handle_signal);
      std::cerr << "listening on " << host << ':' << port << '\n';
      if (!server.listen(host, port)) {
        std::cerr << "error: cannot listen on " << host << ':' << port << '\n';
        return kExitError;
      }
    }
  } catch (const mlp::DivergedError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitDiverged;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitError;
  }
  return 0;
}
