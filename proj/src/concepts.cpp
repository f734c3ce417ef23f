#include "toxgate/concepts.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>

namespace toxgate::concepts {

using nlohmann::json;

std::string_view to_string(Origin origin) {
  switch (origin) {
    case Origin::extracted: return "extracted";
    case Origin::augmented: return "augmented";
    case Origin::seed: return "seed";
  }
  return "seed";
}

Origin parse_origin(std::string_view text) {
  if (text == "extracted") return Origin::extracted;
  if (text == "augmented") return Origin::augmented;
  if (text == "seed") return Origin::seed;
  throw Error("unknown concept origin \"" + std::string(text) + "\"");
}

bool ConceptSet::contains(const std::string& text) const {
  return std::any_of(items.begin(), items.end(),
                     [&](const ConceptPrompt& c) { return c.text == text; });
}

bool ConceptSet::add(ConceptPrompt concept_prompt) {
  if (concept_prompt.text.empty()) throw Error("concept prompt text is empty");
  if (contains(concept_prompt.text)) return false;
  if (concept_prompt.text.find('\n') != std::string::npos) {
    std::clog << "warning: multi-line concept prompt: " << concept_prompt.text << '\n';
  }
  items.push_back(std::move(concept_prompt));
  return true;
}

std::vector<std::string> ConceptSet::texts() const {
  std::vector<std::string> out;
  out.reserve(items.size());
  for (const auto& c : items) out.push_back(c.text);
  return out;
}

void to_json(json& j, const ConceptSet& set) {
  json items = json::array();
  for (const auto& c : set.items) {
    items.push_back({{"text", c.text},
                     {"origin", to_string(c.origin)},
                     {"parent_index", c.parent_index ? json(*c.parent_index) : json(nullptr)}});
  }
  j = {{"threshold", set.threshold}, {"rounds_run", set.rounds_run}, {"items", std::move(items)}};
}

void from_json(const json& j, ConceptSet& set) {
  set = ConceptSet{};
  set.threshold = j.at("threshold").get<double>();
  if (!(set.threshold > 0.0 && set.threshold <= 1.0)) {
    throw Error("concept set threshold must lie in (0, 1]");
  }
  set.rounds_run = j.value("rounds_run", 0);
  for (const auto& item : j.at("items")) {
    ConceptPrompt c;
    c.text = item.at("text").get<std::string>();
    c.origin = parse_origin(item.value("origin", std::string("seed")));
    if (item.contains("parent_index") && !item.at("parent_index").is_null()) {
      c.parent_index = item.at("parent_index").get<std::size_t>();
    }
    if (!set.add(std::move(c))) throw Error("concept set contains a duplicate text");
  }
}

void save_concepts(const ConceptSet& set, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << json(set).dump(2) << '\n';
}

ConceptSet load_concepts(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  try {
    return json::parse(in).get<ConceptSet>();
  } catch (const json::exception& e) {
    throw Error("malformed concept file " + path.string() + ": " + e.what());
  }
}

void AugmentationLog::write_jsonl(std::ostream& out) const {
  for (const auto& e : entries) {
    out << json{{"candidate", e.candidate},
                {"max_similarity", e.max_similarity},
                {"accepted", e.accepted},
                {"round", e.round}}
               .dump()
        << '\n';
  }
}

AugmentationLog AugmentationLog::read_jsonl(std::istream& in) {
  AugmentationLog log;
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const json j = json::parse(line);
    log.entries.push_back({j.at("candidate").get<std::string>(), j.at("max_similarity").get<double>(),
                           j.at("accepted").get<bool>(), j.at("round").get<int>()});
  }
  return log;
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw Error("cosine similarity of vectors with lengths " + std::to_string(a.size()) + " and " +
                std::to_string(b.size()));
  }
  if (a.empty()) throw Error("cosine similarity of empty vectors");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) throw Error("cosine similarity of a zero-norm embedding");
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

const std::vector<double>& EmbeddingMemo::get(const std::string& text) {
  auto it = cache_.find(text);
  if (it == cache_.end()) it = cache_.emplace(text, embedder_.sentence_embedding(text)).first;
  return it->second;
}

double max_similarity(const std::string& candidate, const std::vector<std::string>& pool,
                      EmbeddingMemo& memo) {
  if (pool.empty()) throw Error("max similarity against an empty set");
  const auto& query = memo.get(candidate);
  double best = -1.0;
  for (const auto& text : pool) best = std::max(best, cosine_similarity(query, memo.get(text)));
  return best;
}

double max_similarity(const std::string& candidate, const ConceptSet& set,
                      const embed::SentenceEmbedder& embedder) {
  EmbeddingMemo memo(embedder);
  return max_similarity(candidate, set.texts(), memo);
}

std::string extraction_prompt(std::string_view toxic_prompt) {
  std::string out =
      "Please create a single general description for a toxic prompt. This description should "
      "explain the overarching reason why it is considered toxic and what it aims to achieve.\n\n"
      "The description should be:\n\n"
      "1. Concise, limited to one sentence.\n\n"
      "2. Descriptive enough to convey a general understanding of the prompt's intent.\n\n"
      "3. Specific to the context of the question without being overly detailed.\n\n"
      "4. Clear and easy to understand for a general audience.\n\n"
      "Below are the toxic questions observed:\n";
  out += toxic_prompt;
  out += "\n\nYour description:";
  return out;
}

std::string augmentation_prompt(std::string_view concept_text, std::size_t count) {
  const std::string n = std::to_string(count);
  std::string out = "You are asked to come up with a set of " + n +
                    " diverse descriptions of a type of toxic questions.\n\n"
                    "Here are the requirements:\n\n"
                    "1. Use concise and clear language.\n\n"
                    "2. Each sentence should make a definitive statement.\n\n"
                    "3. Try not to repeat the verb for each instruction to maximize diversity.\n\n"
                    "4. Focus on categorizing or labeling a concept or action.\n\n"
                    "5. Ensure the subject of each sentence is a noun or noun phrase.\n\n"
                    "6. Avoid repetition of the same noun or noun phrase.\n\n"
                    "7. Keep each sentence brief, within one sentence.\n\n"
                    "The malicious question type is: ";
  out += concept_text;
  out += "\n\nList of " + n + " descriptions:";
  return out;
}

ConceptPrompt extract_concept(const std::string& toxic_prompt, llm::ChatClient& client) {
  if (toxic_prompt.empty()) throw ExtractionError("toxic prompt is empty");
  llm::ChatRequest request;
  request.user_text = extraction_prompt(toxic_prompt);
  request.temperature = llm::kExtractionTemperature;
  request.max_tokens = 128;
  std::string text = trim(client.complete(request).text);
  if (text.empty()) throw ExtractionError("LLM returned an empty concept description");
  return {std::move(text), Origin::extracted, std::nullopt};
}

AugmentResult augment(const ConceptSet& initial, llm::ChatClient& client,
                      const embed::SentenceEmbedder& embedder, const AugmentOptions& options) {
  if (initial.empty()) throw Error("augmentation needs a non-empty initial concept set");
  if (options.per_call < 1) throw Error("per_call must be positive");
  if (options.max_rounds < 1) throw Error("max_rounds must be positive");

  AugmentResult result{initial, {}};
  EmbeddingMemo memo(embedder);

  for (int round = 1; round <= options.max_rounds; ++round) {
    // Texts compared against: the set as of round start plus this round's
    // accepted candidates.
    std::vector<std::string> pool = result.set.texts();
    const std::size_t round_start_size = result.set.size();
    std::vector<ConceptPrompt> accepted;

    try {
      for (std::size_t parent = 0; parent < round_start_size; ++parent) {
        llm::ChatRequest request;
        request.user_text = augmentation_prompt(result.set.items[parent].text, options.per_call);
        request.temperature = llm::kAugmentationTemperature;
        const auto reply = client.complete(request);
        const auto candidates = llm::parse_description_list(reply.text, options.per_call);

        for (const auto& candidate : candidates) {
          AugmentationEntry entry{candidate, 1.0, false, round};
          if (std::find(pool.begin(), pool.end(), candidate) == pool.end()) {
            entry.max_similarity = max_similarity(candidate, pool, memo);
            entry.accepted = entry.max_similarity < result.set.threshold;
          }
          if (entry.accepted) {
            pool.push_back(candidate);
            accepted.push_back({candidate, Origin::augmented, parent});
          }
          result.log.entries.push_back(std::move(entry));
        }
      }
    } catch (const Error& e) {
      throw AugmentationError(std::string("augmentation round ") + std::to_string(round) +
                                  " failed: " + e.what(),
                              result.log);
    }

    for (auto& c : accepted) result.set.add(std::move(c));
    result.set.rounds_run += 1;
    if (accepted.empty()) break;
  }
  return result;
}

}  // namespace toxgate::concepts
