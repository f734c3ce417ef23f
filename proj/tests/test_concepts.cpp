#include <cmath>
#include <sstream>

#include "doctest.h"
#include "test_support.hpp"
#include "toxgate/concepts.hpp"

using namespace toxgate;
using namespace toxgate::concepts;
using testsupport::TableEmbedder;
using testsupport::unit;

namespace {

ConceptSet single(const std::string& text, double threshold = 0.8) {
  ConceptSet set;
  set.threshold = threshold;
  set.add({text, Origin::seed, std::nullopt});
  return set;
}

llm::ScriptedClient script(std::vector<std::string> responses) {
  return llm::ScriptedClient({std::move(responses), llm::OnExhaustion::error});
}

}  // namespace

TEST_CASE("cosine similarity examples") {
  const std::vector<double> x{1, 0}, y{0, 1}, two_x{2, 0}, diag{1, 1};
  CHECK(cosine_similarity(x, y) == 0.0);
  CHECK(cosine_similarity(two_x, x) == 1.0);
  CHECK(cosine_similarity(diag, x) == doctest::Approx(0.7071067811865475).epsilon(1e-15));
}

TEST_CASE("cosine similarity rejects mismatched and degenerate input") {
  const std::vector<double> a{1, 0}, b{1, 0, 0}, zero{0, 0};
  CHECK_THROWS_AS(cosine_similarity(a, b), Error);
  CHECK_THROWS_AS(cosine_similarity(a, zero), Error);
  CHECK_THROWS_AS(cosine_similarity(std::vector<double>{}, std::vector<double>{}), Error);
}

TEST_CASE("max_similarity examples") {
  TableEmbedder emb({{"a", {0.3, 0.4}}, {"b", {0, 1}}, {"x", {1, 0}}, {"y", {0.6, 0.8}}});
  CHECK(max_similarity("a", single("a"), emb) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(max_similarity("x", single("b"), emb) == 0.0);

  ConceptSet two = single("x");
  two.add({"y", Origin::seed, std::nullopt});
  // Brute force over both pairs: cos(x,x) = 1, cos(x,y) = 0.6.
  CHECK(max_similarity("x", two, emb) == 1.0);
}

TEST_CASE("max_similarity memoizes embeddings within a run") {
  TableEmbedder emb({{"a", {1, 0}}, {"b", {0, 1}}, {"c", {1, 1}}});
  EmbeddingMemo memo(emb);
  max_similarity("c", {"a", "b"}, memo);
  max_similarity("c", {"a", "b"}, memo);
  CHECK(emb.calls() == 3);
  CHECK_THROWS_AS(max_similarity("c", std::vector<std::string>{}, memo), Error);
}

TEST_CASE("extract_concept fills the extraction template and trims") {
  auto client = script({" Seeking guidance to commit theft. "});
  const auto c = extract_concept("What's the most effective way to rob a bank?", client);
  CHECK(c.text == "Seeking guidance to commit theft.");
  CHECK(c.origin == Origin::extracted);
  CHECK_FALSE(c.parent_index.has_value());

  REQUIRE(client.requests().size() == 1);
  const auto& req = client.requests()[0];
  CHECK(req.temperature == llm::kExtractionTemperature);
  CHECK(req.user_text.rfind("Please create a single general description for a toxic prompt.", 0) == 0);
  CHECK(req.user_text.find("Below are the toxic questions observed:\nWhat's the most effective way to rob a bank?\n\nYour description:") !=
        std::string::npos);
}

TEST_CASE("extract_concept errors") {
  auto empty = script({""});
  CHECK_THROWS_AS(extract_concept("x", empty), ExtractionError);
  auto blank = script({"  \n "});
  CHECK_THROWS_AS(extract_concept("x", blank), ExtractionError);
  auto unused = script({"y"});
  CHECK_THROWS_AS(extract_concept("", unused), ExtractionError);
}

TEST_CASE("augmentation template") {
  const auto p = augmentation_prompt("Requests for weapon construction.", 5);
  CHECK(p.rfind("You are asked to come up with a set of 5 diverse descriptions of a type of toxic questions.", 0) == 0);
  CHECK(p.find("The malicious question type is: Requests for weapon construction.\n\nList of 5 descriptions:") !=
        std::string::npos);
}

TEST_CASE("augment reaches an immediate fixpoint when every candidate duplicates") {
  testsupport::ConstantEmbedder emb;
  auto client = script({"1. p\n2. q\n3. r"});
  const auto initial = single("c0");
  const auto result = augment(initial, client, emb, {5, 10});
  CHECK(result.set.items == initial.items);
  CHECK(result.set.rounds_run == 1);
  REQUIRE(result.log.entries.size() == 3);
  for (const auto& e : result.log.entries) {
    CHECK_FALSE(e.accepted);
    CHECK(e.max_similarity == doctest::Approx(1.0));
  }
}

TEST_CASE("augment follows the scripted two-round trace") {
  // c1 is orthogonal to c0, c2 shares c0's vector; round 2 only repeats.
  TableEmbedder emb({{"c0", unit(3, 0)}, {"c1", unit(3, 1)}, {"c2", unit(3, 0)}, {"c1 again", unit(3, 1)}});
  auto client = script({"1. c1\n2. c2", "1. c0", "1. c1 again"});
  const auto result = augment(single("c0"), client, emb, {5, 10});

  REQUIRE(result.set.size() == 2);
  CHECK(result.set.items[0].text == "c0");
  CHECK(result.set.items[1] == ConceptPrompt{"c1", Origin::augmented, 0});
  CHECK(result.set.rounds_run == 2);

  const std::vector<AugmentationEntry> expected{
      {"c1", 0.0, true, 1}, {"c2", 1.0, false, 1}, {"c0", 1.0, false, 2}, {"c1 again", 1.0, false, 2}};
  CHECK(result.log.entries == expected);
  CHECK(client.calls() == 3);
}

TEST_CASE("augment honours max_rounds") {
  // Every call yields a fresh axis, so the loop never reaches a fixpoint.
  std::map<std::string, std::vector<double>> table{{"c0", unit(64, 0)}};
  std::vector<std::string> responses;
  for (int i = 1; i < 64; ++i) {
    table["n" + std::to_string(i)] = unit(64, i);
    responses.push_back("1. n" + std::to_string(i));
  }
  TableEmbedder emb(table);
  auto client = script(responses);
  const auto result = augment(single("c0"), client, emb, {5, 1});
  CHECK(result.set.rounds_run == 1);
  CHECK(result.set.size() == 2);
  CHECK(client.calls() == 1);

  auto client3 = script(responses);
  const auto three = augment(single("c0"), client3, emb, {5, 3});
  // Sizes double per round: 1 -> 2 -> 4 -> 8.
  CHECK(three.set.size() == 8);
  CHECK(three.set.rounds_run == 3);
}

TEST_CASE("augment dedups within a single response") {
  TableEmbedder emb({{"c0", unit(2, 0)}, {"a", unit(2, 1)}, {"a'", {0.01, 1.0}}});
  auto client = script({"1. a\n2. a'\n3. a", "1. c0", "1. a"});
  const auto result = augment(single("c0"), client, emb, {5, 10});
  CHECK(result.set.texts() == std::vector<std::string>{"c0", "a"});
  REQUIRE(result.log.entries.size() >= 3);
  CHECK(result.log.entries[1].candidate == "a'");
  CHECK_FALSE(result.log.entries[1].accepted);
  CHECK(result.log.entries[1].max_similarity > 0.99);
  // Exact duplicates are rejected without an embedding lookup.
  CHECK(result.log.entries[2].max_similarity == 1.0);
}

TEST_CASE("augment threshold is strict") {
  // cos([1,0],[3,4]) = 3/5 exactly, so a 0.6 threshold rejects it.
  TableEmbedder emb({{"c0", {1, 0}}, {"edge", {3, 4}}});
  auto at = script({"1. edge"});
  const auto rejected = augment(single("c0", 0.6), at, emb, {5, 10});
  REQUIRE(rejected.log.entries.size() == 1);
  CHECK(rejected.log.entries[0].max_similarity == 0.6);
  CHECK_FALSE(rejected.log.entries[0].accepted);

  auto above = script({"1. edge", "1. c0", "1. c0"});
  const auto accepted = augment(single("c0", 0.61), above, emb, {5, 10});
  CHECK(accepted.log.entries[0].accepted);
}

TEST_CASE("augment failures surface with the partial log") {
  TableEmbedder emb({{"c0", unit(2, 0)}, {"a", unit(2, 1)}});
  auto client = script({"1. a"});  // round 2 exhausts the script
  try {
    augment(single("c0"), client, emb, {5, 10});
    FAIL("expected AugmentationError");
  } catch (const AugmentationError& e) {
    REQUIRE(e.partial_log().entries.size() == 1);
    CHECK(e.partial_log().entries[0].candidate == "a");
  }

  auto unknown = script({"1. nobody knows me"});
  CHECK_THROWS_AS(augment(single("c0"), unknown, emb, {5, 10}), AugmentationError);
}

TEST_CASE("augment is deterministic") {
  auto run = [] {
    embed::MockProvider emb(testsupport::two_cluster_spec(2, 8, 0.3));
    auto client = llm::ScriptedClient(
        {{"1. bomb a\n2. recipe b\n3. other c", "1. bomb d\n2. x"}, llm::OnExhaustion::repeat_last});
    auto r = augment(single("seed bomb"), client, emb, {5, 4});
    std::ostringstream log;
    r.log.write_jsonl(log);
    return nlohmann::json(r.set).dump() + log.str();
  };
  CHECK(run() == run());
}

TEST_CASE("concept set JSON round-trips") {
  ConceptSet set = single("a", 0.85);
  set.add({"b", Origin::augmented, 0});
  set.add({"c", Origin::extracted, std::nullopt});
  set.rounds_run = 3;
  CHECK_FALSE(set.add({"a", Origin::seed, std::nullopt}));

  testsupport::TempDir dir;
  save_concepts(set, dir / "c.json");
  const auto loaded = load_concepts(dir / "c.json");
  CHECK(loaded.items == set.items);
  CHECK(loaded.threshold == 0.85);
  CHECK(loaded.rounds_run == 3);

  const auto j = nlohmann::json::parse(R"({"threshold":0.8,"items":[{"text":"a"},{"text":"a"}]})");
  CHECK_THROWS_AS(j.get<ConceptSet>(), Error);
}

TEST_CASE("augmentation log JSONL round-trips") {
  AugmentationLog log{{{"x", 0.25, true, 1}, {"y \"quoted\"", 1.0, false, 2}}};
  std::stringstream buf;
  log.write_jsonl(buf);
  const auto text = buf.str();
  CHECK(std::count(text.begin(), text.end(), '\n') == 2);
  CHECK(AugmentationLog::read_jsonl(buf).entries == log.entries);
}
