#include "toxgate/data.hpp"

#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <set>

#include "json.hpp"

namespace toxgate::data {

using nlohmann::json;

std::vector<LabeledPrompt> read_jsonl(std::istream& in) {
  std::vector<LabeledPrompt> out;
  std::set<std::string> ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    LabeledPrompt p;
    try {
      const json j = json::parse(line);
      if (!j.is_object()) throw DataError("line " + std::to_string(line_no) + ": not a JSON object", line_no);
      p.text = j.at("text").get<std::string>();
      p.label = parse_label(j.at("label").get<std::string>());
      if (j.contains("scenario") && !j.at("scenario").is_null()) {
        p.scenario = j.at("scenario").get<std::string>();
      }
      if (j.contains("id") && !j.at("id").is_null()) {
        const auto& id = j.at("id");
        p.id = id.is_string() ? id.get<std::string>() : id.dump();
      } else {
        p.id = std::to_string(line_no);
      }
    } catch (const DataError&) {
      throw;
    } catch (const std::exception& e) {
      throw DataError("line " + std::to_string(line_no) + ": " + e.what(), line_no);
    }
    if (p.text.empty()) throw DataError("line " + std::to_string(line_no) + ": empty text", line_no);
    if (!ids.insert(p.id).second) {
      throw DataError("line " + std::to_string(line_no) + ": duplicate id \"" + p.id + "\"", line_no);
    }
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<LabeledPrompt> load_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string(), 0);
  return read_jsonl(in);
}

void write_jsonl(std::ostream& out, const std::vector<LabeledPrompt>& prompts) {
  for (const auto& p : prompts) {
    json j = {{"id", p.id}, {"text", p.text}, {"label", to_string(p.label)}};
    if (p.scenario) j["scenario"] = *p.scenario;
    out << j.dump() << '\n';
  }
}

void save_jsonl(const std::vector<LabeledPrompt>& prompts, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  write_jsonl(out, prompts);
}

Stratify parse_stratify(std::string_view text) {
  if (text == "none") return Stratify::none;
  if (text == "label") return Stratify::label;
  if (text == "scenario") return Stratify::scenario;
  throw Error("unknown stratification \"" + std::string(text) + "\"");
}

std::string_view to_string(Stratify s) {
  switch (s) {
    case Stratify::none: return "none";
    case Stratify::label: return "label";
    case Stratify::scenario: return "scenario";
  }
  return "none";
}

DatasetSplit split(const std::vector<LabeledPrompt>& data, double fraction, std::uint64_t seed,
                   Stratify stratify_by) {
  if (data.size() < 2) throw Error("split needs at least two items");
  if (!(fraction > 0.0 && fraction < 1.0)) throw Error("split fraction must lie in (0, 1)");

  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);

  auto key_of = [&](const LabeledPrompt& p) -> std::string {
    switch (stratify_by) {
      case Stratify::label: return std::string(to_string(p.label));
      case Stratify::scenario: return p.scenario.value_or("");
      case Stratify::none: break;
    }
    return {};
  };

  std::map<std::string, std::size_t> stratum_size;
  for (const auto& p : data) ++stratum_size[key_of(p)];
  std::map<std::string, std::size_t> train_quota;
  for (const auto& [key, size] : stratum_size) {
    // The epsilon absorbs products like 0.29 * 100 = 28.999999999999996.
    train_quota[key] = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(size) + 1e-9));
    if (size == 1) {
      std::clog << "split: stratum \"" << key << "\" has a single item; it goes to test\n";
    }
  }

  DatasetSplit out;
  out.seed = seed;
  out.fraction = fraction;
  for (std::size_t idx : order) {
    const auto& p = data[idx];
    auto& quota = train_quota[key_of(p)];
    if (quota > 0) {
      --quota;
      out.train.push_back(p);
    } else {
      out.test.push_back(p);
    }
  }
  return out;
}

JailbreakTemplate::JailbreakTemplate(std::string name, std::string body)
    : name_(std::move(name)), body_(std::move(body)) {
  if (name_.empty()) throw TemplateError("jailbreak template name is empty");
  const auto first = body_.find(kPromptPlaceholder);
  if (first == std::string::npos) {
    throw TemplateError("jailbreak template \"" + name_ + "\" lacks the {PROMPT} placeholder");
  }
  if (body_.find(kPromptPlaceholder, first + 1) != std::string::npos) {
    throw TemplateError("jailbreak template \"" + name_ + "\" has more than one {PROMPT} placeholder");
  }
}

std::string JailbreakTemplate::apply(std::string_view prompt) const {
  const auto pos = body_.find(kPromptPlaceholder);
  std::string out = body_.substr(0, pos);
  out += prompt;
  out += body_.substr(pos + kPromptPlaceholder.size());
  return out;
}

std::vector<JailbreakTemplate> load_templates(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw TemplateError("cannot read " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw TemplateError("malformed template file " + path.string() + ": " + e.what());
  }
  if (!j.is_array()) throw TemplateError("template file must hold a JSON array");
  std::vector<JailbreakTemplate> out;
  std::set<std::string> names;
  for (const auto& item : j) {
    try {
      out.emplace_back(item.at("name").get<std::string>(), item.at("body").get<std::string>());
    } catch (const json::exception& e) {
      throw TemplateError(std::string("malformed template entry: ") + e.what());
    }
    if (!names.insert(out.back().name()).second) {
      throw TemplateError("duplicate template name \"" + out.back().name() + "\"");
    }
  }
  return out;
}

LabeledPrompt wrap_with_template(const JailbreakTemplate& t, const LabeledPrompt& p) {
  LabeledPrompt out = p;
  out.text = t.apply(p.text);
  out.id = p.id + "#" + t.name();
  return out;
}

}  // namespace toxgate::data
