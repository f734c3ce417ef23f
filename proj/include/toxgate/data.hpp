#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "toxgate/common.hpp"

namespace toxgate::data {

struct LabeledPrompt {
  std::string text;
  Label label = Label::benign;
  std::optional<std::string> scenario;
  std::string id;

  bool operator==(const LabeledPrompt&) const = default;
};

// Malformed corpus content. line() is 1-based, 0 when not tied to a line.
class DataError : public Error {
 public:
  DataError(const std::string& what, std::size_t line) : Error(what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class TemplateError : public Error {
 public:
  using Error::Error;
};

// One JSON object per line: text, label, optional scenario, optional id
// (defaults to the 1-based line number). Blank lines are skipped.
std::vector<LabeledPrompt> read_jsonl(std::istream& in);
std::vector<LabeledPrompt> load_jsonl(const std::filesystem::path& path);
void write_jsonl(std::ostream& out, const std::vector<LabeledPrompt>& prompts);
void save_jsonl(const std::vector<LabeledPrompt>& prompts, const std::filesystem::path& path);

enum class Stratify { none, label, scenario };

Stratify parse_stratify(std::string_view text);
std::string_view to_string(Stratify s);

struct DatasetSplit {
  std::vector<LabeledPrompt> train;
  std::vector<LabeledPrompt> test;
  std::uint64_t seed = 0;
  double fraction = 0.5;
};

// Seeded shuffle, then floor(fraction * |stratum|) of every stratum goes to
// train and the rest to test. Both sides keep the shuffled order.
DatasetSplit split(const std::vector<LabeledPrompt>& data, double fraction, std::uint64_t seed,
                   Stratify stratify_by = Stratify::label);

inline constexpr std::string_view kPromptPlaceholder = "{PROMPT}";

class JailbreakTemplate {
 public:
  // Throws TemplateError unless body holds the placeholder exactly once.
  JailbreakTemplate(std::string name, std::string body);

  const std::string& name() const { return name_; }
  const std::string& body() const { return body_; }
  std::string apply(std::string_view prompt) const;

 private:
  std::string name_;
  std::string body_;
};

// JSON array of {"name", "body"}.
std::vector<JailbreakTemplate> load_templates(const std::filesystem::path& path);

// Label and scenario are inherited; the id becomes "<id>#<template name>".
LabeledPrompt wrap_with_template(const JailbreakTemplate& t, const LabeledPrompt& p);

}  // namespace toxgate::data
