#include "toxgate/features.hpp"

#include <cmath>
#include <fstream>
#include <ostream>

#include "binary_io.hpp"

namespace toxgate::features {

using nlohmann::json;

namespace {
constexpr std::string_view kBankMagic = "TOXGATE-BANK";
constexpr std::uint32_t kBankVersion = 1;

std::string shape_string(std::size_t l, std::size_t d) {
  return std::to_string(l) + "x" + std::to_string(d);
}
}  // namespace

void ConceptBank::validate() const {
  if (concepts.empty()) throw ShapeError("concept bank is empty");
  if (concepts.size() != embeddings.size()) {
    throw ShapeError("concept bank has " + std::to_string(concepts.size()) + " concepts but " +
                     std::to_string(embeddings.size()) + " embeddings");
  }
  for (const auto& e : embeddings) {
    if (e.num_layers != num_layers || e.hidden_size != hidden_size) {
      throw ShapeError("concept embedding shape " + shape_string(e.num_layers, e.hidden_size) +
                       " differs from bank shape " + shape_string(num_layers, hidden_size));
    }
    e.validate();
  }
}

ConceptBank build_concept_bank(const concepts::ConceptSet& set,
                               const embed::EmbeddingProvider& provider) {
  if (set.empty()) throw Error("cannot build a concept bank from an empty concept set");
  ConceptBank bank;
  bank.concepts = set.items;
  bank.embeddings.reserve(set.size());
  for (std::size_t i = 0; i < set.size(); ++i) {
    try {
      bank.embeddings.push_back(provider.layer_embeddings(set.items[i].text));
    } catch (const Error& e) {
      throw PartialBankError("embedding concept " + std::to_string(i) + " (\"" +
                                 set.items[i].text + "\") failed: " + e.what(),
                             i);
    }
  }
  bank.num_layers = bank.embeddings.front().num_layers;
  bank.hidden_size = bank.embeddings.front().hidden_size;
  bank.validate();
  return bank;
}

void save_bank(const ConceptBank& bank, const std::filesystem::path& path) {
  bank.validate();
  concepts::ConceptSet set;
  set.items = bank.concepts;
  json header = {{"model_id", bank.embeddings.front().model_id},
                 {"num_layers", bank.num_layers},
                 {"hidden_size", bank.hidden_size},
                 {"concepts", json(set).at("items")}};
  const std::string header_text = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out.write(kBankMagic.data(), kBankMagic.size());
  detail::write_u32(out, kBankVersion);
  detail::write_u32(out, static_cast<std::uint32_t>(header_text.size()));
  out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
  for (const auto& e : bank.embeddings) detail::write_floats(out, e.data);
  if (!out) throw Error("failed writing " + path.string());
}

ConceptBank load_bank(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  detail::expect_magic(in, kBankMagic, "concept bank file");
  const auto version = detail::read_u32(in, "bank version");
  if (version != kBankVersion) {
    throw VersionError("unsupported concept bank version " + std::to_string(version));
  }
  const auto header_len = detail::read_u32(in, "bank header length");
  std::string header_text(header_len, '\0');
  detail::read_exact(in, header_text.data(), header_len, "bank header");

  ConceptBank bank;
  std::string model_id;
  try {
    const json header = json::parse(header_text);
    model_id = header.at("model_id").get<std::string>();
    bank.num_layers = header.at("num_layers").get<std::size_t>();
    bank.hidden_size = header.at("hidden_size").get<std::size_t>();
    json set_json = {{"threshold", 1.0}, {"items", header.at("concepts")}};
    bank.concepts = set_json.get<concepts::ConceptSet>().items;
  } catch (const json::exception& e) {
    throw CorruptFileError(std::string("bad concept bank header: ") + e.what());
  }
  for (std::size_t i = 0; i < bank.concepts.size(); ++i) {
    embed::LayerEmbeddings e;
    e.model_id = model_id;
    e.num_layers = bank.num_layers;
    e.hidden_size = bank.hidden_size;
    e.data.resize(bank.num_layers * bank.hidden_size);
    detail::read_floats(in, e.data, "bank embeddings");
    bank.embeddings.push_back(std::move(e));
  }
  detail::expect_eof(in, "concept bank");
  bank.validate();
  return bank;
}

std::size_t select_concept(std::span<const float> user_layer, const ConceptBank& bank,
                           std::size_t layer) {
  if (layer >= bank.num_layers) throw ShapeError("layer index out of range");
  if (user_layer.size() != bank.hidden_size) throw ShapeError("user layer has wrong length");
  std::size_t best = 0;
  double best_score = 0.0;
  for (std::size_t c = 0; c < bank.size(); ++c) {
    const auto row = bank.embeddings[c].row(layer);
    double score = 0.0;
    for (std::size_t i = 0; i < row.size(); ++i) {
      score += static_cast<double>(user_layer[i]) * static_cast<double>(row[i]);
    }
    if (c == 0 || score > best_score) {
      best = c;
      best_score = score;
    }
  }
  return best;
}

FeatureVector build_feature(const embed::LayerEmbeddings& user, const ConceptBank& bank) {
  if (user.num_layers != bank.num_layers || user.hidden_size != bank.hidden_size) {
    throw ShapeError("user embeddings are " + shape_string(user.num_layers, user.hidden_size) +
                     " but the concept bank is " + shape_string(bank.num_layers, bank.hidden_size));
  }
  if (user.data.size() != user.num_layers * user.hidden_size) {
    throw ShapeError("user embeddings hold the wrong number of values");
  }
  FeatureVector out;
  out.values.resize(bank.num_layers * bank.hidden_size);
  out.selected_concepts.resize(bank.num_layers);
  for (std::size_t l = 0; l < bank.num_layers; ++l) {
    const auto u = user.row(l);
    const std::size_t chosen = select_concept(u, bank, l);
    out.selected_concepts[l] = chosen;
    const auto t = bank.embeddings[chosen].row(l);
    float* segment = out.values.data() + l * bank.hidden_size;
    for (std::size_t i = 0; i < bank.hidden_size; ++i) segment[i] = u[i] * t[i];
  }
  return out;
}

FeatureScaler FeatureScaler::fit(const std::vector<std::vector<float>>& features) {
  if (features.empty()) throw Error("cannot fit a feature scaler on no data");
  const std::size_t dim = features.front().size();
  FeatureScaler s;
  s.mean.assign(dim, 0.0);
  s.scale.assign(dim, 0.0);
  for (const auto& f : features) {
    if (f.size() != dim) throw ShapeError("feature vectors differ in length");
    for (std::size_t i = 0; i < dim; ++i) s.mean[i] += f[i];
  }
  const double n = static_cast<double>(features.size());
  for (double& m : s.mean) m /= n;
  for (const auto& f : features) {
    for (std::size_t i = 0; i < dim; ++i) {
      const double diff = f[i] - s.mean[i];
      s.scale[i] += diff * diff;
    }
  }
  for (double& v : s.scale) {
    const double sd = std::sqrt(v / n);
    v = sd > 0.0 ? 1.0 / sd : 1.0;
  }
  return s;
}

void FeatureScaler::apply(std::vector<float>& feature) const {
  if (empty()) return;
  if (feature.size() != mean.size()) throw ShapeError("feature length differs from scaler");
  for (std::size_t i = 0; i < feature.size(); ++i) {
    feature[i] = static_cast<float>((feature[i] - mean[i]) * scale[i]);
  }
}

void to_json(json& j, const FeatureScaler& s) { j = {{"mean", s.mean}, {"scale", s.scale}}; }

void from_json(const json& j, FeatureScaler& s) {
  s.mean = j.at("mean").get<std::vector<double>>();
  s.scale = j.at("scale").get<std::vector<double>>();
  if (s.mean.size() != s.scale.size()) throw ShapeError("scaler mean/scale length mismatch");
}

namespace {
std::string csv_field(std::string_view text) {
  if (text.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(text);
  std::string out = "\"";
  for (char c : text) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}
}  // namespace

void write_feature_csv(std::ostream& out, std::span<const FeatureRow> rows) {
  const std::size_t dim = rows.empty() ? 0 : rows.front().values.size();
  out << "label,scenario";
  for (std::size_t i = 0; i < dim; ++i) out << ",f_" << i;
  out << '\n';
  for (const auto& row : rows) {
    if (row.values.size() != dim) throw ShapeError("feature rows differ in length");
    out << csv_field(row.label) << ',' << csv_field(row.scenario);
    for (float v : row.values) out << ',' << format_real(v);
    out << '\n';
  }
}

}  // namespace toxgate::features
