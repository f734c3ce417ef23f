#include "toxgate/classifier.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

#include "binary_io.hpp"

namespace toxgate::mlp {

using nlohmann::json;

void MlpConfig::validate() const {
  if (input_dim == 0) throw Error("MLP input_dim must be positive");
  for (auto h : hidden_dims) {
    if (h == 0) throw Error("MLP hidden dims must be positive");
  }
  if (activation != "relu") throw Error("unsupported activation \"" + activation + "\"");
}

std::size_t MlpConfig::parameter_count() const {
  std::size_t n = 0;
  for (std::size_t k = 0; k < kNumLayers; ++k) n += layer_out(k) * (layer_in(k) + 1);
  return n;
}

void to_json(json& j, const MlpConfig& c) {
  j = {{"input_dim", c.input_dim},
       {"hidden_dims", c.hidden_dims},
       {"activation", c.activation},
       {"seed", c.seed}};
}

void from_json(const json& j, MlpConfig& c) {
  c.input_dim = j.value("input_dim", c.input_dim);
  if (j.contains("hidden_dims")) {
    const auto dims = j.at("hidden_dims").get<std::vector<std::size_t>>();
    if (dims.size() != c.hidden_dims.size()) {
      throw Error("hidden_dims must list exactly " + std::to_string(c.hidden_dims.size()) +
                  " widths");
    }
    std::copy(dims.begin(), dims.end(), c.hidden_dims.begin());
  }
  c.activation = j.value("activation", c.activation);
  c.seed = j.value("seed", c.seed);
}

void TrainConfig::validate() const {
  if (batch_size == 0) throw Error("batch_size must be positive");
  if (epochs <= 0) throw Error("epochs must be positive");
  if (!(learning_rate >= 0.0)) throw Error("learning_rate must be non-negative");
  if (!(weight_decay >= 0.0)) throw Error("weight_decay must be non-negative");
  if (optimizer != "sgd") throw Error("unsupported optimizer \"" + optimizer + "\"");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw Error("train_fraction must lie in (0, 1)");
  }
}

void to_json(json& j, const TrainConfig& c) {
  j = {{"batch_size", c.batch_size},       {"epochs", c.epochs},
       {"learning_rate", c.learning_rate}, {"weight_decay", c.weight_decay},
       {"optimizer", c.optimizer},         {"shuffle_seed", c.shuffle_seed},
       {"train_fraction", c.train_fraction}};
}

void from_json(const json& j, TrainConfig& c) {
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs = j.value("epochs", c.epochs);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.optimizer = j.value("optimizer", c.optimizer);
  c.shuffle_seed = j.value("shuffle_seed", c.shuffle_seed);
  c.train_fraction = j.value("train_fraction", c.train_fraction);
}

void to_json(json& j, const TrainReport& r) {
  json epochs = json::array();
  for (const auto& e : r.per_epoch) {
    epochs.push_back(
        {{"epoch", e.epoch}, {"mean_loss", e.mean_loss}, {"train_accuracy", e.train_accuracy}});
  }
  j = {{"per_epoch", std::move(epochs)}, {"wall_time_s", r.wall_time_s}};
}

template <class T>
BasicMlp<T> init(const MlpConfig& config) {
  config.validate();
  BasicMlp<T> model;
  model.config = config;
  Rng rng(config.seed);
  for (std::size_t k = 0; k < kNumLayers; ++k) {
    auto& layer = model.layers[k];
    layer.in = config.layer_in(k);
    layer.out = config.layer_out(k);
    const double limit = std::sqrt(6.0 / static_cast<double>(layer.in));
    layer.weights.resize(layer.in * layer.out);
    for (auto& w : layer.weights) w = static_cast<T>(rng.uniform(-limit, limit));
    layer.bias.assign(layer.out, T(0));
  }
  return model;
}

template <class T>
std::array<T, kOutputDim> softmax2(const std::array<T, kOutputDim>& logits) {
  // The larger probability comes from the logistic form; the smaller is its
  // complement, which is exact for values >= 0.5.
  const bool toxic_larger = logits[1] >= logits[0];
  const T gap = toxic_larger ? logits[0] - logits[1] : logits[1] - logits[0];
  const T larger = T(1) / (T(1) + std::exp(gap));
  const T smaller = T(1) - larger;
  return toxic_larger ? std::array<T, kOutputDim>{smaller, larger}
                      : std::array<T, kOutputDim>{larger, smaller};
}

namespace {

template <class T>
void affine(const Dense<T>& layer, const T* input, T* output) {
  for (std::size_t o = 0; o < layer.out; ++o) {
    const T* w = layer.weights.data() + o * layer.in;
    T acc = layer.bias[o];
    for (std::size_t i = 0; i < layer.in; ++i) acc += w[i] * input[i];
    output[o] = acc;
  }
}

// Pre-activations of every layer for one input.
template <class T>
struct Trace {
  std::array<std::vector<T>, kNumLayers> pre;
  std::array<std::vector<T>, kNumLayers> act;  // act[k] = relu(pre[k]); unused for the last
};

template <class T>
void run_forward(const BasicMlp<T>& model, std::span<const T> feature, Trace<T>& trace) {
  if (feature.size() != model.config.input_dim) {
    throw ShapeError("feature has length " + std::to_string(feature.size()) + ", model expects " +
                     std::to_string(model.config.input_dim));
  }
  const T* input = feature.data();
  for (std::size_t k = 0; k < kNumLayers; ++k) {
    const auto& layer = model.layers[k];
    trace.pre[k].resize(layer.out);
    affine(layer, input, trace.pre[k].data());
    if (k + 1 < kNumLayers) {
      trace.act[k].resize(layer.out);
      for (std::size_t o = 0; o < layer.out; ++o) {
        trace.act[k][o] = trace.pre[k][o] > T(0) ? trace.pre[k][o] : T(0);
      }
      input = trace.act[k].data();
    }
  }
}

template <class T>
double cross_entropy(const std::array<T, kOutputDim>& logits, Label label) {
  const double z0 = static_cast<double>(logits[0]);
  const double z1 = static_cast<double>(logits[1]);
  const double m = std::max(z0, z1);
  const double lse = m + std::log(std::exp(z0 - m) + std::exp(z1 - m));
  return lse - (label == Label::toxic ? z1 : z0);
}

template <class T>
double decay_penalty(const BasicMlp<T>& model, double weight_decay) {
  if (weight_decay == 0.0) return 0.0;
  double sq = 0.0;
  for (const auto& layer : model.layers) {
    for (T w : layer.weights) sq += static_cast<double>(w) * static_cast<double>(w);
  }
  return 0.5 * weight_decay * sq;
}

}  // namespace

template <class T>
ForwardResult<T> forward(const BasicMlp<T>& model, std::span<const T> feature) {
  Trace<T> trace;
  run_forward(model, feature, trace);
  ForwardResult<T> out;
  out.logits = {trace.pre.back()[0], trace.pre.back()[1]};
  out.probs = softmax2(out.logits);
  return out;
}

template <class T>
double loss(const BasicMlp<T>& model, std::span<const Example<T>> batch, double weight_decay) {
  if (batch.empty()) throw Error("loss of an empty batch");
  double total = 0.0;
  Trace<T> trace;
  for (const auto& ex : batch) {
    run_forward(model, ex.feature, trace);
    total += cross_entropy<T>({trace.pre.back()[0], trace.pre.back()[1]}, ex.label);
  }
  return total / static_cast<double>(batch.size()) + decay_penalty(model, weight_decay);
}

template <class T>
LossAndGrad<T> loss_and_grad(const BasicMlp<T>& model, std::span<const Example<T>> batch,
                             double weight_decay) {
  if (batch.empty()) throw Error("loss of an empty batch");
  LossAndGrad<T> out;
  for (std::size_t k = 0; k < kNumLayers; ++k) {
    const auto& layer = model.layers[k];
    auto& g = out.grads.layers[k];
    g.in = layer.in;
    g.out = layer.out;
    g.weights.assign(layer.weights.size(), T(0));
    g.bias.assign(layer.out, T(0));
  }

  const T inv_batch = T(1) / static_cast<T>(batch.size());
  Trace<T> trace;
  std::vector<T> delta, prev_delta;
  double total = 0.0;
  for (const auto& ex : batch) {
    run_forward(model, ex.feature, trace);
    const std::array<T, kOutputDim> logits{trace.pre.back()[0], trace.pre.back()[1]};
    total += cross_entropy(logits, ex.label);
    const auto probs = softmax2(logits);

    delta = {probs[0] * inv_batch, probs[1] * inv_batch};
    delta[static_cast<std::size_t>(ex.label)] -= inv_batch;

    for (std::size_t k = kNumLayers; k-- > 0;) {
      const auto& layer = model.layers[k];
      auto& g = out.grads.layers[k];
      const T* input = k == 0 ? ex.feature.data() : trace.act[k - 1].data();
      for (std::size_t o = 0; o < layer.out; ++o) {
        const T d = delta[o];
        if (d == T(0)) continue;
        T* gw = g.weights.data() + o * layer.in;
        for (std::size_t i = 0; i < layer.in; ++i) gw[i] += d * input[i];
        g.bias[o] += d;
      }
      if (k == 0) break;
      prev_delta.assign(layer.in, T(0));
      for (std::size_t o = 0; o < layer.out; ++o) {
        const T d = delta[o];
        if (d == T(0)) continue;
        const T* w = layer.weights.data() + o * layer.in;
        for (std::size_t i = 0; i < layer.in; ++i) prev_delta[i] += w[i] * d;
      }
      const auto& pre = trace.pre[k - 1];
      for (std::size_t i = 0; i < layer.in; ++i) {
        if (!(pre[i] > T(0))) prev_delta[i] = T(0);
      }
      delta.swap(prev_delta);
    }
  }

  if (weight_decay != 0.0) {
    const T wd = static_cast<T>(weight_decay);
    for (std::size_t k = 0; k < kNumLayers; ++k) {
      auto& gw = out.grads.layers[k].weights;
      const auto& w = model.layers[k].weights;
      for (std::size_t i = 0; i < w.size(); ++i) gw[i] += wd * w[i];
    }
  }
  out.loss = total / static_cast<double>(batch.size()) + decay_penalty(model, weight_decay);
  return out;
}

TrainResult train(MlpModel model, const std::vector<std::vector<float>>& features,
                  const std::vector<Label>& labels, const TrainConfig& tc) {
  tc.validate();
  if (features.size() != labels.size()) {
    throw Error("train: " + std::to_string(features.size()) + " features but " +
                std::to_string(labels.size()) + " labels");
  }
  if (features.size() < tc.batch_size) {
    throw Error("train: need at least batch_size (" + std::to_string(tc.batch_size) +
                ") examples, got " + std::to_string(features.size()));
  }

  const auto start = std::chrono::steady_clock::now();
  TrainResult result;
  Rng rng(tc.shuffle_seed);
  std::vector<std::size_t> order(features.size());
  std::vector<Example<float>> batch;
  batch.reserve(tc.batch_size);
  const auto lr = static_cast<float>(tc.learning_rate);

  for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(order);
    double weighted_loss = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += tc.batch_size) {
      const std::size_t end = std::min(order.size(), begin + tc.batch_size);
      batch.clear();
      for (std::size_t i = begin; i < end; ++i) {
        batch.push_back({features[order[i]], labels[order[i]]});
      }
      auto lg = loss_and_grad<float>(model, batch, tc.weight_decay);
      if (!std::isfinite(lg.loss)) {
        throw DivergedError("training diverged (non-finite loss) in epoch " + std::to_string(epoch),
                            epoch);
      }
      weighted_loss += lg.loss * static_cast<double>(batch.size());
      for (std::size_t k = 0; k < kNumLayers; ++k) {
        auto& layer = model.layers[k];
        const auto& g = lg.grads.layers[k];
        for (std::size_t i = 0; i < layer.weights.size(); ++i) layer.weights[i] -= lr * g.weights[i];
        for (std::size_t i = 0; i < layer.bias.size(); ++i) layer.bias[i] -= lr * g.bias[i];
      }
    }

    std::size_t correct = 0;
    for (std::size_t i = 0; i < features.size(); ++i) {
      if (predict(model, features[i]).label == labels[i]) ++correct;
    }
    result.report.per_epoch.push_back({epoch, weighted_loss / static_cast<double>(features.size()),
                                       static_cast<double>(correct) /
                                           static_cast<double>(features.size())});
  }
  result.report.wall_time_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  result.model = std::move(model);
  return result;
}

Prediction predict(const MlpModel& model, std::span<const float> feature, double threshold) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw Error("decision threshold must lie in [0, 1]");
  const auto fr = forward(model, feature);
  const double score = static_cast<double>(fr.probs[1]);
  return {score >= threshold ? Label::toxic : Label::benign, score};
}

namespace {
constexpr std::string_view kModelMagic = "TOXGATE-MLP";
}

void save(const MlpModel& model, const std::filesystem::path& path) {
  model.config.validate();
  const std::string header = json(model.config).dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out.write(kModelMagic.data(), kModelMagic.size());
  detail::write_u32(out, kModelFormatVersion);
  detail::write_u32(out, static_cast<std::uint32_t>(header.size()));
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const auto& layer : model.layers) {
    detail::write_floats(out, layer.weights);
    detail::write_floats(out, layer.bias);
  }
  if (!out) throw Error("failed writing " + path.string());
}

MlpModel load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  detail::expect_magic(in, kModelMagic, "model file");
  const auto version = detail::read_u32(in, "model version");
  if (version != kModelFormatVersion) {
    throw VersionError("unsupported model format version " + std::to_string(version));
  }
  const auto header_len = detail::read_u32(in, "model header length");
  std::string header(header_len, '\0');
  detail::read_exact(in, header.data(), header_len, "model header");

  MlpModel model;
  try {
    model.config = json::parse(header).get<MlpConfig>();
    model.config.validate();
  } catch (const json::exception& e) {
    throw CorruptFileError(std::string("bad model header: ") + e.what());
  }
  for (std::size_t k = 0; k < kNumLayers; ++k) {
    auto& layer = model.layers[k];
    layer.in = model.config.layer_in(k);
    layer.out = model.config.layer_out(k);
    layer.weights.resize(layer.in * layer.out);
    layer.bias.resize(layer.out);
    detail::read_floats(in, layer.weights, "model weights");
    detail::read_floats(in, layer.bias, "model biases");
  }
  detail::expect_eof(in, "model");
  for (const auto& layer : model.layers) {
    for (float w : layer.weights) {
      if (!std::isfinite(w)) throw CorruptFileError("model contains a non-finite weight");
    }
    for (float b : layer.bias) {
      if (!std::isfinite(b)) throw CorruptFileError("model contains a non-finite bias");
    }
  }
  return model;
}

template BasicMlp<float> init<float>(const MlpConfig&);
template BasicMlp<double> init<double>(const MlpConfig&);
template std::array<float, kOutputDim> softmax2<float>(const std::array<float, kOutputDim>&);
template std::array<double, kOutputDim> softmax2<double>(const std::array<double, kOutputDim>&);
template ForwardResult<float> forward<float>(const BasicMlp<float>&, std::span<const float>);
template ForwardResult<double> forward<double>(const BasicMlp<double>&, std::span<const double>);
template double loss<float>(const BasicMlp<float>&, std::span<const Example<float>>, double);
template double loss<double>(const BasicMlp<double>&, std::span<const Example<double>>, double);
template LossAndGrad<float> loss_and_grad<float>(const BasicMlp<float>&,
                                                 std::span<const Example<float>>, double);
template LossAndGrad<double> loss_and_grad<double>(const BasicMlp<double>&,
                                                   std::span<const Example<double>>, double);

}  // namespace toxgate::mlp
