#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "toxgate/common.hpp"

namespace toxgate::mlp {

inline constexpr std::size_t kNumLayers = 5;
inline constexpr std::size_t kOutputDim = 2;  // index 0 benign, 1 toxic

struct MlpConfig {
  std::size_t input_dim = 0;
  std::array<std::size_t, kNumLayers - 1> hidden_dims{256, 128, 64, 32};
  std::string activation = "relu";
  std::uint64_t seed = 0;

  void validate() const;
  // Fan-in / fan-out of weight layer k.
  std::size_t layer_in(std::size_t k) const { return k == 0 ? input_dim : hidden_dims[k - 1]; }
  std::size_t layer_out(std::size_t k) const {
    return k == kNumLayers - 1 ? kOutputDim : hidden_dims[k];
  }
  std::size_t parameter_count() const;
};

void to_json(nlohmann::json& j, const MlpConfig& c);
void from_json(const nlohmann::json& j, MlpConfig& c);

struct TrainConfig {
  std::size_t batch_size = 20;
  int epochs = 100;
  double learning_rate = 0.01;
  double weight_decay = 0.0002;
  std::string optimizer = "sgd";
  std::uint64_t shuffle_seed = 0;
  double train_fraction = 0.5;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

// Affine layer, weights row-major out x in.
template <class T>
struct Dense {
  std::size_t in = 0;
  std::size_t out = 0;
  std::vector<T> weights;
  std::vector<T> bias;

  bool operator==(const Dense&) const = default;
};

template <class T>
struct BasicMlp {
  MlpConfig config;
  std::array<Dense<T>, kNumLayers> layers;

  bool operator==(const BasicMlp& other) const { return layers == other.layers; }
};

using MlpModel = BasicMlp<float>;

// He-uniform weights, zero biases. Float and double models from the same
// seed agree up to rounding.
template <class T>
BasicMlp<T> init(const MlpConfig& config);

template <class T>
struct ForwardResult {
  std::array<T, kOutputDim> probs;
  std::array<T, kOutputDim> logits;
};

// Four ReLU hidden layers, an affine output and a softmax.
template <class T>
ForwardResult<T> forward(const BasicMlp<T>& model, std::span<const T> feature);

// Numerically stable two-way softmax; the two outputs sum to exactly 1.
template <class T>
std::array<T, kOutputDim> softmax2(const std::array<T, kOutputDim>& logits);

template <class T>
struct Example {
  std::span<const T> feature;
  Label label;
};

template <class T>
struct Gradients {
  std::array<Dense<T>, kNumLayers> layers;
};

template <class T>
struct LossAndGrad {
  double loss = 0.0;
  Gradients<T> grads;
};

// Mean cross-entropy over the batch plus (weight_decay / 2) * sum ||W||^2
// (biases are not decayed), with its backpropagated gradient.
template <class T>
LossAndGrad<T> loss_and_grad(const BasicMlp<T>& model, std::span<const Example<T>> batch,
                             double weight_decay);

// Loss only, same definition as loss_and_grad.
template <class T>
double loss(const BasicMlp<T>& model, std::span<const Example<T>> batch, double weight_decay);

class DivergedError : public Error {
 public:
  DivergedError(const std::string& what, int epoch) : Error(what), epoch_(epoch) {}
  int epoch() const { return epoch_; }

 private:
  int epoch_;
};

struct EpochStats {
  int epoch = 0;
  double mean_loss = 0.0;
  double train_accuracy = 0.0;

  bool operator==(const EpochStats&) const = default;
};

struct TrainReport {
  std::vector<EpochStats> per_epoch;
  double wall_time_s = 0.0;
};

void to_json(nlohmann::json& j, const TrainReport& r);

struct TrainResult {
  MlpModel model;
  TrainReport report;
};

// Minibatch SGD with L2 weight decay. Each epoch reshuffles with a
// generator seeded once from tc.shuffle_seed; the final short batch is kept.
TrainResult train(MlpModel model, const std::vector<std::vector<float>>& features,
                  const std::vector<Label>& labels, const TrainConfig& tc);

struct Prediction {
  Label label;
  double score;  // p(toxic)
};

Prediction predict(const MlpModel& model, std::span<const float> feature, double threshold = 0.5);

// "TOXGATE-MLP", u32 version, u32 header length, JSON header
// {input_dim, hidden_dims, activation, seed}, then per layer the row-major
// weight block followed by the bias block, all little-endian float32.
void save(const MlpModel& model, const std::filesystem::path& path);
MlpModel load(const std::filesystem::path& path);

inline constexpr std::uint32_t kModelFormatVersion = 1;

}  // namespace toxgate::mlp
