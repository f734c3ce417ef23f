#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "test_support.hpp"
#include "toxgate/classifier.hpp"
#include "toxgate/metrics.hpp"

using namespace toxgate;
using namespace toxgate::mlp;

namespace {

MlpConfig small_config(std::size_t input_dim, std::uint64_t seed = 1) {
  MlpConfig c;
  c.input_dim = input_dim;
  c.hidden_dims = {16, 12, 8, 4};
  c.seed = seed;
  return c;
}

// Two Gaussian blobs on either side of the origin along a random direction.
struct Blobs {
  std::vector<std::vector<float>> x;
  std::vector<Label> y;
};

Blobs blobs(std::size_t n, std::size_t dim, std::uint64_t seed, double gap = 2.0) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> noise(0.0, 0.3);
  std::vector<double> dir(dim);
  for (auto& v : dir) v = noise(gen);
  double norm = 0;
  for (double v : dir) norm += v * v;
  for (auto& v : dir) v /= std::sqrt(norm);
  Blobs out;
  for (std::size_t i = 0; i < n; ++i) {
    const bool toxic = i % 2 == 0;
    std::vector<float> row(dim);
    for (std::size_t k = 0; k < dim; ++k)
      row[k] = static_cast<float>((toxic ? 1 : -1) * gap / 2 * dir[k] + noise(gen));
    out.x.push_back(row);
    out.y.push_back(toxic ? Label::toxic : Label::benign);
  }
  return out;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_CASE("init is deterministic with zero biases and chained shapes") {
  const auto c = small_config(10, 99);
  const auto a = init<float>(c);
  const auto b = init<float>(c);
  CHECK(a == b);
  CHECK_FALSE(a == init<float>(small_config(10, 100)));
  CHECK(a.layers[0].weights.size() == 16 * 10);
  CHECK(a.layers[0].out == 16);
  CHECK(a.layers[0].in == 10);
  CHECK(a.layers[4].out == 2);
  for (const auto& L : a.layers) {
    for (float v : L.bias) CHECK(v == 0.0f);
    const double limit = std::sqrt(6.0 / static_cast<double>(L.in));
    for (float w : L.weights) CHECK(std::abs(w) <= limit);
  }
  MlpConfig def;
  def.input_dim = 128;
  CHECK(def.parameter_count() == 128 * 256 + 256 + 256 * 128 + 128 + 128 * 64 + 64 + 64 * 32 + 32 + 32 * 2 + 2);
}

TEST_CASE("float and double init agree up to rounding") {
  const auto c = small_config(6, 5);
  const auto f = init<float>(c);
  const auto d = init<double>(c);
  for (std::size_t k = 0; k < kNumLayers; ++k)
    for (std::size_t i = 0; i < f.layers[k].weights.size(); ++i)
      CHECK(f.layers[k].weights[i] == static_cast<float>(d.layers[k].weights[i]));
}

TEST_CASE("config validation") {
  MlpConfig c;
  CHECK_THROWS_AS(c.validate(), Error);
  c.input_dim = 4;
  c.hidden_dims[2] = 0;
  CHECK_THROWS_AS(c.validate(), Error);
  c.hidden_dims[2] = 3;
  c.activation = "tanh";
  CHECK_THROWS_AS(c.validate(), Error);

  TrainConfig t;
  CHECK_NOTHROW(t.validate());
  t.train_fraction = 1.0;
  CHECK_THROWS_AS(t.validate(), Error);
  t.train_fraction = 0.5;
  t.optimizer = "adam";
  CHECK_THROWS_AS(t.validate(), Error);

  const auto j = nlohmann::json::parse(R"({"input_dim":3,"hidden_dims":[1,2,3],"activation":"relu","seed":0})");
  CHECK_THROWS_AS(j.get<MlpConfig>(), Error);
}

TEST_CASE("softmax examples") {
  const auto half = softmax2<double>({0.0, 0.0});
  CHECK(half[0] == 0.5);
  CHECK(half[1] == 0.5);

  const auto a = softmax2<double>({1.0, 3.5});
  const auto b = softmax2<double>({-7.0, -4.5});
  CHECK(a[1] == doctest::Approx(b[1]).epsilon(1e-15));
  CHECK(a[1] == doctest::Approx(1.0 / (1.0 + std::exp(-2.5))).epsilon(1e-15));

  const auto extreme = softmax2<float>({-1000.0f, 1000.0f});
  CHECK(extreme[1] == 1.0f);
  CHECK(extreme[0] + extreme[1] == 1.0f);
}

TEST_CASE("forward probabilities are normalized") {
  std::mt19937_64 gen(21);
  for (int trial = 0; trial < 50; ++trial) {
    const auto md = oracle::random_small_model(gen);
    const auto batch = oracle::random_batch(gen, md.config.input_dim, 1);
    const auto r = forward<double>(md, batch[0].x);
    CHECK(std::abs(r.probs[0] + r.probs[1] - 1.0) <= 1e-12);
    const auto ref = oracle::ref_forward(md, batch[0].x);
    CHECK(r.logits[0] == doctest::Approx(ref.logit0).epsilon(1e-12));
    CHECK(r.logits[1] == doctest::Approx(ref.logit1).epsilon(1e-12));

    const auto mf = init<float>(small_config(md.config.input_dim, gen()));
    std::vector<float> xf(batch[0].x.begin(), batch[0].x.end());
    const auto rf = forward<float>(mf, xf);
    CHECK(std::abs(static_cast<double>(rf.probs[0]) + rf.probs[1] - 1.0) <= 1e-9);
  }
  const auto m = init<float>(small_config(3));
  const std::vector<float> wrong(4, 0.0f);
  CHECK_THROWS_AS(forward<float>(m, wrong), ShapeError);
}

TEST_CASE("loss is ln 2 at even odds") {
  // All-zero output layer forces logits [0, 0].
  auto m = init<double>(small_config(3));
  std::fill(m.layers[4].weights.begin(), m.layers[4].weights.end(), 0.0);
  const std::vector<double> x{0.2, -1.0, 3.0};
  const std::vector<Example<double>> batch{{x, Label::toxic}, {x, Label::benign}};
  CHECK(loss<double>(m, batch, 0.0) == doctest::Approx(0.6931471805599453).epsilon(1e-15));

  double sq = 0;
  for (const auto& L : m.layers)
    for (double w : L.weights) sq += w * w;
  CHECK(loss<double>(m, batch, 0.1) == doctest::Approx(0.6931471805599453 + 0.05 * sq).epsilon(1e-12));
  CHECK_THROWS_AS(loss<double>(m, std::span<const Example<double>>{}, 0.0), Error);
}

TEST_CASE("analytic gradient matches central differences") {
  std::mt19937_64 gen(1234);
  int checked = 0;
  while (checked < 10) {
    const auto m = oracle::random_small_model(gen);
    const auto batch = oracle::random_batch(gen, m.config.input_dim, 1 + gen() % 5);
    if (oracle::min_abs_preactivation(m, batch) < 1e-3) continue;  // too close to a ReLU kink
    CHECK(oracle::max_gradient_error(m, batch, 0.0002) <= 1e-4);
    CHECK(loss<double>(m, [&] {
            std::vector<Example<double>> ex;
            for (const auto& s : batch) ex.push_back({s.x, s.label});
            return ex;
          }(), 0.0002) == doctest::Approx(oracle::ref_loss(m, batch, 0.0002)).epsilon(1e-12));
    ++checked;
  }
}

TEST_CASE("duplicating a batch leaves loss and gradient unchanged") {
  std::mt19937_64 gen(8);
  const auto m = oracle::random_small_model(gen);
  const auto batch = oracle::random_batch(gen, m.config.input_dim, 4);
  std::vector<Example<double>> once, twice;
  for (const auto& s : batch) once.push_back({s.x, s.label});
  for (const auto& s : batch) {
    twice.push_back({s.x, s.label});
    twice.push_back({s.x, s.label});
  }
  const auto a = loss_and_grad<double>(m, once, 0.01);
  const auto b = loss_and_grad<double>(m, twice, 0.01);
  CHECK(a.loss == doctest::Approx(b.loss).epsilon(1e-14));
  for (std::size_t k = 0; k < kNumLayers; ++k) {
    for (std::size_t i = 0; i < a.grads.layers[k].weights.size(); ++i)
      CHECK(a.grads.layers[k].weights[i] == doctest::Approx(b.grads.layers[k].weights[i]).epsilon(1e-12));
    for (std::size_t i = 0; i < a.grads.layers[k].bias.size(); ++i)
      CHECK(a.grads.layers[k].bias[i] == doctest::Approx(b.grads.layers[k].bias[i]).epsilon(1e-12));
  }
}

TEST_CASE("zero learning rate leaves the model untouched") {
  const auto data = blobs(40, 6, 3);
  const auto m0 = init<float>(small_config(6));
  TrainConfig tc;
  tc.learning_rate = 0.0;
  tc.epochs = 3;
  const auto r = train(m0, data.x, data.y, tc);
  CHECK(r.model == m0);
  CHECK(r.report.per_epoch.size() == 3);
}

TEST_CASE("training separates linearly separable data") {
  const auto data = blobs(200, 8, 17);
  MlpConfig c;
  c.input_dim = 8;
  c.seed = 5;
  TrainConfig tc;
  tc.shuffle_seed = 9;
  const auto r = train(init<float>(c), data.x, data.y, tc);
  REQUIRE(r.report.per_epoch.size() == 100);
  CHECK(r.report.per_epoch.back().train_accuracy >= 0.99);
  CHECK(r.report.per_epoch.back().mean_loss < r.report.per_epoch.front().mean_loss);
  for (std::size_t i = 0; i < r.report.per_epoch.size(); ++i) CHECK(r.report.per_epoch[i].epoch == int(i) + 1);

  const auto again = train(init<float>(c), data.x, data.y, tc);
  CHECK(again.model == r.model);
  CHECK(again.report.per_epoch == r.report.per_epoch);
}

TEST_CASE("training keeps the final short batch") {
  // 21 samples with batch 20: the trailing singleton must still move the
  // weights, so a run on 21 samples differs from one on the first 20.
  const auto data = blobs(21, 4, 2);
  auto first20 = data;
  first20.x.pop_back();
  first20.y.pop_back();
  TrainConfig tc;
  tc.epochs = 1;
  const auto m0 = init<float>(small_config(4));
  CHECK_FALSE(train(m0, data.x, data.y, tc).model == train(m0, first20.x, first20.y, tc).model);
}

TEST_CASE("training rejects bad input and reports divergence") {
  const auto data = blobs(10, 4, 2);
  TrainConfig tc;
  CHECK_THROWS_AS(train(init<float>(small_config(4)), data.x, data.y, tc), Error);  // fewer than batch_size

  const auto big = blobs(40, 4, 2, 50.0);
  tc.learning_rate = 1e6;
  try {
    train(init<float>(small_config(4)), big.x, big.y, tc);
    FAIL("expected DivergedError");
  } catch (const DivergedError& e) {
    CHECK(e.epoch() >= 1);
    CHECK(e.epoch() <= tc.epochs);
    CHECK(std::string(e.what()).find("epoch " + std::to_string(e.epoch())) != std::string::npos);
  }
}

TEST_CASE("predict boundary rules") {
  // Zero output layer: score is exactly 0.5 for every input.
  auto m = init<float>(small_config(2));
  std::fill(m.layers[4].weights.begin(), m.layers[4].weights.end(), 0.0f);
  const std::vector<float> x{1, 2};
  CHECK(predict(m, x, 0.5).score == 0.5);
  CHECK(predict(m, x, 0.5).label == Label::toxic);
  CHECK(predict(m, x, 0.5000001).label == Label::benign);
  CHECK(predict(m, x, 1.0).label == Label::benign);

  // A huge toxic bias saturates the score at exactly 1.
  m.layers[4].bias = {-100.0f, 100.0f};
  CHECK(predict(m, x, 1.0).score == 1.0);
  CHECK(predict(m, x, 1.0).label == Label::toxic);
  CHECK_THROWS_AS(predict(m, x, 1.5), Error);
}

TEST_CASE("threshold sweep reproduces the ROC points") {
  const auto data = blobs(60, 5, 31, 0.8);
  TrainConfig tc;
  tc.epochs = 5;
  const auto model = train(init<float>(small_config(5)), data.x, data.y, tc).model;
  std::vector<double> scores;
  for (const auto& x : data.x) scores.push_back(predict(model, x).score);
  const auto curve = metrics::roc_auc(scores, data.y);

  std::vector<double> thresholds(scores.begin(), scores.end());
  std::sort(thresholds.begin(), thresholds.end(), std::greater<>());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
  std::vector<metrics::RocPoint> swept{{0.0, 0.0}};
  for (double t : thresholds) {
    std::vector<Label> pred;
    for (const auto& x : data.x) pred.push_back(predict(model, x, t).label);
    const auto c = metrics::confusion(pred, data.y);
    swept.push_back({metrics::fpr(c), metrics::recall(c)});
  }
  REQUIRE(swept.size() == curve.points.size());
  for (std::size_t i = 0; i < swept.size(); ++i) {
    CHECK(swept[i].fpr == doctest::Approx(curve.points[i].fpr).epsilon(1e-12));
    CHECK(swept[i].tpr == doctest::Approx(curve.points[i].tpr).epsilon(1e-12));
  }
}

TEST_CASE("model files round-trip bit-exactly") {
  testsupport::TempDir dir;
  const auto data = blobs(40, 7, 4);
  TrainConfig tc;
  tc.epochs = 2;
  const auto model = train(init<float>(small_config(7, 3)), data.x, data.y, tc).model;
  save(model, dir / "m.bin");
  const auto loaded = load(dir / "m.bin");
  CHECK(loaded == model);
  CHECK(loaded.config.seed == 3);

  std::mt19937_64 gen(1);
  std::normal_distribution<float> dist;
  for (int i = 0; i < 100; ++i) {
    std::vector<float> x(7);
    for (auto& v : x) v = dist(gen);
    const auto a = forward<float>(model, x), b = forward<float>(loaded, x);
    CHECK(std::memcmp(&a, &b, sizeof a) == 0);
  }

  save(loaded, dir / "m2.bin");
  CHECK(slurp(dir / "m.bin") == slurp(dir / "m2.bin"));
  CHECK(slurp(dir / "m.bin").rfind("TOXGATE-MLP", 0) == 0);
}

TEST_CASE("model loading rejects damaged files") {
  testsupport::TempDir dir;
  save(init<float>(small_config(3)), dir / "m.bin");
  const auto bytes = slurp(dir / "m.bin");
  auto write = [&](const std::string& name, const std::string& content) {
    std::ofstream(dir / name, std::ios::binary) << content;
    return dir / name;
  };
  CHECK_THROWS_AS(load(write("short", bytes.substr(0, bytes.size() - 1))), CorruptFileError);
  CHECK_THROWS_AS(load(write("long", bytes + std::string(1, '\0'))), CorruptFileError);
  CHECK_THROWS_AS(load(write("tiny", bytes.substr(0, 5))), CorruptFileError);
  auto magic = bytes;
  magic[3] = 'x';
  CHECK_THROWS_AS(load(write("magic", magic)), CorruptFileError);
  auto version = bytes;
  version[11] = 7;  // first byte of the version after "TOXGATE-MLP"
  CHECK_THROWS_AS(load(write("version", version)), VersionError);
  CHECK_THROWS_AS(load(dir / "missing"), Error);
}

TEST_CASE("train report JSON") {
  TrainReport r{{{1, 0.5, 0.75}}, 1.5};
  const auto j = nlohmann::json(r);
  CHECK(j["per_epoch"][0]["epoch"] == 1);
  CHECK(j["per_epoch"][0]["mean_loss"] == 0.5);
  CHECK(j["per_epoch"][0]["train_accuracy"] == 0.75);
  CHECK(j["wall_time_s"] == 1.5);
}
