#include "toxgate/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

namespace toxgate::metrics {

ConfusionCounts confusion(std::span<const Label> predictions, std::span<const Label> truth) {
  if (predictions.size() != truth.size()) {
    throw MetricError("confusion: " + std::to_string(predictions.size()) + " predictions vs " +
                      std::to_string(truth.size()) + " labels");
  }
  if (truth.empty()) throw MetricError("confusion: empty input");
  ConfusionCounts c;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const bool pred_toxic = predictions[i] == Label::toxic;
    const bool true_toxic = truth[i] == Label::toxic;
    if (pred_toxic && true_toxic) ++c.tp;
    else if (pred_toxic) ++c.fp;
    else if (true_toxic) ++c.fn;
    else ++c.tn;
  }
  return c;
}

double precision(const ConfusionCounts& c) {
  const auto denom = c.tp + c.fp;
  return denom == 0 ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(denom);
}

double recall(const ConfusionCounts& c) {
  const auto denom = c.tp + c.fn;
  return denom == 0 ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(denom);
}

double f1(const ConfusionCounts& c) {
  const double p = precision(c);
  const double r = recall(c);
  return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
}

double fpr(const ConfusionCounts& c) {
  const auto denom = c.fp + c.tn;
  if (denom == 0) throw MetricError("false positive rate undefined without benign samples");
  return static_cast<double>(c.fp) / static_cast<double>(denom);
}

double accuracy(const ConfusionCounts& c) {
  if (c.total() == 0) throw MetricError("accuracy of an empty set");
  return static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
}

RocCurve roc_auc(std::span<const double> scores, std::span<const Label> truth) {
  if (scores.size() != truth.size()) throw MetricError("roc: scores and labels differ in length");
  std::uint64_t pos = 0, neg = 0;
  for (auto t : truth) (t == Label::toxic ? pos : neg) += 1;
  if (pos == 0 || neg == 0) throw MetricError("roc: both classes must be present");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  RocCurve curve;
  curve.points.push_back({0.0, 0.0});
  std::uint64_t tp = 0, fp = 0;
  // Twice the area in units of (pairs), kept integral until the end.
  double doubled_area = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    const double s = scores[order[i]];
    const auto tp_before = tp;
    const auto fp_before = fp;
    while (i < order.size() && scores[order[i]] == s) {
      (truth[order[i]] == Label::toxic ? tp : fp) += 1;
      ++i;
    }
    doubled_area += static_cast<double>(fp - fp_before) * static_cast<double>(tp + tp_before);
    curve.points.push_back({static_cast<double>(fp) / static_cast<double>(neg),
                            static_cast<double>(tp) / static_cast<double>(pos)});
  }
  curve.auc = doubled_area / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
  return curve;
}

void write_roc_csv(std::ostream& out, const RocCurve& curve) {
  out << "fpr,tpr\n";
  for (const auto& p : curve.points) out << format_real(p.fpr) << ',' << format_real(p.tpr) << '\n';
}

std::vector<std::uint64_t> u_distribution(std::size_t n1, std::size_t n2) {
  // counts[i][u] for the first i of n1 values against j of n2; the largest
  // value either belongs to x (adding j to U) or to y.
  const std::size_t max_u = n1 * n2;
  std::vector<std::vector<std::uint64_t>> prev(n1 + 1, std::vector<std::uint64_t>(max_u + 1, 0));
  for (std::size_t i = 0; i <= n1; ++i) prev[i][0] = 1;  // j = 0
  for (std::size_t j = 1; j <= n2; ++j) {
    std::vector<std::vector<std::uint64_t>> cur(n1 + 1, std::vector<std::uint64_t>(max_u + 1, 0));
    cur[0][0] = 1;
    for (std::size_t i = 1; i <= n1; ++i) {
      for (std::size_t u = 0; u <= i * j; ++u) {
        std::uint64_t v = prev[i][u];
        if (u >= j) v += cur[i - 1][u - j];
        cur[i][u] = v;
      }
    }
    prev = std::move(cur);
  }
  return prev[n1];
}

namespace {

double normal_upper_tail(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

}  // namespace

UTestResult mann_whitney_u(std::span<const double> x, std::span<const double> y) {
  if (x.empty() || y.empty()) throw MetricError("Mann-Whitney U needs two non-empty samples");
  const std::size_t n1 = x.size(), n2 = y.size(), n = n1 + n2;

  std::vector<std::pair<double, bool>> pooled;  // (value, from x)
  pooled.reserve(n);
  for (double v : x) pooled.emplace_back(v, true);
  for (double v : y) pooled.emplace_back(v, false);
  std::sort(pooled.begin(), pooled.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });

  double rank_sum_x = 0.0;
  double tie_term = 0.0;  // sum over tie groups of t^3 - t
  bool has_ties = false;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && pooled[j].first == pooled[i].first) ++j;
    const double t = static_cast<double>(j - i);
    const double midrank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k) {
      if (pooled[k].second) rank_sum_x += midrank;
    }
    if (t > 1) {
      has_ties = true;
      tie_term += t * t * t - t;
    }
    i = j;
  }

  const double d1 = static_cast<double>(n1), d2 = static_cast<double>(n2);
  UTestResult r;
  r.u_statistic = rank_sum_x - d1 * (d1 + 1.0) / 2.0;

  if (!has_ties && n1 * n2 <= kExactUTestMaxPairs) {
    r.method = UTestMethod::exact;
    const auto counts = u_distribution(n1, n2);
    const auto u = static_cast<std::size_t>(std::llround(r.u_statistic));
    std::uint64_t total = 0, le = 0, ge = 0;
    for (std::size_t k = 0; k < counts.size(); ++k) {
      total += counts[k];
      if (k <= u) le += counts[k];
      if (k >= u) ge += counts[k];
    }
    const double tail = 2.0 * static_cast<double>(std::min(le, ge)) / static_cast<double>(total);
    r.p_value = std::min(1.0, tail);
    return r;
  }

  r.method = UTestMethod::normal_approx;
  const double mean = d1 * d2 / 2.0;
  const double dn = static_cast<double>(n);
  const double variance = d1 * d2 / 12.0 * ((dn + 1.0) - tie_term / (dn * (dn - 1.0)));
  if (variance <= 0.0) {
    r.p_value = 1.0;
    return r;
  }
  const double z = std::max(0.0, std::abs(r.u_statistic - mean) - 0.5) / std::sqrt(variance);
  r.p_value = std::min(1.0, 2.0 * normal_upper_tail(z));
  return r;
}

std::map<std::string, std::map<std::string, UTestResult>> u_test_matrix(
    const std::map<std::string, std::vector<double>>& samples) {
  std::map<std::string, std::map<std::string, UTestResult>> out;
  for (const auto& [a, xa] : samples) {
    for (const auto& [b, xb] : samples) {
      if (a != b) out[a][b] = mann_whitney_u(xa, xb);
    }
  }
  return out;
}

nlohmann::json to_json(const UTestResult& r) {
  return {{"u_statistic", r.u_statistic},
          {"p_value", r.p_value},
          {"method", r.method == UTestMethod::exact ? "exact" : "normal_approx"}};
}

}  // namespace toxgate::metrics
