#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "toxgate/common.hpp"

namespace toxgate::metrics {

class MetricError : public Error {
 public:
  using Error::Error;
};

// Toxic is the positive class.
struct ConfusionCounts {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t tn = 0;
  std::uint64_t fn = 0;

  std::uint64_t total() const { return tp + fp + tn + fn; }
  bool operator==(const ConfusionCounts&) const = default;
};

ConfusionCounts confusion(std::span<const Label> predictions, std::span<const Label> truth);

// Precision and recall fall back to 0 when their denominator is 0.
double precision(const ConfusionCounts& c);
double recall(const ConfusionCounts& c);
double f1(const ConfusionCounts& c);
// Throws MetricError when there are no benign samples.
double fpr(const ConfusionCounts& c);
double accuracy(const ConfusionCounts& c);

struct RocPoint {
  double fpr;
  double tpr;
  bool operator==(const RocPoint&) const = default;
};

struct RocCurve {
  std::vector<RocPoint> points;  // (0,0) ... (1,1), fpr nondecreasing
  double auc = 0.0;
};

// Sweeps the threshold over the distinct scores in descending order,
// grouping ties, and integrates with the trapezoid rule.
RocCurve roc_auc(std::span<const double> scores, std::span<const Label> truth);

void write_roc_csv(std::ostream& out, const RocCurve& curve);

enum class UTestMethod { exact, normal_approx };

struct UTestResult {
  double u_statistic = 0.0;  // for the first sample
  double p_value = 1.0;      // two-sided
  UTestMethod method = UTestMethod::exact;
};

// Exact p-values are used up to this many sample pairs, when no ties occur.
inline constexpr std::size_t kExactUTestMaxPairs = 400;

UTestResult mann_whitney_u(std::span<const double> x, std::span<const double> y);

// Number of arrangements of n1 + n2 tie-free values whose first-sample U
// equals u, for u = 0 .. n1*n2.
std::vector<std::uint64_t> u_distribution(std::size_t n1, std::size_t n2);

// Pairwise U tests across named groups of per-run samples.
std::map<std::string, std::map<std::string, UTestResult>> u_test_matrix(
    const std::map<std::string, std::vector<double>>& samples);

nlohmann::json to_json(const UTestResult& r);

}  // namespace toxgate::metrics
