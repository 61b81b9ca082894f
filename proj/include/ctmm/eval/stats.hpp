#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

namespace ctmm::eval {

/// Scores with one grouping key (patient id) per row.
struct PredictionSet {
  std::vector<std::uint64_t> id;
  std::vector<double> score;
  std::vector<int> label;

  std::size_t size() const { return score.size(); }
  PredictionSet subset(const std::vector<std::size_t>& rows) const;
};

/// Metric over a row selection; nullopt when undefined on it.
using RowMetric = std::function<std::optional<double>(const std::vector<std::size_t>& rows)>;
using SetMetric = std::function<std::optional<double>(const std::vector<double>& score, const std::vector<int>& label)>;

/// Rows grouped by id, groups in ascending id order.
std::vector<std::vector<std::size_t>> group_rows(const std::vector<std::uint64_t>& id);

/// Linear-interpolated quantile of sorted values, q in [0, 1].
double quantile_sorted(const std::vector<double>& sorted, double q);

struct BootstrapResult {
  double estimate = 0.0;
  double lo = 0.0;
  double hi = 0.0;
  std::size_t resamples = 0;
  std::size_t redraws = 0;  // resamples drawn again because the metric was undefined
};

/// Percentile interval from resampling groups with replacement. Resample b
/// uses its own substream of `seed`.
BootstrapResult bootstrap_ci(const std::vector<std::uint64_t>& id, const RowMetric& metric, std::size_t resamples,
                             std::uint64_t seed, double level = 0.95);
BootstrapResult bootstrap_ci(const PredictionSet& p, const SetMetric& metric, std::size_t resamples,
                             std::uint64_t seed, double level = 0.95);

struct PairedResult {
  double delta = 0.0;  // metric(A) - metric(B)
  double lo = 0.0;
  double hi = 0.0;
  double p = 1.0;
  std::size_t resamples = 0;
  std::size_t redraws = 0;
};

/// Joint resampling of groups. With c = min(#{delta* <= 0}, #{delta* >= 0}),
/// p = min(1, (1 + 2c) / (resamples + 1)).
PairedResult paired_bootstrap_test(const std::vector<std::uint64_t>& id, const RowMetric& a, const RowMetric& b,
                                   std::size_t resamples, std::uint64_t seed, double level = 0.95);
/// A and B must list the same ids in the same row order.
PairedResult paired_bootstrap_test(const PredictionSet& a, const PredictionSet& b, const SetMetric& metric,
                                   std::size_t resamples, std::uint64_t seed, double level = 0.95);

struct FdrResult {
  std::vector<double> adjusted;
  std::vector<bool> rejected;
};

/// Benjamini-Hochberg step-up adjustment; rejected = adjusted <= alpha.
FdrResult bh_fdr(const std::vector<double>& p, double alpha = 0.05);

}  // namespace ctmm::eval
