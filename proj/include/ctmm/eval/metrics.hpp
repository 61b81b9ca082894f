#pragma once

#include <cstdint>
#include <optional>
#include <vector>

namespace ctmm::eval {

/// Mann-Whitney AUROC; tied scores count one half. Absent with one class.
std::optional<double> auroc(const std::vector<double>& score, const std::vector<int>& label);

/// Average precision: mean over positives of the precision among all rows
/// scoring at least that positive's score. Absent without positives.
std::optional<double> auprc(const std::vector<double>& score, const std::vector<int>& label);

/// Expected calibration error over equal-width bins of [0, 1].
double ece(const std::vector<double>& prob, const std::vector<int>& label, std::size_t bins = 10);

double brier(const std::vector<double>& prob, const std::vector<int>& label);

/// TP/N - FP/N * pt/(1-pt), classifying p >= pt as positive.
double net_benefit(const std::vector<double>& prob, const std::vector<int>& label, double threshold);

struct SurvivalData {
  std::vector<double> risk;
  std::vector<double> time;
  std::vector<int> event;

  std::size_t size() const { return risk.size(); }
};

/// Harrell's C: pairs with an event at t_i < t_j; concordant when risk_i > risk_j,
/// risk ties count one half. Absent without comparable pairs.
std::optional<double> concordance_index(const SurvivalData& d);

/// Cumulative/dynamic AUC: cases have an event by T, controls are still at
/// risk after T, rows censored by T are dropped.
std::optional<double> auc_at_t(const SurvivalData& d, double horizon);

/// Trapezoidal mean over `grid` of the Brier score of predicted survival
/// curves (row i, column g = S_i(grid[g])). Rows censored before the last grid
/// time are rejected.
double integrated_brier(const SurvivalData& d, const std::vector<std::vector<double>>& curves,
                        const std::vector<double>& grid);

/// (mean a - mean b) / pooled SD with n-1 denominators. Absent when the pooled
/// SD is zero.
std::optional<double> cohens_d(const std::vector<double>& a, const std::vector<double>& b);

using Points = std::vector<std::vector<double>>;

/// Median pairwise Euclidean distance over the pooled sample.
double median_bandwidth(const Points& x, const Points& y);

/// Unbiased MMD^2 with k(a, b) = exp(-|a-b|^2 / (2 h^2)); h <= 0 selects the
/// median heuristic.
double mmd_rbf(const Points& x, const Points& y, double bandwidth = 0.0);

/// Largest |z(t2) - z(t1)| / (t2 - t1) over consecutive points, times in
/// seconds converted to days. Pairs with equal times are skipped.
double local_lipschitz(const Points& z, const std::vector<double>& times_seconds);

}  // namespace ctmm::eval
