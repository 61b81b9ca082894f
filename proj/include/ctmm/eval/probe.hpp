#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ctmm/eval/metrics.hpp"

namespace ctmm::eval {

enum class ProbeKind { binary, regression, survival };

std::string probe_kind_name(ProbeKind k);

/// Linear head on standardized features. For survival the score is the Cox
/// linear risk and a Breslow baseline gives survival curves.
struct ProbeHead {
  ProbeKind kind = ProbeKind::binary;
  Eigen::VectorXd mean, scale;  // feature standardization
  Eigen::VectorXd w;
  double b = 0.0;
  std::vector<double> base_times;   // distinct event times
  std::vector<double> base_cumhaz;  // cumulative baseline hazard at base_times
  std::size_t iterations = 0;
  double grad_norm = 0.0;

  double score(const std::vector<double>& x) const;
  /// Sigmoid of the score (binary heads).
  double probability(const std::vector<double>& x) const;
  /// exp(-H0(t) exp(score)) (survival heads).
  double survival(const std::vector<double>& x, double t) const;
};

struct ProbeOptions {
  double l2 = 1e-3;
  double tolerance = 1e-6;
  std::size_t max_iterations = 10000;
};

/// Logistic regression; labels must contain both classes.
ProbeHead fit_logistic(const Points& x, const std::vector<int>& y, const ProbeOptions& o = {});
/// Least squares with an L2 penalty on the weights.
ProbeHead fit_ridge(const Points& x, const std::vector<double>& y, const ProbeOptions& o = {});
/// Cox partial likelihood (Breslow ties); needs at least one event.
ProbeHead fit_cox(const Points& x, const std::vector<double>& time, const std::vector<int>& event,
                  const ProbeOptions& o = {});

/// Gradient in beta of the negative log partial likelihood (Breslow ties) for
/// raw features.
Eigen::VectorXd cox_gradient(const Eigen::VectorXd& beta, const Eigen::MatrixXd& x, const std::vector<double>& time,
                             const std::vector<int>& event);

Eigen::MatrixXd to_matrix(const Points& x);

}  // namespace ctmm::eval
