#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <string>

#include "ctmm/numerics/graph.hpp"

namespace ctmm::num {

/// |a - b| / max(|a|, |b|, 1e-8); two zeros give 0.
double relative_error(double a, double b);

struct GradCheckEntry {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  bool pass = true;
};

struct GradCheckReport {
  std::map<std::string, GradCheckEntry> per_parameter;
  double max_rel_error = 0.0;
  bool pass = true;
};

/// Builds a scalar loss from a fresh graph bound to the given store.
using LossBuilder = std::function<Var(Graph&)>;

struct GradCheckOptions {
  double epsilon = 1e-5;
  double tolerance = 1e-4;
  /// 0 checks every element; otherwise at most this many evenly spaced
  /// elements per parameter.
  std::size_t max_elements_per_parameter = 0;
};

/// Central finite differences against reverse-mode gradients for every
/// parameter in `store`. The store is perturbed in place and restored.
GradCheckReport grad_check(ParameterStore& store, const LossBuilder& build, const GradCheckOptions& opts = {});

}  // namespace ctmm::num
