#include "ctmm/numerics/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ctmm::num {

double relative_error(double a, double b) {
  const double denom = std::max({std::abs(a), std::abs(b), 1e-8});
  return std::abs(a - b) / denom;
}

GradCheckReport grad_check(ParameterStore& store, const LossBuilder& build, const GradCheckOptions& opts) {
  if (!(opts.epsilon >= 1e-7 && opts.epsilon <= 1e-3))
    throw std::invalid_argument("grad_check: epsilon must lie in [1e-7, 1e-3]");

  Gradients analytic;
  {
    Graph g(&store);
    Var loss = build(g);
    analytic = g.backward(loss);
  }
  auto eval = [&] {
    Graph g(&store);
    return build(g).item();
  };

  GradCheckReport report;
  for (auto& [name, tensor] : store.all_mut()) {
    GradCheckEntry entry;
    const std::size_t n = tensor.size();
    std::size_t stride = 1;
    if (opts.max_elements_per_parameter && n > opts.max_elements_per_parameter)
      stride = (n + opts.max_elements_per_parameter - 1) / opts.max_elements_per_parameter;
    for (std::size_t i = 0; i < n; i += stride) {
      const double orig = tensor[i];
      tensor[i] = orig + opts.epsilon;
      const double up = eval();
      tensor[i] = orig - opts.epsilon;
      const double down = eval();
      tensor[i] = orig;
      const double numeric = (up - down) / (2.0 * opts.epsilon);
      const double err = relative_error(analytic.at(name)[i], numeric);
      entry.max_rel_error = std::max(entry.max_rel_error, err);
      ++entry.checked;
    }
    entry.pass = entry.max_rel_error < opts.tolerance;
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    report.pass = report.pass && entry.pass;
    report.per_parameter.emplace(name, entry);
  }
  return report;
}

}  // namespace ctmm::num
