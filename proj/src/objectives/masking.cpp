#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include "ctmm/objectives/objectives.hpp"
#include "ctmm/rng.hpp"

namespace ctmm::obj {

MaskPlan sample_ehr_mask(const std::vector<std::uint32_t>& tokens, double rate, double temperature, std::uint64_t key,
                         const std::vector<double>& freq) {
  if (!(rate > 0.0 && rate < 1.0)) throw std::invalid_argument("sample_ehr_mask: rate must lie in (0, 1)");
  if (!(temperature > 0.0)) throw std::invalid_argument("sample_ehr_mask: temperature must be positive");
  MaskPlan plan;
  const std::size_t n = tokens.size();
  plan.ehr.assign(n, 0);
  plan.ehr_prob.assign(n, 0.0);
  if (n == 0) return plan;

  std::map<std::uint32_t, double> counts;
  if (freq.empty())
    for (auto t : tokens) counts[t] += 1.0;
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    double f;
    if (freq.empty()) {
      f = counts[tokens[i]];
    } else {
      if (tokens[i] >= freq.size()) throw std::out_of_range("sample_ehr_mask: token without a frequency");
      f = freq[tokens[i]];
    }
    if (!(f > 0.0)) throw std::invalid_argument("sample_ehr_mask: frequencies must be positive");
    w[i] = std::pow(1.0 / f, 1.0 / temperature);
  }
  // Water-filling: find c with sum_i min(1, c w_i) = rate * n.
  const double target = rate * static_cast<double>(n);
  std::vector<double> sorted = w;
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  double c = 0.0;
  double rest = 0.0;
  for (double v : sorted) rest += v;
  for (std::size_t k = 0; k < n; ++k) {
    // The k largest weights are capped at 1; the others share the remainder.
    c = (target - static_cast<double>(k)) / rest;
    if (c * sorted[k] <= 1.0) break;
    rest -= sorted[k];
  }
  for (std::size_t i = 0; i < n; ++i) plan.ehr_prob[i] = std::min(1.0, c * w[i]);

  CounterRng rng(key);
  double acc = rng.uniform();
  for (std::size_t i = 0; i < n; ++i) {
    const double before = acc;
    acc += plan.ehr_prob[i];
    if (std::floor(acc) > std::floor(before)) plan.ehr[i] = 1;
  }
  return plan;
}

std::vector<std::uint8_t> sample_wear_mask(std::size_t windows, double fraction, std::uint64_t key,
                                           std::size_t max_run) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw std::invalid_argument("sample_wear_mask: fraction must lie in (0, 1)");
  if (max_run == 0) throw std::invalid_argument("sample_wear_mask: max_run must be positive");
  std::vector<std::uint8_t> mask(windows, 0);
  const auto target = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(windows)));
  CounterRng rng(key);
  std::size_t masked = 0;
  while (masked < target) {
    std::vector<std::size_t> free;
    for (std::size_t i = 0; i < windows; ++i)
      if (!mask[i]) free.push_back(i);
    std::size_t i = free[rng.below(free.size())];
    const std::size_t len = 1 + rng.below(max_run);
    for (std::size_t k = 0; k < len && i < windows && !mask[i] && masked < target; ++k, ++i) {
      mask[i] = 1;
      ++masked;
    }
  }
  return mask;
}

}  // namespace ctmm::obj
