#include "ctmm/objectives/summary.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace ctmm::obj {

PhysioSummary phi_summary(const WearableStream& w, double t0, double t1, std::size_t hr_channel,
                          std::size_t activity_channel) {
  if (hr_channel >= w.channels || activity_channel >= w.channels)
    throw std::invalid_argument("phi_summary: channel index out of range");
  PhysioSummary s;
  std::vector<double> hr, act;
  for (std::size_t i = w.index_at_or_after(t0); i < w.size() && w.time(i) <= t1; ++i) {
    if (!w.observed(i)) continue;
    hr.push_back(w.value(i, hr_channel));
    act.push_back(w.value(i, activity_channel));
  }
  if (hr.empty()) return s;
  s.present = true;
  double sum = 0.0;
  for (double v : hr) sum += v;
  s.mean_hr = sum / static_cast<double>(hr.size());
  if (hr.size() >= 2) {
    double sq = 0.0;
    for (std::size_t i = 1; i < hr.size(); ++i) sq += (hr[i] - hr[i - 1]) * (hr[i] - hr[i - 1]);
    s.rmssd = std::sqrt(sq / static_cast<double>(hr.size() - 1));
    s.rmssd_present = true;
  }
  const auto [lo_it, hi_it] = std::minmax_element(act.begin(), act.end());
  const double lo = *lo_it, hi = *hi_it;
  if (hi > lo) {
    std::array<double, kActivityBins> counts{};
    for (double v : act) {
      auto b = static_cast<std::size_t>((v - lo) / (hi - lo) * static_cast<double>(kActivityBins));
      counts[std::min(b, kActivityBins - 1)] += 1.0;
    }
    const double n = static_cast<double>(act.size());
    for (double c : counts)
      if (c > 0) s.entropy -= (c / n) * std::log(c / n);
  }
  return s;
}

}  // namespace ctmm::obj
