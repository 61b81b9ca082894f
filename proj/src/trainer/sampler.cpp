#include <algorithm>
#include <cmath>

#include "ctmm/rng.hpp"
#include "ctmm/trainer/trainer.hpp"

namespace ctmm::train {

BatchSampler make_sampler(const std::vector<const PatientRecord*>& records, std::size_t batch_size, std::uint64_t seed,
                          bool rare_upweight, double rare_cap) {
  if (batch_size == 0) throw std::invalid_argument("make_sampler: batch size must be positive");
  if (!(rare_cap >= 1.0)) throw std::invalid_argument("make_sampler: rare cap must be at least 1");
  BatchSampler s;
  s.batch_size = batch_size;
  s.seed = seed;
  std::map<std::uint32_t, double> count;
  for (const auto* r : records)
    for (const auto& e : r->ehr.events) count[e.token] += 1.0;
  double most = 0.0;
  for (const auto& [tok, n] : count) most = std::max(most, n);

  std::vector<double> factor;
  for (std::size_t ri = 0; ri < records.size(); ++ri) {
    const auto& ev = records[ri]->ehr.events;
    const auto days = static_cast<std::size_t>(std::floor(records[ri]->span / kSecondsPerDay + 1e-9));
    for (std::size_t d = 1; d <= days; ++d) {
      const double t1 = static_cast<double>(d) * kSecondsPerDay, t0 = t1 - kSecondsPerDay;
      double f = 1.0;
      if (rare_upweight)
        for (const auto& e : ev)
          if (e.time > t0 && e.time <= t1) f = std::max(f, std::min(rare_cap, most / count[e.token]));
      s.days.push_back({ri, t1});
      factor.push_back(f);
    }
  }
  if (s.days.empty()) throw std::invalid_argument("make_sampler: no whole patient-days in the records");
  set_factors(s, std::move(factor));
  return s;
}

void set_factors(BatchSampler& s, std::vector<double> factor) {
  if (factor.size() != s.days.size()) throw std::invalid_argument("set_factors: one factor per day required");
  double total = 0.0;
  s.cumulative.resize(factor.size());
  for (std::size_t i = 0; i < factor.size(); ++i) {
    if (!(factor[i] >= 0)) throw std::invalid_argument("set_factors: negative factor");
    total += factor[i];
    s.cumulative[i] = total;
  }
  if (!(total > 0)) throw std::invalid_argument("set_factors: all factors zero");
  for (double& c : s.cumulative) c /= total;
  s.factor = std::move(factor);
}

std::vector<std::size_t> sample_days(const BatchSampler& s, std::size_t step) {
  CounterRng rng(CounterRng::derive(s.seed, {0xBA7C, step}));
  std::vector<std::size_t> out(s.batch_size);
  for (auto& i : out) {
    const double u = rng.uniform();
    i = static_cast<std::size_t>(std::upper_bound(s.cumulative.begin(), s.cumulative.end(), u) - s.cumulative.begin());
    i = std::min(i, s.days.size() - 1);
  }
  return out;
}

std::vector<obj::Slice> make_batch(const BatchSampler& s, const std::vector<const PatientRecord*>& records,
                                   std::size_t step, const model::ModelConfig& mc, const obj::ObjectiveConfig& oc,
                                   const obj::SummaryStats& stats) {
  std::vector<obj::Slice> out;
  for (std::size_t i : sample_days(s, step)) {
    const auto& d = s.days[i];
    out.push_back(obj::make_slice(*records.at(d.record), d.t_end, mc, oc, stats));
  }
  return out;
}

}  // namespace ctmm::train
