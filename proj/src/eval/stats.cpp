#include "ctmm/eval/stats.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>

#include "ctmm/rng.hpp"

namespace ctmm::eval {

PredictionSet PredictionSet::subset(const std::vector<std::size_t>& rows) const {
  PredictionSet out;
  for (std::size_t r : rows) {
    out.id.push_back(id[r]);
    out.score.push_back(score[r]);
    out.label.push_back(label[r]);
  }
  return out;
}

std::vector<std::vector<std::size_t>> group_rows(const std::vector<std::uint64_t>& id) {
  std::map<std::uint64_t, std::vector<std::size_t>> m;
  for (std::size_t i = 0; i < id.size(); ++i) m[id[i]].push_back(i);
  std::vector<std::vector<std::size_t>> out;
  for (auto& [k, v] : m) out.push_back(std::move(v));
  return out;
}

double quantile_sorted(const std::vector<double>& s, double q) {
  if (s.empty()) throw std::invalid_argument("quantile_sorted: empty input");
  const double pos = q * static_cast<double>(s.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, s.size() - 1);
  return s[lo] + (pos - static_cast<double>(lo)) * (s[hi] - s[lo]);
}

namespace {

constexpr std::size_t kMaxAttempts = 100;

std::vector<std::size_t> draw(const std::vector<std::vector<std::size_t>>& groups, std::uint64_t key) {
  CounterRng rng(key);
  std::vector<std::size_t> rows;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const auto& pick = groups[rng.below(groups.size())];
    rows.insert(rows.end(), pick.begin(), pick.end());
  }
  return rows;
}

std::vector<std::size_t> all_rows(std::size_t n) {
  std::vector<std::size_t> r(n);
  std::iota(r.begin(), r.end(), 0);
  return r;
}

RowMetric bind(const PredictionSet& p, const SetMetric& m) {
  return [&p, m](const std::vector<std::size_t>& rows) {
    std::vector<double> s(rows.size());
    std::vector<int> l(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      s[i] = p.score[rows[i]];
      l[i] = p.label[rows[i]];
    }
    return m(s, l);
  };
}

void check_level(double level) {
  if (!(level > 0 && level < 1)) throw std::invalid_argument("bootstrap: level must lie in (0, 1)");
}

}  // namespace

BootstrapResult bootstrap_ci(const std::vector<std::uint64_t>& id, const RowMetric& metric, std::size_t resamples,
                             std::uint64_t seed, double level) {
  check_level(level);
  const auto groups = group_rows(id);
  if (groups.size() < 2) throw std::invalid_argument("bootstrap_ci: at least two groups required");
  if (resamples == 0) throw std::invalid_argument("bootstrap_ci: resamples must be positive");
  BootstrapResult r;
  const auto est = metric(all_rows(id.size()));
  if (!est) throw std::invalid_argument("bootstrap_ci: metric undefined on the full sample");
  r.estimate = *est;
  r.resamples = resamples;
  std::vector<double> vals;
  vals.reserve(resamples);
  for (std::size_t b = 0; b < resamples; ++b) {
    std::optional<double> v;
    for (std::size_t a = 0; a < kMaxAttempts && !v; ++a) {
      v = metric(draw(groups, CounterRng::derive(seed, {b, a})));
      if (!v) ++r.redraws;
    }
    if (!v) throw std::runtime_error("bootstrap_ci: metric undefined on repeated resamples");
    vals.push_back(*v);
  }
  std::sort(vals.begin(), vals.end());
  r.lo = quantile_sorted(vals, (1 - level) / 2);
  r.hi = quantile_sorted(vals, 1 - (1 - level) / 2);
  return r;
}

BootstrapResult bootstrap_ci(const PredictionSet& p, const SetMetric& metric, std::size_t resamples,
                             std::uint64_t seed, double level) {
  return bootstrap_ci(p.id, bind(p, metric), resamples, seed, level);
}

PairedResult paired_bootstrap_test(const std::vector<std::uint64_t>& id, const RowMetric& a, const RowMetric& b,
                                   std::size_t resamples, std::uint64_t seed, double level) {
  check_level(level);
  const auto groups = group_rows(id);
  if (groups.size() < 2) throw std::invalid_argument("paired_bootstrap_test: at least two groups required");
  if (resamples == 0) throw std::invalid_argument("paired_bootstrap_test: resamples must be positive");
  const auto rows = all_rows(id.size());
  const auto ea = a(rows), eb = b(rows);
  if (!ea || !eb) throw std::invalid_argument("paired_bootstrap_test: metric undefined on the full sample");
  PairedResult r;
  r.delta = *ea - *eb;
  r.resamples = resamples;
  std::vector<double> d;
  d.reserve(resamples);
  for (std::size_t k = 0; k < resamples; ++k) {
    std::optional<double> va, vb;
    for (std::size_t att = 0; att < kMaxAttempts; ++att) {
      const auto sample = draw(groups, CounterRng::derive(seed, {k, att}));
      va = a(sample);
      vb = b(sample);
      if (va && vb) break;
      ++r.redraws;
    }
    if (!va || !vb) throw std::runtime_error("paired_bootstrap_test: metric undefined on repeated resamples");
    d.push_back(*va - *vb);
  }
  double le = 0, ge = 0;
  for (double v : d) {
    le += v <= 0 ? 1 : 0;
    ge += v >= 0 ? 1 : 0;
  }
  r.p = std::min(1.0, (1.0 + 2.0 * std::min(le, ge)) / static_cast<double>(resamples + 1));
  std::sort(d.begin(), d.end());
  r.lo = quantile_sorted(d, (1 - level) / 2);
  r.hi = quantile_sorted(d, 1 - (1 - level) / 2);
  return r;
}

PairedResult paired_bootstrap_test(const PredictionSet& a, const PredictionSet& b, const SetMetric& metric,
                                   std::size_t resamples, std::uint64_t seed, double level) {
  if (a.id != b.id) throw std::invalid_argument("paired_bootstrap_test: prediction sets cover different patients");
  return paired_bootstrap_test(a.id, bind(a, metric), bind(b, metric), resamples, seed, level);
}

FdrResult bh_fdr(const std::vector<double>& p, double alpha) {
  for (double v : p)
    if (!(v >= 0 && v <= 1)) throw std::invalid_argument("bh_fdr: p-value outside [0, 1]");
  const std::size_t m = p.size();
  std::vector<std::size_t> idx(m);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return p[a] < p[b]; });
  FdrResult r;
  r.adjusted.assign(m, 1.0);
  r.rejected.assign(m, false);
  double running = 1.0;
  for (std::size_t k = m; k-- > 0;) {
    running = std::min(running, p[idx[k]] * static_cast<double>(m) / static_cast<double>(k + 1));
    r.adjusted[idx[k]] = running;
  }
  for (std::size_t i = 0; i < m; ++i) r.rejected[i] = r.adjusted[i] <= alpha;
  return r;
}

}  // namespace ctmm::eval
