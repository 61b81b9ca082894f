#include "ctmm/eval/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace ctmm::eval {

namespace {

void require_same(std::size_t a, std::size_t b, const char* what) {
  if (a != b) throw std::invalid_argument(std::string(what) + ": scores and labels differ in length");
}

void require_probs(const std::vector<double>& p, const char* what) {
  for (double v : p)
    if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument(std::string(what) + ": probability outside [0, 1]");
}

std::vector<std::size_t> order_by(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  return idx;
}

}  // namespace

std::optional<double> auroc(const std::vector<double>& score, const std::vector<int>& label) {
  require_same(score.size(), label.size(), "auroc");
  // Midranks over tie groups.
  const auto idx = order_by(score);
  double pos = 0, neg = 0, rank_sum = 0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && score[idx[j]] == score[idx[i]]) ++j;
    const double mid = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k)
      if (label[idx[k]]) rank_sum += mid;
    i = j;
  }
  for (int l : label) (l ? pos : neg) += 1;
  if (pos == 0 || neg == 0) return std::nullopt;
  return (rank_sum - pos * (pos + 1) / 2) / (pos * neg);
}

std::optional<double> auprc(const std::vector<double>& score, const std::vector<int>& label) {
  require_same(score.size(), label.size(), "auprc");
  auto idx = order_by(score);
  std::reverse(idx.begin(), idx.end());
  double total_pos = 0;
  for (int l : label) total_pos += l ? 1 : 0;
  if (total_pos == 0) return std::nullopt;
  double tp = 0, seen = 0, ap = 0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    double group_pos = 0;
    while (j < idx.size() && score[idx[j]] == score[idx[i]]) group_pos += label[idx[j++]] ? 1 : 0;
    tp += group_pos;
    seen += static_cast<double>(j - i);
    ap += group_pos * (tp / seen);
    i = j;
  }
  return ap / total_pos;
}

double ece(const std::vector<double>& prob, const std::vector<int>& label, std::size_t bins) {
  require_same(prob.size(), label.size(), "ece");
  require_probs(prob, "ece");
  if (bins == 0) throw std::invalid_argument("ece: bins must be positive");
  if (prob.empty()) return 0.0;
  std::vector<double> n(bins), acc(bins), conf(bins);
  for (std::size_t i = 0; i < prob.size(); ++i) {
    const auto b = std::min(bins - 1, static_cast<std::size_t>(prob[i] * static_cast<double>(bins)));
    n[b] += 1;
    acc[b] += label[i] ? 1 : 0;
    conf[b] += prob[i];
  }
  double e = 0;
  for (std::size_t b = 0; b < bins; ++b)
    if (n[b] > 0) e += std::abs(acc[b] - conf[b]) / static_cast<double>(prob.size());
  return e;
}

double brier(const std::vector<double>& prob, const std::vector<int>& label) {
  require_same(prob.size(), label.size(), "brier");
  require_probs(prob, "brier");
  if (prob.empty()) return 0.0;
  double s = 0;
  for (std::size_t i = 0; i < prob.size(); ++i) {
    const double d = prob[i] - (label[i] ? 1.0 : 0.0);
    s += d * d;
  }
  return s / static_cast<double>(prob.size());
}

double net_benefit(const std::vector<double>& prob, const std::vector<int>& label, double threshold) {
  require_same(prob.size(), label.size(), "net_benefit");
  if (!(threshold > 0 && threshold < 1)) throw std::invalid_argument("net_benefit: threshold must lie in (0, 1)");
  if (prob.empty()) return 0.0;
  double tp = 0, fp = 0;
  for (std::size_t i = 0; i < prob.size(); ++i)
    if (prob[i] >= threshold) (label[i] ? tp : fp) += 1;
  const double n = static_cast<double>(prob.size());
  return tp / n - fp / n * threshold / (1 - threshold);
}

std::optional<double> concordance_index(const SurvivalData& d) {
  const std::size_t n = d.size();
  if (d.time.size() != n || d.event.size() != n) throw std::invalid_argument("concordance_index: ragged input");
  // Sweep times downward; a Fenwick tree over risk ranks holds everyone with a
  // strictly later time.
  std::vector<double> ranks = d.risk;
  std::sort(ranks.begin(), ranks.end());
  ranks.erase(std::unique(ranks.begin(), ranks.end()), ranks.end());
  std::vector<double> tree(ranks.size() + 1, 0.0);
  auto add = [&](std::size_t i) {
    for (++i; i < tree.size(); i += i & (~i + 1)) tree[i] += 1;
  };
  auto below = [&](std::size_t i) {  // count with rank < i
    double s = 0;
    for (; i > 0; i -= i & (~i + 1)) s += tree[i];
    return s;
  };
  auto rank_of = [&](double r) {
    return static_cast<std::size_t>(std::lower_bound(ranks.begin(), ranks.end(), r) - ranks.begin());
  };
  auto idx = order_by(d.time);
  std::reverse(idx.begin(), idx.end());
  double pairs = 0, conc = 0, inserted = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && d.time[idx[j]] == d.time[idx[i]]) ++j;
    for (std::size_t k = i; k < j; ++k) {
      if (!d.event[idx[k]]) continue;
      const auto r = rank_of(d.risk[idx[k]]);
      const double lo = below(r), le = below(r + 1);
      pairs += inserted;
      conc += lo + 0.5 * (le - lo);
    }
    for (std::size_t k = i; k < j; ++k) {
      add(rank_of(d.risk[idx[k]]));
      inserted += 1;
    }
    i = j;
  }
  if (pairs == 0) return std::nullopt;
  return conc / pairs;
}

std::optional<double> auc_at_t(const SurvivalData& d, double horizon) {
  std::vector<double> s;
  std::vector<int> l;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (d.time[i] <= horizon) {
      if (!d.event[i]) continue;
      s.push_back(d.risk[i]);
      l.push_back(1);
    } else {
      s.push_back(d.risk[i]);
      l.push_back(0);
    }
  }
  return auroc(s, l);
}

double integrated_brier(const SurvivalData& d, const std::vector<std::vector<double>>& curves,
                        const std::vector<double>& grid) {
  if (grid.empty()) throw std::invalid_argument("integrated_brier: empty grid");
  if (curves.size() != d.size()) throw std::invalid_argument("integrated_brier: one curve per row required");
  if (d.size() == 0) throw std::invalid_argument("integrated_brier: no rows");
  for (std::size_t g = 1; g < grid.size(); ++g)
    if (!(grid[g] > grid[g - 1])) throw std::invalid_argument("integrated_brier: grid must increase");
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (!d.event[i] && d.time[i] < grid.back())
      throw std::invalid_argument("integrated_brier: row censored before the end of the grid");
    if (curves[i].size() != grid.size()) throw std::invalid_argument("integrated_brier: curve length differs from grid");
  }
  std::vector<double> bs(grid.size());
  for (std::size_t g = 0; g < grid.size(); ++g) {
    double s = 0;
    for (std::size_t i = 0; i < d.size(); ++i) {
      const double alive = d.time[i] > grid[g] ? 1.0 : 0.0;
      s += (curves[i][g] - alive) * (curves[i][g] - alive);
    }
    bs[g] = s / static_cast<double>(d.size());
  }
  if (grid.size() == 1) return bs[0];
  double area = 0;
  for (std::size_t g = 1; g < grid.size(); ++g) area += 0.5 * (bs[g] + bs[g - 1]) * (grid[g] - grid[g - 1]);
  return area / (grid.back() - grid.front());
}

std::optional<double> cohens_d(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() < 2 || b.size() < 2) throw std::invalid_argument("cohens_d: each sample needs at least two values");
  auto moments = [](const std::vector<double>& x) {
    const double m = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
    double ss = 0;
    for (double v : x) ss += (v - m) * (v - m);
    return std::pair{m, ss};
  };
  const auto [ma, sa] = moments(a);
  const auto [mb, sb] = moments(b);
  const double pooled = std::sqrt((sa + sb) / static_cast<double>(a.size() + b.size() - 2));
  if (pooled == 0) return std::nullopt;
  return (ma - mb) / pooled;
}

namespace {

double sqdist(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("mmd_rbf: points differ in dimension");
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

}  // namespace

double median_bandwidth(const Points& x, const Points& y) {
  Points all = x;
  all.insert(all.end(), y.begin(), y.end());
  std::vector<double> d;
  for (std::size_t i = 0; i < all.size(); ++i)
    for (std::size_t j = i + 1; j < all.size(); ++j) d.push_back(std::sqrt(sqdist(all[i], all[j])));
  if (d.empty()) return 1.0;
  auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
  std::nth_element(d.begin(), mid, d.end());
  return *mid > 0 ? *mid : 1.0;
}

double mmd_rbf(const Points& x, const Points& y, double bandwidth) {
  if (x.size() < 2 || y.size() < 2) throw std::invalid_argument("mmd_rbf: each set needs at least two points");
  const double h = bandwidth > 0 ? bandwidth : median_bandwidth(x, y);
  const double inv = 1.0 / (2.0 * h * h);
  auto k = [&](const std::vector<double>& a, const std::vector<double>& b) { return std::exp(-sqdist(a, b) * inv); };
  const double m = static_cast<double>(x.size()), n = static_cast<double>(y.size());
  double kxx = 0, kyy = 0, kxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = 0; j < x.size(); ++j)
      if (i != j) kxx += k(x[i], x[j]);
  for (std::size_t i = 0; i < y.size(); ++i)
    for (std::size_t j = 0; j < y.size(); ++j)
      if (i != j) kyy += k(y[i], y[j]);
  for (const auto& a : x)
    for (const auto& b : y) kxy += k(a, b);
  return kxx / (m * (m - 1)) + kyy / (n * (n - 1)) - 2 * kxy / (m * n);
}

double local_lipschitz(const Points& z, const std::vector<double>& times_seconds) {
  if (z.size() != times_seconds.size()) throw std::invalid_argument("local_lipschitz: one time per point required");
  if (z.size() < 2) throw std::invalid_argument("local_lipschitz: at least two points required");
  double best = 0;
  for (std::size_t i = 1; i < z.size(); ++i) {
    const double dt = (times_seconds[i] - times_seconds[i - 1]) / 86400.0;
    if (dt == 0) continue;
    best = std::max(best, std::sqrt(sqdist(z[i], z[i - 1])) / std::abs(dt));
  }
  return best;
}

}  // namespace ctmm::eval
