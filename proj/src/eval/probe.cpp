#include "ctmm/eval/probe.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace ctmm::eval {

using Eigen::MatrixXd;
using Eigen::VectorXd;

std::string probe_kind_name(ProbeKind k) {
  switch (k) {
    case ProbeKind::binary: return "binary";
    case ProbeKind::regression: return "regression";
    case ProbeKind::survival: return "survival";
  }
  return "?";
}

MatrixXd to_matrix(const Points& x) {
  if (x.empty()) return MatrixXd(0, 0);
  MatrixXd m(static_cast<Eigen::Index>(x.size()), static_cast<Eigen::Index>(x[0].size()));
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i].size() != x[0].size()) throw std::invalid_argument("probe: ragged feature rows");
    for (std::size_t j = 0; j < x[i].size(); ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = x[i][j];
  }
  return m;
}

namespace {

// Standardizes columns in place and records the transform on the head.
MatrixXd standardize(const Points& x, ProbeHead& h) {
  if (x.empty()) throw std::invalid_argument("probe: no rows");
  MatrixXd m = to_matrix(x);
  h.mean = m.colwise().mean().transpose();
  h.scale.resize(m.cols());
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    const double sd = std::sqrt((m.col(j).array() - h.mean(j)).square().mean());
    h.scale(j) = sd > 1e-12 ? sd : 1.0;
    m.col(j) = (m.col(j).array() - h.mean(j)) / h.scale(j);
  }
  return m;
}

VectorXd features(const ProbeHead& h, const std::vector<double>& x) {
  if (static_cast<Eigen::Index>(x.size()) != h.w.size()) throw std::invalid_argument("probe: feature dimension mismatch");
  VectorXd v(h.w.size());
  for (Eigen::Index j = 0; j < v.size(); ++j) v(j) = (x[static_cast<std::size_t>(j)] - h.mean(j)) / h.scale(j);
  return v;
}

double log1pexp(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

// Damped Newton on a convex objective over theta; f returns value, fills
// gradient and Hessian.
template <typename F>
VectorXd newton(VectorXd theta, F&& f, const ProbeOptions& o, std::size_t& iters, double& gnorm) {
  VectorXd g(theta.size());
  MatrixXd hess(theta.size(), theta.size());
  double val = f(theta, &g, &hess);
  for (iters = 0; iters < o.max_iterations; ++iters) {
    gnorm = g.norm();
    if (gnorm < o.tolerance) break;
    const VectorXd step = hess.ldlt().solve(g);
    double t = 1.0;
    VectorXd next;
    double nv = 0;
    for (int k = 0; k < 60; ++k, t *= 0.5) {
      next = theta - t * step;
      nv = f(next, nullptr, nullptr);
      if (nv <= val - 1e-4 * t * g.dot(step)) break;
    }
    if (!(nv <= val)) break;  // no progress possible at double precision
    theta = next;
    val = f(theta, &g, &hess);
  }
  gnorm = g.norm();
  return theta;
}

}  // namespace

double ProbeHead::score(const std::vector<double>& x) const { return features(*this, x).dot(w) + b; }

double ProbeHead::probability(const std::vector<double>& x) const {
  const double z = score(x);
  return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

double ProbeHead::survival(const std::vector<double>& x, double t) const {
  auto it = std::upper_bound(base_times.begin(), base_times.end(), t);
  const double h0 = it == base_times.begin() ? 0.0 : base_cumhaz[static_cast<std::size_t>(it - base_times.begin()) - 1];
  return std::exp(-h0 * std::exp(score(x)));
}

ProbeHead fit_logistic(const Points& x, const std::vector<int>& y, const ProbeOptions& o) {
  if (x.size() != y.size()) throw std::invalid_argument("fit_logistic: rows and labels differ");
  const auto pos = std::count_if(y.begin(), y.end(), [](int v) { return v != 0; });
  if (pos == 0 || pos == static_cast<long>(y.size()))
    throw std::invalid_argument("fit_logistic: labels contain a single class");
  ProbeHead h;
  h.kind = ProbeKind::binary;
  const MatrixXd m = standardize(x, h);
  const Eigen::Index n = m.rows(), d = m.cols();
  MatrixXd a(n, d + 1);
  a << m, VectorXd::Ones(n);
  VectorXd yy(n);
  for (Eigen::Index i = 0; i < n; ++i) yy(i) = y[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
  VectorXd reg = VectorXd::Constant(d + 1, o.l2);
  reg(d) = 0.0;
  auto f = [&](const VectorXd& th, VectorXd* g, MatrixXd* hs) {
    const VectorXd z = a * th;
    double v = 0;
    for (Eigen::Index i = 0; i < n; ++i) v += log1pexp(z(i)) - yy(i) * z(i);
    v = v / static_cast<double>(n) + 0.5 * (reg.array() * th.array().square()).sum();
    if (g) {
      VectorXd p(n), s(n);
      for (Eigen::Index i = 0; i < n; ++i) {
        p(i) = 1.0 / (1.0 + std::exp(-z(i)));
        s(i) = p(i) * (1 - p(i));
      }
      *g = a.transpose() * (p - yy) / static_cast<double>(n) + (reg.array() * th.array()).matrix();
      *hs = a.transpose() * s.asDiagonal() * a / static_cast<double>(n);
      hs->diagonal() += reg;
      hs->diagonal().array() += 1e-12;
    }
    return v;
  };
  const VectorXd th = newton(VectorXd::Zero(d + 1), f, o, h.iterations, h.grad_norm);
  h.w = th.head(d);
  h.b = th(d);
  return h;
}

ProbeHead fit_ridge(const Points& x, const std::vector<double>& y, const ProbeOptions& o) {
  if (x.size() != y.size()) throw std::invalid_argument("fit_ridge: rows and targets differ");
  ProbeHead h;
  h.kind = ProbeKind::regression;
  const MatrixXd m = standardize(x, h);
  const Eigen::Index n = m.rows();
  VectorXd yy = Eigen::Map<const VectorXd>(y.data(), n);
  // Centered features decouple the intercept.
  const double ybar = yy.mean();
  MatrixXd lhs = m.transpose() * m / static_cast<double>(n);
  lhs.diagonal().array() += o.l2;
  h.w = lhs.ldlt().solve(m.transpose() * (yy.array() - ybar).matrix() / static_cast<double>(n));
  h.b = ybar;
  h.grad_norm = (2.0 * (lhs * h.w - m.transpose() * (yy.array() - ybar).matrix() / static_cast<double>(n))).norm();
  h.iterations = 1;
  return h;
}

VectorXd cox_gradient(const VectorXd& beta, const MatrixXd& x, const std::vector<double>& time,
                      const std::vector<int>& event) {
  const Eigen::Index n = x.rows();
  const VectorXd r = (x * beta).array().exp();
  VectorXd g = VectorXd::Zero(beta.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!event[static_cast<std::size_t>(i)]) continue;
    double s0 = 0;
    VectorXd s1 = VectorXd::Zero(beta.size());
    for (Eigen::Index j = 0; j < n; ++j)
      if (time[static_cast<std::size_t>(j)] >= time[static_cast<std::size_t>(i)]) {
        s0 += r(j);
        s1 += r(j) * x.row(j).transpose();
      }
    g -= x.row(i).transpose() - s1 / s0;
  }
  return g;
}

ProbeHead fit_cox(const Points& x, const std::vector<double>& time, const std::vector<int>& event, const ProbeOptions& o) {
  if (x.size() != time.size() || x.size() != event.size()) throw std::invalid_argument("fit_cox: ragged input");
  if (std::none_of(event.begin(), event.end(), [](int e) { return e != 0; }))
    throw std::invalid_argument("fit_cox: no events");
  for (double t : time)
    if (!(t >= 0)) throw std::invalid_argument("fit_cox: negative time");
  ProbeHead h;
  h.kind = ProbeKind::survival;
  const MatrixXd m = standardize(x, h);
  const Eigen::Index n = m.rows(), d = m.cols();
  // Rows by descending time so risk sets are prefixes.
  std::vector<Eigen::Index> ord(static_cast<std::size_t>(n));
  std::iota(ord.begin(), ord.end(), 0);
  std::stable_sort(ord.begin(), ord.end(), [&](auto a, auto b) {
    return time[static_cast<std::size_t>(a)] > time[static_cast<std::size_t>(b)];
  });
  double events = 0;
  for (int e : event) events += e ? 1 : 0;

  auto f = [&](const VectorXd& beta, VectorXd* g, MatrixXd* hs) {
    const VectorXd eta = m * beta;
    double v = 0, s0 = 0;
    VectorXd s1 = VectorXd::Zero(d);
    MatrixXd s2 = MatrixXd::Zero(d, d);
    if (g) {
      g->setZero(d);
      hs->setZero(d, d);
    }
    for (std::size_t k = 0; k < ord.size();) {
      // Add the whole tie group to the risk set before scoring its events.
      std::size_t e = k;
      const double tk = time[static_cast<std::size_t>(ord[k])];
      while (e < ord.size() && time[static_cast<std::size_t>(ord[e])] == tk) {
        const auto j = ord[e++];
        const double r = std::exp(eta(j));
        s0 += r;
        if (g) {
          s1 += r * m.row(j).transpose();
          s2 += r * m.row(j).transpose() * m.row(j);
        }
      }
      for (std::size_t q = k; q < e; ++q) {
        const auto i = ord[q];
        if (!event[static_cast<std::size_t>(i)]) continue;
        v -= eta(i) - std::log(s0);
        if (g) {
          const VectorXd mu = s1 / s0;
          *g -= m.row(i).transpose() - mu;
          *hs += s2 / s0 - mu * mu.transpose();
        }
      }
      k = e;
    }
    v = v / events + 0.5 * o.l2 * beta.squaredNorm();
    if (g) {
      *g = *g / events + o.l2 * beta;
      *hs = *hs / events;
      hs->diagonal().array() += o.l2 + 1e-12;
    }
    return v;
  };
  h.w = newton(VectorXd::Zero(d), f, o, h.iterations, h.grad_norm);
  h.b = 0.0;

  // Breslow baseline cumulative hazard on the standardized scale.
  const VectorXd r = (m * h.w).array().exp();
  std::vector<double> times;
  for (std::size_t i = 0; i < time.size(); ++i)
    if (event[i]) times.push_back(time[i]);
  std::sort(times.begin(), times.end());
  times.erase(std::unique(times.begin(), times.end()), times.end());
  double cum = 0;
  for (double t : times) {
    double deaths = 0, risk = 0;
    for (Eigen::Index j = 0; j < n; ++j) {
      const double tj = time[static_cast<std::size_t>(j)];
      if (tj >= t) risk += r(j);
      if (tj == t && event[static_cast<std::size_t>(j)]) deaths += 1;
    }
    cum += deaths / risk;
    h.base_times.push_back(t);
    h.base_cumhaz.push_back(cum);
  }
  return h;
}

}  // namespace ctmm::eval
