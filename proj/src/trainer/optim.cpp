#include <cmath>
#include <numbers>

#include "ctmm/trainer/trainer.hpp"

namespace ctmm::train {

double lr_at(std::size_t step, const LrSchedule& s) {
  if (step > s.total) throw std::invalid_argument("lr_at: step beyond total");
  if (step < s.warmup) return s.peak * static_cast<double>(step) / static_cast<double>(s.warmup);
  const double span = static_cast<double>(s.total - s.warmup);
  if (span <= 0) return s.peak;
  const double f = static_cast<double>(step - s.warmup) / span;
  return s.peak * 0.5 * (1.0 + std::cos(std::numbers::pi * f));
}

ClipResult clip_gradients(Gradients& grads, double max_norm) {
  if (!(max_norm > 0)) throw std::invalid_argument("clip_gradients: max norm must be positive");
  ClipResult r;
  double ss = 0.0;
  for (const auto& [name, g] : grads)
    for (double v : g.raw()) ss += v * v;
  r.norm = std::sqrt(ss);
  if (!std::isfinite(r.norm)) {
    r.finite = false;
    r.scale = 0.0;
    return r;
  }
  if (r.norm > max_norm) {
    r.scale = max_norm / r.norm;
    for (auto& [name, g] : grads)
      for (double& v : g.raw()) v *= r.scale;
  }
  return r;
}

bool OptimizerState::bit_equal(const OptimizerState& o) const {
  if (step != o.step || m.size() != o.m.size() || v.size() != o.v.size()) return false;
  for (const auto& [k, t] : m) {
    auto it = o.m.find(k);
    if (it == o.m.end() || !t.bit_equal(it->second)) return false;
  }
  for (const auto& [k, t] : v) {
    auto it = o.v.find(k);
    if (it == o.v.end() || !t.bit_equal(it->second)) return false;
  }
  return true;
}

OptimizerState init_optimizer(const ParameterStore& params, const AdamConfig& config) {
  OptimizerState s;
  s.config = config;
  for (const auto& [name, t] : params.all()) {
    s.m.emplace(name, Tensor(t.shape()));
    s.v.emplace(name, Tensor(t.shape()));
  }
  return s;
}

void optimizer_step(ParameterStore& params, const Gradients& grads, OptimizerState& state, double rate) {
  if (!(rate >= 0)) throw std::invalid_argument("optimizer_step: negative rate");
  const auto& c = state.config;
  ++state.step;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  const double decay = 1.0 - rate * c.weight_decay;
  for (auto& [name, p] : params.all_mut()) {
    for (double& x : p.raw()) x *= decay;
    auto git = grads.find(name);
    if (git == grads.end()) continue;
    const auto& g = git->second.raw();
    auto& m = state.m.at(name).raw();
    auto& v = state.v.at(name).raw();
    auto& x = p.raw();
    if (g.size() != x.size()) throw std::invalid_argument("optimizer_step: gradient shape mismatch for " + name);
    for (std::size_t i = 0; i < x.size(); ++i) {
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
      x[i] -= rate * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + c.eps);
    }
  }
}

}  // namespace ctmm::train
