#include <cmath>
#include <stdexcept>

#include "ctmm/objectives/objectives.hpp"

namespace ctmm::obj {

using namespace ctmm::num;

namespace {

Var zero(Graph& g) { return g.constant(Tensor::scalar(0.0), "zero_loss"); }

double mask_total(const Tensor& m) {
  double s = 0.0;
  for (double v : m.raw()) s += v;
  return s;
}

}  // namespace

Var loss_ehr_mlm(Graph& g, Var logits, const std::vector<std::size_t>& targets, LossWarnings* warn) {
  if (targets.empty()) {
    if (warn) ++warn->empty_mlm;
    return zero(g);
  }
  return cross_entropy(logits, targets);
}

Var loss_wear_rec(Graph& g, Var pred, const Tensor& target, const Tensor& mask, LossWarnings* warn) {
  const double n = mask.empty() ? static_cast<double>(target.size()) : mask_total(mask);
  if (n == 0.0) {
    if (warn) ++warn->empty_rec;
    return zero(g);
  }
  return scale(sq_error_sum(pred, target, mask), 1.0 / n);
}

Var loss_wear_pred(Graph& g, Var pred, const Tensor& target, const Tensor& weights) {
  if (pred.rows() == 0 || mask_total(weights) == 0.0) return zero(g);
  return sq_error_sum(pred, target, weights);
}

std::vector<double> horizon_weights(std::size_t H, double decay) {
  if (!(decay > 0.0 && decay <= 1.0)) throw std::invalid_argument("horizon_weights: decay must lie in (0, 1]");
  std::vector<double> w(H);
  double v = 1.0;
  for (std::size_t h = 0; h < H; ++h, v *= decay) w[h] = v;
  return w;
}

Var loss_w2e(Graph& g, Var logits, const std::vector<std::size_t>& next_tokens, LossWarnings* warn) {
  if (next_tokens.empty()) {
    if (warn) ++warn->empty_w2e;
    return zero(g);
  }
  return cross_entropy(logits, next_tokens);
}

Var loss_e2w(Graph& g, Var pred, const Tensor& target, const Tensor& present, LossWarnings* warn) {
  const double n = mask_total(present);
  if (pred.rows() == 0 || n == 0.0) {
    if (warn) ++warn->empty_e2w;
    return zero(g);
  }
  return scale(sq_error_sum(pred, target, present), 1.0 / n);
}

Var loss_contrastive(Var a, Var b, double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("loss_contrastive: temperature must be positive");
  if (a.rows() != b.rows() || a.rows() == 0) throw ShapeError("loss_contrastive: need matching non-empty batches");
  std::vector<std::size_t> diag(a.rows());
  for (std::size_t i = 0; i < diag.size(); ++i) diag[i] = i;
  return cross_entropy(scale(matmul_nt(a, b), 1.0 / tau), diag);
}

Var gaussian_kl(Var mu, Var logvar, double prior_var) {
  if (!(prior_var > 0.0)) throw std::invalid_argument("gaussian_kl: prior variance must be positive");
  // 0.5 * (var/pv + mu^2/pv - 1 - log var + log pv)
  Var var = exp(logvar);
  Var t = add(scale(add(var, square(mu)), 1.0 / prior_var), scale(logvar, -1.0));
  return scale(add_scalar(mean(t), std::log(prior_var) - 1.0), 0.5);
}

double gaussian_kl_scalar(double mu, double var, double prior_mean, double prior_var) {
  if (!(var > 0.0) || !(prior_var > 0.0)) throw std::invalid_argument("gaussian_kl: variances must be positive");
  const double d = mu - prior_mean;
  return 0.5 * (var / prior_var + d * d / prior_var - 1.0 - std::log(var / prior_var));
}

void LossWeights::validate() const {
  for (double w : {ehr, wear_rec, wear_pred, w2e, e2w, contr, elbo, emb_norm})
    if (!(std::isfinite(w) && w >= 0.0)) throw std::invalid_argument("loss weights must be finite and non-negative");
}

LossWeights curriculum_weights(std::size_t step, const CurriculumSchedule& s, const LossWeights& base) {
  if (step > s.total_steps) throw std::invalid_argument("curriculum_weights: step beyond total steps");
  LossWeights w = base;
  if (!s.enabled) return w;
  const double ramp = s.ramp_fraction * static_cast<double>(s.total_steps);
  const double f = ramp <= 0.0 ? 1.0 : std::min(1.0, static_cast<double>(step) / ramp);
  if (base.w2e != 0.0) w.w2e = (1.0 - f) * s.w2e_start + f * s.w2e_end;
  if (base.e2w != 0.0) w.e2w = (1.0 - f) * s.e2w_start + f * s.e2w_end;
  return w;
}

}  // namespace ctmm::obj
