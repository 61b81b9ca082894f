#include <cmath>
#include <cstdio>
#include <iostream>
#include <sstream>

#include "ctmm/rng.hpp"
#include "ctmm/trainer/trainer.hpp"

namespace ctmm::train {

namespace {

std::string g17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string log_header() {
  std::string h = "step,lr,clip_scale,grad_norm";
  for (const auto& n : obj::loss_term_names()) h += "," + n;
  for (const auto& n : obj::loss_term_names()) h += ",lambda_" + n;
  return h + ",total";
}

Checkpoint initial_checkpoint(const std::vector<const PatientRecord*>& records, const RunConfig& config) {
  config.model.validate();
  config.trainer.validate();
  Checkpoint c;
  c.config = config;
  c.digest = config_digest(config);
  c.stats = obj::summary_stats(records, config.objective.e2w_window);
  c.params = model::init_parameters(config.model, CounterRng::derive(config.seed, {0x1417}));
  c.optimizer = init_optimizer(c.params, config.trainer.adam);
  return c;
}

Checkpoint train(const std::vector<const PatientRecord*>& records, Checkpoint state, const TrainOptions& opts) {
  const auto& rc = state.config;
  const auto& tc = rc.trainer;
  if (records.empty()) throw std::invalid_argument("train: no training records");
  if (state.digest != config_digest(rc)) throw CheckpointError("train: checkpoint digest does not match its config");
  const auto sampler = make_sampler(records, tc.batch_size, CounterRng::derive(rc.seed, {0x5A3}), tc.rare_upweight,
                                    tc.rare_cap);
  auto curriculum = rc.objective.curriculum;
  curriculum.total_steps = tc.total_steps;
  const auto schedule = tc.schedule();
  const std::size_t end = opts.stop_after ? std::min(tc.total_steps, opts.stop_after) : tc.total_steps;

  if (state.step == 0 && opts.on_log) opts.on_log(log_header());
  Checkpoint last_good = state;
  while (state.step < end) {
    const std::size_t s = state.step;
    const auto batch = make_batch(sampler, records, s, rc.model, rc.objective, state.stats);
    const auto weights = curriculum.enabled ? obj::curriculum_weights(s, curriculum, rc.objective.weights)
                                            : rc.objective.weights;
    num::Graph g(&state.params);
    obj::LossBreakdown bd;
    auto abort = [&](const std::string& why) {
      std::ostringstream msg;
      msg << "train: non-finite loss at step " << s << "; last good checkpoint is step " << last_good.step << why;
      throw NonFiniteLossError(msg.str(), std::move(last_good));
    };
    num::Var loss;
    try {
      loss = obj::aggregate_loss(g, rc.model, rc.objective, batch, weights, CounterRng::derive(rc.seed, {0x105, s}),
                                 &bd, tc.train_noise);
    } catch (const num::NonFiniteError& e) {
      abort(std::string(" (") + e.what() + ")");
    }
    if (!std::isfinite(bd.total)) abort("");
    auto grads = g.backward(loss);
    const double rate = lr_at(s + 1, schedule);
    const auto clip = clip_gradients(grads, tc.clip_norm);
    if (clip.finite) {
      optimizer_step(state.params, grads, state.optimizer, rate);
    } else {
      ++state.rejected_steps;
      std::cerr << "train: step " << s << " rejected, non-finite gradient\n";
    }
    ++state.step;

    if (opts.on_log) {
      std::string line = std::to_string(s) + "," + g17(rate) + "," + g17(clip.scale) + "," + g17(clip.norm);
      for (const auto& n : obj::loss_term_names()) line += "," + g17(bd.terms.at(n));
      const std::vector<double> lam = {weights.ehr, weights.wear_rec, weights.wear_pred, weights.w2e,
                                       weights.e2w, weights.contr,    weights.elbo,      weights.emb_norm};
      for (double l : lam) line += "," + g17(l);
      opts.on_log(line + "," + g17(bd.total));
    }
    if (state.step % tc.checkpoint_every == 0 || state.step == end) {
      last_good = state;
      if (opts.on_checkpoint) opts.on_checkpoint(state);
    }
  }
  return state;
}

}  // namespace ctmm::train
