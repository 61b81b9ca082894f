#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctmm/cohort/types.hpp"
#include "ctmm/model/model.hpp"
#include "ctmm/objectives/summary.hpp"

namespace ctmm::obj {

using num::ParameterStore;
using num::Graph;
using num::Tensor;
using num::Var;

// ---- masking ----------------------------------------------------------------

struct MaskPlan {
  std::vector<std::uint8_t> ehr;      // per event
  std::vector<std::uint8_t> wear;     // per window
  std::vector<double> ehr_prob;       // selection probability of each event
};

/// Selection probability proportional to (1/freq)^(1/temperature), capped at 1
/// and rescaled so the probabilities sum to rate * n. Events are drawn by
/// systematic sampling, so the realized count is within one of rate * n.
/// `freq` gives per-token frequencies; when empty, counts within the sequence
/// are used.
MaskPlan sample_ehr_mask(const std::vector<std::uint32_t>& tokens, double rate, double temperature,
                         std::uint64_t key, const std::vector<double>& freq = {});

/// Masks round(fraction * n) windows as contiguous runs of at most
/// `max_run` windows.
std::vector<std::uint8_t> sample_wear_mask(std::size_t windows, double fraction, std::uint64_t key,
                                           std::size_t max_run = 4);

// ---- individual losses ------------------------------------------------------

/// Counts losses evaluated on an empty selection (they contribute exact 0).
struct LossWarnings {
  std::size_t empty_mlm = 0;
  std::size_t empty_w2e = 0;
  std::size_t empty_e2w = 0;
  std::size_t empty_rec = 0;
};

/// Mean cross-entropy of decoded logits at masked events.
Var loss_ehr_mlm(Graph& g, Var logits, const std::vector<std::size_t>& targets, LossWarnings* warn = nullptr);

/// Mean squared error over observed elements; all-missing rows add nothing.
Var loss_wear_rec(Graph& g, Var pred, const Tensor& target, const Tensor& mask, LossWarnings* warn = nullptr);

/// weights: per element gamma_h / (valid elements of pair (j,h) * valid pairs).
/// With these weights sq_error_sum is the mean over valid pairs of
/// gamma_h * (mean squared error of that pair).
Var loss_wear_pred(Graph& g, Var pred, const Tensor& target, const Tensor& weights);

/// gamma_h = decay^(h-1), h = 1..H.
std::vector<double> horizon_weights(std::size_t H, double decay = 0.5);

/// Cross-entropy of next-token logits.
Var loss_w2e(Graph& g, Var logits, const std::vector<std::size_t>& next_tokens, LossWarnings* warn = nullptr);

/// Mean squared error over present standardized summary components.
Var loss_e2w(Graph& g, Var pred, const Tensor& target, const Tensor& present, LossWarnings* warn = nullptr);

/// InfoNCE: row i of `a` is matched with row i of `b`; the other rows are
/// negatives. Mean over rows of -log softmax(a b^T / tau)_ii.
Var loss_contrastive(Var a, Var b, double tau);

/// Closed-form KL(N(mu, exp(logvar)) || N(0, prior_var)), averaged over entries.
Var gaussian_kl(Var mu, Var logvar, double prior_var);
double gaussian_kl_scalar(double mu, double var, double prior_mean, double prior_var);

// ---- weights and curriculum ---------------------------------------------------

struct LossWeights {
  double ehr = 1.0;
  double wear_rec = 1.0;
  double wear_pred = 1.0;
  double w2e = 1.0;
  double e2w = 0.5;
  double contr = 0.05;
  double elbo = 0.0;
  double emb_norm = 1e-4;

  void validate() const;
  bool operator==(const LossWeights&) const = default;
};

struct CurriculumSchedule {
  std::size_t total_steps = 2000;
  double ramp_fraction = 0.1;
  double w2e_start = 0.2;
  double w2e_end = 1.0;
  double e2w_start = 0.1;
  double e2w_end = 0.5;
  bool enabled = true;
};

/// base weights with lambda_w2e and lambda_e2w ramped linearly from their start
/// to their end values over the first ramp_fraction of training. A base
/// weight of zero (an ablated term) stays zero.
LossWeights curriculum_weights(std::size_t step, const CurriculumSchedule& s, const LossWeights& base);

// ---- aggregate objective ------------------------------------------------------

struct ObjectiveConfig {
  double ehr_mask_rate = 0.15;
  double ehr_mask_temperature = 1.0;
  double wear_mask_fraction = 0.25;
  std::size_t wear_mask_max_run = 4;
  double pred_decay = 0.5;
  double w2e_lookback = 7.0 * 86400.0;
  double e2w_window = 86400.0;
  double info_nce_tau = 0.1;
  double elbo_prior_var = 0.5;
  LossWeights weights;
  CurriculumSchedule curriculum;
};

nlohmann::json objective_config_to_json(const ObjectiveConfig& c);
ObjectiveConfig objective_config_from_json(const nlohmann::json& j, const std::string& path = "objective");

/// One training example: the context at t_end plus the targets the losses need.
struct Slice {
  std::uint64_t patient = 0;
  model::Context ctx;
  // Per context window, the H future windows (row j*H + h-1) and their weights
  // before normalization (0 where unobserved or beyond the record).
  Tensor future;
  Tensor future_mask;
  // Per context event: the next event's token in the record (or -1) and the
  // standardized summary of the following physiology.
  std::vector<std::int64_t> next_token;
  Tensor summary;          // [events, 3]
  Tensor summary_present;  // [events, 3]
};

Slice make_slice(const PatientRecord& rec, double t_end, const model::ModelConfig& mc, const ObjectiveConfig& oc,
                 const SummaryStats& stats);

/// Statistics of summaries following every EHR event of the given records.
SummaryStats summary_stats(const std::vector<const PatientRecord*>& records, double window);

struct LossBreakdown {
  std::map<std::string, double> terms;    // unweighted term values
  LossWeights weights;                    // weights applied at this step
  double total = 0.0;
  LossWarnings warnings;
};

inline const std::vector<std::string>& loss_term_names() {
  static const std::vector<std::string> names = {"ehr", "wear_rec", "wear_pred", "w2e",
                                                 "e2w", "contr", "elbo", "emb_norm"};
  return names;
}

/// Weighted sum of all enabled terms over a batch of slices. Masks and
/// training noise derive from `key`; terms whose weight is zero are skipped
/// and contribute exact zero.
Var aggregate_loss(Graph& g, const model::ModelConfig& mc, const ObjectiveConfig& oc, const std::vector<Slice>& batch,
                   const LossWeights& weights, std::uint64_t key, LossBreakdown* out, bool train_noise = false);

/// Next-token logits of the cross-modal head for every context event that has
/// a successor, without masking or training noise.
Tensor w2e_logits(const ParameterStore& ps, const model::ModelConfig& mc, const ObjectiveConfig& oc, const Slice& s,
                  std::vector<std::int64_t>* targets = nullptr);

}  // namespace ctmm::obj
