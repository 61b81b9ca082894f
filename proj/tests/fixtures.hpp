#pragma once

#include "ctmm/cohort/generator.hpp"
#include "ctmm/experiment/experiment.hpp"
#include "ctmm/objectives/objectives.hpp"

namespace testfx {

/// Small cohort config whose patients have both modalities and a handful of
/// events per day.
inline ctmm::CohortConfig tiny_cohort(std::size_t patients = 2) {
  ctmm::CohortConfig c;
  c.patients = patients;
  c.span_days = 4;
  c.grid_step_seconds = 900;
  c.theta = {6, 0, 0, 6};
  c.sigma = {3, 3};
  c.missing_fraction = 0.1;
  c.families = {ctmm::TokenFamily{{1.0, 0.0}, 0.5, 2}, ctmm::TokenFamily{{0.0, 1.0}, 0.5, 2}};
  c.index_times_days = {2};
  c.horizons_days = {1};
  return c;
}

inline ctmm::model::ModelConfig tiny_model(const ctmm::CohortConfig& cc) {
  ctmm::model::ModelConfig c;
  c.vocab = cc.vocab_size();
  c.channels = cc.wearable_channels;
  c.window_samples = 4;
  c.sample_step = cc.grid_step_seconds;
  c.dim = 8;
  c.heads = 2;
  c.layers = 2;
  c.ff = 12;
  c.components = 2;
  c.cond_dim = 4;
  c.time_dim = 4;
  c.conv_hidden = 6;
  c.wear_lookback = 8 * 3600.0;
  c.ehr_lookback = 86400.0;
  return c;
}

struct Batch {
  ctmm::Cohort cohort;
  ctmm::model::ModelConfig model;
  ctmm::obj::ObjectiveConfig objective;
  std::vector<ctmm::obj::Slice> batch;
};

inline Batch two_patient_batch() {
  Batch b;
  b.cohort = ctmm::cohort::generate_cohort(tiny_cohort(2));
  b.model = tiny_model(b.cohort.config);
  b.objective.e2w_window = 4 * 3600.0;
  b.objective.ehr_mask_rate = 0.3;
  b.objective.wear_mask_fraction = 0.3;
  std::vector<const ctmm::PatientRecord*> recs;
  for (const auto& p : b.cohort.patients) recs.push_back(&p);
  const auto stats = ctmm::obj::summary_stats(recs, b.objective.e2w_window);
  for (const auto& p : b.cohort.patients)
    b.batch.push_back(ctmm::obj::make_slice(p, 2.5 * 86400.0, b.model, b.objective, stats));
  return b;
}

/// Whole-pipeline config small enough to train and probe in a second or two.
inline ctmm::exp::ExperimentConfig tiny_experiment(std::size_t patients = 40) {
  ctmm::exp::ExperimentConfig c;
  c.cohort = tiny_cohort(patients);
  c.cohort.seed = 11;
  c.cohort.index_times_days = {1.5, 2.5};
  c.cohort.horizons_days = {0.5, 1};
  c.model = tiny_model(c.cohort);
  c.objective.e2w_window = 4 * 3600.0;
  c.trainer.total_steps = 6;
  c.trainer.warmup_steps = 1;
  c.trainer.peak_lr = 3e-3;
  c.trainer.batch_size = 2;
  c.trainer.checkpoint_every = 3;
  c.evaluation.resamples = 40;
  c.evaluation.seeds = {1};
  c.evaluation.fractions = {0.5, 1};
  return c;
}

}  // namespace testfx
