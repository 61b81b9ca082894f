#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctmm/cohort/types.hpp"
#include "ctmm/eval/harness.hpp"
#include "ctmm/model/model.hpp"
#include "ctmm/objectives/objectives.hpp"
#include "ctmm/trainer/trainer.hpp"

namespace ctmm::exp {

inline constexpr const char* kArtifactVersion = "ctmm-0.1.0";

struct EvaluationConfig {
  std::size_t horizon = 0;  // index into cohort.horizons_days for ablation, robustness and fractions
  std::vector<std::string> variants = {"full", "disable_w2e", "disable_e2w", "disable_both_cross"};
  std::vector<std::string> scenarios = {"identity", "drop_wearable", "drop_ehr", "snr_minus_6db"};
  std::vector<double> fractions = {0.01, 0.1, 1.0};
  std::vector<double> net_benefit_thresholds = {0.05, 0.1, 0.2, 0.3};
  std::size_t resamples = 5000;
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  double probe_l2 = 1e-3;
};

struct ExperimentConfig {
  CohortConfig cohort;
  model::ModelConfig model;
  obj::ObjectiveConfig objective;
  train::TrainerConfig trainer;
  std::vector<std::string> ablations;  // applied to every variant
  EvaluationConfig evaluation;
};

/// Strict parse. Model fields fixed by the cohort (vocab, channels,
/// sample_step) are filled in and rejected if given with other values.
ExperimentConfig experiment_from_json(const nlohmann::json& j);
nlohmann::json experiment_to_json(const ExperimentConfig& c);
ExperimentConfig load_experiment(const std::string& path);
std::string experiment_digest(const ExperimentConfig& c);

// ---- ablations ----------------------------------------------------------------

const std::vector<std::string>& ablation_flags();
/// Variant names are "full" or flags joined by '+'.
std::vector<std::string> variant_flags(const std::string& variant);
void apply_ablation(train::RunConfig& rc, const std::string& flag);
train::RunConfig variant_config(const ExperimentConfig& c, const std::string& variant, std::uint64_t seed);

// ---- splits -------------------------------------------------------------------

enum class Split { train, val, test };

/// 80/10/10 by a stable hash of the patient id.
Split split_of(std::uint64_t patient_id);

struct Splits {
  std::vector<const PatientRecord*> train, val, test;
};
Splits split_cohort(const Cohort& c);

// ---- pipelines ----------------------------------------------------------------

std::vector<double> index_times(const CohortConfig& c);

/// Trains a variant on the training split.
train::Checkpoint pretrain(const Cohort& cohort, const ExperimentConfig& c, const std::string& variant,
                           std::uint64_t seed, const train::TrainOptions& opts = {});

/// Frozen-probe predictions for the binary label at `horizon` on the test
/// split.
eval::PredictionSet probe_test_predictions(const num::ParameterStore& ps, const model::ModelConfig& mc,
                                           const Splits& s, const CohortConfig& cc, std::size_t horizon,
                                           double l2);

struct ProbeOutput {
  std::vector<eval::MetricReport> reports;
  std::vector<std::string> skipped;
};

/// All downstream metrics with bootstrap intervals plus majority baselines.
ProbeOutput probe_reports(const num::ParameterStore& ps, const model::ModelConfig& mc, const Cohort& cohort,
                          const EvaluationConfig& ev, std::uint64_t seed);

struct AblationRow {
  std::string variant;
  std::string seed;  // a seed or "mean"
  double auroc = 0.0;
  double ci_low = 0.0, ci_high = 0.0;
  double delta = 0.0;  // row - full
  double p = 1.0;      // paired against full
};

/// preds[v][k]: test predictions of variant v under seed k; variant 0 is the
/// reference. Mean rows average AUROC over seeds inside each joint resample.
std::vector<AblationRow> ablation_table(const std::vector<std::string>& variants,
                                        const std::vector<std::uint64_t>& seeds,
                                        const std::vector<std::vector<eval::PredictionSet>>& preds,
                                        std::size_t resamples, std::uint64_t seed);
std::string ablation_csv(const std::vector<AblationRow>& rows);

/// Mean over seeds of AUROC(a) - AUROC(b) with patients resampled jointly.
eval::PairedResult paired_mean_auroc(const std::vector<eval::PredictionSet>& a,
                                     const std::vector<eval::PredictionSet>& b, std::size_t resamples,
                                     std::uint64_t seed);

std::string robustness_csv(const std::vector<eval::ScenarioResult>& rows);
std::string fractions_csv(const std::vector<eval::FractionPoint>& rows);

/// Wraps results with the provenance triple (digest, seed, version).
nlohmann::json stamp(const std::string& digest, std::uint64_t seed, nlohmann::json body);

}  // namespace ctmm::exp
