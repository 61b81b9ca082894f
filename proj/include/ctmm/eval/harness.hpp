#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctmm/cohort/types.hpp"
#include "ctmm/eval/probe.hpp"
#include "ctmm/eval/stats.hpp"
#include "ctmm/model/model.hpp"

namespace ctmm::eval {

/// Frozen readouts, one row per (patient, time).
struct LatentTable {
  std::vector<std::uint64_t> id;
  std::vector<double> time;
  Points z;
  std::size_t skipped = 0;  // requested times before the patient origin

  std::size_t size() const { return z.size(); }
};

LatentTable extract_frozen(const num::ParameterStore& ps, const model::ModelConfig& mc,
                           const std::vector<const PatientRecord*>& records, const std::vector<double>& times);

/// Binary label of each row at horizon index h, looked up by index time.
std::vector<int> binary_labels(const std::vector<const PatientRecord*>& records, const LatentTable& t, std::size_t h);
SurvivalData survival_labels(const std::vector<const PatientRecord*>& records, const LatentTable& t);

/// Logistic probe on `train`, scored on `test`.
PredictionSet probe_predictions(const LatentTable& train, const std::vector<int>& train_y, const LatentTable& test,
                                const std::vector<int>& test_y, const ProbeOptions& o = {},
                                ProbeHead* head = nullptr);

SetMetric auroc_metric();

// ---- label fractions ----------------------------------------------------------

struct FractionPoint {
  double fraction = 0.0;
  std::uint64_t seed = 0;
  std::size_t train_rows = 0;
  bool skipped = false;
  std::string note;
  double auroc = 0.0;
  BootstrapResult ci;
};

/// Stratified subsample: round(f * n_c) rows of each class, chosen by a
/// seeded shuffle. Empty when a class would keep fewer than two rows.
std::vector<std::size_t> stratified_subsample(const std::vector<int>& y, double fraction, std::uint64_t seed);

std::vector<FractionPoint> label_fraction_sweep(const LatentTable& train, const std::vector<int>& train_y,
                                                const LatentTable& test, const std::vector<int>& test_y,
                                                const std::vector<double>& fractions,
                                                const std::vector<std::uint64_t>& seeds, std::size_t resamples,
                                                std::uint64_t boot_seed, const ProbeOptions& o = {});

// ---- robustness ---------------------------------------------------------------

enum class Scenario { identity, drop_wearable, drop_ehr, drop_both, snr_minus_6db, truncate_7d, truncate_30d, truncate_90d };

std::string scenario_name(Scenario s);
Scenario scenario_from_name(const std::string& name);
const std::vector<Scenario>& all_scenarios();

/// The record as seen under a scenario at one index time. Noise derives from
/// (key, patient id).
PatientRecord apply_scenario(const PatientRecord& rec, Scenario s, double index_time, std::uint64_t key);

LatentTable extract_scenario(const num::ParameterStore& ps, const model::ModelConfig& mc,
                             const std::vector<const PatientRecord*>& records, const std::vector<double>& times,
                             Scenario s, std::uint64_t key);

struct ScenarioResult {
  Scenario scenario = Scenario::identity;
  double auroc = 0.0;
  BootstrapResult ci;
  PairedResult vs_identity;
};

/// Probe trained on clean training latents, evaluated on test latents
/// re-extracted under each scenario; deltas are paired against the clean test
/// predictions.
std::vector<ScenarioResult> robustness_sweep(const num::ParameterStore& ps, const model::ModelConfig& mc,
                                             const std::vector<const PatientRecord*>& train,
                                             const std::vector<const PatientRecord*>& test,
                                             const std::vector<double>& times, std::size_t horizon,
                                             const std::vector<Scenario>& scenarios, std::size_t resamples,
                                             std::uint64_t seed, const ProbeOptions& o = {});

// ---- reports ------------------------------------------------------------------

struct MetricReport {
  std::string name;
  double estimate = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  std::size_t resamples = 0;
  std::size_t redraws = 0;
  std::optional<double> p_raw;
  std::optional<double> p_adjusted;
  std::optional<double> effect_size;
  std::string note;
};

MetricReport make_report(const std::string& name, const BootstrapResult& r);
nlohmann::json report_to_json(const MetricReport& r);
MetricReport report_from_json(const nlohmann::json& j);
std::string reports_to_csv(const std::vector<MetricReport>& rs);
/// Fills p_adjusted of every report carrying p_raw.
void adjust_reports(std::vector<MetricReport>& rs, double alpha = 0.05);

}  // namespace ctmm::eval
