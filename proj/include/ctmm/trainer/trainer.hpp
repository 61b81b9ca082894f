#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctmm/cohort/types.hpp"
#include "ctmm/model/model.hpp"
#include "ctmm/numerics/graph.hpp"
#include "ctmm/objectives/objectives.hpp"

namespace ctmm::train {

using num::Gradients;
using num::ParameterStore;
using num::Tensor;

// ---- schedule, clipping, optimizer --------------------------------------------

struct LrSchedule {
  std::size_t warmup = 40;
  std::size_t total = 2000;
  double peak = 1e-4;
};

/// Linear warmup from 0 to peak, then cosine decay to 0 at `total`.
double lr_at(std::size_t step, const LrSchedule& s);

struct ClipResult {
  double norm = 0.0;
  double scale = 1.0;
  bool finite = true;
};

/// Rescales all gradients in place when their global L2 norm exceeds max_norm.
/// A non-finite gradient leaves them untouched and reports finite = false.
ClipResult clip_gradients(Gradients& grads, double max_norm);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

struct OptimizerState {
  AdamConfig config;
  std::size_t step = 0;
  std::map<std::string, Tensor> m;
  std::map<std::string, Tensor> v;

  bool bit_equal(const OptimizerState& o) const;
};

OptimizerState init_optimizer(const ParameterStore& params, const AdamConfig& config);

/// AdamW: p <- p(1 - rate*wd), then the bias-corrected adaptive update.
/// Parameters without a gradient entry are only decayed.
void optimizer_step(ParameterStore& params, const Gradients& grads, OptimizerState& state, double rate);

// ---- patient-day batching -----------------------------------------------------

struct PatientDay {
  std::size_t record = 0;  // index into the training records
  double t_end = 0.0;      // end of the day, seconds
};

struct BatchSampler {
  std::vector<PatientDay> days;
  std::vector<double> factor;      // relative draw weight per day
  std::vector<double> cumulative;  // normalized running sum of factor
  std::size_t batch_size = 8;
  std::uint64_t seed = 0;
};

/// Every whole day of every record. With rare-code upweighting each day gets
/// the largest (most common token count / token count) over its events,
/// capped at `rare_cap`; days without events get 1.
BatchSampler make_sampler(const std::vector<const PatientRecord*>& records, std::size_t batch_size, std::uint64_t seed,
                          bool rare_upweight = true, double rare_cap = 10.0);

/// Replaces the factors (tests and custom weighting).
void set_factors(BatchSampler& s, std::vector<double> factor);

/// Day indices drawn with replacement, deterministic per (seed, step).
std::vector<std::size_t> sample_days(const BatchSampler& s, std::size_t step);

std::vector<obj::Slice> make_batch(const BatchSampler& s, const std::vector<const PatientRecord*>& records,
                                   std::size_t step, const model::ModelConfig& mc, const obj::ObjectiveConfig& oc,
                                   const obj::SummaryStats& stats);

// ---- configuration and checkpoints --------------------------------------------

struct TrainerConfig {
  std::size_t total_steps = 2000;
  std::size_t warmup_steps = 40;
  double peak_lr = 1e-4;
  AdamConfig adam;
  double clip_norm = 1.0;
  std::size_t batch_size = 8;
  std::size_t checkpoint_every = 200;
  bool rare_upweight = true;
  double rare_cap = 10.0;
  bool train_noise = true;

  void validate() const;
  LrSchedule schedule() const { return {warmup_steps, total_steps, peak_lr}; }
};

nlohmann::json trainer_config_to_json(const TrainerConfig& c);
TrainerConfig trainer_config_from_json(const nlohmann::json& j, const std::string& path = "trainer");

/// Everything that determines a training run besides the data.
struct RunConfig {
  model::ModelConfig model;
  obj::ObjectiveConfig objective;
  TrainerConfig trainer;
  std::uint64_t seed = 0;
};

nlohmann::json run_config_to_json(const RunConfig& c);
/// Hex FNV-1a of the canonical JSON of the run config.
std::string config_digest(const RunConfig& c);

inline constexpr const char* kCheckpointMagic = "CTMMCKPT";
inline constexpr std::uint64_t kCheckpointVersion = 1;

struct Checkpoint {
  RunConfig config;
  std::string digest;
  std::size_t step = 0;  // completed iterations
  obj::SummaryStats stats;
  ParameterStore params;
  OptimizerState optimizer;
  std::size_t rejected_steps = 0;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& c);
Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);
void save_checkpoint(const Checkpoint& c, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);
/// Throws CheckpointError naming both digests when the checkpoint was written
/// under a different run config.
void require_digest(const Checkpoint& c, const RunConfig& expected);

// ---- training loop ------------------------------------------------------------

class NonFiniteLossError : public std::runtime_error {
 public:
  NonFiniteLossError(const std::string& what, Checkpoint last_good)
      : std::runtime_error(what), last_good(std::move(last_good)) {}
  Checkpoint last_good;
};

struct TrainOptions {
  /// Called after every `checkpoint_every` iterations and at the end.
  std::function<void(const Checkpoint&)> on_checkpoint;
  /// Receives each CSV log line (header first when starting from step 0).
  std::function<void(const std::string&)> on_log;
  /// Stop early after this many completed iterations (0 = run to the end).
  std::size_t stop_after = 0;
};

/// Step-0 checkpoint: initialized parameters, zero moments, frozen summary
/// statistics of the training records.
Checkpoint initial_checkpoint(const std::vector<const PatientRecord*>& records, const RunConfig& config);

/// Continues from `start` until total_steps (or stop_after) and returns the
/// final state.
Checkpoint train(const std::vector<const PatientRecord*>& records, Checkpoint start, const TrainOptions& opts = {});

std::string log_header();

}  // namespace ctmm::train
