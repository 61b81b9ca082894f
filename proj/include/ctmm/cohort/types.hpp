#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ctmm {

inline constexpr double kSecondsPerDay = 86400.0;
inline constexpr double kSecondsPerHour = 3600.0;

/// Latent state on a uniform grid. Times are seconds since the patient origin.
struct LatentTrajectory {
  double t0 = 0.0;
  double step = 60.0;
  std::size_t dim = 2;
  std::vector<double> states;  // row-major [points, dim]

  std::size_t size() const { return dim ? states.size() / dim : 0; }
  double time(std::size_t i) const { return t0 + step * static_cast<double>(i); }
  std::span<const double> at(std::size_t i) const { return {states.data() + i * dim, dim}; }
  /// Linear interpolation between grid points, clamped to the span.
  std::vector<double> interpolate(double t) const;
};

/// Regularly sampled multichannel stream. Missing samples hold NaN and have
/// a false mask entry.
struct WearableStream {
  double t0 = 0.0;
  double step = 60.0;
  std::size_t channels = 0;
  std::vector<double> samples;     // row-major [points, channels]
  std::vector<std::uint8_t> mask;  // per point, 1 = observed

  std::size_t size() const { return mask.size(); }
  double time(std::size_t i) const { return t0 + step * static_cast<double>(i); }
  double value(std::size_t i, std::size_t c) const { return samples[i * channels + c]; }
  bool observed(std::size_t i) const { return mask[i] != 0; }
  double end_time() const { return size() ? time(size() - 1) : t0; }
  /// First grid index with time >= t (clamped to size()).
  std::size_t index_at_or_after(double t) const;
};

struct EhrEvent {
  double time = 0.0;
  std::uint32_t token = 0;
  bool operator==(const EhrEvent&) const = default;
};

struct EhrEventSeq {
  std::size_t vocab = 0;
  std::vector<EhrEvent> events;  // non-decreasing time
};

/// Labels at one index time.
struct IndexLabels {
  double index_time = 0.0;
  std::vector<std::uint8_t> binary;  // one per horizon: target event in (t, t + h]
  double survival_time = 0.0;        // seconds from index to first target event or censoring
  bool survival_event = false;
  bool operator==(const IndexLabels&) const = default;
};

struct DownstreamLabels {
  std::vector<double> horizons;  // seconds
  std::vector<IndexLabels> at_index;
  bool operator==(const DownstreamLabels&) const = default;
};

struct PatientRecord {
  std::uint64_t id = 0;
  double span = 0.0;  // seconds; all sub-records live on [0, span]
  LatentTrajectory latent;
  WearableStream wearable;
  EhrEventSeq ehr;
  DownstreamLabels labels;
};

/// One family of EHR tokens with its own intensity softplus(a . x + b) per day.
struct TokenFamily {
  std::vector<double> a;
  double b = 0.0;
  std::size_t tokens = 1;
};

struct CohortConfig {
  std::size_t patients = 100;
  double span_days = 30.0;
  std::uint64_t seed = 1;

  // Latent OU process dx = -theta x dt + sigma dW, rates in 1/day.
  std::size_t latent_dim = 2;
  std::vector<double> theta = {1.0, 0.0, 0.0, 1.0};  // row-major d x d
  std::vector<double> sigma = {1.0, 1.0};
  std::vector<double> initial_state;  // empty = zeros
  double grid_step_seconds = 60.0;

  // Wearable emission w = C x + noise.
  std::size_t wearable_channels = 2;
  std::vector<double> emission = {1.0, 0.0, 0.0, 1.0};  // row-major C_w x d
  double emission_noise_std = 0.1;
  double missing_fraction = 0.0;
  double gap_mean_minutes = 30.0;

  // EHR point process.
  std::vector<TokenFamily> families = {TokenFamily{{1.0, 0.0}, -1.0, 4}, TokenFamily{{0.0, 1.0}, -1.0, 4}};
  double intensity_cap_per_day = 50.0;

  // Downstream labels.
  std::size_t target_family = 0;
  std::vector<double> index_times_days = {15.0};
  std::vector<double> horizons_days = {1.0};

  std::size_t vocab_size() const;
  /// First token index of each family; tokens of family k are contiguous.
  std::vector<std::size_t> family_offsets() const;
  std::size_t family_of(std::uint32_t token) const;
  double span_seconds() const { return span_days * kSecondsPerDay; }
  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
};

struct Cohort {
  CohortConfig config;
  std::vector<PatientRecord> patients;
};

bool operator==(const LatentTrajectory& a, const LatentTrajectory& b);
bool operator==(const WearableStream& a, const WearableStream& b);
bool operator==(const EhrEventSeq& a, const EhrEventSeq& b);
bool operator==(const PatientRecord& a, const PatientRecord& b);
bool operator==(const TokenFamily& a, const TokenFamily& b);
bool operator==(const CohortConfig& a, const CohortConfig& b);
bool operator==(const Cohort& a, const Cohort& b);

}  // namespace ctmm
