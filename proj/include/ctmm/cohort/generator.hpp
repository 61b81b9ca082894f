#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "ctmm/cohort/types.hpp"

namespace ctmm::cohort {

class ThinningBoundError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Substream keys. Every random draw of a patient comes from a stream keyed
/// by (cohort seed, patient id, purpose), so ablations that alter one purpose
/// leave the others paired.
enum class Stream : std::uint64_t { latent = 1, wearable = 2, ehr = 3, noise = 4 };
std::uint64_t stream_key(std::uint64_t seed, std::uint64_t patient_id, Stream s);

/// Euler-Maruyama for dx = -theta x dt + sigma dW on the configured grid,
/// starting at initial_state (zeros by default). Rejects a theta that is not
/// symmetric positive semi-definite.
LatentTrajectory simulate_latent_sde(const CohortConfig& config, std::uint64_t key);

/// w(t) = C x(t) + N(0, noise^2) at every grid point, then geometric-length
/// missing gaps sized so the expected missing fraction matches the config.
WearableStream emit_wearable(const LatentTrajectory& latent, const CohortConfig& config, std::uint64_t key);

/// Thinning of an inhomogeneous Poisson process with total intensity
/// sum_k softplus(a_k . x(t) + b_k) per day; the family of an accepted event is
/// drawn proportionally to its intensity and the token uniformly within it.
EhrEventSeq emit_ehr_events(const LatentTrajectory& latent, const CohortConfig& config, std::uint64_t key);

/// Adds Gaussian noise so the per-channel stream power rises by
/// `snr_reduction_db` decibels; the added noise power is
/// P * (10^(dB/10) - 1) with P the current mean-square of observed samples.
/// Successive applications compose: 3 dB twice equals 6 dB once.
WearableStream inject_noise(const WearableStream& stream, double snr_reduction_db, std::uint64_t key);

enum class Modality { wearable, ehr };
PatientRecord drop_modality(const PatientRecord& record, Modality which);

/// Labels at each index time for the target family. An event exactly at
/// index + horizon counts as positive. Survival is censored at the span end.
DownstreamLabels make_downstream_labels(const PatientRecord& record, const CohortConfig& config,
                                        const std::vector<double>& index_times_seconds,
                                        const std::vector<double>& horizons_seconds);

PatientRecord generate_patient(const CohortConfig& config, std::uint64_t patient_id);
Cohort generate_cohort(const CohortConfig& config);

/// Theta check used by the simulator: symmetric and positive semi-definite.
bool is_symmetric_psd(const std::vector<double>& m, std::size_t d);

}  // namespace ctmm::cohort
