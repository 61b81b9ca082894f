#include "ctmm/cohort/types.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

namespace ctmm {

namespace {

bool bits_equal(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() && (a.empty() || std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
}

void fail(const std::string& field, const std::string& why) {
  throw std::invalid_argument("cohort." + field + ": " + why);
}

}  // namespace

std::vector<double> LatentTrajectory::interpolate(double t) const {
  std::vector<double> out(dim, 0.0);
  const std::size_t n = size();
  if (n == 0) return out;
  double pos = (t - t0) / step;
  if (pos <= 0.0) pos = 0.0;
  if (pos >= static_cast<double>(n - 1)) {
    std::copy_n(states.data() + (n - 1) * dim, dim, out.data());
    return out;
  }
  const std::size_t i = static_cast<std::size_t>(std::floor(pos));
  const double f = pos - static_cast<double>(i);
  for (std::size_t k = 0; k < dim; ++k) out[k] = (1.0 - f) * states[i * dim + k] + f * states[(i + 1) * dim + k];
  return out;
}

std::size_t WearableStream::index_at_or_after(double t) const {
  if (t <= t0) return 0;
  const double pos = std::ceil((t - t0) / step - 1e-9);
  return std::min(size(), static_cast<std::size_t>(pos));
}

std::size_t CohortConfig::vocab_size() const {
  std::size_t v = 0;
  for (const auto& f : families) v += f.tokens;
  return v;
}

std::vector<std::size_t> CohortConfig::family_offsets() const {
  std::vector<std::size_t> off;
  std::size_t acc = 0;
  for (const auto& f : families) {
    off.push_back(acc);
    acc += f.tokens;
  }
  return off;
}

std::size_t CohortConfig::family_of(std::uint32_t token) const {
  std::size_t acc = 0;
  for (std::size_t k = 0; k < families.size(); ++k) {
    acc += families[k].tokens;
    if (token < acc) return k;
  }
  throw std::out_of_range("token " + std::to_string(token) + " outside vocabulary");
}

void CohortConfig::validate() const {
  const std::size_t d = latent_dim;
  if (d == 0) fail("latent_dim", "must be positive");
  if (theta.size() != d * d) fail("theta", "expected " + std::to_string(d * d) + " entries");
  if (sigma.size() != d) fail("sigma", "expected " + std::to_string(d) + " entries");
  for (double s : sigma)
    if (!(s >= 0.0)) fail("sigma", "entries must be non-negative");
  if (!initial_state.empty() && initial_state.size() != d) fail("initial_state", "expected " + std::to_string(d) + " entries");
  if (!(grid_step_seconds > 0.0)) fail("grid_step_seconds", "must be positive");
  if (!(span_days > 0.0)) fail("span_days", "must be positive");
  if (wearable_channels == 0) fail("wearable_channels", "must be positive");
  if (emission.size() != wearable_channels * d)
    fail("emission", "expected " + std::to_string(wearable_channels * d) + " entries");
  if (!(emission_noise_std >= 0.0)) fail("emission_noise_std", "must be non-negative");
  if (!(missing_fraction >= 0.0 && missing_fraction < 1.0)) fail("missing_fraction", "must lie in [0, 1)");
  if (!(gap_mean_minutes > 0.0)) fail("gap_mean_minutes", "must be positive");
  if (families.empty()) fail("families", "at least one token family required");
  for (std::size_t k = 0; k < families.size(); ++k) {
    const std::string f = "families[" + std::to_string(k) + "]";
    if (families[k].a.size() != d) fail(f + ".a", "expected " + std::to_string(d) + " entries");
    if (families[k].tokens == 0) fail(f + ".tokens", "must be positive");
    if (!std::isfinite(families[k].b)) fail(f + ".b", "must be finite");
  }
  if (!(intensity_cap_per_day > 0.0)) fail("intensity_cap_per_day", "must be positive");
  if (target_family >= families.size()) fail("target_family", "out of range");
  for (double h : horizons_days)
    if (!(h > 0.0)) fail("horizons_days", "must be positive");
  for (double t : index_times_days) {
    if (!(t >= 0.0)) fail("index_times_days", "must be non-negative");
    for (double h : horizons_days)
      if (t + h > span_days) fail("horizons_days", "index time + horizon exceeds span");
  }
}

bool operator==(const LatentTrajectory& a, const LatentTrajectory& b) {
  return a.t0 == b.t0 && a.step == b.step && a.dim == b.dim && bits_equal(a.states, b.states);
}

bool operator==(const WearableStream& a, const WearableStream& b) {
  return a.t0 == b.t0 && a.step == b.step && a.channels == b.channels && bits_equal(a.samples, b.samples) &&
         a.mask == b.mask;
}

bool operator==(const EhrEventSeq& a, const EhrEventSeq& b) { return a.vocab == b.vocab && a.events == b.events; }

bool operator==(const PatientRecord& a, const PatientRecord& b) {
  return a.id == b.id && a.span == b.span && a.latent == b.latent && a.wearable == b.wearable && a.ehr == b.ehr &&
         a.labels == b.labels;
}

bool operator==(const TokenFamily& a, const TokenFamily& b) { return a.a == b.a && a.b == b.b && a.tokens == b.tokens; }

bool operator==(const CohortConfig& a, const CohortConfig& b) {
  return a.patients == b.patients && a.span_days == b.span_days && a.seed == b.seed && a.latent_dim == b.latent_dim &&
         a.theta == b.theta && a.sigma == b.sigma && a.initial_state == b.initial_state &&
         a.grid_step_seconds == b.grid_step_seconds && a.wearable_channels == b.wearable_channels &&
         a.emission == b.emission && a.emission_noise_std == b.emission_noise_std &&
         a.missing_fraction == b.missing_fraction && a.gap_mean_minutes == b.gap_mean_minutes &&
         a.families == b.families && a.intensity_cap_per_day == b.intensity_cap_per_day &&
         a.target_family == b.target_family && a.index_times_days == b.index_times_days &&
         a.horizons_days == b.horizons_days;
}

bool operator==(const Cohort& a, const Cohort& b) { return a.config == b.config && a.patients == b.patients; }

}  // namespace ctmm
