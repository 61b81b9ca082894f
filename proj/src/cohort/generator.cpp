#include "ctmm/cohort/generator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "ctmm/numerics/graph.hpp"
#include "ctmm/rng.hpp"

namespace ctmm::cohort {

std::uint64_t stream_key(std::uint64_t seed, std::uint64_t patient_id, Stream s) {
  return CounterRng::derive(seed, {patient_id, static_cast<std::uint64_t>(s)});
}

bool is_symmetric_psd(const std::vector<double>& m, std::size_t d) {
  if (m.size() != d * d) return false;
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < i; ++j)
      if (std::abs(m[i * d + j] - m[j * d + i]) > 1e-12 * (1.0 + std::abs(m[i * d + j]))) return false;
  // Outer-product Cholesky; a zero pivot is allowed only if its column is zero.
  std::vector<double> a = m;
  const double tol = 1e-12;
  for (std::size_t k = 0; k < d; ++k) {
    const double piv = a[k * d + k];
    if (piv < -tol) return false;
    if (piv <= tol) {
      for (std::size_t i = k + 1; i < d; ++i)
        if (std::abs(a[i * d + k]) > tol) return false;
      continue;
    }
    for (std::size_t i = k + 1; i < d; ++i)
      for (std::size_t j = k + 1; j < d; ++j) a[i * d + j] -= a[i * d + k] * a[k * d + j] / piv;
  }
  return true;
}

LatentTrajectory simulate_latent_sde(const CohortConfig& config, std::uint64_t key) {
  const std::size_t d = config.latent_dim;
  if (!(config.grid_step_seconds > 0.0)) throw std::invalid_argument("simulate_latent_sde: grid step must be positive");
  if (config.span_days < 1.0) throw std::invalid_argument("simulate_latent_sde: span must be at least one day");
  if (!is_symmetric_psd(config.theta, d))
    throw std::invalid_argument("simulate_latent_sde: theta is not symmetric positive semi-definite");

  LatentTrajectory traj;
  traj.t0 = 0.0;
  traj.step = config.grid_step_seconds;
  traj.dim = d;
  const std::size_t n = static_cast<std::size_t>(std::floor(config.span_seconds() / traj.step + 1e-9)) + 1;
  traj.states.assign(n * d, 0.0);
  if (!config.initial_state.empty()) std::copy(config.initial_state.begin(), config.initial_state.end(), traj.states.begin());

  const double dt = traj.step / kSecondsPerDay;
  const double sqdt = std::sqrt(dt);
  CounterRng rng(key);
  std::vector<double> drift(d);
  for (std::size_t i = 1; i < n; ++i) {
    const double* prev = traj.states.data() + (i - 1) * d;
    double* cur = traj.states.data() + i * d;
    for (std::size_t r = 0; r < d; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) s += config.theta[r * d + c] * prev[c];
      drift[r] = s;
    }
    for (std::size_t r = 0; r < d; ++r) {
      const double noise = rng.normal();
      cur[r] = prev[r] - drift[r] * dt + config.sigma[r] * sqdt * noise;
    }
  }
  return traj;
}

WearableStream emit_wearable(const LatentTrajectory& latent, const CohortConfig& config, std::uint64_t key) {
  const std::size_t d = latent.dim, cw = config.wearable_channels;
  if (config.emission.size() != cw * d)
    throw std::invalid_argument("emit_wearable: emission matrix does not match latent dimension");
  WearableStream w;
  w.t0 = latent.t0;
  w.step = latent.step;
  w.channels = cw;
  const std::size_t n = latent.size();
  w.samples.assign(n * cw, 0.0);
  w.mask.assign(n, 1);
  CounterRng rng(key);
  for (std::size_t i = 0; i < n; ++i) {
    const auto x = latent.at(i);
    for (std::size_t c = 0; c < cw; ++c) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) s += config.emission[c * d + k] * x[k];
      const double eps = rng.normal();
      w.samples[i * cw + c] = s + config.emission_noise_std * eps;
    }
  }
  const double f = config.missing_fraction;
  if (f > 0.0) {
    const double mean_len = std::max(1.0, config.gap_mean_minutes * 60.0 / w.step);
    // Alternating renewal: observed runs end with probability p per sample,
    // gaps are geometric with mean mean_len, so missing share = f on average.
    const double p = f / (mean_len * (1.0 - f) + f);
    std::size_t i = 0;
    while (i < n) {
      if (rng.bernoulli(p)) {
        const std::size_t len = 1 + static_cast<std::size_t>(rng.geometric(1.0 / mean_len));
        for (std::size_t k = i; k < std::min(n, i + len); ++k) w.mask[k] = 0;
        i += len;
      } else {
        ++i;
      }
    }
    for (std::size_t k = 0; k < n; ++k)
      if (!w.mask[k])
        for (std::size_t c = 0; c < cw; ++c) w.samples[k * cw + c] = std::numeric_limits<double>::quiet_NaN();
  }
  return w;
}

EhrEventSeq emit_ehr_events(const LatentTrajectory& latent, const CohortConfig& config, std::uint64_t key) {
  EhrEventSeq seq;
  seq.vocab = config.vocab_size();
  const double cap = config.intensity_cap_per_day;
  const double span = (latent.size() ? latent.time(latent.size() - 1) : 0.0);
  const auto offsets = config.family_offsets();
  const std::size_t K = config.families.size();
  std::vector<double> lam(K);
  CounterRng rng(key);
  double t = 0.0;
  while (true) {
    t += rng.exponential(cap) * kSecondsPerDay;
    if (t > span) break;
    const auto x = latent.interpolate(t);
    double total = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      double s = config.families[k].b;
      for (std::size_t j = 0; j < x.size(); ++j) s += config.families[k].a[j] * x[j];
      lam[k] = num::softplus_scalar(s);
      total += lam[k];
    }
    if (total > cap) {
      std::ostringstream msg;
      msg << "emit_ehr_events: intensity " << total << "/day at t=" << t << "s exceeds thinning bound " << cap << "/day";
      throw ThinningBoundError(msg.str());
    }
    const double u_accept = rng.uniform();
    const double u_family = rng.uniform();
    const std::uint64_t u_token = rng.next_u64();
    if (u_accept * cap >= total) continue;
    double acc = 0.0;
    std::size_t fam = K - 1;
    for (std::size_t k = 0; k < K; ++k) {
      acc += lam[k];
      if (u_family * total < acc) {
        fam = k;
        break;
      }
    }
    const auto tok = offsets[fam] + static_cast<std::size_t>(u_token % config.families[fam].tokens);
    seq.events.push_back({t, static_cast<std::uint32_t>(tok)});
  }
  return seq;
}

WearableStream inject_noise(const WearableStream& stream, double snr_reduction_db, std::uint64_t key) {
  if (!(snr_reduction_db >= 0.0)) throw std::invalid_argument("inject_noise: reduction must be non-negative");
  WearableStream out = stream;
  if (snr_reduction_db == 0.0) return out;
  const std::size_t cw = stream.channels, n = stream.size();
  const double factor = std::pow(10.0, snr_reduction_db / 10.0) - 1.0;
  std::vector<double> power(cw, 0.0);
  std::size_t observed = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!stream.mask[i]) continue;
    ++observed;
    for (std::size_t c = 0; c < cw; ++c) power[c] += stream.value(i, c) * stream.value(i, c);
  }
  if (observed == 0) return out;
  std::vector<double> sd(cw);
  for (std::size_t c = 0; c < cw; ++c) sd[c] = std::sqrt(power[c] / static_cast<double>(observed) * factor);
  CounterRng rng(key);
  for (std::size_t i = 0; i < n; ++i) {
    if (!stream.mask[i]) continue;
    for (std::size_t c = 0; c < cw; ++c) out.samples[i * cw + c] += sd[c] * rng.normal();
  }
  return out;
}

PatientRecord drop_modality(const PatientRecord& record, Modality which) {
  PatientRecord out = record;
  if (which == Modality::wearable) {
    std::fill(out.wearable.mask.begin(), out.wearable.mask.end(), 0);
    std::fill(out.wearable.samples.begin(), out.wearable.samples.end(), std::numeric_limits<double>::quiet_NaN());
  } else {
    out.ehr.events.clear();
  }
  return out;
}

DownstreamLabels make_downstream_labels(const PatientRecord& record, const CohortConfig& config,
                                        const std::vector<double>& index_times_seconds,
                                        const std::vector<double>& horizons_seconds) {
  DownstreamLabels labels;
  labels.horizons = horizons_seconds;
  std::vector<double> target;
  for (const auto& e : record.ehr.events)
    if (config.family_of(e.token) == config.target_family) target.push_back(e.time);
  for (double t : index_times_seconds) {
    if (!(t >= 0.0)) throw std::invalid_argument("make_downstream_labels: negative index time");
    IndexLabels il;
    il.index_time = t;
    for (double h : horizons_seconds) {
      if (t + h > record.span)
        throw std::invalid_argument("make_downstream_labels: horizon " + std::to_string(h) + "s beyond span from index " +
                                    std::to_string(t) + "s");
      const bool hit = std::any_of(target.begin(), target.end(), [&](double e) { return e > t && e <= t + h; });
      il.binary.push_back(hit ? 1 : 0);
    }
    auto it = std::upper_bound(target.begin(), target.end(), t);
    if (it != target.end()) {
      il.survival_time = *it - t;
      il.survival_event = true;
    } else {
      il.survival_time = record.span - t;
      il.survival_event = false;
    }
    labels.at_index.push_back(std::move(il));
  }
  return labels;
}

PatientRecord generate_patient(const CohortConfig& config, std::uint64_t patient_id) {
  PatientRecord rec;
  rec.id = patient_id;
  rec.latent = simulate_latent_sde(config, stream_key(config.seed, patient_id, Stream::latent));
  rec.span = rec.latent.time(rec.latent.size() - 1);
  rec.wearable = emit_wearable(rec.latent, config, stream_key(config.seed, patient_id, Stream::wearable));
  rec.ehr = emit_ehr_events(rec.latent, config, stream_key(config.seed, patient_id, Stream::ehr));
  std::vector<double> idx, hz;
  for (double t : config.index_times_days) idx.push_back(t * kSecondsPerDay);
  for (double h : config.horizons_days) hz.push_back(h * kSecondsPerDay);
  rec.labels = make_downstream_labels(rec, config, idx, hz);
  return rec;
}

Cohort generate_cohort(const CohortConfig& config) {
  config.validate();
  Cohort c;
  c.config = config;
  c.patients.reserve(config.patients);
  for (std::size_t i = 0; i < config.patients; ++i) c.patients.push_back(generate_patient(config, i));
  return c;
}

}  // namespace ctmm::cohort
