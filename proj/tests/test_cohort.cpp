#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

#include "ctmm/cohort/generator.hpp"
#include "ctmm/cohort/io.hpp"
#include "ctmm/io/strict_json.hpp"
#include "ctmm/numerics/graph.hpp"

using namespace ctmm;
using namespace ctmm::cohort;

namespace {

CohortConfig small_config() {
  CohortConfig c;
  c.patients = 3;
  c.span_days = 4;
  c.grid_step_seconds = 600;
  c.index_times_days = {2};
  c.horizons_days = {1};
  c.missing_fraction = 0.1;
  return c;
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

double mean_power(const WearableStream& w, std::size_t c) {
  double s = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < w.size(); ++i)
    if (w.observed(i)) {
      s += w.value(i, c) * w.value(i, c);
      ++n;
    }
  return s / static_cast<double>(n);
}

}  // namespace

TEST_CASE("latent SDE: deterministic decay and zero dynamics") {
  CohortConfig c;
  c.span_days = 3;
  c.sigma = {0, 0};
  c.initial_state = {1, 1};
  const auto traj = simulate_latent_sde(c, 7);
  const double dt_days = c.grid_step_seconds / kSecondsPerDay;
  for (std::size_t i = 0; i < traj.size(); i += 97) {
    const double t = traj.time(i) / kSecondsPerDay;
    CHECK(std::abs(traj.at(i)[0] - std::exp(-t)) <= dt_days);
    CHECK(traj.at(i)[1] == traj.at(i)[0]);
  }
  c.theta = {0, 0, 0, 0};
  const auto flat = simulate_latent_sde(c, 7);
  for (std::size_t i = 0; i < flat.size(); ++i) CHECK(flat.at(i)[0] == 1.0);
}

TEST_CASE("latent SDE: stationary variance of the OU process") {
  CohortConfig c;
  c.latent_dim = 1;
  c.theta = {1};
  c.sigma = {1};
  c.grid_step_seconds = 864;  // 0.01 day
  c.span_days = 10000;        // 10^6 steps
  const auto traj = simulate_latent_sde(c, 99);
  REQUIRE(traj.size() == 1000001);
  double s = 0, ss = 0;
  const std::size_t burn = 1000;
  for (std::size_t i = burn; i < traj.size(); ++i) {
    s += traj.at(i)[0];
    ss += traj.at(i)[0] * traj.at(i)[0];
  }
  const double n = static_cast<double>(traj.size() - burn);
  const double var = ss / n - (s / n) * (s / n);
  CHECK(std::abs(var - 0.5) < 0.05);
}

TEST_CASE("latent SDE: rejects indefinite theta and bad grids") {
  CohortConfig c;
  c.theta = {1, 2, 2, 1};
  CHECK_THROWS_AS(simulate_latent_sde(c, 1), std::invalid_argument);
  c.theta = {1, 0.5, 0.0, 1};
  CHECK_THROWS_AS(simulate_latent_sde(c, 1), std::invalid_argument);
  c.theta = {1, 0, 0, 1};
  c.grid_step_seconds = 0;
  CHECK_THROWS_AS(simulate_latent_sde(c, 1), std::invalid_argument);
  c.grid_step_seconds = 60;
  c.span_days = 0.5;
  CHECK_THROWS_AS(simulate_latent_sde(c, 1), std::invalid_argument);
  CHECK(is_symmetric_psd({0, 0, 0, 0}, 2));
  CHECK(is_symmetric_psd({2, 1, 1, 2}, 2));
  CHECK_FALSE(is_symmetric_psd({1, 0, 0, -1e-3}, 2));
}

TEST_CASE("wearable emission: noiseless identity and gaps") {
  CohortConfig c;
  c.span_days = 2;
  c.emission_noise_std = 0;
  const auto traj = simulate_latent_sde(c, 3);
  const auto w = emit_wearable(traj, c, 4);
  REQUIRE(w.size() == traj.size());
  for (std::size_t i = 0; i < w.size(); ++i) {
    CHECK(w.observed(i));
    CHECK(w.value(i, 0) == traj.at(i)[0]);
    CHECK(w.value(i, 1) == traj.at(i)[1]);
  }

  c.missing_fraction = 0.1;
  c.span_days = 100000.0 / 1440.0;  // ~10^5 one-minute samples
  const auto traj2 = simulate_latent_sde(c, 5);
  const auto w2 = emit_wearable(traj2, c, 6);
  REQUIRE(w2.size() >= 100000);
  std::size_t missing = 0;
  for (std::size_t i = 0; i < w2.size(); ++i)
    if (!w2.observed(i)) {
      ++missing;
      CHECK(std::isnan(w2.value(i, 0)));
    }
  const double frac = static_cast<double>(missing) / static_cast<double>(w2.size());
  CHECK(std::abs(frac - 0.1) < 0.02);

  c.emission = {1, 0};
  CHECK_THROWS_AS(emit_wearable(traj2, c, 6), std::invalid_argument);
}

TEST_CASE("ehr emission: vanishing and constant intensity") {
  CohortConfig c;
  c.span_days = 100;
  c.grid_step_seconds = 3600;
  c.families = {TokenFamily{{0, 0}, -20, 3}};
  const auto traj = simulate_latent_sde(c, 1);
  CHECK(emit_ehr_events(traj, c, 2).events.empty());

  c.families = {TokenFamily{{0, 0}, num::softplus_inverse(1.0), 3}};
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto seq = emit_ehr_events(traj, c, seed);
    CHECK(seq.events.size() >= 70);
    CHECK(seq.events.size() <= 130);
    for (std::size_t k = 1; k < seq.events.size(); ++k) CHECK(seq.events[k].time > seq.events[k - 1].time);
    for (const auto& e : seq.events) CHECK(e.token < 3);
  }
}

TEST_CASE("ehr emission: family rate tracks its latent coordinate") {
  CohortConfig c;
  c.patients = 500;
  c.span_days = 5;
  c.grid_step_seconds = 1800;
  c.families = {TokenFamily{{1.0, 0.0}, 0.0, 2}, TokenFamily{{0.0, 1.0}, 0.0, 2}};
  std::vector<double> rate, coord;
  for (std::uint64_t id = 0; id < c.patients; ++id) {
    const auto traj = simulate_latent_sde(c, stream_key(c.seed, id, Stream::latent));
    const auto seq = emit_ehr_events(traj, c, stream_key(c.seed, id, Stream::ehr));
    double m = 0;
    for (std::size_t i = 0; i < traj.size(); ++i) m += traj.at(i)[0];
    coord.push_back(m / static_cast<double>(traj.size()));
    rate.push_back(static_cast<double>(std::count_if(seq.events.begin(), seq.events.end(),
                                                     [&](const EhrEvent& e) { return c.family_of(e.token) == 0; })));
  }
  CHECK(pearson(rate, coord) > 0.0);
}

TEST_CASE("ehr emission: intensity above the thinning bound is rejected") {
  CohortConfig c;
  c.span_days = 2;
  c.families = {TokenFamily{{0, 0}, 100.0, 1}};
  const auto traj = simulate_latent_sde(c, 1);
  CHECK_THROWS_AS(emit_ehr_events(traj, c, 2), ThinningBoundError);
}

TEST_CASE("noise injection: power rule, composition, masks") {
  WearableStream w;
  w.step = 60;
  w.channels = 1;
  for (std::size_t i = 0; i < 100000; ++i) {
    w.samples.push_back(i % 2 ? 1.0 : -1.0);
    w.mask.push_back(i % 17 ? 1 : 0);
  }
  for (std::size_t i = 0; i < w.size(); ++i)
    if (!w.mask[i]) w.samples[i] = std::nan("");
  CHECK(inject_noise(w, 0.0, 1) == w);
  CHECK_THROWS_AS(inject_noise(w, -1.0, 1), std::invalid_argument);

  const auto once = inject_noise(w, 6.0, 11);
  CHECK(once.mask == w.mask);
  CHECK(once.step == w.step);
  CHECK(once.t0 == w.t0);
  // Clean power is 1; noise power = total - 1, and the target ratio is 10^0.6 - 1.
  const double noise_power = mean_power(once, 0) - 1.0;
  const double realized_db = 10.0 * std::log10(noise_power / (std::pow(10.0, 0.6) - 1.0));
  CHECK(std::abs(realized_db) < 0.5);
  const double drop_once = 10.0 * std::log10(mean_power(once, 0));
  const double drop_twice = 10.0 * std::log10(mean_power(inject_noise(inject_noise(w, 3.0, 12), 3.0, 13), 0));
  CHECK(std::abs(drop_once - 6.0) < 0.5);
  CHECK(std::abs(drop_twice - drop_once) < 0.5);
  for (std::size_t i = 0; i < w.size(); ++i)
    if (!w.mask[i]) CHECK(std::isnan(once.samples[i]));
}

TEST_CASE("modality dropout") {
  const auto c = small_config();
  const auto p = generate_patient(c, 0);
  REQUIRE_FALSE(p.ehr.events.empty());
  const auto nw = drop_modality(p, Modality::wearable);
  CHECK(std::all_of(nw.wearable.mask.begin(), nw.wearable.mask.end(), [](auto m) { return m == 0; }));
  CHECK(nw.wearable.size() == p.wearable.size());
  CHECK(nw.ehr == p.ehr);
  CHECK(drop_modality(nw, Modality::wearable) == nw);
  const auto ne = drop_modality(p, Modality::ehr);
  CHECK(ne.ehr.events.empty());
  CHECK(ne.ehr.vocab == p.ehr.vocab);
  CHECK(ne.wearable == p.wearable);
  CHECK(drop_modality(ne, Modality::ehr) == ne);
}

TEST_CASE("downstream labels: boundaries and censoring") {
  const auto c = small_config();
  PatientRecord p = generate_patient(c, 1);
  p.ehr.events.clear();
  auto l = make_downstream_labels(p, c, {kSecondsPerDay}, {kSecondsPerDay});
  CHECK(l.at_index[0].binary[0] == 0);
  CHECK_FALSE(l.at_index[0].survival_event);
  CHECK(l.at_index[0].survival_time == p.span - kSecondsPerDay);

  p.ehr.events = {{2 * kSecondsPerDay, 0}};
  l = make_downstream_labels(p, c, {kSecondsPerDay}, {kSecondsPerDay, 0.5 * kSecondsPerDay});
  CHECK(l.at_index[0].binary[0] == 1);
  CHECK(l.at_index[0].binary[1] == 0);
  CHECK(l.at_index[0].survival_event);
  CHECK(l.at_index[0].survival_time == kSecondsPerDay);

  // Events of other families and at the index time itself do not count.
  p.ehr.events = {{kSecondsPerDay, 0}, {1.5 * kSecondsPerDay, 5}};
  l = make_downstream_labels(p, c, {kSecondsPerDay}, {kSecondsPerDay});
  CHECK(l.at_index[0].binary[0] == 0);

  CHECK_THROWS_AS(make_downstream_labels(p, c, {3 * kSecondsPerDay}, {2 * kSecondsPerDay}), std::invalid_argument);
}

TEST_CASE("downstream labels: prevalence matches integrated intensity") {
  CohortConfig c;
  c.patients = 2000;
  c.span_days = 2;
  c.grid_step_seconds = 3600;
  c.families = {TokenFamily{{0, 0}, num::softplus_inverse(0.5), 2}, TokenFamily{{0, 0}, num::softplus_inverse(2.0), 2}};
  c.index_times_days = {0.5};
  c.horizons_days = {1.0};
  const auto cohort = generate_cohort(c);
  double pos = 0;
  for (const auto& p : cohort.patients) pos += p.labels.at_index[0].binary[0];
  const double prevalence = pos / static_cast<double>(c.patients);
  CHECK(std::abs(prevalence - (1.0 - std::exp(-0.5))) < 0.03);
}

TEST_CASE("cohort generation is reproducible and substreams are per patient") {
  const auto c = small_config();
  const auto a = generate_cohort(c);
  const auto b = generate_cohort(c);
  CHECK(serialize_cohort(a) == serialize_cohort(b));
  auto c2 = c;
  c2.patients = 5;
  const auto more = generate_cohort(c2);
  for (std::size_t i = 0; i < c.patients; ++i) CHECK(more.patients[i] == a.patients[i]);
  auto c3 = c;
  c3.seed = 2;
  CHECK_FALSE(generate_cohort(c3).patients[0] == a.patients[0]);
}

TEST_CASE("cohort file round trip and corruption") {
  const auto dir = std::filesystem::temp_directory_path() / "ctmm_test_cohort";
  std::filesystem::create_directories(dir);
  const auto c = small_config();
  const auto cohort = generate_cohort(c);
  const std::string path = (dir / "c.bin").string();
  save_cohort(cohort, path);
  CHECK(load_cohort(path) == cohort);

  auto bytes = serialize_cohort(cohort);
  auto truncated = bytes;
  truncated.resize(bytes.size() - 20);
  CHECK_THROWS_AS(deserialize_cohort(truncated), io::FormatError);
  auto flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x40;
  CHECK_THROWS_AS(deserialize_cohort(flipped), io::FormatError);
  CHECK_THROWS_AS(deserialize_cohort({}), io::FormatError);

  auto empty_cfg = c;
  empty_cfg.patients = 0;
  const auto empty = generate_cohort(empty_cfg);
  CHECK(empty.patients.empty());
  CHECK(deserialize_cohort(serialize_cohort(empty)) == empty);
}

TEST_CASE("cohort config JSON is strict") {
  const auto c = small_config();
  CHECK(config_from_json(config_to_json(c)) == c);
  auto j = config_to_json(c);
  j["colour"] = 1;
  CHECK_THROWS_WITH_AS(config_from_json(j), "cohort.colour: unknown key", io::ConfigError);
  j = config_to_json(c);
  j["families"][0]["extra"] = true;
  CHECK_THROWS_AS(config_from_json(j), io::ConfigError);
  j = config_to_json(c);
  j["sigma"] = {1.0};
  CHECK_THROWS_WITH_AS(config_from_json(j), doctest::Contains("cohort.sigma"), io::ConfigError);
  j = config_to_json(c);
  j["patients"] = "many";
  CHECK_THROWS_WITH_AS(config_from_json(j), doctest::Contains("cohort.patients"), io::ConfigError);
}
