#include "ctmm/cohort/io.hpp"

#include "ctmm/io/strict_json.hpp"

namespace ctmm::cohort {

using nlohmann::json;

json config_to_json(const CohortConfig& c) {
  json fams = json::array();
  for (const auto& f : c.families) fams.push_back({{"a", f.a}, {"b", f.b}, {"tokens", f.tokens}});
  return {{"patients", c.patients},
          {"span_days", c.span_days},
          {"seed", c.seed},
          {"latent_dim", c.latent_dim},
          {"theta", c.theta},
          {"sigma", c.sigma},
          {"initial_state", c.initial_state},
          {"grid_step_seconds", c.grid_step_seconds},
          {"wearable_channels", c.wearable_channels},
          {"emission", c.emission},
          {"emission_noise_std", c.emission_noise_std},
          {"missing_fraction", c.missing_fraction},
          {"gap_mean_minutes", c.gap_mean_minutes},
          {"families", fams},
          {"intensity_cap_per_day", c.intensity_cap_per_day},
          {"target_family", c.target_family},
          {"index_times_days", c.index_times_days},
          {"horizons_days", c.horizons_days}};
}

CohortConfig config_from_json(const json& j, const std::string& path) {
  CohortConfig c;
  io::StrictObject o(j, path);
  o.get("patients", c.patients);
  o.get("span_days", c.span_days);
  o.get("seed", c.seed);
  o.get("latent_dim", c.latent_dim);
  o.get("theta", c.theta);
  o.get("sigma", c.sigma);
  o.get("initial_state", c.initial_state);
  o.get("grid_step_seconds", c.grid_step_seconds);
  o.get("wearable_channels", c.wearable_channels);
  o.get("emission", c.emission);
  o.get("emission_noise_std", c.emission_noise_std);
  o.get("missing_fraction", c.missing_fraction);
  o.get("gap_mean_minutes", c.gap_mean_minutes);
  o.object("families", [&](const json& arr, const std::string& p) {
    if (!arr.is_array()) throw io::ConfigError(p + ": expected an array");
    c.families.clear();
    for (std::size_t k = 0; k < arr.size(); ++k) {
      TokenFamily f;
      io::StrictObject fo(arr[k], p + "[" + std::to_string(k) + "]");
      fo.get("a", f.a);
      fo.get("b", f.b);
      fo.get("tokens", f.tokens);
      fo.finish();
      c.families.push_back(f);
    }
  });
  o.get("intensity_cap_per_day", c.intensity_cap_per_day);
  o.get("target_family", c.target_family);
  o.get("index_times_days", c.index_times_days);
  o.get("horizons_days", c.horizons_days);
  o.finish();
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    std::string msg = e.what();
    if (msg.rfind("cohort.", 0) == 0 && path != "cohort") msg = path + msg.substr(6);
    throw io::ConfigError(msg);
  }
  return c;
}

std::vector<std::uint8_t> serialize_cohort(const Cohort& cohort) {
  io::Writer w(kCohortMagic);
  w.header({{"format", "ctmm-cohort"},
            {"version", kCohortFormatVersion},
            {"seed", cohort.config.seed},
            {"patients", cohort.patients.size()},
            {"config", config_to_json(cohort.config)}});
  for (const auto& p : cohort.patients) {
    w.u64(p.id);
    w.f64(p.span);
    w.f64(p.latent.t0);
    w.f64(p.latent.step);
    w.u64(p.latent.dim);
    w.f64s(p.latent.states);
    w.f64(p.wearable.t0);
    w.f64(p.wearable.step);
    w.u64(p.wearable.channels);
    w.f64s(p.wearable.samples);
    w.u8s(p.wearable.mask);
    w.u64(p.ehr.vocab);
    w.u64(p.ehr.events.size());
    for (const auto& e : p.ehr.events) {
      w.f64(e.time);
      w.u64(e.token);
    }
    w.f64s(p.labels.horizons);
    w.u64(p.labels.at_index.size());
    for (const auto& il : p.labels.at_index) {
      w.f64(il.index_time);
      w.u8s(il.binary);
      w.f64(il.survival_time);
      w.u8(il.survival_event ? 1 : 0);
    }
  }
  return w.finish();
}

Cohort deserialize_cohort(std::vector<std::uint8_t> bytes) {
  io::Reader r(std::move(bytes), kCohortMagic, "cohort");
  const auto& h = r.header();
  if (!h.contains("version") || h["version"] != kCohortFormatVersion)
    throw io::FormatError("cohort: field 'version': expected " + std::to_string(kCohortFormatVersion) + ", found " +
                          (h.contains("version") ? h["version"].dump() : std::string("none")));
  Cohort c;
  try {
    c.config = config_from_json(h.at("config"));
  } catch (const std::exception& e) {
    throw io::FormatError(std::string("cohort: field 'config': ") + e.what());
  }
  const std::uint64_t n = h.value("patients", std::uint64_t{0});
  for (std::uint64_t i = 0; i < n; ++i) {
    const std::string f = "patients[" + std::to_string(i) + "]";
    PatientRecord p;
    p.id = r.u64(f + ".id");
    p.span = r.f64(f + ".span");
    p.latent.t0 = r.f64(f + ".latent.t0");
    p.latent.step = r.f64(f + ".latent.step");
    p.latent.dim = r.u64(f + ".latent.dim");
    p.latent.states = r.f64s(f + ".latent.states");
    p.wearable.t0 = r.f64(f + ".wearable.t0");
    p.wearable.step = r.f64(f + ".wearable.step");
    p.wearable.channels = r.u64(f + ".wearable.channels");
    p.wearable.samples = r.f64s(f + ".wearable.samples");
    p.wearable.mask = r.u8s(f + ".wearable.mask");
    if (p.wearable.samples.size() != p.wearable.mask.size() * p.wearable.channels)
      throw io::FormatError("cohort: field '" + f + ".wearable.samples': length does not match mask x channels");
    p.ehr.vocab = r.u64(f + ".ehr.vocab");
    const std::uint64_t ne = r.u64(f + ".ehr.events.length");
    if (ne > (1ULL << 40)) throw io::FormatError("cohort: field '" + f + ".ehr.events.length': implausible");
    p.ehr.events.resize(ne);
    for (auto& e : p.ehr.events) {
      e.time = r.f64(f + ".ehr.events.time");
      const std::uint64_t tok = r.u64(f + ".ehr.events.token");
      if (tok >= p.ehr.vocab) throw io::FormatError("cohort: field '" + f + ".ehr.events.token': out of vocabulary");
      e.token = static_cast<std::uint32_t>(tok);
    }
    p.labels.horizons = r.f64s(f + ".labels.horizons");
    const std::uint64_t ni = r.u64(f + ".labels.at_index.length");
    if (ni > (1ULL << 32)) throw io::FormatError("cohort: field '" + f + ".labels.at_index.length': implausible");
    p.labels.at_index.resize(ni);
    for (auto& il : p.labels.at_index) {
      il.index_time = r.f64(f + ".labels.index_time");
      il.binary = r.u8s(f + ".labels.binary");
      il.survival_time = r.f64(f + ".labels.survival_time");
      il.survival_event = r.u8(f + ".labels.survival_event") != 0;
    }
    c.patients.push_back(std::move(p));
  }
  r.expect_end();
  return c;
}

void save_cohort(const Cohort& cohort, const std::string& path) { io::write_file(path, serialize_cohort(cohort)); }

Cohort load_cohort(const std::string& path) { return deserialize_cohort(io::read_file(path)); }

}  // namespace ctmm::cohort
