#include "ctmm/eval/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "ctmm/cohort/generator.hpp"
#include "ctmm/rng.hpp"

namespace ctmm::eval {

LatentTable extract_frozen(const num::ParameterStore& ps, const model::ModelConfig& mc,
                           const std::vector<const PatientRecord*>& records, const std::vector<double>& times) {
  return extract_scenario(ps, mc, records, times, Scenario::identity, 0);
}

namespace {

const IndexLabels& labels_at(const PatientRecord& r, double t) {
  for (const auto& il : r.labels.at_index)
    if (il.index_time == t) return il;
  throw std::invalid_argument("labels: patient " + std::to_string(r.id) + " has no labels at index time " +
                              std::to_string(t));
}

std::map<std::uint64_t, const PatientRecord*> by_id(const std::vector<const PatientRecord*>& records) {
  std::map<std::uint64_t, const PatientRecord*> m;
  for (const auto* r : records) m[r->id] = r;
  return m;
}

}  // namespace

std::vector<int> binary_labels(const std::vector<const PatientRecord*>& records, const LatentTable& t, std::size_t h) {
  const auto m = by_id(records);
  std::vector<int> y;
  for (std::size_t i = 0; i < t.size(); ++i) {
    const auto& il = labels_at(*m.at(t.id[i]), t.time[i]);
    y.push_back(il.binary.at(h));
  }
  return y;
}

SurvivalData survival_labels(const std::vector<const PatientRecord*>& records, const LatentTable& t) {
  const auto m = by_id(records);
  SurvivalData d;
  for (std::size_t i = 0; i < t.size(); ++i) {
    const auto& il = labels_at(*m.at(t.id[i]), t.time[i]);
    d.time.push_back(il.survival_time);
    d.event.push_back(il.survival_event ? 1 : 0);
    d.risk.push_back(0.0);
  }
  return d;
}

PredictionSet probe_predictions(const LatentTable& train, const std::vector<int>& train_y, const LatentTable& test,
                                const std::vector<int>& test_y, const ProbeOptions& o, ProbeHead* head) {
  const auto h = fit_logistic(train.z, train_y, o);
  PredictionSet p;
  for (std::size_t i = 0; i < test.size(); ++i) {
    p.id.push_back(test.id[i]);
    p.score.push_back(h.probability(test.z[i]));
    p.label.push_back(test_y.at(i));
  }
  if (head) *head = h;
  return p;
}

SetMetric auroc_metric() {
  return [](const std::vector<double>& s, const std::vector<int>& l) { return auroc(s, l); };
}

std::vector<std::size_t> stratified_subsample(const std::vector<int>& y, double fraction, std::uint64_t seed) {
  if (!(fraction > 0 && fraction <= 1)) throw std::invalid_argument("stratified_subsample: fraction must lie in (0, 1]");
  std::vector<std::size_t> out;
  for (int cls : {0, 1}) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < y.size(); ++i)
      if ((y[i] != 0) == (cls != 0)) rows.push_back(i);
    const auto keep = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(rows.size())));
    if (keep < 2) return {};
    CounterRng rng(CounterRng::derive(seed, {static_cast<std::uint64_t>(cls)}));
    for (std::size_t i = rows.size(); i > 1; --i) std::swap(rows[i - 1], rows[rng.below(i)]);
    out.insert(out.end(), rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(keep));
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<FractionPoint> label_fraction_sweep(const LatentTable& train, const std::vector<int>& train_y,
                                                const LatentTable& test, const std::vector<int>& test_y,
                                                const std::vector<double>& fractions,
                                                const std::vector<std::uint64_t>& seeds, std::size_t resamples,
                                                std::uint64_t boot_seed, const ProbeOptions& o) {
  std::vector<FractionPoint> out;
  for (std::size_t fi = 0; fi < fractions.size(); ++fi)
    for (std::uint64_t seed : seeds) {
      FractionPoint pt;
      pt.fraction = fractions[fi];
      pt.seed = seed;
      const auto rows = stratified_subsample(train_y, fractions[fi], CounterRng::derive(seed, {fi}));
      if (rows.empty()) {
        pt.skipped = true;
        pt.note = "fewer than two rows of a class";
        out.push_back(pt);
        continue;
      }
      LatentTable sub;
      std::vector<int> sy;
      for (std::size_t r : rows) {
        sub.id.push_back(train.id[r]);
        sub.time.push_back(train.time[r]);
        sub.z.push_back(train.z[r]);
        sy.push_back(train_y[r]);
      }
      pt.train_rows = rows.size();
      const auto pred = probe_predictions(sub, sy, test, test_y, o);
      pt.ci = bootstrap_ci(pred, auroc_metric(), resamples, boot_seed);
      pt.auroc = pt.ci.estimate;
      out.push_back(pt);
    }
  return out;
}

std::string scenario_name(Scenario s) {
  switch (s) {
    case Scenario::identity: return "identity";
    case Scenario::drop_wearable: return "drop_wearable";
    case Scenario::drop_ehr: return "drop_ehr";
    case Scenario::drop_both: return "drop_both";
    case Scenario::snr_minus_6db: return "snr_minus_6db";
    case Scenario::truncate_7d: return "truncate_7d";
    case Scenario::truncate_30d: return "truncate_30d";
    case Scenario::truncate_90d: return "truncate_90d";
  }
  return "?";
}

const std::vector<Scenario>& all_scenarios() {
  static const std::vector<Scenario> v = {Scenario::identity,      Scenario::drop_wearable, Scenario::drop_ehr,
                                          Scenario::drop_both,     Scenario::snr_minus_6db, Scenario::truncate_7d,
                                          Scenario::truncate_30d,  Scenario::truncate_90d};
  return v;
}

Scenario scenario_from_name(const std::string& name) {
  for (auto s : all_scenarios())
    if (scenario_name(s) == name) return s;
  throw std::invalid_argument("unknown scenario '" + name + "'");
}

PatientRecord apply_scenario(const PatientRecord& rec, Scenario s, double index_time, std::uint64_t key) {
  auto truncate = [&](double days) {
    PatientRecord out = rec;
    const double start = index_time - days * kSecondsPerDay;
    std::erase_if(out.ehr.events, [&](const EhrEvent& e) { return e.time < start; });
    auto& w = out.wearable;
    for (std::size_t i = 0; i < w.size(); ++i)
      if (w.time(i) < start && w.mask[i]) {
        w.mask[i] = 0;
        for (std::size_t c = 0; c < w.channels; ++c) w.samples[i * w.channels + c] = std::numeric_limits<double>::quiet_NaN();
      }
    return out;
  };
  switch (s) {
    case Scenario::identity: return rec;
    case Scenario::drop_wearable: return cohort::drop_modality(rec, cohort::Modality::wearable);
    case Scenario::drop_ehr: return cohort::drop_modality(rec, cohort::Modality::ehr);
    case Scenario::drop_both:
      return cohort::drop_modality(cohort::drop_modality(rec, cohort::Modality::wearable), cohort::Modality::ehr);
    case Scenario::snr_minus_6db: {
      PatientRecord out = rec;
      out.wearable = cohort::inject_noise(rec.wearable, 6.0, CounterRng::derive(key, {rec.id}));
      return out;
    }
    case Scenario::truncate_7d: return truncate(7);
    case Scenario::truncate_30d: return truncate(30);
    case Scenario::truncate_90d: return truncate(90);
  }
  return rec;
}

LatentTable extract_scenario(const num::ParameterStore& ps, const model::ModelConfig& mc,
                             const std::vector<const PatientRecord*>& records, const std::vector<double>& times,
                             Scenario s, std::uint64_t key) {
  LatentTable t;
  for (const auto* r : records) {
    // Noise does not depend on the index time, so one perturbed copy serves all.
    const bool per_time = s == Scenario::truncate_7d || s == Scenario::truncate_30d || s == Scenario::truncate_90d;
    std::optional<PatientRecord> shared;
    if (!per_time && s != Scenario::identity) shared = apply_scenario(*r, s, 0.0, key);
    for (double time : times) {
      if (time < 0) {
        ++t.skipped;
        continue;
      }
      std::optional<PatientRecord> own;
      if (per_time) own = apply_scenario(*r, s, time, key);
      const PatientRecord& rec = own ? *own : shared ? *shared : *r;
      const auto ctx = model::build_context(rec, time, mc);
      t.id.push_back(r->id);
      t.time.push_back(time);
      t.z.push_back(model::readout_at(ps, mc, ctx, time));
    }
  }
  return t;
}

std::vector<ScenarioResult> robustness_sweep(const num::ParameterStore& ps, const model::ModelConfig& mc,
                                             const std::vector<const PatientRecord*>& train,
                                             const std::vector<const PatientRecord*>& test,
                                             const std::vector<double>& times, std::size_t horizon,
                                             const std::vector<Scenario>& scenarios, std::size_t resamples,
                                             std::uint64_t seed, const ProbeOptions& o) {
  const auto tr = extract_frozen(ps, mc, train, times);
  const auto ty = binary_labels(train, tr, horizon);
  const auto clean_table = extract_frozen(ps, mc, test, times);
  const auto test_y = binary_labels(test, clean_table, horizon);
  ProbeHead head;
  const auto clean = probe_predictions(tr, ty, clean_table, test_y, o, &head);
  std::vector<ScenarioResult> out;
  for (auto s : scenarios) {
    const auto table = s == Scenario::identity ? clean_table
                                               : extract_scenario(ps, mc, test, times, s, CounterRng::derive(seed, {0x5C}));
    PredictionSet p;
    for (std::size_t i = 0; i < table.size(); ++i) {
      p.id.push_back(table.id[i]);
      p.score.push_back(head.probability(table.z[i]));
      p.label.push_back(test_y[i]);
    }
    ScenarioResult r;
    r.scenario = s;
    r.ci = bootstrap_ci(p, auroc_metric(), resamples, seed);
    r.auroc = r.ci.estimate;
    r.vs_identity = paired_bootstrap_test(p, clean, auroc_metric(), resamples, seed);
    out.push_back(r);
  }
  return out;
}

MetricReport make_report(const std::string& name, const BootstrapResult& r) {
  MetricReport m;
  m.name = name;
  m.estimate = r.estimate;
  m.ci_low = r.lo;
  m.ci_high = r.hi;
  m.resamples = r.resamples;
  m.redraws = r.redraws;
  return m;
}

nlohmann::json report_to_json(const MetricReport& r) {
  nlohmann::json j = {{"name", r.name},         {"estimate", r.estimate}, {"ci_low", r.ci_low},
                      {"ci_high", r.ci_high},   {"resamples", r.resamples}, {"redraws", r.redraws}};
  j["p_raw"] = r.p_raw ? nlohmann::json(*r.p_raw) : nlohmann::json(nullptr);
  j["p_adjusted"] = r.p_adjusted ? nlohmann::json(*r.p_adjusted) : nlohmann::json(nullptr);
  j["effect_size"] = r.effect_size ? nlohmann::json(*r.effect_size) : nlohmann::json(nullptr);
  if (!r.note.empty()) j["note"] = r.note;
  return j;
}

MetricReport report_from_json(const nlohmann::json& j) {
  MetricReport r;
  r.name = j.at("name").get<std::string>();
  r.estimate = j.at("estimate").get<double>();
  r.ci_low = j.at("ci_low").get<double>();
  r.ci_high = j.at("ci_high").get<double>();
  r.resamples = j.at("resamples").get<std::size_t>();
  r.redraws = j.at("redraws").get<std::size_t>();
  auto opt = [&](const char* k) -> std::optional<double> {
    if (!j.contains(k) || j.at(k).is_null()) return std::nullopt;
    return j.at(k).get<double>();
  };
  r.p_raw = opt("p_raw");
  r.p_adjusted = opt("p_adjusted");
  r.effect_size = opt("effect_size");
  if (j.contains("note")) r.note = j.at("note").get<std::string>();
  return r;
}

std::string reports_to_csv(const std::vector<MetricReport>& rs) {
  auto num = [](double v) {
    char b[32];
    std::snprintf(b, sizeof b, "%.17g", v);
    return std::string(b);
  };
  auto opt = [&](const std::optional<double>& v) { return v ? num(*v) : std::string(); };
  std::ostringstream o;
  o << "name,estimate,ci_low,ci_high,resamples,redraws,p_raw,p_adjusted,effect_size\n";
  for (const auto& r : rs)
    o << r.name << ',' << num(r.estimate) << ',' << num(r.ci_low) << ',' << num(r.ci_high) << ',' << r.resamples
      << ',' << r.redraws << ',' << opt(r.p_raw) << ',' << opt(r.p_adjusted) << ',' << opt(r.effect_size) << '\n';
  return o.str();
}

void adjust_reports(std::vector<MetricReport>& rs, double alpha) {
  std::vector<double> p;
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < rs.size(); ++i)
    if (rs[i].p_raw) {
      p.push_back(*rs[i].p_raw);
      idx.push_back(i);
    }
  const auto f = bh_fdr(p, alpha);
  for (std::size_t k = 0; k < idx.size(); ++k) rs[idx[k]].p_adjusted = f.adjusted[k];
}

}  // namespace ctmm::eval
