#include "ctmm/experiment/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "ctmm/cohort/io.hpp"
#include "ctmm/io/container.hpp"
#include "ctmm/io/strict_json.hpp"
#include "ctmm/rng.hpp"

namespace ctmm::exp {

using nlohmann::json;

namespace {

std::string g17(double v) {
  char b[32];
  std::snprintf(b, sizeof b, "%.17g", v);
  return b;
}

EvaluationConfig evaluation_from_json(const json& j, const std::string& path) {
  EvaluationConfig e;
  io::StrictObject o(j, path);
  o.get("horizon", e.horizon);
  o.get("variants", e.variants);
  o.get("scenarios", e.scenarios);
  o.get("fractions", e.fractions);
  o.get("net_benefit_thresholds", e.net_benefit_thresholds);
  o.get("resamples", e.resamples);
  o.get("seeds", e.seeds);
  o.get("probe_l2", e.probe_l2);
  o.finish();
  if (e.variants.empty()) throw io::ConfigError(path + ".variants: must not be empty");
  if (e.resamples == 0) throw io::ConfigError(path + ".resamples: must be positive");
  if (e.seeds.empty()) throw io::ConfigError(path + ".seeds: must not be empty");
  if (!(e.probe_l2 >= 0)) throw io::ConfigError(path + ".probe_l2: must be non-negative");
  for (double f : e.fractions)
    if (!(f > 0 && f <= 1)) throw io::ConfigError(path + ".fractions: values must lie in (0, 1]");
  for (double t : e.net_benefit_thresholds)
    if (!(t > 0 && t < 1)) throw io::ConfigError(path + ".net_benefit_thresholds: values must lie in (0, 1)");
  for (const auto& s : e.scenarios) {
    try {
      eval::scenario_from_name(s);
    } catch (const std::invalid_argument&) {
      throw io::ConfigError(path + ".scenarios: unknown scenario '" + s + "'");
    }
  }
  return e;
}

json evaluation_to_json(const EvaluationConfig& e) {
  return {{"horizon", e.horizon},     {"variants", e.variants},   {"scenarios", e.scenarios},
          {"fractions", e.fractions}, {"net_benefit_thresholds", e.net_benefit_thresholds},
          {"resamples", e.resamples}, {"seeds", e.seeds},         {"probe_l2", e.probe_l2}};
}

}  // namespace

ExperimentConfig experiment_from_json(const json& j) {
  ExperimentConfig c;
  io::StrictObject o(j, "");
  o.object("cohort", [&](const json& v, const std::string& p) { c.cohort = cohort::config_from_json(v, p); });
  json model_json = json::object();
  o.object("model", [&](const json& v, const std::string&) { model_json = v; });
  o.object("objective", [&](const json& v, const std::string& p) { c.objective = obj::objective_config_from_json(v, p); });
  o.object("trainer", [&](const json& v, const std::string& p) { c.trainer = train::trainer_config_from_json(v, p); });
  o.get("ablations", c.ablations);
  o.object("evaluation", [&](const json& v, const std::string& p) { c.evaluation = evaluation_from_json(v, p); });
  o.finish();
  c.cohort.validate();

  // Cohort-determined fields.
  if (!model_json.is_object()) throw io::ConfigError("model: expected an object");
  const json fixed = {{"vocab", c.cohort.vocab_size()},
                      {"channels", c.cohort.wearable_channels},
                      {"sample_step", c.cohort.grid_step_seconds}};
  for (auto it = fixed.begin(); it != fixed.end(); ++it) {
    if (model_json.contains(it.key()) && model_json[it.key()] != it.value())
      throw io::ConfigError("model." + it.key() + ": must equal the cohort value " + it.value().dump());
    model_json[it.key()] = it.value();
  }
  c.model = model::model_config_from_json(model_json, "model");

  for (const auto& f : c.ablations) {
    if (std::find(ablation_flags().begin(), ablation_flags().end(), f) == ablation_flags().end())
      throw io::ConfigError("ablations: unknown flag '" + f + "'");
  }
  for (const auto& v : c.evaluation.variants) {
    try {
      variant_config(c, v, 0);
    } catch (const std::invalid_argument& e) {
      throw io::ConfigError(std::string("evaluation.variants: ") + e.what());
    }
  }
  if (c.evaluation.horizon >= c.cohort.horizons_days.size())
    throw io::ConfigError("evaluation.horizon: no such cohort horizon");
  return c;
}

json experiment_to_json(const ExperimentConfig& c) {
  return {{"cohort", cohort::config_to_json(c.cohort)},
          {"model", model::model_config_to_json(c.model)},
          {"objective", obj::objective_config_to_json(c.objective)},
          {"trainer", train::trainer_config_to_json(c.trainer)},
          {"ablations", c.ablations},
          {"evaluation", evaluation_to_json(c.evaluation)}};
}

ExperimentConfig load_experiment(const std::string& path) {
  json j;
  try {
    j = json::parse(io::read_text(path));
  } catch (const json::parse_error& e) {
    throw io::ConfigError(path + ": " + e.what());
  }
  return experiment_from_json(j);
}

std::string experiment_digest(const ExperimentConfig& c) {
  const std::string s = experiment_to_json(c).dump();
  char b[17];
  std::snprintf(b, sizeof b, "%016llx",
                static_cast<unsigned long long>(io::fnv1a(reinterpret_cast<const std::uint8_t*>(s.data()), s.size())));
  return b;
}

const std::vector<std::string>& ablation_flags() {
  static const std::vector<std::string> f = {"disable_w2e",        "disable_e2w",         "disable_both_cross",
                                             "single_exponential_kernel", "discrete_time_1day", "heavy_wear_mask_50",
                                             "enable_elbo",        "disable_contrastive"};
  return f;
}

std::vector<std::string> variant_flags(const std::string& variant) {
  if (variant == "full") return {};
  std::vector<std::string> out;
  std::stringstream ss(variant);
  std::string part;
  while (std::getline(ss, part, '+')) {
    if (std::find(ablation_flags().begin(), ablation_flags().end(), part) == ablation_flags().end())
      throw std::invalid_argument("unknown variant component '" + part + "'");
    out.push_back(part);
  }
  if (out.empty()) throw std::invalid_argument("empty variant name");
  return out;
}

void apply_ablation(train::RunConfig& rc, const std::string& flag) {
  auto& w = rc.objective.weights;
  if (flag == "disable_w2e") w.w2e = 0;
  else if (flag == "disable_e2w") w.e2w = 0;
  else if (flag == "disable_both_cross") w.w2e = w.e2w = 0;
  else if (flag == "single_exponential_kernel") rc.model.components = 1;
  else if (flag == "discrete_time_1day") {
    rc.model.discrete_time = true;
    rc.model.discrete_bin = 86400.0;
  } else if (flag == "heavy_wear_mask_50") rc.objective.wear_mask_fraction = 0.5;
  else if (flag == "enable_elbo") w.elbo = w.elbo > 0 ? w.elbo : 0.1;
  else if (flag == "disable_contrastive") w.contr = 0;
  else throw std::invalid_argument("unknown ablation flag '" + flag + "'");
}

train::RunConfig variant_config(const ExperimentConfig& c, const std::string& variant, std::uint64_t seed) {
  train::RunConfig rc{c.model, c.objective, c.trainer, seed};
  auto flags = c.ablations;
  for (const auto& f : variant_flags(variant)) flags.push_back(f);
  std::sort(flags.begin(), flags.end());
  if (std::adjacent_find(flags.begin(), flags.end()) != flags.end())
    throw std::invalid_argument("variant '" + variant + "' repeats a flag");
  const bool discrete = std::count(flags.begin(), flags.end(), "discrete_time_1day") > 0;
  const bool single = std::count(flags.begin(), flags.end(), "single_exponential_kernel") > 0;
  if (discrete && single)
    throw std::invalid_argument("discrete_time_1day and single_exponential_kernel cannot be combined");
  for (const auto& f : flags) apply_ablation(rc, f);
  return rc;
}

Split split_of(std::uint64_t id) {
  std::uint8_t b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<std::uint8_t>(id >> (8 * i));
  const auto bucket = io::fnv1a(b, 8) % 10;
  return bucket < 8 ? Split::train : bucket == 8 ? Split::val : Split::test;
}

Splits split_cohort(const Cohort& c) {
  Splits s;
  for (const auto& p : c.patients) {
    switch (split_of(p.id)) {
      case Split::train: s.train.push_back(&p); break;
      case Split::val: s.val.push_back(&p); break;
      case Split::test: s.test.push_back(&p); break;
    }
  }
  return s;
}

std::vector<double> index_times(const CohortConfig& c) {
  std::vector<double> t;
  for (double d : c.index_times_days) t.push_back(d * kSecondsPerDay);
  return t;
}

train::Checkpoint pretrain(const Cohort& cohort, const ExperimentConfig& c, const std::string& variant,
                           std::uint64_t seed, const train::TrainOptions& opts) {
  const auto splits = split_cohort(cohort);
  const auto rc = variant_config(c, variant, seed);
  return train::train(splits.train, train::initial_checkpoint(splits.train, rc), opts);
}

eval::PredictionSet probe_test_predictions(const num::ParameterStore& ps, const model::ModelConfig& mc,
                                           const Splits& s, const CohortConfig& cc, std::size_t horizon,
                                           double l2) {
  const auto times = index_times(cc);
  const auto tr = eval::extract_frozen(ps, mc, s.train, times);
  const auto te = eval::extract_frozen(ps, mc, s.test, times);
  eval::ProbeOptions o;
  o.l2 = l2;
  return eval::probe_predictions(tr, eval::binary_labels(s.train, tr, horizon), te,
                                 eval::binary_labels(s.test, te, horizon), o);
}

ProbeOutput probe_reports(const num::ParameterStore& ps, const model::ModelConfig& mc, const Cohort& cohort,
                          const EvaluationConfig& ev, std::uint64_t seed) {
  ProbeOutput out;
  const auto s = split_cohort(cohort);
  const auto times = index_times(cohort.config);
  const auto tr = eval::extract_frozen(ps, mc, s.train, times);
  const auto te = eval::extract_frozen(ps, mc, s.test, times);
  eval::ProbeOptions o;
  o.l2 = ev.probe_l2;
  std::uint64_t stream = 0;
  auto boot = [&](const eval::PredictionSet& p, const eval::SetMetric& m) {
    return eval::bootstrap_ci(p, m, ev.resamples, CounterRng::derive(seed, {stream++}));
  };
  for (std::size_t h = 0; h < cohort.config.horizons_days.size(); ++h) {
    const std::string tag = "h" + g17(cohort.config.horizons_days[h]) + "d";
    const auto ytr = eval::binary_labels(s.train, tr, h), yte = eval::binary_labels(s.test, te, h);
    auto two_classes = [](const std::vector<int>& y) {
      const auto pos = std::count(y.begin(), y.end(), 1);
      return pos > 0 && pos < static_cast<long>(y.size());
    };
    if (!two_classes(ytr) || !two_classes(yte)) {
      out.skipped.push_back("binary_" + tag + ": degenerate labels");
      continue;
    }
    const auto pred = eval::probe_predictions(tr, ytr, te, yte, o);
    out.reports.push_back(eval::make_report("auroc_" + tag, boot(pred, eval::auroc_metric())));
    out.reports.push_back(eval::make_report(
        "auprc_" + tag, boot(pred, [](const auto& sc, const auto& l) { return eval::auprc(sc, l); })));
    out.reports.push_back(eval::make_report(
        "ece_" + tag, boot(pred, [](const auto& sc, const auto& l) { return std::optional(eval::ece(sc, l)); })));
    out.reports.push_back(eval::make_report(
        "brier_" + tag, boot(pred, [](const auto& sc, const auto& l) { return std::optional(eval::brier(sc, l)); })));
    for (double pt : ev.net_benefit_thresholds)
      out.reports.push_back(eval::make_report(
          "net_benefit_" + tag + "_pt" + g17(pt),
          boot(pred, [pt](const auto& sc, const auto& l) { return std::optional(eval::net_benefit(sc, l, pt)); })));
    // Majority-class baseline: the training prevalence for everyone.
    const double prev = static_cast<double>(std::count(ytr.begin(), ytr.end(), 1)) / static_cast<double>(ytr.size());
    eval::PredictionSet base = pred;
    std::fill(base.score.begin(), base.score.end(), prev);
    out.reports.push_back(eval::make_report("baseline_auroc_" + tag, boot(base, eval::auroc_metric())));
    out.reports.push_back(eval::make_report(
        "baseline_brier_" + tag,
        boot(base, [](const auto& sc, const auto& l) { return std::optional(eval::brier(sc, l)); })));
  }

  // Survival: time to the next target-family event.
  auto sd_tr = eval::survival_labels(s.train, tr), sd_te = eval::survival_labels(s.test, te);
  if (std::count(sd_tr.event.begin(), sd_tr.event.end(), 1) == 0) {
    out.skipped.push_back("survival: no events in the training split");
    return out;
  }
  const auto cox = eval::fit_cox(tr.z, sd_tr.time, sd_tr.event, o);
  for (std::size_t i = 0; i < te.size(); ++i) sd_te.risk[i] = cox.score(te.z[i]);
  auto surv_metric = [&](auto f) -> eval::RowMetric {
    return [&sd_te, f](const std::vector<std::size_t>& r) -> std::optional<double> {
      eval::SurvivalData d;
      for (auto i : r) {
        d.risk.push_back(sd_te.risk[i]);
        d.time.push_back(sd_te.time[i]);
        d.event.push_back(sd_te.event[i]);
      }
      return f(d);
    };
  };
  auto boot_rows = [&](const eval::RowMetric& m) {
    return eval::bootstrap_ci(te.id, m, ev.resamples, CounterRng::derive(seed, {stream++}));
  };
  try {
    out.reports.push_back(
        eval::make_report("c_index", boot_rows(surv_metric([](const eval::SurvivalData& d) {
                            return eval::concordance_index(d);
                          }))));
  } catch (const std::invalid_argument& e) {
    out.skipped.push_back(std::string("c_index: ") + e.what());
  }
  std::vector<double> grid;
  for (double h : cohort.config.horizons_days) {
    const double T = h * kSecondsPerDay;
    grid.push_back(T);
    try {
      out.reports.push_back(eval::make_report(
          "auc_at_" + g17(h) + "d",
          boot_rows(surv_metric([T](const eval::SurvivalData& d) { return eval::auc_at_t(d, T); }))));
    } catch (const std::invalid_argument& e) {
      out.skipped.push_back("auc_at_" + g17(h) + "d: " + e.what());
    }
  }
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  std::vector<std::vector<double>> curves;
  for (const auto& z : te.z) {
    std::vector<double> c;
    for (double t : grid) c.push_back(cox.survival(z, t));
    curves.push_back(c);
  }
  try {
    const auto ib = eval::bootstrap_ci(
        te.id,
        [&](const std::vector<std::size_t>& r) -> std::optional<double> {
          eval::SurvivalData d;
          std::vector<std::vector<double>> cv;
          for (auto i : r) {
            d.risk.push_back(sd_te.risk[i]);
            d.time.push_back(sd_te.time[i]);
            d.event.push_back(sd_te.event[i]);
            cv.push_back(curves[i]);
          }
          return eval::integrated_brier(d, cv, grid);
        },
        ev.resamples, CounterRng::derive(seed, {stream++}));
    out.reports.push_back(eval::make_report("integrated_brier", ib));
  } catch (const std::invalid_argument& e) {
    out.skipped.push_back(std::string("integrated_brier: ") + e.what());
  }
  return out;
}

eval::PairedResult paired_mean_auroc(const std::vector<eval::PredictionSet>& a,
                                     const std::vector<eval::PredictionSet>& b, std::size_t resamples,
                                     std::uint64_t seed) {
  if (a.empty() || a.size() != b.size()) throw std::invalid_argument("paired_mean_auroc: seed lists differ");
  for (std::size_t k = 0; k < a.size(); ++k)
    if (a[k].id != a[0].id || b[k].id != a[0].id || a[k].label != b[k].label)
      throw std::invalid_argument("paired_mean_auroc: prediction sets cover different rows");
  auto mean_of = [](const std::vector<eval::PredictionSet>& sets) -> eval::RowMetric {
    return [&sets](const std::vector<std::size_t>& rows) -> std::optional<double> {
      double s = 0;
      for (const auto& p : sets) {
        std::vector<double> sc;
        std::vector<int> l;
        for (auto r : rows) {
          sc.push_back(p.score[r]);
          l.push_back(p.label[r]);
        }
        const auto v = eval::auroc(sc, l);
        if (!v) return std::nullopt;
        s += *v;
      }
      return s / static_cast<double>(sets.size());
    };
  };
  return eval::paired_bootstrap_test(a[0].id, mean_of(a), mean_of(b), resamples, seed);
}

std::vector<AblationRow> ablation_table(const std::vector<std::string>& variants,
                                        const std::vector<std::uint64_t>& seeds,
                                        const std::vector<std::vector<eval::PredictionSet>>& preds,
                                        std::size_t resamples, std::uint64_t seed) {
  if (variants.empty() || preds.size() != variants.size()) throw std::invalid_argument("ablation_table: ragged input");
  std::vector<AblationRow> rows;
  std::vector<double> ref(seeds.size());
  for (std::size_t k = 0; k < seeds.size(); ++k) ref[k] = *eval::auroc(preds[0][k].score, preds[0][k].label);
  const double ref_mean = std::accumulate(ref.begin(), ref.end(), 0.0) / static_cast<double>(seeds.size());
  for (std::size_t v = 0; v < variants.size(); ++v) {
    double mean = 0;
    for (std::size_t k = 0; k < seeds.size(); ++k) {
      const auto ci = eval::bootstrap_ci(preds[v][k], eval::auroc_metric(), resamples,
                                         CounterRng::derive(seed, {v, k}));
      AblationRow r{variants[v], std::to_string(seeds[k]), ci.estimate, ci.lo, ci.hi, ci.estimate - ref[k], 1.0};
      if (v > 0) r.p = eval::paired_bootstrap_test(preds[v][k], preds[0][k], eval::auroc_metric(), resamples,
                                                   CounterRng::derive(seed, {v, k, 1})).p;
      mean += ci.estimate;
      rows.push_back(r);
    }
    mean /= static_cast<double>(seeds.size());
    AblationRow m{variants[v], "mean", mean, 0, 0, mean - ref_mean, 1.0};
    const auto pr = paired_mean_auroc(preds[v], preds[0], resamples, CounterRng::derive(seed, {v, 0xA11}));
    if (v > 0) m.p = pr.p;
    // Interval of the mean AUROC from the same joint resamples.
    const auto self = eval::bootstrap_ci(
        preds[v][0].id,
        [&](const std::vector<std::size_t>& rr) -> std::optional<double> {
          double s = 0;
          for (const auto& p : preds[v]) {
            std::vector<double> sc;
            std::vector<int> l;
            for (auto i : rr) {
              sc.push_back(p.score[i]);
              l.push_back(p.label[i]);
            }
            const auto a = eval::auroc(sc, l);
            if (!a) return std::nullopt;
            s += *a;
          }
          return s / static_cast<double>(preds[v].size());
        },
        resamples, CounterRng::derive(seed, {v, 0xC1}));
    m.ci_low = self.lo;
    m.ci_high = self.hi;
    rows.push_back(m);
  }
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream o;
  o << "variant,seed,auroc,ci_low,ci_high,delta_vs_full,p_vs_full\n";
  for (const auto& r : rows)
    o << r.variant << ',' << r.seed << ',' << g17(r.auroc) << ',' << g17(r.ci_low) << ',' << g17(r.ci_high) << ','
      << g17(r.delta) << ',' << g17(r.p) << '\n';
  return o.str();
}

std::string robustness_csv(const std::vector<eval::ScenarioResult>& rows) {
  std::ostringstream o;
  o << "scenario,auroc,ci_low,ci_high,delta,delta_ci_low,delta_ci_high,p\n";
  for (const auto& r : rows)
    o << eval::scenario_name(r.scenario) << ',' << g17(r.auroc) << ',' << g17(r.ci.lo) << ',' << g17(r.ci.hi) << ','
      << g17(r.vs_identity.delta) << ',' << g17(r.vs_identity.lo) << ',' << g17(r.vs_identity.hi) << ','
      << g17(r.vs_identity.p) << '\n';
  return o.str();
}

std::string fractions_csv(const std::vector<eval::FractionPoint>& rows) {
  std::ostringstream o;
  o << "fraction,seed,train_rows,auroc,ci_low,ci_high,note\n";
  for (const auto& r : rows) {
    o << g17(r.fraction) << ',' << r.seed << ',' << r.train_rows << ',';
    if (r.skipped) o << ",,," << r.note << '\n';
    else o << g17(r.auroc) << ',' << g17(r.ci.lo) << ',' << g17(r.ci.hi) << ",\n";
  }
  return o.str();
}

json stamp(const std::string& digest, std::uint64_t seed, json body) {
  body["digest"] = digest;
  body["seed"] = seed;
  body["version"] = kArtifactVersion;
  return body;
}

}  // namespace ctmm::exp
