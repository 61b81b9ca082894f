#include "ctmm/cli/commands.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "ctmm/cohort/generator.hpp"
#include "ctmm/cohort/io.hpp"
#include "ctmm/eval/harness.hpp"
#include "ctmm/experiment/experiment.hpp"
#include "ctmm/io/container.hpp"
#include "ctmm/io/strict_json.hpp"
#include "ctmm/rng.hpp"
#include "ctmm/trainer/trainer.hpp"

namespace ctmm::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string g17(double v) {
  char b[32];
  std::snprintf(b, sizeof b, "%.17g", v);
  return b;
}

std::string hex64(std::uint64_t v) {
  char b[17];
  std::snprintf(b, sizeof b, "%016llx", static_cast<unsigned long long>(v));
  return b;
}

fs::path out_root() {
  const char* env = std::getenv(kOutRootEnv);
  return env && *env ? fs::path(env) : fs::path("results");
}

fs::path out_dir(const CommonArgs& a, const std::string& fallback) {
  const fs::path p = a.out.empty() ? out_root() / fallback : fs::path(a.out);
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw io::IoError(p.string() + ": cannot create directory: " + ec.message());
  return p;
}

std::string provenance_line(const std::string& digest, std::uint64_t seed) {
  return "# digest=" + digest + " seed=" + std::to_string(seed) + " version=" + exp::kArtifactVersion + "\n";
}

void require(const std::string& value, const std::string& flag) {
  if (value.empty()) throw io::ConfigError(flag + ": required");
}

exp::ExperimentConfig load_config(const CommonArgs& a) {
  require(a.config, "--config");
  return exp::load_experiment(a.config);
}

Cohort load_matching_cohort(const CommonArgs& a, const exp::ExperimentConfig& c) {
  require(a.cohort, "--cohort");
  auto cohort = cohort::load_cohort(a.cohort);
  if (!(cohort.config == c.cohort))
    throw io::ConfigError("--cohort: " + a.cohort + " was generated from a different cohort config than " + a.config);
  return cohort;
}

train::Checkpoint load_matching_checkpoint(const CommonArgs& a, const exp::ExperimentConfig& c) {
  require(a.checkpoint, "--checkpoint");
  train::Checkpoint ck;
  try {
    ck = train::load_checkpoint(a.checkpoint);
  } catch (const train::CheckpointError& e) {
    throw io::FormatError(a.checkpoint + ": " + e.what());
  }
  const auto& m = ck.config.model;
  if (m.vocab != c.model.vocab || m.channels != c.model.channels || m.sample_step != c.model.sample_step)
    throw io::ConfigError("--checkpoint: model inputs do not match the cohort in " + a.config);
  return ck;
}

std::vector<std::uint64_t> seeds_of(const CommonArgs& a, const exp::ExperimentConfig& c) {
  return a.seed ? std::vector<std::uint64_t>{*a.seed} : c.evaluation.seeds;
}

// Trains one variant into `dir`: intermediate and final checkpoints plus the
// CSV log with a provenance line.
train::Checkpoint pretrain_into(const fs::path& dir, const Cohort& cohort, const exp::ExperimentConfig& c,
                                const std::string& variant, std::uint64_t seed, const std::string& digest,
                                const std::optional<train::Checkpoint>& resume, std::ostream& err) {
  fs::create_directories(dir);
  std::string log = provenance_line(digest, seed);
  train::TrainOptions o;
  o.on_log = [&](const std::string& line) { log += line + "\n"; };
  o.on_checkpoint = [&](const train::Checkpoint& ck) {
    train::save_checkpoint(ck, (dir / ("checkpoint_step" + std::to_string(ck.step) + ".ckpt")).string());
  };
  train::Checkpoint out;
  try {
    if (resume) {
      const auto splits = exp::split_cohort(cohort);
      out = train::train(splits.train, *resume, o);
    } else {
      out = exp::pretrain(cohort, c, variant, seed, o);
    }
  } catch (const train::NonFiniteLossError& e) {
    train::save_checkpoint(e.last_good, (dir / "checkpoint_last_good.ckpt").string());
    io::write_text((dir / "train_log.csv").string(), log);
    err << "error: " << e.what() << "\n";
    throw;
  }
  train::save_checkpoint(out, (dir / "checkpoint.ckpt").string());
  io::write_text((dir / "train_log.csv").string(), log);
  if (out.rejected_steps) err << "warning: " << out.rejected_steps << " steps skipped for non-finite gradients\n";
  return out;
}

void write_json(const fs::path& p, const json& j) { io::write_text(p.string(), j.dump(2) + "\n"); }

json reports_json(const std::vector<eval::MetricReport>& rs) {
  json a = json::array();
  for (const auto& r : rs) a.push_back(eval::report_to_json(r));
  return a;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, ','))
    if (!part.empty()) out.push_back(part);
  return out;
}

}  // namespace

std::string cohort_summary(const Cohort& c) {
  std::size_t events = 0, samples = 0, observed = 0;
  for (const auto& p : c.patients) {
    events += p.ehr.events.size();
    samples += p.wearable.size();
    observed += static_cast<std::size_t>(std::count(p.wearable.mask.begin(), p.wearable.mask.end(), 1));
  }
  const double n = static_cast<double>(c.patients.size());
  std::ostringstream o;
  o << "patients," << c.patients.size() << "\n";
  o << "ehr_events," << events << "\n";
  o << "events_per_patient," << g17(n > 0 ? static_cast<double>(events) / n : 0.0) << "\n";
  o << "wearable_coverage," << g17(samples ? static_cast<double>(observed) / static_cast<double>(samples) : 0.0)
    << "\n";
  o << "\ntask,positive_pct,rows,patients,median_followup_days,horizon_days\n";
  std::vector<double> follow;
  for (const auto& p : c.patients)
    for (const auto& il : p.labels.at_index) follow.push_back(il.survival_time / kSecondsPerDay);
  std::sort(follow.begin(), follow.end());
  const double median = follow.empty() ? 0.0 : eval::quantile_sorted(follow, 0.5);
  for (std::size_t h = 0; h < c.config.horizons_days.size(); ++h) {
    std::size_t pos = 0, rows = 0;
    for (const auto& p : c.patients)
      for (const auto& il : p.labels.at_index) {
        ++rows;
        pos += il.binary.at(h) ? 1 : 0;
      }
    const double pct = rows ? 100.0 * static_cast<double>(pos) / static_cast<double>(rows) : 0.0;
    o << "next_event_" << g17(c.config.horizons_days[h]) << "d," << g17(pct) << ',' << rows << ','
      << c.patients.size() << ',' << g17(median) << ',' << g17(c.config.horizons_days[h]) << "\n";
  }
  return o.str();
}

void cmd_generate(const CommonArgs& a, std::ostream& out, std::ostream& err) {
  const auto c = load_config(a);
  const fs::path path = a.out.empty() ? out_root() / "cohort.bin" : fs::path(a.out);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const auto cohort = cohort::generate_cohort(c.cohort);
  if (cohort.patients.empty()) err << "warning: cohort has 0 patients\n";
  const auto bytes = cohort::serialize_cohort(cohort);
  io::write_file(path.string(), bytes);
  out << "file," << path.string() << "\n";
  out << "file_digest," << hex64(io::fnv1a(bytes.data(), bytes.size())) << "\n";
  out << "seed," << c.cohort.seed << "\n";
  out << cohort_summary(cohort);
}

void cmd_pretrain(const CommonArgs& a, std::ostream& out, std::ostream& err) {
  const auto c = load_config(a);
  const auto cohort = load_matching_cohort(a, c);
  if (a.variants.size() > 1) throw io::ConfigError("--variants: pretrain takes a single variant");
  const std::string variant = a.variants.empty() ? "full" : a.variants[0];
  const std::uint64_t seed = a.seed.value_or(c.evaluation.seeds.front());
  train::RunConfig rc;
  try {
    rc = exp::variant_config(c, variant, seed);
  } catch (const std::invalid_argument& e) {
    throw io::ConfigError(std::string("--variants: ") + e.what());
  }
  std::optional<train::Checkpoint> resume;
  if (!a.checkpoint.empty()) {
    resume = load_matching_checkpoint(a, c);
    try {
      train::require_digest(*resume, rc);
    } catch (const train::CheckpointError& e) {
      throw io::ConfigError(std::string("--checkpoint: ") + e.what());
    }
  }
  const auto dir = out_dir(a, "pretrain");
  const auto ck = pretrain_into(dir, cohort, c, variant, seed, exp::experiment_digest(c), resume, err);
  out << "checkpoint," << (dir / "checkpoint.ckpt").string() << "\n";
  out << "steps," << ck.step << "\n";
  out << "config_digest," << ck.digest << "\n";
}

void cmd_ablate(const CommonArgs& a, std::ostream& out, std::ostream& err) {
  const auto c = load_config(a);
  const auto cohort = load_matching_cohort(a, c);
  auto variants = a.variants.empty() ? c.evaluation.variants : a.variants;
  if (variants.empty()) throw io::ConfigError("--variants: must not be empty");
  // Deltas are reported against the full model, so it always trains first.
  variants.erase(std::remove(variants.begin(), variants.end(), "full"), variants.end());
  variants.insert(variants.begin(), "full");
  for (const auto& v : variants) {
    try {
      exp::variant_config(c, v, 0);
    } catch (const std::invalid_argument& e) {
      throw io::ConfigError(std::string("--variants: ") + e.what());
    }
  }
  const auto seeds = seeds_of(a, c);
  const auto digest = exp::experiment_digest(c);
  const auto dir = out_dir(a, "ablate");
  const auto splits = exp::split_cohort(cohort);
  std::vector<std::vector<eval::PredictionSet>> preds(variants.size());
  for (std::size_t v = 0; v < variants.size(); ++v)
    for (auto seed : seeds) {
      const auto ck = pretrain_into(dir / variants[v] / ("seed" + std::to_string(seed)), cohort, c, variants[v], seed,
                                    digest, std::nullopt, err);
      preds[v].push_back(exp::probe_test_predictions(ck.params, ck.config.model, splits, c.cohort,
                                                     c.evaluation.horizon, c.evaluation.probe_l2));
      out << "trained," << variants[v] << ',' << seed << "\n";
    }
  const std::uint64_t boot_seed = seeds.front();
  auto rows = exp::ablation_table(variants, seeds, preds, c.evaluation.resamples, boot_seed);
  if (seeds.size() == 1)
    rows.erase(std::remove_if(rows.begin(), rows.end(), [](const auto& r) { return r.seed == "mean"; }), rows.end());
  io::write_text((dir / "ablation.csv").string(), provenance_line(digest, boot_seed) + exp::ablation_csv(rows));

  std::vector<eval::MetricReport> reports;
  for (std::size_t v = 0; v < variants.size(); ++v) {
    eval::MetricReport m;
    m.name = "ablation_auroc_" + variants[v];
    const auto& row = *std::find_if(rows.begin(), rows.end(), [&](const auto& r) {
      return r.variant == variants[v] && (seeds.size() == 1 || r.seed == "mean");
    });
    m.estimate = row.auroc;
    m.ci_low = row.ci_low;
    m.ci_high = row.ci_high;
    m.resamples = c.evaluation.resamples;
    reports.push_back(m);
    if (v == 0) continue;
    // Same stream as the table's mean row.
    const auto pr = exp::paired_mean_auroc(preds[v], preds[0], c.evaluation.resamples,
                                           CounterRng::derive(boot_seed, {v, 0xA11}));
    eval::MetricReport d;
    d.name = "ablation_delta_" + variants[v] + "_vs_full";
    d.estimate = pr.delta;
    d.ci_low = pr.lo;
    d.ci_high = pr.hi;
    d.resamples = pr.resamples;
    d.redraws = pr.redraws;
    d.p_raw = pr.p;
    reports.push_back(d);
  }
  json rows_json = json::array();
  for (const auto& r : rows)
    rows_json.push_back({{"variant", r.variant}, {"seed", r.seed},       {"auroc", r.auroc}, {"ci_low", r.ci_low},
                         {"ci_high", r.ci_high}, {"delta", r.delta}, {"p", r.p}});
  write_json(dir / "ablation.json",
             exp::stamp(digest, boot_seed, {{"command", "ablate"}, {"rows", rows_json}, {"reports", reports_json(reports)}}));
  out << exp::ablation_csv(rows);
}

void cmd_probe(const CommonArgs& a, std::ostream& out, std::ostream&) {
  const auto c = load_config(a);
  const auto cohort = load_matching_cohort(a, c);
  const auto ck = load_matching_checkpoint(a, c);
  const std::uint64_t seed = a.seed.value_or(ck.config.seed);
  const auto res = exp::probe_reports(ck.params, ck.config.model, cohort, c.evaluation, seed);
  const auto dir = out_dir(a, "probe");
  write_json(dir / "probe.json", exp::stamp(exp::experiment_digest(c), seed,
                                            {{"command", "probe"},
                                             {"checkpoint_digest", ck.digest},
                                             {"checkpoint_step", ck.step},
                                             {"reports", reports_json(res.reports)},
                                             {"skipped", res.skipped}}));
  out << eval::reports_to_csv(res.reports);
}

void cmd_robustness(const CommonArgs& a, std::ostream& out, std::ostream&) {
  const auto c = load_config(a);
  const auto cohort = load_matching_cohort(a, c);
  const auto ck = load_matching_checkpoint(a, c);
  const std::uint64_t seed = a.seed.value_or(ck.config.seed);
  std::vector<eval::Scenario> scenarios;
  for (const auto& s : a.scenarios ? *a.scenarios : c.evaluation.scenarios) {
    try {
      scenarios.push_back(eval::scenario_from_name(s));
    } catch (const std::invalid_argument&) {
      throw io::ConfigError("--scenarios: unknown scenario '" + s + "'");
    }
  }
  std::vector<eval::ScenarioResult> rows;
  if (!scenarios.empty()) {
    const auto splits = exp::split_cohort(cohort);
    eval::ProbeOptions o;
    o.l2 = c.evaluation.probe_l2;
    rows = eval::robustness_sweep(ck.params, ck.config.model, splits.train, splits.test, exp::index_times(c.cohort),
                                  c.evaluation.horizon, scenarios, c.evaluation.resamples, seed, o);
  }
  std::vector<eval::MetricReport> reports;
  for (const auto& r : rows) {
    const auto name = eval::scenario_name(r.scenario);
    reports.push_back(eval::make_report("robustness_auroc_" + name, r.ci));
    if (r.scenario == eval::Scenario::identity) continue;
    eval::MetricReport d;
    d.name = "robustness_delta_" + name + "_vs_identity";
    d.estimate = r.vs_identity.delta;
    d.ci_low = r.vs_identity.lo;
    d.ci_high = r.vs_identity.hi;
    d.resamples = r.vs_identity.resamples;
    d.redraws = r.vs_identity.redraws;
    d.p_raw = r.vs_identity.p;
    reports.push_back(d);
  }
  const auto digest = exp::experiment_digest(c);
  const auto dir = out_dir(a, "robustness");
  io::write_text((dir / "robustness.csv").string(), provenance_line(digest, seed) + exp::robustness_csv(rows));
  write_json(dir / "robustness.json",
             exp::stamp(digest, seed,
                        {{"command", "robustness"}, {"checkpoint_digest", ck.digest}, {"reports", reports_json(reports)}}));
  out << exp::robustness_csv(rows);
}

void cmd_fractions(const CommonArgs& a, std::ostream& out, std::ostream&) {
  const auto c = load_config(a);
  const auto cohort = load_matching_cohort(a, c);
  const auto ck = load_matching_checkpoint(a, c);
  const std::uint64_t seed = a.seed.value_or(ck.config.seed);
  const auto splits = exp::split_cohort(cohort);
  const auto times = exp::index_times(c.cohort);
  const auto tr = eval::extract_frozen(ck.params, ck.config.model, splits.train, times);
  const auto te = eval::extract_frozen(ck.params, ck.config.model, splits.test, times);
  eval::ProbeOptions o;
  o.l2 = c.evaluation.probe_l2;
  const auto rows = eval::label_fraction_sweep(
      tr, eval::binary_labels(splits.train, tr, c.evaluation.horizon), te,
      eval::binary_labels(splits.test, te, c.evaluation.horizon), c.evaluation.fractions, seeds_of(a, c),
      c.evaluation.resamples, seed, o);
  std::vector<eval::MetricReport> reports;
  for (const auto& r : rows) {
    if (r.skipped) continue;
    auto m = eval::make_report("fraction_auroc_" + g17(r.fraction) + "_seed" + std::to_string(r.seed), r.ci);
    reports.push_back(m);
  }
  const auto digest = exp::experiment_digest(c);
  const auto dir = out_dir(a, "fractions");
  io::write_text((dir / "fractions.csv").string(), provenance_line(digest, seed) + exp::fractions_csv(rows));
  write_json(dir / "fractions.json",
             exp::stamp(digest, seed,
                        {{"command", "fractions"}, {"checkpoint_digest", ck.digest}, {"reports", reports_json(reports)}}));
  out << exp::fractions_csv(rows);
}

void cmd_report(const CommonArgs& a, const std::vector<std::string>& inputs, std::ostream& out, std::ostream&) {
  std::vector<fs::path> files;
  for (const auto& in : inputs) {
    const fs::path p(in);
    if (fs::is_directory(p)) {
      for (const auto& e : fs::recursive_directory_iterator(p))
        if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
    } else if (fs::is_regular_file(p)) {
      files.push_back(p);
    } else {
      throw io::IoError(in + ": no such file or directory");
    }
  }
  std::sort(files.begin(), files.end());
  std::vector<eval::MetricReport> reports;
  std::optional<std::string> digest;
  std::optional<std::uint64_t> seed;
  json sources = json::array();
  for (const auto& f : files) {
    json j;
    try {
      j = json::parse(io::read_text(f.string()));
    } catch (const json::parse_error& e) {
      throw io::FormatError(f.string() + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("reports") || !j.contains("digest")) continue;
    if (j.value("command", "") == "report") continue;
    const auto d = j.at("digest").get<std::string>();
    if (digest && *digest != d)
      throw io::ConfigError(f.string() + ": config digest " + d + " conflicts with " + *digest);
    digest = d;
    if (!seed) seed = j.at("seed").get<std::uint64_t>();
    for (const auto& r : j.at("reports")) reports.push_back(eval::report_from_json(r));
    sources.push_back(f.filename().string());
  }
  if (!digest) throw io::ConfigError("report: no result files among the inputs");
  eval::adjust_reports(reports);
  const auto dir = out_dir(a, "report");
  write_json(dir / "report.json",
             exp::stamp(*digest, *seed, {{"command", "report"}, {"sources", sources}, {"reports", reports_json(reports)}}));
  io::write_text((dir / "report.csv").string(), provenance_line(*digest, *seed) + eval::reports_to_csv(reports));
  out << eval::reports_to_csv(reports);
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Continuous-time multimodal pretraining experiments", "ctmm"};
  app.require_subcommand(1);
  CommonArgs a;
  std::uint64_t seed = 0;
  std::string variants, scenarios;
  std::vector<std::string> inputs;

  auto add_common = [&](CLI::App* s, bool cohort, bool checkpoint) {
    s->add_option("--config", a.config, "experiment config (JSON)");
    if (cohort) s->add_option("--cohort", a.cohort, "cohort file");
    if (checkpoint) s->add_option("--checkpoint", a.checkpoint, "model checkpoint");
    s->add_option("--out", a.out, std::string("output path (default under $") + kOutRootEnv + ")");
    s->add_option("--seed", seed, "seed override");
  };
  auto* gen = app.add_subcommand("generate", "simulate a cohort and print its summary");
  add_common(gen, false, false);
  auto* pre = app.add_subcommand("pretrain", "pretrain one variant (resumes from --checkpoint)");
  add_common(pre, true, true);
  pre->add_option("--variants", variants, "variant name");
  auto* abl = app.add_subcommand("ablate", "train and probe each variant over the configured seeds");
  add_common(abl, true, false);
  abl->add_option("--variants", variants, "comma-separated variants");
  auto* pro = app.add_subcommand("probe", "frozen-probe metrics on the test split");
  add_common(pro, true, true);
  auto* rob = app.add_subcommand("robustness", "probe under modality dropout and noise");
  add_common(rob, true, true);
  auto* sc_opt = rob->add_option("--scenarios", scenarios, "comma-separated scenarios");
  auto* fra = app.add_subcommand("fractions", "probe with subsampled training labels");
  add_common(fra, true, true);
  auto* rep = app.add_subcommand("report", "merge result files and apply FDR correction");
  rep->add_option("inputs", inputs, "result files or directories")->required();
  rep->add_option("--out", a.out, "output directory");

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kConfigError;
  }
  for (auto* s : app.get_subcommands())
    if (const auto* o = s->get_option_no_throw("--seed"); o && o->count()) a.seed = seed;
  a.variants = split_list(variants);
  if (sc_opt->count()) a.scenarios = split_list(scenarios);

  try {
    if (gen->parsed()) cmd_generate(a, out, err);
    else if (pre->parsed()) cmd_pretrain(a, out, err);
    else if (abl->parsed()) cmd_ablate(a, out, err);
    else if (pro->parsed()) cmd_probe(a, out, err);
    else if (rob->parsed()) cmd_robustness(a, out, err);
    else if (fra->parsed()) cmd_fractions(a, out, err);
    else if (rep->parsed()) cmd_report(a, inputs, out, err);
  } catch (const train::NonFiniteLossError& e) {
    err << "numerical abort: " << e.what() << "\n";
    return kNumericalAbort;
  } catch (const io::ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const io::IoError& e) {
    err << "i/o error: " << e.what() << "\n";
    return kIoError;
  } catch (const io::FormatError& e) {
    err << "i/o error: " << e.what() << "\n";
    return kIoError;
  } catch (const fs::filesystem_error& e) {
    err << "i/o error: " << e.what() << "\n";
    return kIoError;
  } catch (const std::invalid_argument& e) {
    err << "config error: " << e.what() << "\n";
    return kConfigError;
  }
  return kOk;
}

}  // namespace ctmm::cli
