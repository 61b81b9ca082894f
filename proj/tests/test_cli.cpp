#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <sstream>

#include <unistd.h>

#include "ctmm/cli/commands.hpp"
#include "ctmm/cohort/io.hpp"
#include "ctmm/eval/stats.hpp"
#include "ctmm/io/container.hpp"
#include "ctmm/trainer/trainer.hpp"
#include "fixtures.hpp"

using namespace ctmm;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run invoke(const std::vector<std::string>& args) {
  std::ostringstream o, e;
  const int code = cli::run(args, o, e);
  return {code, o.str(), e.str()};
}

struct Workspace {
  fs::path dir;
  Workspace() {
    dir = fs::temp_directory_path() / ("ctmm_cli_" + std::to_string(::getpid()));
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Workspace() { fs::remove_all(dir); }
  std::string path(const std::string& name) const { return (dir / name).string(); }
  std::string write_config(const std::string& name, const exp::ExperimentConfig& c) const {
    io::write_text(path(name), exp::experiment_to_json(c).dump(2));
    return path(name);
  }
};

std::string slurp(const std::string& p) { return io::read_text(p); }

std::vector<std::string> lines(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string l;
  while (std::getline(ss, l)) out.push_back(l);
  return out;
}

}  // namespace

TEST_CASE("generate: deterministic file, summary matches a recount, empty cohort warns") {
  Workspace w;
  const auto c = testfx::tiny_experiment(30);
  const auto cfg = w.write_config("exp.json", c);
  const auto r1 = invoke({"generate", "--config", cfg, "--out", w.path("a.bin")});
  REQUIRE(r1.code == 0);
  const auto r2 = invoke({"generate", "--config", cfg, "--out", w.path("b.bin")});
  REQUIRE(r2.code == 0);
  CHECK(io::read_file(w.path("a.bin")) == io::read_file(w.path("b.bin")));

  const auto cohort = cohort::load_cohort(w.path("a.bin"));
  CHECK(cohort.patients.size() == 30);
  std::size_t pos = 0, rows = 0;
  for (const auto& p : cohort.patients)
    for (const auto& il : p.labels.at_index) {
      ++rows;
      pos += il.binary[1];
    }
  char expect[64];
  std::snprintf(expect, sizeof expect, "next_event_1d,%.17g,%zu,30,", 100.0 * pos / rows, rows);
  CHECK(r1.out.find(expect) != std::string::npos);
  CHECK(r1.out.find("task,positive_pct,rows,patients,median_followup_days,horizon_days") != std::string::npos);

  auto empty = c;
  empty.cohort.patients = 0;
  const auto r3 = invoke({"generate", "--config", w.write_config("empty.json", empty), "--out", w.path("e.bin")});
  CHECK(r3.code == 0);
  CHECK(r3.err.find("warning") != std::string::npos);
  CHECK(cohort::load_cohort(w.path("e.bin")).patients.empty());
}

TEST_CASE("exit codes: config errors, I/O errors, usage errors") {
  Workspace w;
  const auto c = testfx::tiny_experiment(10);
  auto j = exp::experiment_to_json(c);
  j["trainer"]["learning_rate"] = 1;
  io::write_text(w.path("bad.json"), j.dump());
  auto r = invoke({"generate", "--config", w.path("bad.json"), "--out", w.path("x.bin")});
  CHECK(r.code == cli::kConfigError);
  CHECK(r.err.find("trainer.learning_rate") != std::string::npos);

  io::write_text(w.path("broken.json"), "{");
  CHECK(invoke({"generate", "--config", w.path("broken.json")}).code == cli::kConfigError);
  CHECK(invoke({"generate", "--config", w.path("missing.json")}).code == cli::kIoError);
  CHECK(invoke({"frobnicate"}).code == cli::kConfigError);
  CHECK(invoke({}).code == cli::kConfigError);
  CHECK(invoke({"--help"}).code == cli::kOk);

  const auto cfg = w.write_config("exp.json", c);
  CHECK(invoke({"pretrain", "--config", cfg, "--cohort", w.path("nope.bin"), "--out", w.path("p")}).code ==
        cli::kIoError);
  io::write_text(w.path("junk.bin"), "not a cohort");
  CHECK(invoke({"pretrain", "--config", cfg, "--cohort", w.path("junk.bin"), "--out", w.path("p")}).code ==
        cli::kIoError);

  // A cohort generated from another config is a config error.
  auto other = c;
  other.cohort.seed = 99;
  REQUIRE(invoke({"generate", "--config", w.write_config("other.json", other), "--out", w.path("o.bin")}).code == 0);
  r = invoke({"pretrain", "--config", cfg, "--cohort", w.path("o.bin"), "--out", w.path("p")});
  CHECK(r.code == cli::kConfigError);
  CHECK(r.err.find("different cohort config") != std::string::npos);
  CHECK(invoke({"pretrain", "--config", cfg, "--cohort", w.path("o.bin"), "--variants", "bogus"}).code ==
        cli::kConfigError);
}

TEST_CASE("pretrain: zero steps, reruns, ablation lambdas, resume, numerical abort") {
  Workspace w;
  auto c = testfx::tiny_experiment(20);
  const auto cfg = w.write_config("exp.json", c);
  REQUIRE(invoke({"generate", "--config", cfg, "--out", w.path("c.bin")}).code == 0);
  const auto cohort = cohort::load_cohort(w.path("c.bin"));

  SUBCASE("steps=0 gives the initial checkpoint") {
    auto z = c;
    z.trainer.total_steps = 0;
    z.trainer.warmup_steps = 0;
    const auto zc = w.write_config("zero.json", z);
    REQUIRE(invoke({"pretrain", "--config", zc, "--cohort", w.path("c.bin"), "--out", w.path("z"), "--seed", "4"}).code ==
            0);
    const auto ck = train::load_checkpoint(w.path("z/checkpoint.ckpt"));
    const auto init = train::initial_checkpoint(exp::split_cohort(cohort).train, exp::variant_config(z, "full", 4));
    CHECK(train::serialize_checkpoint(ck) == train::serialize_checkpoint(init));
  }

  SUBCASE("reruns are byte-identical and carry provenance") {
    const std::vector<std::string> base = {"pretrain", "--config", cfg, "--cohort", w.path("c.bin"), "--seed", "2"};
    auto a = base, b = base;
    a.insert(a.end(), {"--out", w.path("r1")});
    b.insert(b.end(), {"--out", w.path("r2")});
    REQUIRE(invoke(a).code == 0);
    REQUIRE(invoke(b).code == 0);
    const auto log = slurp(w.path("r1/train_log.csv"));
    CHECK(log == slurp(w.path("r2/train_log.csv")));
    CHECK(io::read_file(w.path("r1/checkpoint.ckpt")) == io::read_file(w.path("r2/checkpoint.ckpt")));
    CHECK(log.rfind("# digest=" + exp::experiment_digest(c) + " seed=2 version=" + exp::kArtifactVersion, 0) == 0);
    CHECK(fs::exists(w.path("r1/checkpoint_step3.ckpt")));
    CHECK(fs::exists(w.path("r1/checkpoint_step6.ckpt")));

    // Resuming from the intermediate checkpoint reproduces the final one.
    auto r = base;
    r.insert(r.end(), {"--checkpoint", w.path("r1/checkpoint_step3.ckpt"), "--out", w.path("r3")});
    REQUIRE(invoke(r).code == 0);
    CHECK(io::read_file(w.path("r3/checkpoint.ckpt")) == io::read_file(w.path("r1/checkpoint.ckpt")));
    const auto full = lines(log), tail = lines(slurp(w.path("r3/train_log.csv")));
    REQUIRE(tail.size() == 1 + 3);
    for (std::size_t i = 1; i < tail.size(); ++i) CHECK(tail[i] == full[full.size() - 4 + i]);

    // A checkpoint from another seed does not resume.
    auto m = r;
    m[6] = "3";
    CHECK(invoke(m).code == cli::kConfigError);
  }

  SUBCASE("disable_both_cross zeroes both cross weights at every step") {
    REQUIRE(invoke({"pretrain", "--config", cfg, "--cohort", w.path("c.bin"), "--variants", "disable_both_cross", "--out",
                 w.path("nc")})
                .code == 0);
    const auto ls = lines(slurp(w.path("nc/train_log.csv")));
    REQUIRE(ls.size() == 2 + c.trainer.total_steps);
    CHECK(ls[1] == train::log_header());
    for (std::size_t i = 2; i < ls.size(); ++i) {
      std::vector<std::string> cols;
      std::stringstream ss(ls[i]);
      std::string f;
      while (std::getline(ss, f, ',')) cols.push_back(f);
      REQUIRE(cols.size() == 21);
      CHECK(cols[15] == "0");
      CHECK(cols[16] == "0");
    }
  }

  SUBCASE("a diverging run exits with the numerical-abort code") {
    auto d = c;
    d.trainer.peak_lr = 1e300;
    d.trainer.clip_norm = 1e300;
    d.trainer.adam.weight_decay = 0;
    const auto r =
        invoke({"pretrain", "--config", w.write_config("div.json", d), "--cohort", w.path("c.bin"), "--out", w.path("d")});
    CHECK(r.code == cli::kNumericalAbort);
    CHECK(fs::exists(w.path("d/checkpoint_last_good.ckpt")));
  }
}

TEST_CASE("ablate, probe, robustness, fractions and report") {
  Workspace w;
  auto c = testfx::tiny_experiment(60);
  c.trainer.total_steps = 3;
  c.trainer.checkpoint_every = 3;
  const auto cfg = w.write_config("exp.json", c);
  REQUIRE(invoke({"generate", "--config", cfg, "--out", w.path("c.bin")}).code == 0);
  const std::string digest = exp::experiment_digest(c);

  auto r = invoke({"ablate", "--config", cfg, "--cohort", w.path("c.bin"), "--variants", "full", "--out", w.path("a1")});
  REQUIRE(r.code == 0);
  auto csv = lines(slurp(w.path("a1/ablation.csv")));
  REQUIRE(csv.size() == 3);  // provenance, header, one row
  CHECK(csv[2].rfind("full,1,", 0) == 0);

  r = invoke({"ablate", "--config", cfg, "--cohort", w.path("c.bin"), "--variants", "disable_both_cross,disable_w2e",
           "--out", w.path("a2")});
  REQUIRE(r.code == 0);
  const auto aj = json::parse(slurp(w.path("a2/ablation.json")));
  CHECK(aj["digest"] == digest);
  CHECK(aj["version"] == exp::kArtifactVersion);
  REQUIRE(aj["rows"].size() == 3);
  CHECK(aj["rows"][0]["variant"] == "full");
  for (const auto& row : aj["rows"])
    CHECK(row["delta"].get<double>() == row["auroc"].get<double>() - aj["rows"][0]["auroc"].get<double>());
  CHECK(fs::exists(w.path("a2/disable_w2e/seed1/checkpoint.ckpt")));
  const auto ck = w.path("a2/full/seed1/checkpoint.ckpt");

  SUBCASE("probe output is byte-identical across invocations and includes baselines") {
    REQUIRE(invoke({"probe", "--config", cfg, "--cohort", w.path("c.bin"), "--checkpoint", ck, "--out", w.path("p1")})
                .code == 0);
    REQUIRE(invoke({"probe", "--config", cfg, "--cohort", w.path("c.bin"), "--checkpoint", ck, "--out", w.path("p2")})
                .code == 0);
    const auto a = slurp(w.path("p1/probe.json"));
    CHECK(a == slurp(w.path("p2/probe.json")));
    const auto j = json::parse(a);
    CHECK(j["digest"] == digest);
    CHECK(j["seed"] == 1);
    bool baseline = false;
    for (const auto& rep : j["reports"]) baseline |= rep["name"].get<std::string>().rfind("baseline_auroc", 0) == 0;
    CHECK(baseline);
  }

  SUBCASE("robustness rows") {
    REQUIRE(invoke({"robustness", "--config", cfg, "--cohort", w.path("c.bin"), "--checkpoint", ck, "--scenarios", "",
                 "--out", w.path("r0")})
                .code == 0);
    auto ls = lines(slurp(w.path("r0/robustness.csv")));
    REQUIRE(ls.size() == 2);
    CHECK(ls[1] == "scenario,auroc,ci_low,ci_high,delta,delta_ci_low,delta_ci_high,p");

    REQUIRE(invoke({"robustness", "--config", cfg, "--cohort", w.path("c.bin"), "--checkpoint", ck, "--scenarios",
                 "identity,snr_minus_6db,drop_wearable", "--out", w.path("r1")})
                .code == 0);
    ls = lines(slurp(w.path("r1/robustness.csv")));
    REQUIRE(ls.size() == 5);
    CHECK(ls[2].rfind("identity,", 0) == 0);
    CHECK(ls[2].find(",0,0,0,1") != std::string::npos);
    CHECK(ls[3].rfind("snr_minus_6db,", 0) == 0);
    CHECK(invoke({"robustness", "--config", cfg, "--cohort", w.path("c.bin"), "--checkpoint", ck, "--scenarios",
               "sunspots"})
              .code == cli::kConfigError);
  }

  SUBCASE("fractions") {
    REQUIRE(invoke({"fractions", "--config", cfg, "--cohort", w.path("c.bin"), "--checkpoint", ck, "--out", w.path("f")})
                .code == 0);
    const auto ls = lines(slurp(w.path("f/fractions.csv")));
    REQUIRE(ls.size() == 4);
    CHECK(ls[1] == "fraction,seed,train_rows,auroc,ci_low,ci_high,note");
  }

  SUBCASE("report merges, adjusts and rejects conflicting digests") {
    auto write_result = [&](const std::string& name, const std::string& dg, const std::vector<double>& ps) {
      json reps = json::array();
      for (std::size_t i = 0; i < ps.size(); ++i) {
        eval::MetricReport m;
        m.name = name + "_" + std::to_string(i);
        m.p_raw = ps[i];
        reps.push_back(eval::report_to_json(m));
      }
      fs::create_directories(w.path("res_" + name));
      io::write_text(w.path("res_" + name + "/" + name + ".json"),
                     exp::stamp(dg, 1, {{"command", "test"}, {"reports", reps}}).dump());
      return w.path("res_" + name + "/" + name + ".json");
    };
    const auto one = write_result("one", digest, {0.03});
    REQUIRE(invoke({"report", one, "--out", w.path("rep1")}).code == 0);
    auto j = json::parse(slurp(w.path("rep1/report.json")));
    REQUIRE(j["reports"].size() == 1);
    CHECK(j["reports"][0]["p_adjusted"] == j["reports"][0]["p_raw"]);

    const auto twin = write_result("twin", digest, {0.02, 0.02});
    REQUIRE(invoke({"report", twin, "--out", w.path("rep2")}).code == 0);
    j = json::parse(slurp(w.path("rep2/report.json")));
    CHECK(j["reports"][0]["p_adjusted"] == j["reports"][1]["p_adjusted"]);

    const std::vector<double> ps = {0.01, 0.04, 0.03, 0.20};
    const auto four = write_result("four", digest, ps);
    REQUIRE(invoke({"report", four, "--out", w.path("rep3")}).code == 0);
    j = json::parse(slurp(w.path("rep3/report.json")));
    const auto bh = eval::bh_fdr(ps, 0.05);
    for (std::size_t i = 0; i < 4; ++i) CHECK(j["reports"][i]["p_adjusted"].get<double>() == bh.adjusted[i]);
    CHECK(j["digest"] == digest);

    // Directories are scanned; results from the real commands merge too.
    REQUIRE(invoke({"report", w.path("a2"), w.path("res_four"), "--out", w.path("rep4")}).code == 0);
    j = json::parse(slurp(w.path("rep4/report.json")));
    CHECK(j["sources"].size() == 2);

    const auto alien = write_result("alien", "ffffffffffffffff", {0.5});
    r = invoke({"report", one, alien, "--out", w.path("rep5")});
    CHECK(r.code == cli::kConfigError);
    CHECK(r.err.find("conflicts") != std::string::npos);
    CHECK(invoke({"report", w.path("nothing_here")}).code == cli::kIoError);
  }
}

TEST_CASE("default output root comes from the environment") {
  Workspace w;
  const auto cfg = w.write_config("exp.json", testfx::tiny_experiment(5));
  ::setenv(cli::kOutRootEnv, w.path("root").c_str(), 1);
  const auto r = invoke({"generate", "--config", cfg});
  ::unsetenv(cli::kOutRootEnv);
  CHECK(r.code == 0);
  CHECK(fs::exists(w.path("root/cohort.bin")));
}
