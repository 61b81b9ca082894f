#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numeric>

#include "ctmm/cohort/generator.hpp"
#include "ctmm/io/container.hpp"
#include "ctmm/rng.hpp"
#include "ctmm/trainer/trainer.hpp"
#include "fixtures.hpp"

using namespace ctmm;
using namespace ctmm::train;

namespace {

std::vector<const PatientRecord*> pointers(const Cohort& c) {
  std::vector<const PatientRecord*> out;
  for (const auto& p : c.patients) out.push_back(&p);
  return out;
}

RunConfig tiny_run(const Cohort& c, std::size_t steps) {
  RunConfig rc;
  rc.model = testfx::tiny_model(c.config);
  rc.objective.e2w_window = 4 * 3600.0;
  rc.trainer.total_steps = steps;
  rc.trainer.warmup_steps = steps / 10;
  rc.trainer.peak_lr = 3e-3;
  rc.trainer.batch_size = 2;
  rc.trainer.checkpoint_every = 5;
  rc.seed = 11;
  return rc;
}

}  // namespace

TEST_CASE("learning rate schedule") {
  LrSchedule s{40, 2000, 1e-4};
  CHECK(lr_at(0, s) == 0.0);
  CHECK(lr_at(40, s) == 1e-4);
  CHECK(lr_at(1020, s) == doctest::Approx(5e-5).epsilon(1e-12));
  CHECK(lr_at(2000, s) == doctest::Approx(0.0).epsilon(1e-20));
  for (std::size_t k = 1; k <= 2000; ++k) {
    CHECK(lr_at(k, s) >= 0.0);
    CHECK(std::abs(lr_at(k, s) - lr_at(k - 1, s)) <= 1e-4 / 40 + 1e-15);
  }
  CHECK_THROWS_AS(lr_at(2001, s), std::invalid_argument);
}

TEST_CASE("gradient clipping") {
  Gradients g{{"a", Tensor::row({0.3, 0.4})}};
  auto r = clip_gradients(g, 1.0);
  CHECK(r.scale == 1.0);
  CHECK(g["a"].raw() == std::vector<double>{0.3, 0.4});
  Gradients two{{"a", Tensor::row({2, 0})}};
  r = clip_gradients(two, 1.0);
  CHECK(r.scale == 0.5);
  CHECK(two["a"].raw() == std::vector<double>{1, 0});

  CounterRng rng(1);
  for (int t = 0; t < 1000; ++t) {
    Gradients x{{"a", Tensor({3, 2})}, {"b", Tensor({1, 5})}};
    for (auto& [n, v] : x)
      for (double& e : v.raw()) e = 3 * rng.normal();
    clip_gradients(x, 1.0);
    double ss = 0;
    for (auto& [n, v] : x)
      for (double e : v.raw()) ss += e * e;
    CHECK(std::sqrt(ss) <= 1.0 + 1e-12);
  }
  Gradients bad{{"a", Tensor::row({NAN, 1})}};
  r = clip_gradients(bad, 1.0);
  CHECK_FALSE(r.finite);
  CHECK_THROWS_AS(clip_gradients(g, 0.0), std::invalid_argument);
}

TEST_CASE("AdamW step") {
  ParameterStore ps;
  ps.add("p", Tensor::row({2.0, -3.0}));
  ps.add("q", Tensor::scalar(0.0));
  auto st = init_optimizer(ps, AdamConfig{});
  optimizer_step(ps, {{"p", Tensor({1, 2})}}, st, 0.5);
  CHECK(ps.get("p").raw() == std::vector<double>{2.0 * (1 - 0.5 * 0.01), -3.0 * (1 - 0.5 * 0.01)});

  ParameterStore one;
  one.add("p", Tensor::scalar(0.0));
  auto s1 = init_optimizer(one, AdamConfig{});
  optimizer_step(one, {{"p", Tensor::scalar(1.0)}}, s1, 0.001);
  // m_hat = 1, v_hat = 1: update = -0.001 / (1 + 1e-8).
  CHECK(one.get("p")[0] == doctest::Approx(-0.001 / (1 + 1e-8)).epsilon(1e-14));

  // Moments of q are untouched by updates to p.
  CHECK(st.m.at("q")[0] == 0.0);
  optimizer_step(ps, {{"q", Tensor::scalar(1.0)}}, st, 0.1);
  CHECK(st.m.at("p").raw() == std::vector<double>{0.0, 0.0});
  CHECK(st.m.at("q")[0] != 0.0);
}

TEST_CASE("patient-day sampler") {
  const auto cohort = cohort::generate_cohort(testfx::tiny_cohort(5));
  const auto recs = pointers(cohort);
  auto s = make_sampler(recs, 10, 3, false);
  CHECK(s.days.size() == 20);
  std::vector<double> hits(s.days.size());
  for (std::size_t step = 0; step < 10000; ++step)
    for (std::size_t i : sample_days(s, step)) hits[i] += 1;
  for (double h : hits) CHECK(h / 1e5 == doctest::Approx(1.0 / 20).epsilon(0.03));

  std::vector<double> f(s.days.size(), 1.0);
  f[7] = 5.0;
  set_factors(s, f);
  std::fill(hits.begin(), hits.end(), 0.0);
  for (std::size_t step = 0; step < 10000; ++step)
    for (std::size_t i : sample_days(s, step)) hits[i] += 1;
  const double others = (1e5 - hits[7]) / 19.0;
  CHECK(hits[7] / others == doctest::Approx(5.0).epsilon(0.1));

  CHECK(sample_days(s, 42) == sample_days(s, 42));
  auto single = make_sampler(recs, 1, 3);
  CHECK(sample_days(single, 0).size() == 1);
  const auto stats = obj::summary_stats(recs, 3600);
  CHECK(make_batch(single, recs, 0, testfx::tiny_model(cohort.config), {}, stats).size() == 1);

  // Rare-code factors stay within [1, cap].
  const auto up = make_sampler(recs, 4, 3, true, 10.0);
  for (double x : up.factor) {
    CHECK(x >= 1.0);
    CHECK(x <= 10.0);
  }
}

TEST_CASE("checkpoint round trip") {
  const auto cohort = cohort::generate_cohort(testfx::tiny_cohort(3));
  const auto recs = pointers(cohort);
  const auto rc = tiny_run(cohort, 6);
  auto ck = train::train(recs, initial_checkpoint(recs, rc), {{}, {}, 3});
  const auto bytes = serialize_checkpoint(ck);
  const auto back = deserialize_checkpoint(bytes);
  CHECK(back.params.bit_equal(ck.params));
  CHECK(back.optimizer.bit_equal(ck.optimizer));
  CHECK(back.step == 3);
  CHECK(back.stats.mean == ck.stats.mean);
  CHECK(serialize_checkpoint(back) == bytes);

  auto trailing = bytes;
  trailing.push_back(0);
  CHECK_THROWS_AS(deserialize_checkpoint(trailing), io::FormatError);
  auto flipped = bytes;
  flipped[flipped.size() / 2] ^= 1;
  CHECK_THROWS_AS(deserialize_checkpoint(flipped), io::FormatError);

  auto other = rc;
  other.trainer.peak_lr = 1e-3;
  CHECK_NOTHROW(require_digest(back, rc));
  CHECK_THROWS_WITH_AS(require_digest(back, other), doctest::Contains(config_digest(other).c_str()), CheckpointError);

  io::Writer w(kCheckpointMagic);
  w.header({{"format", "ctmm-checkpoint"}, {"version", 99}});
  CHECK_THROWS_WITH_AS(deserialize_checkpoint(w.finish()), doctest::Contains("version 99"), CheckpointError);

  const auto dir = std::filesystem::temp_directory_path() / "ctmm_test_ckpt";
  save_checkpoint(ck, (dir / "a.ckpt").string());
  CHECK(load_checkpoint((dir / "a.ckpt").string()).params.bit_equal(ck.params));
  std::filesystem::remove_all(dir);
}

TEST_CASE("training is deterministic and resumable") {
  const auto cohort = cohort::generate_cohort(testfx::tiny_cohort(4));
  const auto recs = pointers(cohort);
  const auto rc = tiny_run(cohort, 10);
  const auto init = initial_checkpoint(recs, rc);

  auto zero = rc;
  zero.trainer.total_steps = 0;
  zero.trainer.warmup_steps = 0;
  const auto z0 = initial_checkpoint(recs, zero);
  CHECK(train::train(recs, z0).params.bit_equal(z0.params));

  std::string log1, log2;
  std::vector<std::vector<std::uint8_t>> ckpts;
  TrainOptions o1;
  o1.on_log = [&](const std::string& l) { log1 += l + "\n"; };
  o1.on_checkpoint = [&](const Checkpoint& c) { ckpts.push_back(serialize_checkpoint(c)); };
  const auto full = train::train(recs, init, o1);
  TrainOptions o2;
  o2.on_log = [&](const std::string& l) { log2 += l + "\n"; };
  const auto again = train::train(recs, init, o2);
  CHECK(log1 == log2);
  CHECK(serialize_checkpoint(full) == serialize_checkpoint(again));
  CHECK(ckpts.size() == 2);
  CHECK(ckpts.back() == serialize_checkpoint(full));
  CHECK(log1.substr(0, log1.find('\n')) == log_header());

  // Interrupt at the first checkpoint, reload from bytes, continue.
  const auto mid = deserialize_checkpoint(ckpts.front());
  CHECK(mid.step == 5);
  std::string tail;
  TrainOptions o3;
  o3.on_log = [&](const std::string& l) { tail += l + "\n"; };
  const auto resumed = train::train(recs, mid, o3);
  CHECK(resumed.params.bit_equal(full.params));
  CHECK(resumed.optimizer.bit_equal(full.optimizer));
  CHECK(serialize_checkpoint(resumed) == serialize_checkpoint(full));
  // The resumed log is the tail of the uninterrupted one.
  CHECK(log1.size() > tail.size());
  CHECK(log1.compare(log1.size() - tail.size(), tail.size(), tail) == 0);
}

TEST_CASE("training reduces the loss") {
  auto cc = testfx::tiny_cohort(20);
  const auto cohort = cohort::generate_cohort(cc);
  const auto recs = pointers(cohort);
  auto rc = tiny_run(cohort, 200);
  rc.trainer.batch_size = 4;
  rc.trainer.checkpoint_every = 200;
  rc.objective.curriculum.enabled = false;
  std::vector<double> totals;
  TrainOptions o;
  o.on_log = [&](const std::string& l) {
    if (l.rfind("step", 0) == 0) return;
    totals.push_back(std::stod(l.substr(l.rfind(',') + 1)));
  };
  train::train(recs, initial_checkpoint(recs, rc), o);
  REQUIRE(totals.size() == 200);
  const double first = std::accumulate(totals.begin(), totals.begin() + 20, 0.0);
  const double last = std::accumulate(totals.end() - 20, totals.end(), 0.0);
  CHECK(last < first);
}

TEST_CASE("cross-modal head learns a separable family rule") {
  // Token family is fixed by the sign of the first latent coordinate, which
  // the wearable observes directly.
  CohortConfig cc;
  cc.patients = 80;
  cc.span_days = 6;
  cc.grid_step_seconds = 900;
  cc.theta = {0.2, 0, 0, 0.2};
  cc.sigma = {0.63, 0.63};
  cc.emission_noise_std = 0.1;
  cc.missing_fraction = 0.05;
  cc.families = {TokenFamily{{12.0, 0.0}, 0.0, 1}, TokenFamily{{-12.0, 0.0}, 0.0, 1}};
  cc.intensity_cap_per_day = 200;
  cc.index_times_days = {3};
  cc.horizons_days = {1};
  cc.seed = 5;
  const auto cohort = cohort::generate_cohort(cc);
  std::vector<const PatientRecord*> train_recs, test_recs;
  for (const auto& p : cohort.patients) (p.id < 60 ? train_recs : test_recs).push_back(&p);

  RunConfig rc = tiny_run(cohort, 150);
  rc.trainer.batch_size = 4;
  rc.trainer.checkpoint_every = 150;
  rc.objective.curriculum.enabled = false;
  rc.objective.weights = obj::LossWeights{0, 0, 0, 1, 0, 0, 0, 0};
  const auto done = train::train(train_recs, initial_checkpoint(train_recs, rc));

  double right = 0, total = 0;
  for (const auto* r : test_recs)
    for (double day : {3.0, 5.0}) {
      const auto s = obj::make_slice(*r, day * 86400.0, rc.model, rc.objective, done.stats);
      std::vector<std::int64_t> targets;
      const auto logits = obj::w2e_logits(done.params, rc.model, rc.objective, s, &targets);
      for (std::size_t i = 0; i < targets.size(); ++i) {
        const auto pred = logits.at(i, 0) > logits.at(i, 1) ? 0 : 1;
        right += pred == targets[i];
        total += 1;
      }
    }
  REQUIRE(total > 100);
  MESSAGE("w2e family accuracy " << right / total << " over " << total);
  CHECK(right / total > 0.9);
}
