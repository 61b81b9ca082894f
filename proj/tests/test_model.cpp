#include <doctest.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <numbers>

#include "ctmm/cohort/generator.hpp"
#include "ctmm/model/model.hpp"
#include "ctmm/numerics/gradcheck.hpp"

using namespace ctmm;
using namespace ctmm::model;
using num::Tensor;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.vocab = 5;
  c.channels = 2;
  c.window_samples = 4;
  c.sample_step = 900;
  c.dim = 8;
  c.heads = 2;
  c.layers = 2;
  c.ff = 12;
  c.components = 2;
  c.cond_dim = 4;
  c.time_dim = 4;
  c.conv_hidden = 6;
  return c;
}

Context random_context(CounterRng& rng, const ModelConfig& c, std::size_t windows, std::size_t events) {
  Context ctx;
  const std::size_t S = c.window_samples;
  ctx.windows.windows = windows;
  ctx.windows.values = Tensor({windows * S, c.channels});
  ctx.windows.mask.assign(windows * S, 1);
  for (std::size_t k = 0; k < windows; ++k) {
    ctx.window_first.push_back(k * S);
    ctx.window_end.push_back(static_cast<double>((k + 1) * S - 1) * c.sample_step);
  }
  for (auto& v : ctx.windows.values.raw()) v = rng.normal();
  for (std::size_t r = 0; r < ctx.windows.mask.size(); ++r) ctx.windows.mask[r] = rng.bernoulli(0.8) ? 1 : 0;
  const double span = static_cast<double>(windows * S) * c.sample_step;
  for (std::size_t e = 0; e < events; ++e)
    ctx.events.push_back({rng.uniform(0.0, span), static_cast<std::uint32_t>(rng.below(c.vocab))});
  std::sort(ctx.events.begin(), ctx.events.end(), [](auto& a, auto& b) { return a.time < b.time; });
  ctx.t_end = span;
  return ctx;
}

}  // namespace

// ---- encoders -------------------------------------------------------------

TEST_CASE("time encoding") {
  TimeEncodingConfig cfg;
  const auto z = time_encode(0.0, cfg);
  REQUIRE(z.size() == 8);
  for (std::size_t i = 0; i < z.size(); i += 2) {
    CHECK(z[i] == 0.0);
    CHECK(z[i + 1] == 1.0);
  }
  const auto w = cfg.frequencies();
  for (std::size_t i = 1; i < w.size(); ++i) CHECK(w[i] < w[i - 1]);
  CHECK(2 * std::numbers::pi / w.front() == doctest::Approx(600.0));
  CHECK(2 * std::numbers::pi / w.back() == doctest::Approx(365.0 * 86400.0));
  const auto per = time_encode(2 * std::numbers::pi / w[0], cfg);
  CHECK(std::abs(per[0]) < 1e-9);
  CHECK(std::abs(per[1] - 1.0) < 1e-9);

  const auto e = time_encode(std::numbers::pi / 2, std::vector<double>{1.0, 0.1});
  CHECK(e[0] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(std::abs(e[1]) < 1e-15);
  CHECK(e[2] == doctest::Approx(std::sin(0.1 * std::numbers::pi / 2)));
  CHECK(e[3] == doctest::Approx(std::cos(0.1 * std::numbers::pi / 2)));

  CounterRng rng(5);
  for (int i = 0; i < 200; ++i)
    for (double v : time_encode(rng.uniform(-1e9, 1e9), cfg)) CHECK((v >= -1.0 && v <= 1.0));

  TimeEncodingConfig odd;
  odd.dim = 3;
  CHECK_THROWS_AS(odd.frequencies(), std::invalid_argument);
}

TEST_CASE("EHR event embedding") {
  EhrEmbedConfig c;
  c.vocab = 4;
  c.dim = 6;
  c.time.dim = 4;
  CounterRng rng(1);
  num::ParameterStore ps;
  init_ehr_embedding(ps, c, rng);

  num::ParameterStore zero = ps;
  for (auto& [_, t] : zero.all_mut()) std::fill(t.raw().begin(), t.raw().end(), 0.0);
  {
    num::Graph g(&zero);
    const auto out = embed_ehr_events(g, c, {2}, {12345.0}).value();
    for (double v : out.raw()) CHECK(v == 0.0);
  }
  num::ParameterStore no_rho = ps;
  std::fill(no_rho.get_mut("ehr.w_rho").raw().begin(), no_rho.get_mut("ehr.w_rho").raw().end(), 0.0);
  {
    num::Graph g(&no_rho);
    const auto out = embed_ehr_events(g, c, {3}, {999.0}).value();
    for (std::size_t j = 0; j < c.dim; ++j) CHECK(out[j] == ps.get("ehr.tok").at(3, j));
  }
  {
    num::Graph g(&ps);
    const auto out = embed_ehr_events(g, c, {1, 1}, {0.0, 5000.0}).value();
    bool differ = false;
    for (std::size_t j = 0; j < c.dim; ++j) differ |= out.at(0, j) != out.at(1, j);
    CHECK(differ);
    CHECK_THROWS_AS(embed_ehr_events(g, c, {7}, {0.0}), std::out_of_range);
    CHECK_NOTHROW(embed_ehr_events(g, c, {mask_token(c)}, {0.0}));
  }
}

TEST_CASE("wearable window encoder") {
  WearEncoderConfig c;
  c.channels = 3;
  c.samples = 5;
  c.hidden = 4;
  c.dim = 6;
  CounterRng rng(2);
  num::ParameterStore ps;
  init_wear_encoder(ps, c, rng);
  for (const char* n : {"wear.in_b", "wear.out_b"})
    for (auto& v : ps.get_mut(n).raw()) v = rng.normal();

  WindowBatch b;
  b.windows = 2;
  b.values = Tensor({10, 3});
  b.mask.assign(10, 1);
  for (auto& v : b.values.raw()) v = rng.normal();

  SUBCASE("constant input with zero convolutions leaves the bias path") {
    num::ParameterStore z = ps;
    for (const char* n : {"wear.conv1", "wear.conv2"})
      std::fill(z.get_mut(n).raw().begin(), z.get_mut(n).raw().end(), 0.0);
    WindowBatch k = b;
    for (std::size_t r = 0; r < 10; ++r)
      for (std::size_t ch = 0; ch < 3; ++ch) k.values.at(r, ch) = 0.5 * static_cast<double>(ch + 1);
    num::Graph g(&z);
    const auto out = encode_wearable_windows(g, c, k).value();
    for (std::size_t j = 0; j < c.dim; ++j) {
      double expect = z.get("wear.out_b")[j];
      for (std::size_t h = 0; h < c.hidden; ++h) {
        double hid = z.get("wear.in_b")[h];
        for (std::size_t ch = 0; ch < 3; ++ch) hid += 0.5 * static_cast<double>(ch + 1) * z.get("wear.in_w").at(ch, h);
        expect += hid * z.get("wear.out_w").at(h, j);
      }
      CHECK(out.at(0, j) == doctest::Approx(expect).epsilon(1e-12));
    }
  }

  SUBCASE("channel permutation with permuted weights") {
    const std::vector<std::size_t> perm = {2, 0, 1};
    num::ParameterStore q = ps;
    WindowBatch k = b;
    for (std::size_t ch = 0; ch < 3; ++ch) {
      for (std::size_t h = 0; h < c.hidden; ++h) q.get_mut("wear.in_w").at(perm[ch], h) = ps.get("wear.in_w").at(ch, h);
      for (std::size_t r = 0; r < 10; ++r) k.values.at(r, perm[ch]) = b.values.at(r, ch);
    }
    num::Graph g1(&ps), g2(&q);
    const auto a = encode_wearable_windows(g1, c, b).value();
    const auto d = encode_wearable_windows(g2, c, k).value();
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(d[i]).epsilon(1e-12));
  }

  SUBCASE("masked samples do not reach the output") {
    WindowBatch k = b;
    k.mask[1] = k.mask[7] = 0;
    WindowBatch k2 = k;
    k2.values.at(1, 0) = 1e6;
    k2.values.at(7, 2) = -3.0;
    num::Graph g1(&ps), g2(&ps);
    CHECK(encode_wearable_windows(g1, c, k).value().bit_equal(encode_wearable_windows(g2, c, k2).value()));
  }

  SUBCASE("fully masked and hidden windows take the sentinel") {
    WindowBatch k = b;
    std::fill(k.mask.begin(), k.mask.begin() + 5, 0);
    k.hidden = {0, 1};
    num::Graph g(&ps);
    const auto out = encode_wearable_windows(g, c, k).value();
    for (std::size_t j = 0; j < c.dim; ++j) {
      CHECK(out.at(0, j) == ps.get("wear.missing")[j]);
      CHECK(out.at(1, j) == ps.get("wear.missing")[j]);
    }
  }

  SUBCASE("gradients match finite differences") {
    WindowBatch k = b;
    k.mask[3] = 0;
    auto rep = num::grad_check(ps, [&](num::Graph& g) {
      return num::sum(num::square(encode_wearable_windows(g, c, k)));
    });
    CHECK(rep.per_parameter["wear.conv1"].max_rel_error < 1e-4);
    CHECK(rep.per_parameter["wear.conv2"].max_rel_error < 1e-4);
    CHECK(rep.pass);
  }
}

TEST_CASE("aggregation") {
  num::Graph g;
  Var single = g.constant(Tensor::matrix(1, 3, {1, 2, 3}));
  Var q = g.constant(Tensor::matrix(3, 1, {0.3, -1, 2}));
  CHECK(aggregate(single, AggMode::attention, q).value().bit_equal(single.value()));
  CHECK(aggregate(single, AggMode::mean).value().bit_equal(single.value()));

  CounterRng rng(9);
  Tensor x({7, 3});
  for (auto& v : x.raw()) v = rng.normal();
  Var set = g.constant(x);
  const auto ref = aggregate(set, AggMode::attention, q).value();
  const auto ref_mean = aggregate(set, AggMode::mean).value();
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::size_t> perm = {0, 1, 2, 3, 4, 5, 6};
    for (std::size_t i = 6; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);
    Var p = num::gather_rows(set, perm);
    CHECK(aggregate(p, AggMode::attention, q).value().bit_equal(ref));
    CHECK(aggregate(p, AggMode::mean).value().bit_equal(ref_mean));
  }
  Var zero_q = g.constant(Tensor({3, 1}));
  const auto uni = aggregate(set, AggMode::attention, zero_q).value();
  for (std::size_t j = 0; j < 3; ++j) {
    double m = 0;
    for (std::size_t i = 0; i < 7; ++i) m += x.at(i, j) / 7.0;
    CHECK(uni[j] == doctest::Approx(m).epsilon(1e-14));
  }
  CHECK_THROWS_AS(aggregate(g.constant(Tensor({0, 3})), AggMode::mean), std::invalid_argument);
}

// ---- backbone -------------------------------------------------------------

TEST_CASE("kernel evaluation") {
  CHECK(kernel_eval({0.3, 0.7, 2.0}, {1, 2, 3}, 0.0) == doctest::Approx(3.0));
  CHECK(kernel_eval({1.0}, {std::log(2.0)}, 1.0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(kernel_eval({1, 2}, {1, 0.1}, 2.0) == doctest::Approx(std::exp(-2.0) + 2 * std::exp(-0.2)).epsilon(1e-15));
  CHECK(kernel_eval({1, 2}, {1, 0.1}, 2.0) == doctest::Approx(1.7728).epsilon(1e-4));
  CHECK_THROWS_AS(kernel_eval({1}, {1}, -1e-9), std::invalid_argument);

  CounterRng rng(3);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t R = 1 + rng.below(5);
    std::vector<double> b(R), gm(R);
    for (std::size_t r = 0; r < R; ++r) {
      b[r] = num::softplus_scalar(rng.normal());
      gm[r] = num::softplus_scalar(rng.normal());
    }
    const double t1 = rng.uniform(0, 10), t2 = t1 + rng.uniform(1e-3, 5);
    CHECK(kernel_eval(b, gm, t2) < kernel_eval(b, gm, t1));
  }
  CHECK(kernel_eval({1, 1}, {0.5, 2}, 1e4) < 1e-100);
}

TEST_CASE("continuous-time attention examples") {
  num::Graph g;
  auto row = [&](std::vector<double> v) { return g.constant(Tensor::row(std::move(v))); };
  Var beta = row({num::softplus_inverse(1.0)});
  Var gamma = row({num::softplus_inverse(std::log(2.0))});
  Tensor w;

  Var q1 = g.constant(Tensor::matrix(1, 2, {0.3, 0.1}));
  ct_attention(q1, q1, q1, g.constant(Tensor({1, 1})), beta, gamma, {0.0}, {Tag::ehr}, 1.0, &w);
  CHECK(w[0] == 1.0);

  // Two keys with equal content, seen from a query whose own key is masked out:
  // the query row attends to keys at dt = 0 and dt = 1.
  Var k = g.constant(Tensor({3, 2}));
  ct_attention(k, k, k, g.constant(Tensor({3, 1})), beta, gamma, {0.0, 1.0, 1.0}, {Tag::ehr, Tag::ehr, Tag::query},
               1.0, &w);
  // Row 2 (query at t=1) sees key 0 (dt=1), key 1 (dt=0) and itself (dt=0).
  CHECK(w.at(2, 0) == doctest::Approx(0.2).epsilon(1e-15));
  CHECK(w.at(2, 1) == doctest::Approx(0.4).epsilon(1e-15));
  // Row 1: keys at dt = 1 and dt = 0 -> (1/3, 2/3).
  CHECK(w.at(1, 0) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(w.at(1, 1) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));

  ct_attention(k, k, k, g.constant(Tensor({3, 1})), beta, gamma, {0.0, 0.0, 0.0}, {Tag::ehr, Tag::wear, Tag::query},
               1.0, &w);
  CHECK(w.at(1, 0) == 0.5);
  CHECK(w.at(1, 1) == 0.5);
  CHECK(w.at(0, 1) == 0.0);
}

TEST_CASE("timeline order and discretization") {
  const auto order = timeline_order({5, 1, 5, 5, 1}, {Tag::query, Tag::wear, Tag::wear, Tag::ehr, Tag::ehr});
  CHECK(order == std::vector<std::size_t>{4, 1, 3, 2, 0});

  const double h = 3600;
  const auto snapped = discretize_times({9 * h, 17 * h}, 86400);
  CHECK(snapped[0] == snapped[1]);
  CHECK(snapped[0] == 43200.0);
  CHECK_THROWS_AS(discretize_times({1.0}, 0.0), std::invalid_argument);

  // Snapping keeps order and, hence, the visibility sets.
  const std::vector<double> t = {100, 700, 1500, 2200};
  const std::vector<Tag> tags = {Tag::wear, Tag::ehr, Tag::query, Tag::wear};
  const auto s = discretize_times(t, 500);
  CHECK(s != t);
  CHECK(std::is_sorted(s.begin(), s.end()));
  CHECK(causal_mask(tags) == causal_mask(tags));

  // Kernel bias ratio after snapping lies within exp(+-gamma * bin).
  CounterRng rng(4);
  const double bin = 0.25;
  for (int trial = 0; trial < 200; ++trial) {
    const double gm = num::softplus_scalar(rng.normal());
    const double a = rng.uniform(0, 10), b = a + rng.uniform(0, 5);
    const auto sn = discretize_times({a, b}, bin);
    const double ratio = kernel_eval({1.0}, {gm}, sn[1] - sn[0]) / kernel_eval({1.0}, {gm}, b - a);
    CHECK(ratio <= std::exp(gm * bin) * (1 + 1e-12));
    CHECK(ratio >= std::exp(-gm * bin) * (1 - 1e-12));
  }
}

TEST_CASE("backbone: identity stack, row sums, causality") {
  auto c = tiny_config();
  CounterRng rng(11);
  const auto ctx = random_context(rng, c, 6, 9);
  SUBCASE("zero layers returns inputs plus tags") {
    c.layers = 0;
    const auto ps = init_parameters(c, 1);
    num::Graph g(&ps);
    const auto enc = encode(g, c, ctx, {});
    for (std::size_t i = 0; i < enc.tags.size(); ++i)
      for (std::size_t j = 0; j < c.dim; ++j)
        CHECK(enc.z.value().at(i, j) ==
              enc.inputs.value().at(i, j) + ps.get("bb.tag").at(static_cast<std::size_t>(enc.tags[i]), j));
  }
  SUBCASE("attention rows are normalized") {
    const auto ps = init_parameters(c, 1);
    num::Graph g(&ps);
    EncodeRequest req;
    req.query_times = {ctx.t_end, ctx.t_end / 2};
    const auto enc = encode(g, c, ctx, req);
    std::vector<Tensor> att;
    backbone_forward(g, c.backbone(), enc.inputs, enc.times, enc.tags, nullptr, &att);
    REQUIRE(att.size() == c.layers);
    for (const auto& a : att)
      for (std::size_t r = 0; r < a.rows(); ++r) {
        double s = 0;
        for (std::size_t k = 0; k < a.cols(); ++k) {
          CHECK(a.at(r, k) >= 0.0);
          s += a.at(r, k);
        }
        CHECK(std::abs(s - 1.0) < 1e-9);
      }
  }
  SUBCASE("perturbing the suffix leaves the prefix bitwise unchanged") {
    const auto ps = init_parameters(c, 1);
    CounterRng r2(12);
    for (int trial = 0; trial < 20; ++trial) {
      const std::size_t n = 12;
      std::vector<double> times(n);
      std::vector<Tag> tags(n);
      double t = 0;
      for (std::size_t i = 0; i < n; ++i) {
        t += r2.bernoulli(0.2) ? 0.0 : r2.exponential(1.0 / 3600.0);
        times[i] = t;
        tags[i] = static_cast<Tag>(r2.below(2));
      }
      Tensor x({n, c.dim});
      for (auto& v : x.raw()) v = r2.normal();
      const std::size_t cut = r2.below(n);
      Tensor x2 = x;
      for (std::size_t i = cut + 1; i < n; ++i)
        for (std::size_t j = 0; j < c.dim; ++j) x2.at(i, j) = 10 * r2.normal();
      num::Graph g(&ps);
      const auto a = backbone_forward(g, c.backbone(), g.constant(x), times, tags).value();
      const auto b = backbone_forward(g, c.backbone(), g.constant(x2), times, tags).value();
      for (std::size_t i = 0; i <= cut; ++i)
        for (std::size_t j = 0; j < c.dim; ++j) CHECK(std::bit_cast<std::uint64_t>(a.at(i, j)) == std::bit_cast<std::uint64_t>(b.at(i, j)));
    }
  }
}

TEST_CASE("backbone: gradients w.r.t. kernel parameters") {
  auto c = tiny_config();
  CounterRng rng(13);
  const auto ctx = random_context(rng, c, 3, 4);
  auto ps = init_parameters(c, 2);
  num::GradCheckOptions opts;
  // A plain mean of post-norm outputs is nearly flat (layer norm centres each
  // row), so the outputs are weighted by fixed random coefficients first.
  Tensor weights;
  auto rep = num::grad_check(ps, [&](num::Graph& g) {
    EncodeRequest req;
    req.query_times = {ctx.t_end};
    Var z = encode(g, c, ctx, req).z;
    if (weights.empty()) {
      CounterRng wr(99);
      weights = Tensor(z.value().shape());
      for (auto& v : weights.raw()) v = wr.normal();
    }
    return num::mean(num::mul(z, g.constant(weights)));
  }, opts);
  for (std::size_t l = 0; l < c.layers; ++l) {
    CHECK(rep.per_parameter["bb.l" + std::to_string(l) + ".beta"].max_rel_error < 1e-4);
    CHECK(rep.per_parameter["bb.l" + std::to_string(l) + ".gamma"].max_rel_error < 1e-4);
  }
  CHECK(rep.pass);
}

TEST_CASE("readout") {
  auto c = tiny_config();
  CounterRng rng(14);
  const auto ctx = random_context(rng, c, 5, 6);
  const auto ps = init_parameters(c, 3);

  SUBCASE("query at an EHR time sees that token's visible set plus itself") {
    const double t = ctx.events[2].time;
    num::Graph g(&ps);
    EncodeRequest req;
    req.query_times = {t};
    const auto enc = encode(g, c, ctx, req);
    const auto mask = causal_mask(enc.tags);
    const std::size_t n = enc.tags.size(), e = enc.event_pos[2], q = enc.query_pos[0];
    for (std::size_t s = 0; s < n; ++s) {
      if (s == q) continue;
      const bool same_time_wear = enc.tags[s] == Tag::wear && enc.times[s] == t;
      if (!same_time_wear) CHECK(mask[q * n + s] == (mask[e * n + s] || s == e));
    }
    CHECK(mask[q * n + q] == 1);
  }

  SUBCASE("deleting later entries does not change the readout") {
    const double t = ctx.events[3].time;
    Context cut = ctx;
    cut.events.resize(4);
    std::vector<std::size_t> keep;
    for (std::size_t k = 0; k < ctx.windows.windows; ++k)
      if (ctx.window_end[k] <= t) keep.push_back(k);
    cut.window_end.clear();
    cut.window_first.clear();
    cut.windows.windows = keep.size();
    const std::size_t S = c.window_samples;
    cut.windows.values = Tensor({keep.size() * S, c.channels});
    cut.windows.mask.assign(keep.size() * S, 0);
    for (std::size_t i = 0; i < keep.size(); ++i) {
      cut.window_end.push_back(ctx.window_end[keep[i]]);
      cut.window_first.push_back(ctx.window_first[keep[i]]);
      for (std::size_t s = 0; s < S; ++s) {
        cut.windows.mask[i * S + s] = ctx.windows.mask[keep[i] * S + s];
        for (std::size_t ch = 0; ch < c.channels; ++ch)
          cut.windows.values.at(i * S + s, ch) = ctx.windows.values.at(keep[i] * S + s, ch);
      }
    }
    CHECK(readout_at(ps, c, ctx, t) == readout_at(ps, c, cut, t));
  }

  SUBCASE("flat kernel: readouts agree across an empty gap") {
    auto flat = ps;
    for (std::size_t l = 0; l < c.layers; ++l)
      for (auto& v : flat.get_mut("bb.l" + std::to_string(l) + ".gamma").raw()) v = num::softplus_inverse(1e-8);
    const double t = ctx.t_end;
    const auto a = readout_at(flat, c, ctx, t);
    const auto b = readout_at(flat, c, ctx, t + 3600.0);
    for (std::size_t j = 0; j < a.size(); ++j) CHECK(std::abs(a[j] - b[j]) < 1e-6);
    const auto d = readout_at(ps, c, ctx, t + 86400.0);
    double diff = 0;
    for (std::size_t j = 0; j < a.size(); ++j) diff += std::abs(readout_at(ps, c, ctx, t)[j] - d[j]);
    CHECK(diff > 1e-6);
  }

  SUBCASE("rejects a time before the first entry") {
    CHECK_THROWS_AS(readout_at(ps, c, ctx, -1.0), std::invalid_argument);
  }
}

TEST_CASE("appending a token after the last query leaves earlier outputs unchanged") {
  auto c = tiny_config();
  CounterRng rng(15);
  auto ctx = random_context(rng, c, 4, 5);
  const auto ps = init_parameters(c, 4);
  EncodeRequest req;
  req.query_times = {ctx.events[2].time, ctx.t_end};
  num::Graph g1(&ps);
  const auto a = encode(g1, c, ctx, req);
  auto ctx2 = ctx;
  ctx2.events.push_back({ctx.t_end + 10.0, 1});
  num::Graph g2(&ps);
  const auto b = encode(g2, c, ctx2, req);
  for (std::size_t i = 0; i < a.tags.size(); ++i)
    for (std::size_t j = 0; j < c.dim; ++j) CHECK(a.z.value().at(i, j) == b.z.value().at(i, j));
}

TEST_CASE("context building from a patient record") {
  CohortConfig cc;
  cc.span_days = 3;
  cc.grid_step_seconds = 600;
  cc.missing_fraction = 0.2;
  cc.index_times_days = {1};
  const auto rec = cohort::generate_patient(cc, 0);
  ModelConfig c;
  c.vocab = cc.vocab_size();
  const double t_end = 2 * 86400.0;
  const auto ctx = build_context(rec, t_end, c);
  CHECK(ctx.windows.windows == 24);
  for (std::size_t k = 0; k < ctx.windows.windows; ++k) {
    CHECK(ctx.window_end[k] <= t_end);
    CHECK(rec.wearable.time(ctx.window_first[k]) >= t_end - c.wear_lookback);
  }
  for (const auto& e : ctx.events) CHECK((e.time <= t_end && e.time > t_end - c.ehr_lookback));
  const auto ps = init_parameters(c, 5);
  const auto z = readout_at(ps, c, ctx, t_end);
  CHECK(z.size() == c.dim);

  auto dropped = cohort::drop_modality(cohort::drop_modality(rec, cohort::Modality::wearable), cohort::Modality::ehr);
  const auto empty_ctx = build_context(dropped, t_end, c);
  CHECK(readout_at(ps, c, empty_ctx, t_end).size() == c.dim);
}
