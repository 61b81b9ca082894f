#include "ctmm/model/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "ctmm/io/strict_json.hpp"

namespace ctmm::model {

using namespace ctmm::num;
using nlohmann::json;

void ModelConfig::validate() const {
  auto bad = [](const std::string& f, const std::string& why) { throw io::ConfigError("model." + f + ": " + why); };
  if (vocab == 0) bad("vocab", "must be positive");
  if (channels == 0) bad("channels", "must be positive");
  if (window_samples == 0) bad("window_samples", "must be positive");
  if (!(sample_step > 0.0)) bad("sample_step", "must be positive");
  if (dim == 0 || heads == 0 || dim % heads != 0) bad("heads", "dim must be divisible by heads");
  if (components == 0) bad("components", "must be positive");
  if (time_dim == 0 || time_dim % 2) bad("time_dim", "must be even and positive");
  if (conv_kernel % 2 == 0) bad("conv_kernel", "must be odd");
  if (!(time_scale > 0.0)) bad("time_scale", "must be positive");
  if (!(attn_dropout >= 0.0 && attn_dropout < 1.0)) bad("attn_dropout", "must lie in [0, 1)");
  if (!(stochastic_depth >= 0.0 && stochastic_depth < 1.0)) bad("stochastic_depth", "must lie in [0, 1)");
  if (!(discrete_bin > 0.0)) bad("discrete_bin", "must be positive");
  if (!(wear_lookback >= 0.0)) bad("wear_lookback", "must be non-negative");
  if (!(ehr_lookback >= 0.0)) bad("ehr_lookback", "must be non-negative");
  if (pred_horizons == 0) bad("pred_horizons", "must be positive");
  if (elbo_dim == 0) bad("elbo_dim", "must be positive");
}

BackboneConfig ModelConfig::backbone() const {
  BackboneConfig b;
  b.layers = layers;
  b.dim = dim;
  b.heads = heads;
  b.ff = ff;
  b.components = components;
  b.cond_dim = cond_dim;
  b.time_scale = time_scale;
  b.attn_dropout = attn_dropout;
  b.stochastic_depth = stochastic_depth;
  return b;
}

EhrEmbedConfig ModelConfig::ehr_embed() const {
  EhrEmbedConfig e;
  e.vocab = vocab;
  e.dim = dim;
  e.time.dim = time_dim;
  return e;
}

WearEncoderConfig ModelConfig::wear_encoder() const {
  WearEncoderConfig w;
  w.channels = channels;
  w.samples = window_samples;
  w.hidden = conv_hidden;
  w.kernel = conv_kernel;
  w.dim = dim;
  return w;
}

json model_config_to_json(const ModelConfig& c) {
  return {{"vocab", c.vocab},
          {"channels", c.channels},
          {"window_samples", c.window_samples},
          {"sample_step", c.sample_step},
          {"dim", c.dim},
          {"heads", c.heads},
          {"layers", c.layers},
          {"ff", c.ff},
          {"components", c.components},
          {"cond_dim", c.cond_dim},
          {"time_dim", c.time_dim},
          {"conv_hidden", c.conv_hidden},
          {"conv_kernel", c.conv_kernel},
          {"time_scale", c.time_scale},
          {"attn_dropout", c.attn_dropout},
          {"stochastic_depth", c.stochastic_depth},
          {"discrete_time", c.discrete_time},
          {"discrete_bin", c.discrete_bin},
          {"wear_lookback", c.wear_lookback},
          {"ehr_lookback", c.ehr_lookback},
          {"agg", c.agg == AggMode::attention ? "attention" : "mean"},
          {"pred_horizons", c.pred_horizons},
          {"elbo_dim", c.elbo_dim}};
}

ModelConfig model_config_from_json(const json& j, const std::string& path) {
  ModelConfig c;
  io::StrictObject o(j, path);
  o.get("vocab", c.vocab);
  o.get("channels", c.channels);
  o.get("window_samples", c.window_samples);
  o.get("sample_step", c.sample_step);
  o.get("dim", c.dim);
  o.get("heads", c.heads);
  o.get("layers", c.layers);
  o.get("ff", c.ff);
  o.get("components", c.components);
  o.get("cond_dim", c.cond_dim);
  o.get("time_dim", c.time_dim);
  o.get("conv_hidden", c.conv_hidden);
  o.get("conv_kernel", c.conv_kernel);
  o.get("time_scale", c.time_scale);
  o.get("attn_dropout", c.attn_dropout);
  o.get("stochastic_depth", c.stochastic_depth);
  o.get("discrete_time", c.discrete_time);
  o.get("discrete_bin", c.discrete_bin);
  o.get("wear_lookback", c.wear_lookback);
  o.get("ehr_lookback", c.ehr_lookback);
  std::string agg = "attention";
  o.get("agg", agg);
  if (agg == "attention")
    c.agg = AggMode::attention;
  else if (agg == "mean")
    c.agg = AggMode::mean;
  else
    throw io::ConfigError(o.field("agg") + ": expected \"attention\" or \"mean\"");
  o.get("pred_horizons", c.pred_horizons);
  o.get("elbo_dim", c.elbo_dim);
  o.finish();
  c.validate();
  return c;
}

ParameterStore init_parameters(const ModelConfig& c, std::uint64_t seed) {
  c.validate();
  ParameterStore ps;
  CounterRng rng(CounterRng::derive(seed, {0x1417}));
  init_ehr_embedding(ps, c.ehr_embed(), rng);
  init_wear_encoder(ps, c.wear_encoder(), rng);
  init_backbone(ps, c.backbone(), rng);
  const std::size_t p = c.dim, V = c.vocab, W = c.window_size(), d = c.elbo_dim;
  const double sp = 1.0 / std::sqrt(static_cast<double>(p));
  ps.add("readout.query", random_matrix(1, p, 0.5, rng));
  ps.add("head.mlm_w", random_matrix(p, V, sp, rng));
  ps.add("head.mlm_b", Tensor({1, V}));
  ps.add("head.rec_w", random_matrix(p, W, sp, rng));
  ps.add("head.rec_b", Tensor({1, W}));
  ps.add("head.pred_w", random_matrix(p, W, sp, rng));
  ps.add("head.pred_b", Tensor({1, W}));
  ps.add("head.pred_h", random_matrix(c.pred_horizons, p, 0.5, rng));
  ps.add("head.agg_q", random_matrix(p, 1, sp, rng));
  ps.add("head.w2e_w", random_matrix(p, V, sp, rng));
  ps.add("head.w2e_b", Tensor({1, V}));
  ps.add("head.e2w_w", random_matrix(p, 3, sp, rng));
  ps.add("head.e2w_b", Tensor({1, 3}));
  ps.add("elbo.mu", random_matrix(p, d, sp, rng));
  ps.add("elbo.lv", random_matrix(p, d, 0.1 * sp, rng));
  ps.add("elbo.lv_b", Tensor({1, d}));
  ps.add("elbo.tok", random_matrix(d, V, 1.0, rng));
  ps.add("elbo.tok_b", Tensor({1, V}));
  ps.add("elbo.wear", random_matrix(d, W, 1.0, rng));
  ps.add("elbo.wear_b", Tensor({1, W}));
  return ps;
}

Context build_context(const PatientRecord& rec, double t_end, const ModelConfig& c) {
  Context ctx;
  ctx.t_end = t_end;
  const auto& w = rec.wearable;
  const std::size_t S = c.window_samples;
  if (w.channels != c.channels && w.size() > 0)
    throw std::invalid_argument("build_context: stream has " + std::to_string(w.channels) + " channels, model expects " +
                                std::to_string(c.channels));
  if (w.size() > 0 && std::abs(w.step - c.sample_step) > 1e-9)
    throw std::invalid_argument("build_context: stream step does not match the model sample step");
  const double lo = t_end - c.wear_lookback;
  const std::size_t total = w.size() / S;
  for (std::size_t j = 0; j < total; ++j) {
    const std::size_t first = j * S;
    const double t_first = w.time(first), t_last = w.time(first + S - 1);
    if (t_last > t_end) break;
    if (t_first < lo) continue;
    ctx.window_first.push_back(first);
    ctx.window_end.push_back(t_last);
  }
  auto& b = ctx.windows;
  b.windows = ctx.window_first.size();
  b.values = Tensor({b.windows * S, c.channels});
  b.mask.assign(b.windows * S, 0);
  for (std::size_t k = 0; k < b.windows; ++k)
    for (std::size_t s = 0; s < S; ++s) {
      const std::size_t i = ctx.window_first[k] + s, r = k * S + s;
      if (!w.observed(i)) continue;
      b.mask[r] = 1;
      for (std::size_t ch = 0; ch < c.channels; ++ch) b.values.at(r, ch) = w.value(i, ch);
    }
  const double elo = t_end - c.ehr_lookback;
  for (const auto& e : rec.ehr.events)
    if (e.time > elo && e.time <= t_end) ctx.events.push_back(e);
  return ctx;
}

Encoded encode(Graph& g, const ModelConfig& c, const Context& ctx, const EncodeRequest& req, TrainNoise* noise) {
  const std::size_t ne = ctx.events.size(), nw = ctx.windows.windows, nq = req.query_times.size();
  if (!req.ehr_masked.empty() && req.ehr_masked.size() != ne)
    throw std::invalid_argument("encode: ehr mask length does not match events");
  if (!req.wear_hidden.empty() && req.wear_hidden.size() != nw)
    throw std::invalid_argument("encode: wearable mask length does not match windows");

  // Unsorted layout: events, windows, queries.
  std::vector<double> raw_times;
  std::vector<Tag> raw_tags;
  for (const auto& e : ctx.events) {
    raw_times.push_back(e.time);
    raw_tags.push_back(Tag::ehr);
  }
  for (double t : ctx.window_end) {
    raw_times.push_back(t);
    raw_tags.push_back(Tag::wear);
  }
  for (double t : req.query_times) {
    raw_times.push_back(t);
    raw_tags.push_back(Tag::query);
  }
  const auto order = timeline_order(raw_times, raw_tags);
  const std::vector<double> seen_times = c.discrete_time ? discretize_times(raw_times, c.discrete_bin) : raw_times;

  std::vector<Var> parts;
  if (ne) {
    const auto ec = c.ehr_embed();
    std::vector<std::uint32_t> toks(ne);
    std::vector<double> et(seen_times.begin(), seen_times.begin() + static_cast<std::ptrdiff_t>(ne));
    for (std::size_t i = 0; i < ne; ++i)
      toks[i] = (!req.ehr_masked.empty() && req.ehr_masked[i]) ? mask_token(ec) : ctx.events[i].token;
    parts.push_back(embed_ehr_events(g, ec, toks, et));
  }
  if (nw) {
    WindowBatch b = ctx.windows;
    b.hidden = req.wear_hidden;
    parts.push_back(encode_wearable_windows(g, c.wear_encoder(), b));
  }
  if (nq) {
    std::vector<std::size_t> zeros(nq, 0);
    parts.push_back(gather_rows(g.param("readout.query"), zeros));
  }
  if (parts.empty()) throw std::invalid_argument("encode: empty timeline");
  Var unsorted = parts.size() == 1 ? parts[0] : concat_rows(parts);

  Encoded out;
  const std::size_t n = order.size();
  std::vector<std::size_t> pos(n);
  out.times.resize(n);
  out.tags.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    pos[order[k]] = k;
    out.times[k] = seen_times[order[k]];
    out.tags[k] = raw_tags[order[k]];
  }
  out.inputs = gather_rows(unsorted, order);
  out.z = backbone_forward(g, c.backbone(), out.inputs, out.times, out.tags, noise);
  out.event_pos.assign(pos.begin(), pos.begin() + static_cast<std::ptrdiff_t>(ne));
  out.window_pos.assign(pos.begin() + static_cast<std::ptrdiff_t>(ne), pos.begin() + static_cast<std::ptrdiff_t>(ne + nw));
  out.query_pos.assign(pos.begin() + static_cast<std::ptrdiff_t>(ne + nw), pos.end());
  return out;
}

std::vector<double> readout_at(const ParameterStore& ps, const ModelConfig& c, const Context& ctx, double t) {
  double first = std::numeric_limits<double>::infinity();
  for (const auto& e : ctx.events) first = std::min(first, e.time);
  for (double we : ctx.window_end) first = std::min(first, we);
  if (t < first) throw std::invalid_argument("readout_at: time precedes the first timeline entry");
  Graph g(&ps);
  EncodeRequest req;
  req.query_times = {t};
  const auto enc = encode(g, c, ctx, req);
  const auto row = enc.z.value().row_span(enc.query_pos[0]);
  return {row.begin(), row.end()};
}

}  // namespace ctmm::model
