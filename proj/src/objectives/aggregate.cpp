#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "ctmm/io/strict_json.hpp"
#include "ctmm/objectives/objectives.hpp"

namespace ctmm::obj {

using namespace ctmm::num;
using nlohmann::json;
using model::Tag;

json objective_config_to_json(const ObjectiveConfig& c) {
  const auto& w = c.weights;
  const auto& s = c.curriculum;
  return {{"ehr_mask_rate", c.ehr_mask_rate},
          {"ehr_mask_temperature", c.ehr_mask_temperature},
          {"wear_mask_fraction", c.wear_mask_fraction},
          {"wear_mask_max_run", c.wear_mask_max_run},
          {"pred_decay", c.pred_decay},
          {"w2e_lookback", c.w2e_lookback},
          {"e2w_window", c.e2w_window},
          {"info_nce_tau", c.info_nce_tau},
          {"elbo_prior_var", c.elbo_prior_var},
          {"weights",
           {{"ehr", w.ehr},
            {"wear_rec", w.wear_rec},
            {"wear_pred", w.wear_pred},
            {"w2e", w.w2e},
            {"e2w", w.e2w},
            {"contr", w.contr},
            {"elbo", w.elbo},
            {"emb_norm", w.emb_norm}}},
          {"curriculum",
           {{"enabled", s.enabled},
            {"total_steps", s.total_steps},
            {"ramp_fraction", s.ramp_fraction},
            {"w2e_start", s.w2e_start},
            {"w2e_end", s.w2e_end},
            {"e2w_start", s.e2w_start},
            {"e2w_end", s.e2w_end}}}};
}

ObjectiveConfig objective_config_from_json(const json& j, const std::string& path) {
  ObjectiveConfig c;
  io::StrictObject o(j, path);
  o.get("ehr_mask_rate", c.ehr_mask_rate);
  o.get("ehr_mask_temperature", c.ehr_mask_temperature);
  o.get("wear_mask_fraction", c.wear_mask_fraction);
  o.get("wear_mask_max_run", c.wear_mask_max_run);
  o.get("pred_decay", c.pred_decay);
  o.get("w2e_lookback", c.w2e_lookback);
  o.get("e2w_window", c.e2w_window);
  o.get("info_nce_tau", c.info_nce_tau);
  o.get("elbo_prior_var", c.elbo_prior_var);
  o.object("weights", [&](const json& wj, const std::string& p) {
    io::StrictObject w(wj, p);
    w.get("ehr", c.weights.ehr);
    w.get("wear_rec", c.weights.wear_rec);
    w.get("wear_pred", c.weights.wear_pred);
    w.get("w2e", c.weights.w2e);
    w.get("e2w", c.weights.e2w);
    w.get("contr", c.weights.contr);
    w.get("elbo", c.weights.elbo);
    w.get("emb_norm", c.weights.emb_norm);
    w.finish();
    try {
      c.weights.validate();
    } catch (const std::invalid_argument& e) {
      throw io::ConfigError(p + ": " + e.what());
    }
  });
  o.object("curriculum", [&](const json& cj, const std::string& p) {
    io::StrictObject s(cj, p);
    s.get("enabled", c.curriculum.enabled);
    s.get("total_steps", c.curriculum.total_steps);
    s.get("ramp_fraction", c.curriculum.ramp_fraction);
    s.get("w2e_start", c.curriculum.w2e_start);
    s.get("w2e_end", c.curriculum.w2e_end);
    s.get("e2w_start", c.curriculum.e2w_start);
    s.get("e2w_end", c.curriculum.e2w_end);
    s.finish();
  });
  o.finish();
  auto bad = [&](const std::string& f, const std::string& why) { throw io::ConfigError(o.field(f) + ": " + why); };
  if (!(c.ehr_mask_rate > 0 && c.ehr_mask_rate < 1)) bad("ehr_mask_rate", "must lie in (0, 1)");
  if (!(c.ehr_mask_temperature > 0)) bad("ehr_mask_temperature", "must be positive");
  if (!(c.wear_mask_fraction > 0 && c.wear_mask_fraction < 1)) bad("wear_mask_fraction", "must lie in (0, 1)");
  if (c.wear_mask_max_run == 0) bad("wear_mask_max_run", "must be positive");
  if (!(c.pred_decay > 0 && c.pred_decay <= 1)) bad("pred_decay", "must lie in (0, 1]");
  if (!(c.info_nce_tau > 0)) bad("info_nce_tau", "must be positive");
  if (!(c.elbo_prior_var > 0)) bad("elbo_prior_var", "must be positive");
  if (!(c.curriculum.ramp_fraction >= 0 && c.curriculum.ramp_fraction <= 1)) bad("curriculum.ramp_fraction", "must lie in [0, 1]");
  return c;
}

Slice make_slice(const PatientRecord& rec, double t_end, const model::ModelConfig& mc, const ObjectiveConfig& oc,
                 const SummaryStats& stats) {
  Slice s;
  s.patient = rec.id;
  s.ctx = model::build_context(rec, t_end, mc);
  const std::size_t nw = s.ctx.windows.windows, H = mc.pred_horizons, S = mc.window_samples, C = mc.channels;
  const auto& w = rec.wearable;
  s.future = Tensor({nw * H, S * C});
  s.future_mask = Tensor({nw * H, S * C});
  for (std::size_t j = 0; j < nw; ++j)
    for (std::size_t h = 1; h <= H; ++h) {
      const std::size_t first = s.ctx.window_first[j] + h * S, row = j * H + h - 1;
      if (first + S > w.size()) continue;
      for (std::size_t k = 0; k < S; ++k) {
        if (!w.observed(first + k)) continue;
        for (std::size_t ch = 0; ch < C; ++ch) {
          s.future.at(row, k * C + ch) = w.value(first + k, ch);
          s.future_mask.at(row, k * C + ch) = 1.0;
        }
      }
    }

  const std::size_t ne = s.ctx.events.size();
  s.next_token.assign(ne, -1);
  s.summary = Tensor({ne, 3});
  s.summary_present = Tensor({ne, 3});
  if (ne) {
    const auto& all = rec.ehr.events;
    // Context events are a contiguous run of the record ending at t_end.
    auto it = std::upper_bound(all.begin(), all.end(), t_end, [](double t, const EhrEvent& e) { return t < e.time; });
    const std::size_t end = static_cast<std::size_t>(it - all.begin());
    const std::size_t begin = end - ne;
    for (std::size_t k = 0; k < ne; ++k) {
      if (begin + k + 1 < all.size()) s.next_token[k] = all[begin + k + 1].token;
      const double t = s.ctx.events[k].time;
      if (t + oc.e2w_window > rec.span || w.size() == 0) continue;
      const auto sum = phi_summary(w, t, t + oc.e2w_window);
      if (!sum.present) continue;
      const auto v = sum.values();
      for (std::size_t c = 0; c < 3; ++c) {
        if (c == 1 && !sum.rmssd_present) continue;
        s.summary.at(k, c) = (v[c] - stats.mean[c]) / stats.sd[c];
        s.summary_present.at(k, c) = 1.0;
      }
    }
  }
  return s;
}

SummaryStats summary_stats(const std::vector<const PatientRecord*>& records, double window) {
  std::array<double, 3> sum{}, sq{}, n{};
  for (const auto* r : records) {
    if (r->wearable.size() == 0) continue;
    for (const auto& e : r->ehr.events) {
      if (e.time + window > r->span) continue;
      const auto s = phi_summary(r->wearable, e.time, e.time + window);
      if (!s.present) continue;
      const auto v = s.values();
      for (std::size_t c = 0; c < 3; ++c) {
        if (c == 1 && !s.rmssd_present) continue;
        sum[c] += v[c];
        sq[c] += v[c] * v[c];
        n[c] += 1.0;
      }
    }
  }
  SummaryStats st;
  for (std::size_t c = 0; c < 3; ++c) {
    if (n[c] < 2) continue;
    st.mean[c] = sum[c] / n[c];
    const double var = (sq[c] - n[c] * st.mean[c] * st.mean[c]) / (n[c] - 1.0);
    st.sd[c] = var > 1e-16 ? std::sqrt(var) : 1.0;
  }
  return st;
}

namespace {

Var linear(Graph& g, Var x, const std::string& w, const std::string& b) {
  return add_row(matmul(x, g.param(w)), g.param(b));
}

Var rows_or_empty(const std::vector<Var>& parts) { return parts.size() == 1 ? parts[0] : concat_rows(parts); }

// Aggregate of the windows in [t - lookback, t] and the readout query at t,
// one row per listed event; query i belongs to events[i].
Var w2e_aggregates(Graph& g, const model::ModelConfig& mc, const ObjectiveConfig& oc, const model::Context& ctx,
                   const model::Encoded& enc, const std::vector<std::size_t>& events) {
  Var qv = g.param("head.agg_q");
  std::vector<Var> out;
  for (std::size_t i = 0; i < events.size(); ++i) {
    const double t = ctx.events[events[i]].time;
    std::vector<std::size_t> rows;
    for (std::size_t j = 0; j < ctx.windows.windows; ++j)
      if (ctx.window_end[j] <= t && ctx.window_end[j] >= t - oc.w2e_lookback) rows.push_back(enc.window_pos[j]);
    rows.push_back(enc.query_pos[i]);
    Var set = gather_rows(enc.z, rows);
    if (rows.size() == 1) set = concat_rows({g.param("wear.missing"), set});
    out.push_back(model::aggregate(set, mc.agg, qv));
  }
  return rows_or_empty(out);
}

}  // namespace

Var aggregate_loss(Graph& g, const model::ModelConfig& mc, const ObjectiveConfig& oc, const std::vector<Slice>& batch,
                   const LossWeights& lw, std::uint64_t key, LossBreakdown* out, bool train_noise) {
  lw.validate();
  LossWarnings warn;
  const std::size_t H = mc.pred_horizons, W = mc.window_size();
  const auto gam = horizon_weights(H, oc.pred_decay);

  std::vector<Var> mlm_rows, rec_rows, pred_rows, w2e_rows, e2w_rows, ctr_e, ctr_w, elbo_mu, elbo_lv, emb_terms;
  std::vector<std::size_t> mlm_targets, w2e_targets, elbo_tokens;
  std::vector<std::size_t> elbo_event_rows, elbo_window_rows;  // indices into the elbo rows
  std::vector<double> rec_t, rec_m, pred_t, pred_w, e2w_t, e2w_m, elbo_wt, elbo_wm;
  double pred_pairs = 0.0;

  for (std::size_t b = 0; b < batch.size(); ++b) {
    const Slice& s = batch[b];
    const auto& ctx = s.ctx;
    const std::size_t ne = ctx.events.size(), nw = ctx.windows.windows;
    if (ne + nw == 0) continue;

    model::EncodeRequest req;
    std::vector<std::uint32_t> toks(ne);
    for (std::size_t k = 0; k < ne; ++k) toks[k] = ctx.events[k].token;
    if (lw.ehr > 0 && ne) req.ehr_masked = sample_ehr_mask(toks, oc.ehr_mask_rate, oc.ehr_mask_temperature,
                                                           CounterRng::derive(key, {b, 1})).ehr;
    if ((lw.wear_rec > 0) && nw)
      req.wear_hidden = sample_wear_mask(nw, oc.wear_mask_fraction, CounterRng::derive(key, {b, 2}), oc.wear_mask_max_run);
    std::vector<std::size_t> w2e_events;
    if (lw.w2e > 0)
      for (std::size_t k = 0; k < ne; ++k)
        if (s.next_token[k] >= 0) {
          w2e_events.push_back(k);
          req.query_times.push_back(ctx.events[k].time);
        }

    model::TrainNoise noise{CounterRng(CounterRng::derive(key, {b, 3}))};
    const auto enc = model::encode(g, mc, ctx, req, train_noise ? &noise : nullptr);
    Var z = enc.z;

    if (lw.emb_norm > 0) {
      std::vector<std::size_t> rows;
      for (std::size_t i = 0; i < enc.tags.size(); ++i)
        if (enc.tags[i] != Tag::query) rows.push_back(i);
      emb_terms.push_back(sum(square(gather_rows(enc.inputs, rows))));
    }
    if (lw.ehr > 0)
      for (std::size_t k = 0; k < ne; ++k)
        if (req.ehr_masked[k]) {
          mlm_rows.push_back(gather_rows(z, {enc.event_pos[k]}));
          mlm_targets.push_back(toks[k]);
        }
    if (lw.wear_rec > 0)
      for (std::size_t j = 0; j < nw; ++j)
        if (req.wear_hidden[j]) {
          rec_rows.push_back(gather_rows(z, {enc.window_pos[j]}));
          for (std::size_t r = 0; r < mc.window_samples; ++r)
            for (std::size_t ch = 0; ch < mc.channels; ++ch) {
              const std::size_t row = j * mc.window_samples + r;
              const bool obs = ctx.windows.mask[row] != 0;
              rec_t.push_back(obs ? ctx.windows.values.at(row, ch) : 0.0);
              rec_m.push_back(obs ? 1.0 : 0.0);
            }
        }
    if (lw.wear_pred > 0 && nw) {
      // Row i is z at window j plus the embedding of horizon h.
      std::vector<std::size_t> zi, hi;
      for (std::size_t j = 0; j < nw; ++j) {
        if (!req.wear_hidden.empty() && req.wear_hidden[j]) continue;
        for (std::size_t h = 0; h < H; ++h) {
          const std::size_t row = j * H + h;
          double valid = 0.0;
          for (std::size_t e = 0; e < W; ++e) valid += s.future_mask.at(row, e);
          if (valid == 0.0) continue;
          zi.push_back(enc.window_pos[j]);
          hi.push_back(h);
          pred_pairs += 1.0;
          for (std::size_t e = 0; e < W; ++e) {
            pred_t.push_back(s.future.at(row, e));
            pred_w.push_back(s.future_mask.at(row, e) * gam[h] / valid);
          }
        }
      }
      if (!zi.empty()) pred_rows.push_back(add(gather_rows(z, zi), gather_rows(g.param("head.pred_h"), hi)));
    }
    if (lw.w2e > 0 && !w2e_events.empty()) {
      w2e_rows.push_back(w2e_aggregates(g, mc, oc, ctx, enc, w2e_events));
      for (std::size_t k : w2e_events) w2e_targets.push_back(static_cast<std::size_t>(s.next_token[k]));
    }
    if (lw.e2w > 0 && ne) {
      e2w_rows.push_back(gather_rows(z, enc.event_pos));
      for (std::size_t k = 0; k < ne; ++k)
        for (std::size_t c = 0; c < 3; ++c) {
          e2w_t.push_back(s.summary.at(k, c));
          e2w_m.push_back(s.summary_present.at(k, c));
        }
    }
    if (lw.contr > 0 && ne && nw) {
      ctr_e.push_back(scale(sum_rows(gather_rows(z, enc.event_pos)), 1.0 / static_cast<double>(ne)));
      ctr_w.push_back(scale(sum_rows(gather_rows(z, enc.window_pos)), 1.0 / static_cast<double>(nw)));
    }
    if (lw.elbo > 0) {
      for (std::size_t k = 0; k < ne; ++k) {
        elbo_event_rows.push_back(elbo_mu.size());
        elbo_mu.push_back(gather_rows(z, {enc.event_pos[k]}));
        elbo_tokens.push_back(toks[k]);
      }
      for (std::size_t j = 0; j < nw; ++j) {
        elbo_window_rows.push_back(elbo_mu.size());
        elbo_mu.push_back(gather_rows(z, {enc.window_pos[j]}));
        for (std::size_t r = 0; r < mc.window_samples; ++r)
          for (std::size_t ch = 0; ch < mc.channels; ++ch) {
            const std::size_t row = j * mc.window_samples + r;
            const bool obs = ctx.windows.mask[row] != 0;
            elbo_wt.push_back(obs ? ctx.windows.values.at(row, ch) : 0.0);
            elbo_wm.push_back(obs ? 1.0 : 0.0);
          }
      }
    }
  }

  std::map<std::string, Var> terms;
  if (lw.ehr > 0) {
    terms["ehr"] = mlm_rows.empty()
                       ? loss_ehr_mlm(g, g.constant(Tensor::scalar(0)), {}, &warn)
                       : loss_ehr_mlm(g, linear(g, rows_or_empty(mlm_rows), "head.mlm_w", "head.mlm_b"), mlm_targets, &warn);
  }
  if (lw.wear_rec > 0) {
    if (rec_rows.empty()) {
      terms["wear_rec"] = loss_wear_rec(g, g.constant(Tensor::scalar(0)), Tensor(), Tensor({1, 1}), &warn);
    } else {
      const std::size_t m = rec_rows.size();
      terms["wear_rec"] = loss_wear_rec(g, linear(g, rows_or_empty(rec_rows), "head.rec_w", "head.rec_b"),
                                        Tensor({m, W}, rec_t), Tensor({m, W}, rec_m), &warn);
    }
  }
  if (lw.wear_pred > 0) {
    if (pred_rows.empty()) {
      terms["wear_pred"] = g.constant(Tensor::scalar(0.0));
    } else {
      for (double& v : pred_w) v /= pred_pairs;
      const std::size_t m = pred_w.size() / W;
      terms["wear_pred"] = loss_wear_pred(g, linear(g, rows_or_empty(pred_rows), "head.pred_w", "head.pred_b"),
                                          Tensor({m, W}, pred_t), Tensor({m, W}, pred_w));
    }
  }
  if (lw.w2e > 0) {
    terms["w2e"] = w2e_rows.empty()
                       ? loss_w2e(g, g.constant(Tensor::scalar(0)), {}, &warn)
                       : loss_w2e(g, linear(g, rows_or_empty(w2e_rows), "head.w2e_w", "head.w2e_b"), w2e_targets, &warn);
  }
  if (lw.e2w > 0) {
    if (e2w_rows.empty()) {
      terms["e2w"] = loss_e2w(g, g.constant(Tensor({0, 3})), Tensor(), Tensor({1, 1}), &warn);
    } else {
      const std::size_t m = e2w_t.size() / 3;
      terms["e2w"] = loss_e2w(g, linear(g, rows_or_empty(e2w_rows), "head.e2w_w", "head.e2w_b"), Tensor({m, 3}, e2w_t),
                              Tensor({m, 3}, e2w_m), &warn);
    }
  }
  if (lw.contr > 0) {
    terms["contr"] = ctr_e.empty() ? g.constant(Tensor::scalar(0.0))
                                   : loss_contrastive(l2_normalize_rows(rows_or_empty(ctr_e)),
                                                      l2_normalize_rows(rows_or_empty(ctr_w)), oc.info_nce_tau);
  }
  if (lw.elbo > 0) {
    if (elbo_mu.empty()) {
      terms["elbo"] = g.constant(Tensor::scalar(0.0));
    } else {
      Var zz = rows_or_empty(elbo_mu);
      Var mu = matmul(zz, g.param("elbo.mu"));
      Var lv = add_row(matmul(zz, g.param("elbo.lv")), g.param("elbo.lv_b"));
      Tensor eps(mu.value().shape());
      CounterRng er(CounterRng::derive(key, {0xE1B0}));
      for (auto& v : eps.raw()) v = er.normal();
      Var x = add(mu, mul(exp(scale(lv, 0.5)), g.constant(std::move(eps), "elbo_eps")));
      Var loss = gaussian_kl(mu, lv, oc.elbo_prior_var);
      if (!elbo_event_rows.empty())
        loss = add(loss, cross_entropy(linear(g, gather_rows(x, elbo_event_rows), "elbo.tok", "elbo.tok_b"), elbo_tokens));
      if (!elbo_window_rows.empty()) {
        const std::size_t m = elbo_window_rows.size();
        double n = 0.0;
        for (double v : elbo_wm) n += v;
        if (n > 0)
          loss = add(loss, scale(sq_error_sum(linear(g, gather_rows(x, elbo_window_rows), "elbo.wear", "elbo.wear_b"),
                                              Tensor({m, W}, elbo_wt), Tensor({m, W}, elbo_wm)),
                                 0.5 / n));
      }
      terms["elbo"] = loss;
    }
  }
  if (lw.emb_norm > 0) {
    double rows = 0.0;
    for (const auto& s : batch) rows += static_cast<double>(s.ctx.events.size() + s.ctx.windows.windows);
    Var acc = g.constant(Tensor::scalar(0.0));
    for (Var t : emb_terms) acc = add(acc, t);
    terms["emb_norm"] = rows > 0 ? scale(acc, 1.0 / rows) : acc;
  }

  const std::map<std::string, double> weight_of = {{"ehr", lw.ehr},     {"wear_rec", lw.wear_rec}, {"wear_pred", lw.wear_pred},
                                                   {"w2e", lw.w2e},     {"e2w", lw.e2w},           {"contr", lw.contr},
                                                   {"elbo", lw.elbo},   {"emb_norm", lw.emb_norm}};
  Var total = g.constant(Tensor::scalar(0.0), "total");
  LossBreakdown bd;
  bd.weights = lw;
  for (const auto& name : loss_term_names()) {
    auto it = terms.find(name);
    bd.terms[name] = it == terms.end() ? 0.0 : it->second.item();
    if (it != terms.end()) total = add(total, scale(it->second, weight_of.at(name)));
  }
  bd.total = total.item();
  bd.warnings = warn;
  if (out) *out = bd;
  return total;
}

Tensor w2e_logits(const ParameterStore& ps, const model::ModelConfig& mc, const ObjectiveConfig& oc, const Slice& s,
                  std::vector<std::int64_t>* targets) {
  std::vector<std::size_t> events;
  model::EncodeRequest req;
  for (std::size_t k = 0; k < s.ctx.events.size(); ++k)
    if (s.next_token[k] >= 0) {
      events.push_back(k);
      req.query_times.push_back(s.ctx.events[k].time);
    }
  if (targets) {
    targets->clear();
    for (std::size_t k : events) targets->push_back(s.next_token[k]);
  }
  if (events.empty()) return Tensor({0, mc.vocab});
  Graph g(&ps);
  const auto enc = model::encode(g, mc, s.ctx, req, nullptr);
  return linear(g, w2e_aggregates(g, mc, oc, s.ctx, enc, events), "head.w2e_w", "head.w2e_b").value();
}

}  // namespace ctmm::obj
