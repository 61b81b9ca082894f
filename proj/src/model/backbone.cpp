#include "ctmm/model/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "ctmm/model/encoders.hpp"

namespace ctmm::model {

using namespace ctmm::num;

double kernel_eval(const std::vector<double>& beta, const std::vector<double>& gamma, double dt) {
  if (dt < 0.0) throw std::invalid_argument("kernel_eval: negative time difference " + std::to_string(dt));
  if (beta.size() != gamma.size() || beta.empty()) throw std::invalid_argument("kernel_eval: bad parameter sizes");
  double s = 0.0;
  for (std::size_t r = 0; r < beta.size(); ++r) s += beta[r] * std::exp(-gamma[r] * dt);
  return s;
}

void BackboneConfig::validate() const {
  if (dim == 0 || heads == 0 || dim % heads != 0)
    throw std::invalid_argument("backbone: model dimension must be divisible by the head count");
  if (components == 0) throw std::invalid_argument("backbone: kernel needs at least one component");
  if (!(time_scale > 0.0)) throw std::invalid_argument("backbone: time_scale must be positive");
  if (!(attn_dropout >= 0.0 && attn_dropout < 1.0) || !(stochastic_depth >= 0.0 && stochastic_depth < 1.0))
    throw std::invalid_argument("backbone: dropout rates must lie in [0, 1)");
}

namespace {

std::string lname(std::size_t l, const char* what) { return "bb.l" + std::to_string(l) + "." + what; }

std::vector<double> softplus_row(const Tensor& t) {
  std::vector<double> out(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) out[i] = softplus_scalar(t[i]);
  return out;
}

}  // namespace

std::vector<double> kernel_beta(const ParameterStore& ps, std::size_t layer) {
  return softplus_row(ps.get(lname(layer, "beta")));
}
std::vector<double> kernel_gamma(const ParameterStore& ps, std::size_t layer) {
  return softplus_row(ps.get(lname(layer, "gamma")));
}

void init_backbone(ParameterStore& ps, const BackboneConfig& c, CounterRng& rng) {
  c.validate();
  const std::size_t p = c.dim, R = c.components;
  const double sp = 1.0 / std::sqrt(static_cast<double>(p));
  ps.add("bb.tag", random_matrix(2, p, 0.5, rng));
  // Decay rates spread from 1/hour to 1/month, expressed per time_scale.
  const double fast = c.time_scale / 3600.0, slow = c.time_scale / (30.0 * 86400.0);
  for (std::size_t l = 0; l < c.layers; ++l) {
    Tensor beta({1, R}), gamma({1, R});
    for (std::size_t r = 0; r < R; ++r) {
      beta[r] = softplus_inverse(1.0 / static_cast<double>(R));
      const double rate =
          R == 1 ? c.time_scale / 86400.0
                 : fast * std::pow(slow / fast, static_cast<double>(r) / static_cast<double>(R - 1));
      gamma[r] = softplus_inverse(rate);
    }
    ps.add(lname(l, "beta"), beta);
    ps.add(lname(l, "gamma"), gamma);
    ps.add(lname(l, "wq"), random_matrix(p, p, sp, rng));
    ps.add(lname(l, "wk"), random_matrix(p, p, sp, rng));
    ps.add(lname(l, "wv"), random_matrix(p, p, sp, rng));
    ps.add(lname(l, "wo"), random_matrix(p, p, sp, rng));
    ps.add(lname(l, "wc"), random_matrix(p, c.cond_dim, sp, rng));
    ps.add(lname(l, "u"), random_matrix(2, c.cond_dim, 0.1, rng));
    ps.add(lname(l, "ln_g"), Tensor({1, p}, 1.0));
    ps.add(lname(l, "ln_b"), Tensor({1, p}));
    ps.add(lname(l, "ff1"), random_matrix(p, c.ff, sp, rng));
    ps.add(lname(l, "ff1_b"), Tensor({1, c.ff}));
    ps.add(lname(l, "ff2"), random_matrix(c.ff, p, 1.0 / std::sqrt(static_cast<double>(c.ff)), rng));
    ps.add(lname(l, "ff2_b"), Tensor({1, p}));
  }
}

std::vector<std::size_t> timeline_order(const std::vector<double>& times, const std::vector<Tag>& tags) {
  if (times.size() != tags.size()) throw std::invalid_argument("timeline_order: length mismatch");
  std::vector<std::size_t> order(times.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (times[a] != times[b]) return times[a] < times[b];
    return static_cast<int>(tags[a]) < static_cast<int>(tags[b]);
  });
  return order;
}

std::vector<double> discretize_times(const std::vector<double>& times, double bin) {
  if (!(bin > 0.0)) throw std::invalid_argument("discretize_times: bin must be positive");
  std::vector<double> out(times.size());
  for (std::size_t i = 0; i < times.size(); ++i) out[i] = (std::floor(times[i] / bin) + 0.5) * bin;
  return out;
}

std::vector<std::uint8_t> causal_mask(const std::vector<Tag>& tags) {
  const std::size_t n = tags.size();
  std::vector<std::uint8_t> m(n * n, 0);
  for (std::size_t t = 0; t < n; ++t)
    for (std::size_t s = 0; s <= t; ++s) m[t * n + s] = (s == t || tags[s] != Tag::query) ? 1 : 0;
  return m;
}

namespace {

Tensor time_differences(const std::vector<double>& times, const std::vector<std::uint8_t>& mask) {
  const std::size_t n = times.size();
  Tensor dt({n, n});
  for (std::size_t t = 0; t < n; ++t)
    for (std::size_t s = 0; s < n; ++s)
      if (mask[t * n + s]) {
        const double d = times[t] - times[s];
        if (d < 0.0) throw std::invalid_argument("ct_attention: timeline is not sorted (negative time difference)");
        dt.at(t, s) = d;
      }
  return dt;
}

Var attend(Var q, Var k, Var v, Var key_bias, Var logk, const std::vector<std::uint8_t>& mask, Tensor* weights,
           TrainNoise* noise, double dropout) {
  const double inv = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  Var logits = add(add_row(scale(matmul_nt(q, k), inv), transpose(key_bias)), logk);
  Var a = softmax_rows(logits, mask);
  if (weights) *weights = a.value();
  if (noise && dropout > 0.0) {
    Tensor keep(a.value().shape());
    for (auto& x : keep.raw()) x = noise->rng.bernoulli(dropout) ? 0.0 : 1.0 / (1.0 - dropout);
    a = mul(a, a.graph->constant(std::move(keep), "attn_dropout"));
  }
  return matmul(a, v);
}

}  // namespace

Var ct_attention(Var q, Var k, Var v, Var key_bias, Var beta_raw, Var gamma_raw, const std::vector<double>& times,
                 const std::vector<Tag>& tags, double time_scale, Tensor* weights) {
  const auto mask = causal_mask(tags);
  Var logk = kernel_log_bias(beta_raw, gamma_raw, time_differences(times, mask), time_scale, mask);
  return attend(q, k, v, key_bias, logk, mask, weights, nullptr, 0.0);
}

Var backbone_forward(Graph& g, const BackboneConfig& c, Var x, const std::vector<double>& times,
                     const std::vector<Tag>& tags, TrainNoise* noise, std::vector<Tensor>* attention) {
  const std::size_t n = times.size();
  if (n == 0) throw std::invalid_argument("backbone_forward: empty timeline");
  if (x.rows() != n || x.cols() != c.dim)
    throw ShapeError("backbone_forward: embeddings " + shape_str(x.value().shape()) + " do not match timeline of " +
                     std::to_string(n) + " x " + std::to_string(c.dim));
  for (std::size_t i = 1; i < n; ++i)
    if (times[i] < times[i - 1]) throw std::invalid_argument("backbone_forward: timeline is not sorted");

  // Modality tags; query tokens carry none.
  std::vector<std::size_t> tag_idx(n);
  for (std::size_t i = 0; i < n; ++i) tag_idx[i] = static_cast<std::size_t>(tags[i]);
  Var zero_row = g.constant(Tensor({1, c.dim}), "no_tag");
  Var h = add(x, gather_rows(concat_rows({g.param("bb.tag"), zero_row}), tag_idx));
  if (c.layers == 0) return h;

  const auto mask = causal_mask(tags);
  const Tensor dt = time_differences(times, mask);
  Var zero_cond = g.constant(Tensor({1, c.cond_dim}), "no_cond");
  const std::size_t dh = c.dim / c.heads;

  for (std::size_t l = 0; l < c.layers; ++l) {
    Var logk = kernel_log_bias(g.param(lname(l, "beta")), g.param(lname(l, "gamma")), dt, c.time_scale, mask);
    Var u = gather_rows(concat_rows({g.param(lname(l, "u")), zero_cond}), tag_idx);
    Var key_bias = sum_cols(mul(matmul(h, g.param(lname(l, "wc"))), u));  // [n,1]
    Var Q = matmul(h, g.param(lname(l, "wq")));
    Var K = matmul(h, g.param(lname(l, "wk")));
    Var V = matmul(h, g.param(lname(l, "wv")));
    std::vector<Var> heads;
    Tensor avg;
    for (std::size_t hd = 0; hd < c.heads; ++hd) {
      Tensor w;
      heads.push_back(attend(slice_cols(Q, hd * dh, (hd + 1) * dh), slice_cols(K, hd * dh, (hd + 1) * dh),
                             slice_cols(V, hd * dh, (hd + 1) * dh), key_bias, logk, mask,
                             attention ? &w : nullptr, noise, c.attn_dropout));
      if (attention) {
        if (avg.empty()) avg = Tensor(w.shape());
        for (std::size_t i = 0; i < w.size(); ++i) avg[i] += w[i] / static_cast<double>(c.heads);
      }
    }
    if (attention) attention->push_back(avg);
    Var attn = matmul(heads.size() == 1 ? heads[0] : concat_cols(heads), g.param(lname(l, "wo")));
    const bool skip = noise && c.stochastic_depth > 0.0 && noise->rng.bernoulli(c.stochastic_depth);
    Var res = skip ? h : add(h, attn);
    h = layer_norm_rows(res, g.param(lname(l, "ln_g")), g.param(lname(l, "ln_b")));
    Var ff = add_row(matmul(gelu(add_row(matmul(h, g.param(lname(l, "ff1"))), g.param(lname(l, "ff1_b")))),
                            g.param(lname(l, "ff2"))),
                     g.param(lname(l, "ff2_b")));
    h = add(h, ff);
  }
  return h;
}

}  // namespace ctmm::model
