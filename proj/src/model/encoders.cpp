#include "ctmm/model/encoders.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>

namespace ctmm::model {

using namespace ctmm::num;

Tensor random_matrix(std::size_t r, std::size_t c, double scale, CounterRng& rng) {
  Tensor t({r, c});
  for (auto& v : t.raw()) v = scale * rng.normal();
  return t;
}

void TimeEncodingConfig::validate() const {
  if (dim == 0 || dim % 2 != 0) throw std::invalid_argument("time encoding dimension must be even and positive");
  if (!(min_period > 0.0 && min_period < max_period))
    throw std::invalid_argument("time encoding periods must satisfy 0 < min < max");
}

std::vector<double> TimeEncodingConfig::frequencies() const {
  validate();
  const std::size_t m = dim / 2;
  std::vector<double> w(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double f = m == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(m - 1);
    const double period = min_period * std::pow(max_period / min_period, f);
    w[i] = 2.0 * std::numbers::pi / period;
  }
  return w;
}

std::vector<double> time_encode(double t, const std::vector<double>& omegas) {
  std::vector<double> out;
  out.reserve(2 * omegas.size());
  for (double w : omegas) {
    out.push_back(std::sin(w * t));
    out.push_back(std::cos(w * t));
  }
  return out;
}

std::vector<double> time_encode(double t, const TimeEncodingConfig& cfg) { return time_encode(t, cfg.frequencies()); }

Tensor time_encode_rows(const std::vector<double>& times, const TimeEncodingConfig& cfg) {
  const auto w = cfg.frequencies();
  Tensor out({times.size(), cfg.dim});
  for (std::size_t i = 0; i < times.size(); ++i) {
    const auto e = time_encode(times[i], w);
    std::copy(e.begin(), e.end(), out.raw().begin() + static_cast<std::ptrdiff_t>(i * cfg.dim));
  }
  return out;
}

void init_ehr_embedding(ParameterStore& ps, const EhrEmbedConfig& c, CounterRng& rng) {
  const std::size_t q = c.time.dim;
  ps.add("ehr.tok", random_matrix(c.vocab + 1, c.dim, 0.5, rng));
  ps.add("ehr.w_rho", random_matrix(q, q, 1.0 / std::sqrt(static_cast<double>(q)), rng));
  ps.add("ehr.w_qp", random_matrix(q, c.dim, 1.0 / std::sqrt(static_cast<double>(q)), rng));
}

Var embed_ehr_events(Graph& g, const EhrEmbedConfig& c, const std::vector<std::uint32_t>& tokens,
                     const std::vector<double>& times) {
  if (tokens.size() != times.size()) throw std::invalid_argument("embed_ehr_events: tokens/times length mismatch");
  std::vector<std::size_t> idx(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] > c.vocab)
      throw std::out_of_range("embed_ehr_events: token " + std::to_string(tokens[i]) + " outside vocabulary of " +
                              std::to_string(c.vocab));
    idx[i] = tokens[i];
  }
  Var tok = gather_rows(g.param("ehr.tok"), idx);
  Var rho = g.constant(time_encode_rows(times, c.time), "rho");
  Var proj = matmul(matmul(rho, g.param("ehr.w_rho")), g.param("ehr.w_qp"));
  return add(tok, proj);
}

void init_wear_encoder(ParameterStore& ps, const WearEncoderConfig& c, CounterRng& rng) {
  const double s_in = 1.0 / std::sqrt(static_cast<double>(c.channels));
  const double s_conv = 1.0 / std::sqrt(static_cast<double>(c.kernel * c.hidden));
  const double s_out = 1.0 / std::sqrt(static_cast<double>(c.hidden));
  ps.add("wear.in_w", random_matrix(c.channels, c.hidden, s_in, rng));
  ps.add("wear.in_b", Tensor({1, c.hidden}));
  ps.add("wear.conv1", random_matrix(c.kernel * c.hidden, c.hidden, s_conv, rng));
  ps.add("wear.conv2", random_matrix(c.kernel * c.hidden, c.hidden, s_conv, rng));
  ps.add("wear.out_w", random_matrix(c.hidden, c.dim, s_out, rng));
  ps.add("wear.out_b", Tensor({1, c.dim}));
  ps.add("wear.missing", random_matrix(1, c.dim, 0.5, rng));
}

Var encode_wearable_windows(Graph& g, const WearEncoderConfig& c, const WindowBatch& b) {
  const std::size_t S = c.samples;
  if (b.values.rows() != b.windows * S || b.values.cols() != c.channels || b.mask.size() != b.windows * S)
    throw ShapeError("encode_wearable_windows: batch does not match " + std::to_string(b.windows) + " windows of " +
                     std::to_string(S) + "x" + std::to_string(c.channels));
  // Windows with at least one observed sample go through the encoder; the
  // others take the sentinel.
  std::vector<std::size_t> live, dead;
  for (std::size_t w = 0; w < b.windows; ++w) {
    const bool hidden = !b.hidden.empty() && b.hidden[w];
    const bool any = std::any_of(b.mask.begin() + w * S, b.mask.begin() + (w + 1) * S, [](auto m) { return m != 0; });
    (any && !hidden ? live : dead).push_back(w);
  }
  std::vector<Var> parts;
  std::vector<std::size_t> where(b.windows);
  if (!live.empty()) {
    Tensor x({live.size() * S, c.channels});
    Tensor keep({live.size() * S, 1});
    std::vector<std::uint8_t> mask(live.size() * S);
    for (std::size_t k = 0; k < live.size(); ++k)
      for (std::size_t s = 0; s < S; ++s) {
        const std::size_t src = live[k] * S + s, dst = k * S + s;
        mask[dst] = b.mask[src];
        keep[dst] = b.mask[src] ? 1.0 : 0.0;
        if (b.mask[src])
          for (std::size_t ch = 0; ch < c.channels; ++ch) x.at(dst, ch) = b.values.at(src, ch);
      }
    Var keepv = g.constant(keep, "keep");
    Var h = mul_col(add_row(matmul(g.constant(std::move(x), "windows"), g.param("wear.in_w")), g.param("wear.in_b")), keepv);
    for (const char* conv : {"wear.conv1", "wear.conv2"})
      h = add(h, gelu(masked_channel_norm(conv1d_segments(h, g.param(conv), S, c.kernel), mask, S)));
    Var pooled = masked_mean_segments(h, mask, S);
    parts.push_back(add_row(matmul(pooled, g.param("wear.out_w")), g.param("wear.out_b")));
    for (std::size_t k = 0; k < live.size(); ++k) where[live[k]] = k;
  }
  if (!dead.empty()) {
    parts.push_back(g.param("wear.missing"));
    for (std::size_t w : dead) where[w] = live.size();
  }
  if (parts.empty()) throw ShapeError("encode_wearable_windows: empty batch");
  return gather_rows(parts.size() == 1 ? parts[0] : concat_rows(parts), where);
}

namespace {

std::vector<std::size_t> canonical_order(const Tensor& t) {
  std::vector<std::size_t> order(t.rows());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto ra = t.row_span(a), rb = t.row_span(b);
    return std::lexicographical_compare(ra.begin(), ra.end(), rb.begin(), rb.end());
  });
  return order;
}

}  // namespace

Var aggregate(Var set, AggMode mode, Var query) {
  if (set.rows() == 0) throw std::invalid_argument("aggregate: empty set");
  Var sorted = gather_rows(set, canonical_order(set.value()));
  if (mode == AggMode::mean) return scale(sum_rows(sorted), 1.0 / static_cast<double>(set.rows()));
  Var w = softmax_rows(transpose(matmul(sorted, query)));  // [1, n]
  return matmul(w, sorted);
}

Var aggregate(Var set, AggMode mode) {
  if (mode == AggMode::attention) throw std::invalid_argument("aggregate: attention mode needs a query");
  return aggregate(set, mode, set);
}

}  // namespace ctmm::model
