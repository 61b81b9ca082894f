#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ctmm/numerics/graph.hpp"
#include "ctmm/rng.hpp"

namespace ctmm::model {

using num::Graph;
using num::ParameterStore;
using num::Tensor;
using num::Var;

/// Source of a timeline entry. Query tokens are readout probes: they see the
/// past but nothing attends to them.
enum class Tag : std::uint8_t { ehr = 0, wear = 1, query = 2 };

/// sum_r beta_r exp(-gamma_r dt). Throws on dt < 0.
double kernel_eval(const std::vector<double>& beta, const std::vector<double>& gamma, double dt);

struct BackboneConfig {
  std::size_t layers = 2;
  std::size_t dim = 16;
  std::size_t heads = 2;
  std::size_t ff = 32;
  std::size_t components = 4;  // kernel mixture size R
  std::size_t cond_dim = 8;
  double time_scale = 86400.0;  // seconds per kernel time unit
  double attn_dropout = 0.0;
  double stochastic_depth = 0.0;

  void validate() const;
};

/// Kernel parameters of one layer after the softplus map, in 1/time_scale units.
std::vector<double> kernel_beta(const ParameterStore& ps, std::size_t layer);
std::vector<double> kernel_gamma(const ParameterStore& ps, std::size_t layer);

void init_backbone(ParameterStore& ps, const BackboneConfig& c, CounterRng& rng);

/// Sort permutation of timeline entries: by time, then EHR before wearable
/// before query, then original index.
std::vector<std::size_t> timeline_order(const std::vector<double>& times, const std::vector<Tag>& tags);

/// Snap every time to the midpoint of its bin. Entry order is kept, so the
/// causal visibility sets are unchanged.
std::vector<double> discretize_times(const std::vector<double>& times, double bin);

/// Visibility of key s from query t for a sorted timeline: s <= t and s is
/// not a query token (a query sees itself).
std::vector<std::uint8_t> causal_mask(const std::vector<Tag>& tags);

/// Single-head continuous-time attention over a sorted timeline.
/// logits(t,s) = q_t.k_s / sqrt(d) + bias_s + log K(t_t - t_s); masked rows are
/// normalized over visible keys only. Returns the output; `weights` receives
/// the normalized attention matrix when non-null.
Var ct_attention(Var q, Var k, Var v, Var key_bias, Var beta_raw, Var gamma_raw, const std::vector<double>& times,
                 const std::vector<Tag>& tags, double time_scale, Tensor* weights = nullptr);

/// Training-time randomness. Null means evaluation mode (deterministic).
struct TrainNoise {
  CounterRng rng;
};

/// Embeddings x ([n, dim], already in timeline order) to latents [n, dim].
/// `attention` receives per-layer head-averaged weights when non-null.
Var backbone_forward(Graph& g, const BackboneConfig& c, Var x, const std::vector<double>& times,
                     const std::vector<Tag>& tags, TrainNoise* noise = nullptr,
                     std::vector<Tensor>* attention = nullptr);

}  // namespace ctmm::model
