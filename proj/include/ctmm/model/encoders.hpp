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

/// Sinusoidal encoding of absolute time. Periods are geometrically spaced
/// from min_period to max_period (seconds), shortest first.
struct TimeEncodingConfig {
  std::size_t dim = 8;
  double min_period = 600.0;
  double max_period = 365.0 * 86400.0;

  void validate() const;
  /// Angular frequencies, strictly decreasing.
  std::vector<double> frequencies() const;
};

/// [sin(w1 t), cos(w1 t), sin(w2 t), cos(w2 t), ...]
std::vector<double> time_encode(double t, const std::vector<double>& omegas);
std::vector<double> time_encode(double t, const TimeEncodingConfig& cfg);
/// One encoding per row: [n, dim].
Tensor time_encode_rows(const std::vector<double>& times, const TimeEncodingConfig& cfg);

struct EhrEmbedConfig {
  std::size_t vocab = 8;
  std::size_t dim = 16;
  TimeEncodingConfig time;
};

/// Token id reserved for masked events; its row sits after the vocabulary.
inline std::uint32_t mask_token(const EhrEmbedConfig& c) { return static_cast<std::uint32_t>(c.vocab); }

void init_ehr_embedding(ParameterStore& ps, const EhrEmbedConfig& c, CounterRng& rng);

/// Embed(e) + (rho(t) W_rho) W_qp for every event: [n, dim].
/// Tokens must be < vocab, or equal to mask_token().
Var embed_ehr_events(Graph& g, const EhrEmbedConfig& c, const std::vector<std::uint32_t>& tokens,
                     const std::vector<double>& times);

struct WearEncoderConfig {
  std::size_t channels = 2;
  std::size_t samples = 6;  // per window
  std::size_t hidden = 16;
  std::size_t kernel = 3;
  std::size_t dim = 16;
};

void init_wear_encoder(ParameterStore& ps, const WearEncoderConfig& c, CounterRng& rng);

/// Windows stacked as consecutive segments of c.samples rows. Masked rows are
/// ignored (their values never reach the output).
struct WindowBatch {
  std::size_t windows = 0;
  Tensor values;                      // [windows * samples, channels]
  std::vector<std::uint8_t> mask;     // per row
  std::vector<std::uint8_t> hidden;   // per window; 1 = replace with the missing-window vector
};

/// Returns [windows, dim]. Fully masked or hidden windows take the learned
/// missing-window vector.
Var encode_wearable_windows(Graph& g, const WearEncoderConfig& c, const WindowBatch& batch);

enum class AggMode { attention, mean };

/// Permutation-invariant pooling of the rows of `set` into [1, p]. Rows are
/// put in a canonical order first so the reduction is bitwise order-free.
/// `query` ([p, 1]) is only used in attention mode.
Var aggregate(Var set, AggMode mode, Var query);
Var aggregate(Var set, AggMode mode);

/// Small random init used throughout: N(0, scale^2).
Tensor random_matrix(std::size_t r, std::size_t c, double scale, CounterRng& rng);

}  // namespace ctmm::model
