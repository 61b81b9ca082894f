#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctmm/cohort/types.hpp"
#include "ctmm/model/backbone.hpp"
#include "ctmm/model/encoders.hpp"

namespace ctmm::model {

struct ModelConfig {
  std::size_t vocab = 8;
  std::size_t channels = 2;
  std::size_t window_samples = 6;
  double sample_step = 600.0;  // seconds between wearable samples

  std::size_t dim = 16;
  std::size_t heads = 2;
  std::size_t layers = 2;
  std::size_t ff = 32;
  std::size_t components = 4;
  std::size_t cond_dim = 8;
  std::size_t time_dim = 8;
  std::size_t conv_hidden = 16;
  std::size_t conv_kernel = 3;
  double time_scale = 86400.0;
  double attn_dropout = 0.0;
  double stochastic_depth = 0.0;

  bool discrete_time = false;
  double discrete_bin = 86400.0;

  double wear_lookback = 86400.0;
  double ehr_lookback = 7.0 * 86400.0;
  AggMode agg = AggMode::attention;
  std::size_t pred_horizons = 3;
  std::size_t elbo_dim = 2;

  double window_seconds() const { return static_cast<double>(window_samples) * sample_step; }
  std::size_t window_size() const { return window_samples * channels; }
  void validate() const;
  BackboneConfig backbone() const;
  EhrEmbedConfig ehr_embed() const;
  WearEncoderConfig wear_encoder() const;
};

nlohmann::json model_config_to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j, const std::string& path = "model");

ParameterStore init_parameters(const ModelConfig& c, std::uint64_t seed);

/// Inputs visible at time t_end: complete wearable windows ending within the
/// wearable lookback and EHR events within the EHR lookback.
struct Context {
  double t_end = 0.0;
  std::vector<double> window_end;         // time of each window's last sample
  std::vector<std::size_t> window_first;  // grid index of each window's first sample
  WindowBatch windows;
  std::vector<EhrEvent> events;
};

Context build_context(const PatientRecord& rec, double t_end, const ModelConfig& c);

/// Per-call options: which inputs are hidden and where readouts are placed.
struct EncodeRequest {
  std::vector<std::uint8_t> ehr_masked;   // per event; masked events use the mask token
  std::vector<std::uint8_t> wear_hidden;  // per window; hidden windows use the missing-window vector
  std::vector<double> query_times;
};

struct Encoded {
  Var z;         // [n, dim], timeline order
  Var inputs;    // embeddings before the backbone, timeline order
  std::vector<double> times;  // as seen by the backbone
  std::vector<Tag> tags;
  std::vector<std::size_t> event_pos, window_pos, query_pos;
};

Encoded encode(Graph& g, const ModelConfig& c, const Context& ctx, const EncodeRequest& req,
               TrainNoise* noise = nullptr);

/// Latent of a learned query token at time t over an arbitrary context.
/// Rejects t earlier than the first context entry.
std::vector<double> readout_at(const ParameterStore& ps, const ModelConfig& c, const Context& ctx, double t);

}  // namespace ctmm::model
