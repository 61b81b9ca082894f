#include <cstdio>

#include "ctmm/io/container.hpp"
#include "ctmm/io/strict_json.hpp"
#include "ctmm/trainer/trainer.hpp"

namespace ctmm::train {

using nlohmann::json;

void TrainerConfig::validate() const {
  auto bad = [](const std::string& f, const std::string& why) { throw io::ConfigError("trainer." + f + ": " + why); };
  if (warmup_steps >= total_steps && total_steps > 0) bad("warmup_steps", "must be below total_steps");
  if (!(peak_lr >= 0)) bad("peak_lr", "must be non-negative");
  if (!(adam.beta1 >= 0 && adam.beta1 < 1)) bad("beta1", "must lie in [0, 1)");
  if (!(adam.beta2 >= 0 && adam.beta2 < 1)) bad("beta2", "must lie in [0, 1)");
  if (!(adam.eps > 0)) bad("eps", "must be positive");
  if (!(adam.weight_decay >= 0)) bad("weight_decay", "must be non-negative");
  if (!(clip_norm > 0)) bad("clip_norm", "must be positive");
  if (batch_size == 0) bad("batch_size", "must be positive");
  if (checkpoint_every == 0) bad("checkpoint_every", "must be positive");
  if (!(rare_cap >= 1)) bad("rare_cap", "must be at least 1");
}

json trainer_config_to_json(const TrainerConfig& c) {
  return {{"total_steps", c.total_steps}, {"warmup_steps", c.warmup_steps}, {"peak_lr", c.peak_lr},
          {"beta1", c.adam.beta1},        {"beta2", c.adam.beta2},          {"eps", c.adam.eps},
          {"weight_decay", c.adam.weight_decay}, {"clip_norm", c.clip_norm}, {"batch_size", c.batch_size},
          {"checkpoint_every", c.checkpoint_every}, {"rare_upweight", c.rare_upweight}, {"rare_cap", c.rare_cap},
          {"train_noise", c.train_noise}};
}

TrainerConfig trainer_config_from_json(const json& j, const std::string& path) {
  TrainerConfig c;
  io::StrictObject o(j, path);
  o.get("total_steps", c.total_steps);
  o.get("warmup_steps", c.warmup_steps);
  o.get("peak_lr", c.peak_lr);
  o.get("beta1", c.adam.beta1);
  o.get("beta2", c.adam.beta2);
  o.get("eps", c.adam.eps);
  o.get("weight_decay", c.adam.weight_decay);
  o.get("clip_norm", c.clip_norm);
  o.get("batch_size", c.batch_size);
  o.get("checkpoint_every", c.checkpoint_every);
  o.get("rare_upweight", c.rare_upweight);
  o.get("rare_cap", c.rare_cap);
  o.get("train_noise", c.train_noise);
  o.finish();
  try {
    c.validate();
  } catch (const io::ConfigError& e) {
    std::string msg = e.what();
    if (path != "trainer") msg = path + msg.substr(7);
    throw io::ConfigError(msg);
  }
  return c;
}

json run_config_to_json(const RunConfig& c) {
  return {{"model", model::model_config_to_json(c.model)},
          {"objective", obj::objective_config_to_json(c.objective)},
          {"trainer", trainer_config_to_json(c.trainer)},
          {"seed", c.seed}};
}

std::string config_digest(const RunConfig& c) {
  const std::string s = run_config_to_json(c).dump();
  const auto h = io::fnv1a(reinterpret_cast<const std::uint8_t*>(s.data()), s.size());
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& c) {
  io::Writer w(kCheckpointMagic);
  json params = json::array();
  for (const auto& [name, t] : c.params.all()) params.push_back({{"name", name}, {"shape", t.shape()}});
  w.header({{"format", "ctmm-checkpoint"},
            {"version", kCheckpointVersion},
            {"digest", c.digest},
            {"step", c.step},
            {"optimizer_step", c.optimizer.step},
            {"rejected_steps", c.rejected_steps},
            {"config", run_config_to_json(c.config)},
            {"params", params}});
  w.f64s(std::vector<double>(c.stats.mean.begin(), c.stats.mean.end()));
  w.f64s(std::vector<double>(c.stats.sd.begin(), c.stats.sd.end()));
  for (const auto& [name, t] : c.params.all()) {
    w.f64s(t.raw());
    w.f64s(c.optimizer.m.at(name).raw());
    w.f64s(c.optimizer.v.at(name).raw());
  }
  return w.finish();
}

Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
  io::Reader r(bytes, kCheckpointMagic, "checkpoint");
  const json& h = r.header();
  Checkpoint c;
  try {
    const auto version = h.at("version").get<std::uint64_t>();
    if (h.at("format").get<std::string>() != "ctmm-checkpoint")
      throw CheckpointError("checkpoint: unexpected format '" + h.at("format").get<std::string>() + "'");
    if (version != kCheckpointVersion)
      throw CheckpointError("checkpoint: version " + std::to_string(version) + " is not supported (expected " +
                            std::to_string(kCheckpointVersion) + ")");
    c.digest = h.at("digest").get<std::string>();
    c.step = h.at("step").get<std::size_t>();
    c.rejected_steps = h.at("rejected_steps").get<std::size_t>();
    const json& cfg = h.at("config");
    c.config.model = model::model_config_from_json(cfg.at("model"), "checkpoint.config.model");
    c.config.objective = obj::objective_config_from_json(cfg.at("objective"), "checkpoint.config.objective");
    c.config.trainer = trainer_config_from_json(cfg.at("trainer"), "checkpoint.config.trainer");
    c.config.seed = cfg.at("seed").get<std::uint64_t>();
    c.optimizer.config = c.config.trainer.adam;
    c.optimizer.step = h.at("optimizer_step").get<std::size_t>();
  } catch (const json::exception& e) {
    throw io::FormatError(std::string("checkpoint: header: ") + e.what());
  }
  if (config_digest(c.config) != c.digest) throw CheckpointError("checkpoint: stored digest does not match its config");
  auto stat = [&](const char* f) {
    auto v = r.f64s(f);
    if (v.size() != 3) throw io::FormatError(std::string("checkpoint: field '") + f + "' must have 3 entries");
    return std::array<double, 3>{v[0], v[1], v[2]};
  };
  c.stats.mean = stat("stats.mean");
  c.stats.sd = stat("stats.sd");
  for (const auto& p : h.at("params")) {
    const auto name = p.at("name").get<std::string>();
    const auto shape = p.at("shape").get<num::Shape>();
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    auto read = [&](const std::string& what) {
      auto v = r.f64s(name + "." + what);
      if (v.size() != n) throw io::FormatError("checkpoint: parameter '" + name + "' " + what + " has wrong length");
      return Tensor(shape, std::move(v));
    };
    c.params.add(name, read("value"));
    c.optimizer.m.emplace(name, read("m"));
    c.optimizer.v.emplace(name, read("v"));
  }
  r.expect_end();
  return c;
}

void save_checkpoint(const Checkpoint& c, const std::string& path) { io::write_file(path, serialize_checkpoint(c)); }

Checkpoint load_checkpoint(const std::string& path) { return deserialize_checkpoint(io::read_file(path)); }

void require_digest(const Checkpoint& c, const RunConfig& expected) {
  const auto want = config_digest(expected);
  if (c.digest != want)
    throw CheckpointError("checkpoint: config digest " + c.digest + " does not match the requested config " + want);
}

}  // namespace ctmm::train
