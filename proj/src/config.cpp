#include <cstdio>
#include <set>

#include "slidegcd/pipeline.hpp"

namespace slidegcd {

BackboneKind parse_backbone_kind(std::string_view name) {
  if (name == "abmil") return BackboneKind::Abmil;
  if (name == "precomputed") return BackboneKind::Precomputed;
  throw ConfigError("unknown backbone '" + std::string(name) + "' (expected abmil|precomputed)");
}

std::string to_string(BackboneKind kind) {
  return kind == BackboneKind::Abmil ? "abmil" : "precomputed";
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("config: " + msg); };
  if (num_classes < 2) fail("C must be >= 2");
  if (buffer_size == 0 || buffer_size % static_cast<std::size_t>(num_classes) != 0) {
    fail("L = " + std::to_string(buffer_size) + " must be a positive multiple of C = " +
         std::to_string(num_classes));
  }
  if (k < 1 || k >= buffer_size) fail("k must satisfy 1 <= k < L");
  if (batch_size < 1) fail("B must be >= 1");
  if (embed_dim < 1) fail("D_s must be >= 1");
  if (proj_dim < 1) fail("D_proj must be >= 1");
  if (attention_dim < 1) fail("attention_dim must be >= 1");
  if (!(kd_temperature > 0.0)) fail("t must be > 0");
  if (!(tau > 0.0)) fail("tau must be > 0");
  if (!(beta >= 0.0)) fail("beta must be >= 0");
  if (warmup_epochs < 1) fail("warmup_epochs must be >= 1");
  if (total_epochs <= warmup_epochs) fail("total_epochs must exceed warmup_epochs");
  if (!(lr_warmup >= 0.0) || !(lr_min >= 0.0) || !(lr_formal >= lr_min)) {
    fail("learning rates must satisfy lr_warmup >= 0 and lr_formal >= lr_min >= 0");
  }
  if (!(leaky_slope >= 0.0)) fail("leaky_slope must be >= 0");
}

namespace {

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys = {
      "L",           "C",          "k",        "B",           "D_s",           "D_proj",
      "identity_projection", "attention_dim", "t", "beta",   "tau",           "warmup_epochs",
      "total_epochs", "lr_warmup", "lr_formal", "lr_min",     "leaky_slope",   "strategy",
      "conv",        "backbone",   "seed"};
  return keys;
}

}  // namespace

bool TrainConfig::is_key(const std::string& key) { return known_keys().count(key) > 0; }

nlohmann::json TrainConfig::to_json() const {
  return {{"L", buffer_size},
          {"C", num_classes},
          {"k", k},
          {"B", batch_size},
          {"D_s", embed_dim},
          {"D_proj", proj_dim},
          {"identity_projection", identity_projection},
          {"attention_dim", attention_dim},
          {"t", kd_temperature},
          {"beta", beta},
          {"tau", tau},
          {"warmup_epochs", warmup_epochs},
          {"total_epochs", total_epochs},
          {"lr_warmup", lr_warmup},
          {"lr_formal", lr_formal},
          {"lr_min", lr_min},
          {"leaky_slope", leaky_slope},
          {"strategy", to_string(strategy)},
          {"conv", to_string(conv)},
          {"backbone", to_string(backbone)},
          {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config: expected a JSON object");
  TrainConfig c;
  for (const auto& [key, value] : j.items()) {
    if (!is_key(key)) throw ConfigError("config: unknown key '" + key + "'");
    try {
      if (key == "L") c.buffer_size = value.get<std::size_t>();
      else if (key == "C") c.num_classes = value.get<int>();
      else if (key == "k") c.k = value.get<std::size_t>();
      else if (key == "B") c.batch_size = value.get<std::size_t>();
      else if (key == "D_s") c.embed_dim = value.get<std::size_t>();
      else if (key == "D_proj") c.proj_dim = value.get<std::size_t>();
      else if (key == "identity_projection") c.identity_projection = value.get<bool>();
      else if (key == "attention_dim") c.attention_dim = value.get<std::size_t>();
      else if (key == "t") c.kd_temperature = value.get<double>();
      else if (key == "beta") c.beta = value.get<double>();
      else if (key == "tau") c.tau = value.get<double>();
      else if (key == "warmup_epochs") c.warmup_epochs = value.get<int>();
      else if (key == "total_epochs") c.total_epochs = value.get<int>();
      else if (key == "lr_warmup") c.lr_warmup = value.get<double>();
      else if (key == "lr_formal") c.lr_formal = value.get<double>();
      else if (key == "lr_min") c.lr_min = value.get<double>();
      else if (key == "leaky_slope") c.leaky_slope = value.get<double>();
      else if (key == "strategy") c.strategy = parse_strategy(value.get<std::string>());
      else if (key == "conv") c.conv = parse_conv_variant(value.get<std::string>());
      else if (key == "backbone") c.backbone = parse_backbone_kind(value.get<std::string>());
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("config: bad value for '" + key + "': " + e.what());
    }
    if ((key == "L" || key == "k" || key == "B" || key == "D_s" || key == "D_proj" ||
         key == "attention_dim" || key == "seed") &&
        value.is_number_integer() && value.get<long long>() < 0) {
      throw ConfigError("config: '" + key + "' must be non-negative");
    }
  }
  return c;
}

std::string TrainConfig::hash() const {
  const std::string text = to_json().dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace slidegcd
