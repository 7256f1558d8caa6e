#include "slidegcd/objectives.hpp"

#include <cmath>

namespace slidegcd {

Strategy parse_strategy(std::string_view name) {
  if (name == "distill-js") return Strategy::DistillJs;
  if (name == "distill-kl") return Strategy::DistillKl;
  if (name == "logits-add") return Strategy::LogitsAdd;
  if (name == "feat-cat") return Strategy::FeatCat;
  if (name == "feat-add") return Strategy::FeatAdd;
  throw ConfigError("unknown strategy '" + std::string(name) +
                    "' (expected distill-js|distill-kl|logits-add|feat-cat|feat-add)");
}

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::DistillJs: return "distill-js";
    case Strategy::DistillKl: return "distill-kl";
    case Strategy::LogitsAdd: return "logits-add";
    case Strategy::FeatCat: return "feat-cat";
    case Strategy::FeatAdd: return "feat-add";
  }
  return "unknown";
}

LossBreakdown total_loss(const LossParts& parts, double beta, Strategy strategy) {
  const std::pair<const char*, double> named[] = {{"l_ce_mil", parts.ce_mil},
                                                  {"l_ce_graph", parts.ce_main},
                                                  {"l_kd", parts.kd},
                                                  {"l_update", parts.update},
                                                  {"beta", beta}};
  for (const auto& [name, v] : named) {
    if (!std::isfinite(v)) {
      throw TrainingError(std::string("non-finite loss component ") + name + " = " +
                          std::to_string(v) + " (ce_mil=" + std::to_string(parts.ce_mil) +
                          ", ce_graph=" + std::to_string(parts.ce_main) +
                          ", kd=" + std::to_string(parts.kd) +
                          ", update=" + std::to_string(parts.update) + ")");
    }
  }
  LossBreakdown out;
  out.l_ce_mil = parts.ce_mil;
  out.l_ce_graph = parts.ce_main;
  out.l_kd = is_distillation(strategy) ? parts.kd : 0.0;
  out.l_update = parts.update;
  out.total = out.l_ce_mil + out.l_ce_graph + out.l_kd + beta * out.l_update;
  return out;
}

}  // namespace slidegcd
