#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "slidegcd/backbone.hpp"
#include "slidegcd/data.hpp"
#include "slidegcd/metrics.hpp"
#include "slidegcd/objectives.hpp"
#include "slidegcd/rehearsal.hpp"
#include "slidegcd/slidegraph.hpp"

namespace slidegcd {

// Defaults are the desk-scale synthetic reference configuration.
struct TrainConfig {
  std::size_t buffer_size = 64;  // L
  int num_classes = 2;           // C
  std::size_t k = 5;
  std::size_t batch_size = 8;    // B
  std::size_t embed_dim = 32;    // D_s
  std::size_t proj_dim = 128;    // D_proj
  bool identity_projection = false;
  std::size_t attention_dim = 64;
  double kd_temperature = 1.5;   // t
  double beta = 1.75;
  double tau = 0.5;
  int warmup_epochs = 5;
  int total_epochs = 30;
  double lr_warmup = 2e-4;
  double lr_formal = 1e-4;
  double lr_min = 0.0;
  double leaky_slope = 0.01;
  Strategy strategy = Strategy::DistillJs;
  ConvVariant conv = ConvVariant::Hyper;
  BackboneKind backbone = BackboneKind::Abmil;
  std::uint64_t seed = 0;

  // Throws ConfigError on any violated invariant.
  void validate() const;

  nlohmann::json to_json() const;
  // Unknown keys are rejected.
  static TrainConfig from_json(const nlohmann::json& j);
  static bool is_key(const std::string& key);
  std::string hash() const;
};

struct ModelParams {
  BackboneParams<float> backbone;
  MilHeadParams<float> mil_head;
  GnnParams<float> gnn;
  FusionParams<float> fusion;

  // Every stored matrix, including the fixed graph projection.
  template <class F>
  void visit_all(F&& f) {
    backbone.visit(f);
    mil_head.visit(f);
    f("gnn.projection", gnn.projection);
    gnn.visit(f);
    fusion.visit(f);
  }
};

struct Model {
  TrainConfig config;
  std::size_t patch_dim = 0;
  ModelParams params;
  NodeBuffer buffer;
};

Model init_model(const TrainConfig& config, std::size_t patch_dim);

struct LogRecord {
  int epoch = 0;
  std::string stage;  // "warmup" | "formal"
  std::int64_t step = 0;
  double lr = 0.0;
  double ce_mil = 0.0;
  double ce_graph = 0.0;
  double kd = 0.0;
  double update = 0.0;
  double total = 0.0;
  std::size_t accepted = 0;
};

std::string format_log_record(const LogRecord& r);
LogRecord parse_log_record(const std::string& line);
std::string log_header();

struct Checkpoint {
  Model model;
  std::vector<LogRecord> log;
};

// Invoked after every optimiser step with the current model state.
using StepObserver = std::function<void(const Model&, const LogRecord&)>;

Checkpoint train(const TrainConfig& config, const Dataset& dataset,
                 const StepObserver& observer = {});

struct Neighbor {
  std::size_t node = 0;
  std::string source;  // "buffer" | "batch"
  int label = -1;
};

struct Prediction {
  int predicted = 0;
  std::vector<double> probabilities;  // final output
  std::vector<double> graph_probabilities;
  std::vector<double> mil_probabilities;
  std::vector<Neighbor> neighbors;  // members of the query's hyperedge, anchor excluded
};

struct InferOptions {
  std::optional<ConvVariant> conv;  // must match the checkpoint when given
};

Prediction infer(const Checkpoint& checkpoint, const PatchBag& bag,
                 const InferOptions& options = {});

struct EvalReport {
  Metrics final;
  Metrics graph;
  Metrics mil;
};

EvalReport evaluate(const Checkpoint& checkpoint, std::span<const PatchBag> bags,
                    const InferOptions& options = {});

// Frozen slide embeddings (one row per bag).
MatrixF embed_slides(const Checkpoint& checkpoint, std::span<const PatchBag> bags);

// Buffer nodes followed by optional query nodes, with the kNN hypergraph over them.
struct GraphDump {
  SlideGraph graph;
  std::vector<int> labels;
  std::vector<std::string> sources;  // "buffer" | "batch"
};

GraphDump export_graph(const Checkpoint& checkpoint, std::span<const PatchBag> queries = {});

// nodes.tsv (node_id, source, label, x, y) and edges.tsv (edge_id, anchor_id, members).
void write_graph_tsv(const GraphDump& dump, const std::filesystem::path& dir);

std::vector<PatchBag> split_bags(const Dataset& ds, std::span<const std::size_t> indices);

inline constexpr char kCheckpointMagic[4] = {'S', 'G', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::string& bytes);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

nlohmann::json metrics_to_json(const Metrics& m);
nlohmann::json eval_report_to_json(const EvalReport& r, const std::string& config_hash);

}  // namespace slidegcd
