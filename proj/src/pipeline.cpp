#include "slidegcd/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace slidegcd {

Model init_model(const TrainConfig& config, std::size_t patch_dim) {
  config.validate();
  if (patch_dim == 0) throw InputError("init_model: patch dimension must be positive");
  if (config.backbone == BackboneKind::Precomputed && config.embed_dim != patch_dim) {
    throw ConfigError("config: precomputed backbone requires D_s (" +
                      std::to_string(config.embed_dim) + ") to equal the bag width (" +
                      std::to_string(patch_dim) + ")");
  }
  Rng rng(mix_seed(config.seed, 1));
  const auto classes = static_cast<std::size_t>(config.num_classes);
  Model m;
  m.config = config;
  m.patch_dim = patch_dim;
  m.params.backbone = BackboneParams<float>::init(patch_dim, config.attention_dim,
                                                  config.embed_dim, rng);
  m.params.mil_head = MilHeadParams<float>::init(config.embed_dim, classes, rng);
  m.params.gnn = GnnParams<float>::init(config.embed_dim, config.proj_dim,
                                        config.identity_projection, classes, rng);
  m.params.fusion = FusionParams<float>::init(config.embed_dim, classes, rng);
  m.buffer = NodeBuffer(config.buffer_size, config.num_classes, config.embed_dim);
  return m;
}

namespace {

Var<float> embed_bags(Tape<float>& tape, const Model& m,
                      const std::optional<BackboneVars<float>>& backbone,
                      std::span<const PatchBag* const> bags) {
  std::vector<Var<float>> rows;
  rows.reserve(bags.size());
  for (const PatchBag* bag : bags) {
    if (bag->embeddings.cols() != m.patch_dim) {
      throw InputError("bag '" + bag->slide_id + "' has width " +
                       std::to_string(bag->embeddings.cols()) + ", model expects " +
                       std::to_string(m.patch_dim));
    }
    rows.push_back(backbone ? backbone_embed(tape, *bag, *backbone).embedding
                            : precomputed_embed(tape, *bag));
  }
  return ops::concat_rows<float>(rows);
}

struct GraphPass {
  SlideGraph graph;
  GnnOutputs<float> out;
};

GraphPass run_graph(const Model& m, Var<float> nodes, std::span<const std::size_t> batch_rows,
                    const GnnVars<float>& vars) {
  SlideGraph graph = build_graph(nodes.value(), m.params.gnn.projection, m.config.k);
  auto prop = propagation_for<float>(graph, m.config.conv);
  auto out = slide_gnn_forward(nodes, prop, vars, batch_rows,
                               static_cast<float>(m.config.leaky_slope));
  return {std::move(graph), out};
}

std::vector<double> row_softmax(const MatrixF& logits, std::size_t row, double t = 1.0) {
  std::vector<double> z(logits.cols());
  for (std::size_t j = 0; j < z.size(); ++j) z[j] = logits(row, j);
  return softmax_with_temperature(z, t);
}

int argmax(const std::vector<double>& v) {
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

class Trainer {
 public:
  Trainer(const TrainConfig& config, const Dataset& dataset, const StepObserver& observer)
      : config_(config), dataset_(dataset), observer_(observer), rng_(mix_seed(config.seed, 2)) {}

  Checkpoint run() {
    config_.validate();
    dataset_.validate();
    if (dataset_.num_classes != config_.num_classes) {
      throw ConfigError("config: C = " + std::to_string(config_.num_classes) +
                        " but dataset has " + std::to_string(dataset_.num_classes) + " classes");
    }
    ckpt_.model = init_model(config_, dataset_.patch_dim());
    Model& model = ckpt_.model;

    std::vector<std::size_t> order = dataset_.train;
    const std::size_t batch = config_.batch_size;
    const std::size_t batches = (order.size() + batch - 1) / batch;
    const auto formal_total =
        static_cast<std::int64_t>((config_.total_epochs - config_.warmup_epochs) * batches);
    opt_.lr_max = config_.lr_formal;
    opt_.lr_min = config_.lr_min;
    opt_.total_steps = formal_total;

    std::int64_t step = 0, formal_step = 0;
    for (int epoch = 1; epoch <= config_.total_epochs; ++epoch) {
      rng_.shuffle(order);
      const bool warmup = epoch <= config_.warmup_epochs;
      if (!warmup && !model.buffer.full()) {
        throw StateError("formal stage needs a full node buffer, but warmup left it at " +
                         std::to_string(model.buffer.size()) + " / " +
                         std::to_string(model.buffer.capacity()) +
                         "; increase warmup_epochs or reduce L");
      }
      for (std::size_t b = 0; b < batches; ++b) {
        const std::size_t begin = b * batch;
        const std::size_t end = std::min(order.size(), begin + batch);
        std::vector<const PatchBag*> bags;
        std::vector<int> labels;
        for (std::size_t i = begin; i < end; ++i) {
          bags.push_back(&dataset_.bags[order[i]]);
          labels.push_back(dataset_.bags[order[i]].label);
        }
        LogRecord rec;
        rec.epoch = epoch;
        rec.step = step;
        if (warmup) {
          rec.stage = "warmup";
          rec.lr = config_.lr_warmup;
          warmup_step(bags, labels, rec);
        } else {
          rec.stage = "formal";
          rec.lr = cosine_anneal_lr(formal_step, formal_total, config_.lr_formal, config_.lr_min);
          formal_step_(bags, labels, rec);
          ++formal_step;
        }
        ckpt_.log.push_back(rec);
        if (observer_) observer_(model, rec);
        ++step;
      }
    }
    return std::move(ckpt_);
  }

 private:
  void warmup_step(std::span<const PatchBag* const> bags, std::span<const int> labels,
                   LogRecord& rec) {
    Model& model = ckpt_.model;
    Tape<float> tape;
    Binder<float> binder(tape, true);
    std::optional<BackboneVars<float>> backbone;
    if (config_.backbone == BackboneKind::Abmil) {
      backbone = bind_backbone(binder, model.params.backbone);
    }
    auto head = bind_mil_head(binder, model.params.mil_head);
    auto u = embed_bags(tape, model, backbone, bags);
    auto ce = cross_entropy(mil_head(u, head), labels);
    const LossBreakdown parts = total_loss({ce.scalar(), 0.0, 0.0, 0.0}, 0.0, config_.strategy);
    rec.ce_mil = parts.l_ce_mil;
    rec.total = parts.total;

    tape.backward(ce);
    auto grads = binder.gradients();
    adam_step<float>(grads, opt_, config_.lr_warmup);

    std::vector<std::size_t> perm(labels.size());
    std::iota(perm.begin(), perm.end(), 0);
    rng_.shuffle(perm);
    MatrixF pushed(labels.size(), u.cols());
    std::vector<int> pushed_labels(labels.size());
    for (std::size_t i = 0; i < perm.size(); ++i) {
      auto src = u.value().row(perm[i]);
      std::copy(src.begin(), src.end(), pushed.row(i).begin());
      pushed_labels[i] = labels[perm[i]];
    }
    model.buffer.warmup_push(pushed, pushed_labels);
  }

  void formal_step_(std::span<const PatchBag* const> bags, std::span<const int> labels,
                    LogRecord& rec) {
    Model& model = ckpt_.model;
    const auto t = static_cast<float>(config_.kd_temperature);
    Tape<float> tape;
    Binder<float> binder(tape, true);
    std::optional<BackboneVars<float>> backbone;
    if (config_.backbone == BackboneKind::Abmil) {
      backbone = bind_backbone(binder, model.params.backbone);
    }
    auto head = bind_mil_head(binder, model.params.mil_head);
    auto gnn = bind_gnn(binder, model.params.gnn);
    auto fusion = bind_fusion(binder, model.params.fusion, config_.strategy);

    auto u = embed_bags(tape, model, backbone, bags);
    auto mil_logits = mil_head(u, head);
    auto ce_mil = cross_entropy(mil_logits, labels);

    const ClassCenters centers = model.buffer.compute_centers();
    auto update = buffer_update_loss(u, labels, centers, static_cast<float>(config_.tau));
    const auto accepted = model.buffer.formal_update(u.value(), labels, centers);
    rec.accepted = static_cast<std::size_t>(std::count(accepted.begin(), accepted.end(), true));

    auto snap = snapshot_nodes(model.buffer, u, labels);
    auto pass = run_graph(model, snap.nodes, snap.batch_rows, gnn);

    Var<float> main_ce;
    std::optional<Var<float>> kd;
    if (is_distillation(config_.strategy)) {
      main_ce = cross_entropy(pass.out.logits, labels);
      kd = config_.strategy == Strategy::DistillJs ? kd_js(pass.out.logits, mil_logits, t)
                                                   : kd_kl(pass.out.logits, mil_logits, t);
    } else {
      BranchOutputs<float> branches{pass.out.logits, mil_logits, pass.out.logits, u};
      if (config_.strategy != Strategy::LogitsAdd) {
        branches.graph_features = ops::gather_rows(pass.out.attention.weighted, snap.batch_rows);
      }
      main_ce = cross_entropy(fuse(config_.strategy, branches, fusion), labels);
    }

    const LossBreakdown parts =
        total_loss({ce_mil.scalar(), main_ce.scalar(), kd ? kd->scalar() : 0.0, update.scalar()},
                   config_.beta, config_.strategy);
    rec.ce_mil = parts.l_ce_mil;
    rec.ce_graph = parts.l_ce_graph;
    rec.kd = parts.l_kd;
    rec.update = parts.l_update;
    rec.total = parts.total;

    auto total = ops::add(ce_mil, main_ce);
    if (kd) total = ops::add(total, *kd);
    total = ops::add(total, ops::scale(update, static_cast<float>(config_.beta)));
    tape.backward(total);
    auto grads = binder.gradients();
    adam_step<float>(grads, opt_, rec.lr);
  }

  const TrainConfig& config_;
  const Dataset& dataset_;
  const StepObserver& observer_;
  Rng rng_;
  OptimState<float> opt_;
  Checkpoint ckpt_;
};

}  // namespace

Checkpoint train(const TrainConfig& config, const Dataset& dataset,
                 const StepObserver& observer) {
  return Trainer(config, dataset, observer).run();
}

Prediction infer(const Checkpoint& checkpoint, const PatchBag& bag, const InferOptions& options) {
  const Model& m = checkpoint.model;
  if (options.conv && *options.conv != m.config.conv) {
    throw ConfigError("checkpoint was trained with conv=" + to_string(m.config.conv) +
                      "; refusing inference with conv=" + to_string(*options.conv));
  }
  if (bag.embeddings.cols() != m.patch_dim) {
    throw InputError("infer: bag '" + bag.slide_id + "' has width " +
                     std::to_string(bag.embeddings.cols()) + ", checkpoint expects " +
                     std::to_string(m.patch_dim));
  }
  Tape<float> tape;
  Binder<float> frozen(tape, false);
  std::optional<BackboneVars<float>> backbone;
  if (m.config.backbone == BackboneKind::Abmil) backbone = bind_backbone(frozen, m.params.backbone);
  auto head = bind_mil_head(frozen, m.params.mil_head);
  auto gnn = bind_gnn(frozen, m.params.gnn);
  auto fusion = bind_fusion(frozen, m.params.fusion, m.config.strategy);

  const PatchBag* query[] = {&bag};
  auto u = embed_bags(tape, m, backbone, query);
  auto mil_logits = mil_head(u, head);
  const int query_label[] = {-1};
  auto snap = snapshot_nodes(m.buffer, u, query_label);
  auto pass = run_graph(m, snap.nodes, snap.batch_rows, gnn);
  BranchOutputs<float> branches{pass.out.logits, mil_logits, pass.out.logits, u};
  if (m.config.strategy == Strategy::FeatCat || m.config.strategy == Strategy::FeatAdd) {
    branches.graph_features = ops::gather_rows(pass.out.attention.weighted, snap.batch_rows);
  }
  auto final_logits = fuse(m.config.strategy, branches, fusion);

  Prediction p;
  p.probabilities = row_softmax(final_logits.value(), 0);
  p.graph_probabilities = row_softmax(pass.out.logits.value(), 0);
  p.mil_probabilities = row_softmax(mil_logits.value(), 0);
  p.predicted = argmax(p.probabilities);
  const std::size_t anchor = snap.batch_rows.front();
  const auto& edge = pass.graph.hyperedges[anchor];
  for (std::size_t i = 1; i < edge.size(); ++i) {
    const std::size_t node = edge[i];
    p.neighbors.push_back({node, node < m.buffer.size() ? "buffer" : "batch", snap.labels[node]});
  }
  return p;
}

EvalReport evaluate(const Checkpoint& checkpoint, std::span<const PatchBag> bags,
                    const InferOptions& options) {
  if (bags.empty()) throw InputError("evaluate: empty split");
  const int classes = checkpoint.model.config.num_classes;
  const auto c = static_cast<std::size_t>(classes);
  std::vector<int> labels, pred_final, pred_graph, pred_mil;
  MatrixD prob_final(bags.size(), c), prob_graph(bags.size(), c), prob_mil(bags.size(), c);
  for (std::size_t i = 0; i < bags.size(); ++i) {
    const Prediction p = infer(checkpoint, bags[i], options);
    labels.push_back(bags[i].label);
    pred_final.push_back(p.predicted);
    pred_graph.push_back(argmax(p.graph_probabilities));
    pred_mil.push_back(argmax(p.mil_probabilities));
    for (std::size_t j = 0; j < c; ++j) {
      prob_final(i, j) = p.probabilities[j];
      prob_graph(i, j) = p.graph_probabilities[j];
      prob_mil(i, j) = p.mil_probabilities[j];
    }
  }
  return {compute_metrics(labels, pred_final, prob_final, classes),
          compute_metrics(labels, pred_graph, prob_graph, classes),
          compute_metrics(labels, pred_mil, prob_mil, classes)};
}

MatrixF embed_slides(const Checkpoint& checkpoint, std::span<const PatchBag> bags) {
  const Model& m = checkpoint.model;
  Tape<float> tape;
  Binder<float> frozen(tape, false);
  std::optional<BackboneVars<float>> backbone;
  if (m.config.backbone == BackboneKind::Abmil) backbone = bind_backbone(frozen, m.params.backbone);
  std::vector<const PatchBag*> ptrs;
  for (const auto& b : bags) ptrs.push_back(&b);
  if (ptrs.empty()) return MatrixF(0, m.config.embed_dim);
  return embed_bags(tape, m, backbone, ptrs).value();
}

GraphDump export_graph(const Checkpoint& checkpoint, std::span<const PatchBag> queries) {
  const Model& m = checkpoint.model;
  if (!m.buffer.full()) throw StateError("export_graph: checkpoint buffer is not full");
  MatrixF nodes = m.buffer.stacked();
  GraphDump dump;
  dump.labels = m.buffer.stacked_labels();
  dump.sources.assign(nodes.rows(), "buffer");
  if (!queries.empty()) {
    const MatrixF q = embed_slides(checkpoint, queries);
    MatrixF all(nodes.rows() + q.rows(), nodes.cols());
    std::copy(nodes.storage().begin(), nodes.storage().end(), all.storage().begin());
    std::copy(q.storage().begin(), q.storage().end(),
              all.storage().begin() + static_cast<std::ptrdiff_t>(nodes.storage().size()));
    nodes = std::move(all);
    for (const auto& b : queries) {
      dump.labels.push_back(b.label);
      dump.sources.push_back("batch");
    }
  }
  dump.graph = build_graph(nodes, m.params.gnn.projection, m.config.k);
  return dump;
}

void write_graph_tsv(const GraphDump& dump, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  std::ofstream nodes(dir / "nodes.tsv");
  std::ofstream edges(dir / "edges.tsv");
  if (!nodes || !edges) throw IoError("cannot write graph files in '" + dir.string() + "'");
  const MatrixD& p = dump.graph.projected;
  nodes << "node_id\tsource\tlabel\tx\ty\n";
  char buf[64];
  for (std::size_t i = 0; i < dump.graph.num_nodes; ++i) {
    nodes << i << '\t' << dump.sources[i] << '\t' << dump.labels[i];
    for (std::size_t j = 0; j < 2; ++j) {
      std::snprintf(buf, sizeof buf, "%.9g", j < p.cols() ? p(i, j) : 0.0);
      nodes << '\t' << buf;
    }
    nodes << '\n';
  }
  edges << "edge_id\tanchor_id\tmembers\n";
  for (std::size_t e = 0; e < dump.graph.hyperedges.size(); ++e) {
    const auto& members = dump.graph.hyperedges[e];
    edges << e << '\t' << members.front() << '\t';
    for (std::size_t i = 0; i < members.size(); ++i) edges << (i ? "," : "") << members[i];
    edges << '\n';
  }
  if (!nodes || !edges) throw IoError("short write of graph files in '" + dir.string() + "'");
}

std::vector<PatchBag> split_bags(const Dataset& ds, std::span<const std::size_t> indices) {
  std::vector<PatchBag> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(ds.bags.at(i));
  return out;
}

std::string log_header() {
  return "epoch\tstage\tstep\tlr\tl_ce_mil\tl_ce_graph\tl_kd\tl_update\ttotal\taccepted";
}

std::string format_log_record(const LogRecord& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%d\t%s\t%lld\t%.17g\t%.17g\t%.17g\t%.17g\t%.17g\t%.17g\t%zu",
                r.epoch, r.stage.c_str(), static_cast<long long>(r.step), r.lr, r.ce_mil,
                r.ce_graph, r.kd, r.update, r.total, r.accepted);
  return buf;
}

LogRecord parse_log_record(const std::string& line) {
  std::istringstream in(line);
  LogRecord r;
  if (!(in >> r.epoch >> r.stage >> r.step >> r.lr >> r.ce_mil >> r.ce_graph >> r.kd >>
        r.update >> r.total >> r.accepted)) {
    throw FormatError("malformed training log record: '" + line + "'");
  }
  return r;
}

nlohmann::json metrics_to_json(const Metrics& m) {
  nlohmann::json per_class = nlohmann::json::object();
  for (std::size_t c = 0; c < m.per_class.size(); ++c) {
    const auto& cm = m.per_class[c];
    per_class[std::to_string(c)] = {{"precision", cm.precision},
                                    {"recall", cm.recall},
                                    {"f1", cm.f1},
                                    {"auc", cm.auc ? nlohmann::json(*cm.auc) : nlohmann::json()},
                                    {"support", cm.support}};
  }
  return {{"accuracy", m.accuracy},
          {"macro_f1", m.macro_f1},
          {"macro_auc", m.macro_auc ? nlohmann::json(*m.macro_auc) : nlohmann::json()},
          {"per_class", per_class},
          {"confusion_matrix", m.confusion},
          {"warnings", m.warnings}};
}

nlohmann::json eval_report_to_json(const EvalReport& r, const std::string& config_hash) {
  nlohmann::json j = metrics_to_json(r.final);
  j["branches"] = {{"graph", metrics_to_json(r.graph)}, {"mil", metrics_to_json(r.mil)}};
  j["config_hash"] = config_hash;
  return j;
}

}  // namespace slidegcd
