#include "slidegcd/cli.hpp"

#include <atomic>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "CLI11.hpp"

namespace slidegcd {

namespace fs = std::filesystem;
using nlohmann::json;

Override parse_override(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("expected key=value, got '" + text + "'");
  }
  return {text.substr(0, eq), text.substr(eq + 1)};
}

namespace {

const std::set<std::string> kRunKeys = {"synthetic", "train_manifest", "val_manifest",
                                        "test_manifest", "out"};

json literal(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::exception&) {
    return text;
  }
}

SyntheticSpec synthetic_from_json(const json& j, const TrainConfig& train) {
  if (!j.is_object()) throw ConfigError("config: 'synthetic' must be an object");
  SyntheticSpec s;
  s.num_classes = train.num_classes;
  s.seed = train.seed;
  for (const auto& [key, v] : j.items()) {
    try {
      if (key == "num_classes") s.num_classes = v.get<int>();
      else if (key == "slides_per_class") s.slides_per_class = v.get<int>();
      else if (key == "min_patches") s.min_patches = v.get<int>();
      else if (key == "max_patches") s.max_patches = v.get<int>();
      else if (key == "patch_dim") s.patch_dim = v.get<int>();
      else if (key == "class_separation") s.class_separation = v.get<double>();
      else if (key == "noise_scale") s.noise_scale = v.get<double>();
      else if (key == "signal_fraction") s.signal_fraction = v.get<double>();
      else if (key == "val_per_class") s.val_per_class = v.get<int>();
      else if (key == "test_per_class") s.test_per_class = v.get<int>();
      else if (key == "seed") s.seed = v.get<std::uint64_t>();
      else throw ConfigError("config: unknown synthetic key '" + key + "'");
    } catch (const json::exception& e) {
      throw ConfigError("config: bad value for 'synthetic." + key + "': " + e.what());
    }
  }
  try {
    s.validate();
  } catch (const Error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (s.num_classes != train.num_classes) {
    throw ConfigError("config: synthetic.num_classes must equal C");
  }
  return s;
}

fs::path resolve(const json& v, const fs::path& base_dir, const char* key) {
  if (!v.is_string()) throw ConfigError(std::string("config: '") + key + "' must be a string");
  fs::path p = v.get<std::string>();
  if (p.empty() || p.is_absolute() || base_dir.empty()) return p;
  return base_dir / p;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write '" + path.string() + "'");
  f << text;
  if (!f) throw IoError("short write to '" + path.string() + "'");
}

std::string format_log(const std::vector<LogRecord>& log) {
  std::string text = log_header() + "\n";
  for (const auto& r : log) text += format_log_record(r) + "\n";
  return text;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string fmt_auc(const std::optional<double>& v) { return v ? fmt(*v) : "nan"; }

json load_json(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config '" + path.string() + "'");
  try {
    return json::parse(f);
  } catch (const json::exception& e) {
    throw ConfigError("config '" + path.string() + "' is not valid JSON: " + e.what());
  }
}

}  // namespace

RunConfig parse_run_config(json doc, const std::vector<Override>& overrides,
                           const fs::path& base_dir) {
  if (!doc.is_object()) throw ConfigError("config: expected a JSON object");
  for (const auto& [key, value] : overrides) {
    if (key.rfind("synthetic.", 0) == 0) {
      if (!doc.contains("synthetic")) doc["synthetic"] = json::object();
      doc["synthetic"][key.substr(10)] = literal(value);
    } else if (key == "out" || key.ends_with("_manifest")) {
      doc[key] = value;
    } else if (TrainConfig::is_key(key)) {
      doc[key] = literal(value);
    } else {
      throw ConfigError("unknown override key '" + key + "'");
    }
  }
  json train_part = json::object();
  for (const auto& [key, value] : doc.items()) {
    if (TrainConfig::is_key(key)) {
      train_part[key] = value;
    } else if (!kRunKeys.count(key)) {
      throw ConfigError("config: unknown key '" + key + "'");
    }
  }
  RunConfig run;
  run.train = TrainConfig::from_json(train_part);
  run.train.validate();
  if (doc.contains("synthetic")) run.synthetic = synthetic_from_json(doc["synthetic"], run.train);
  if (doc.contains("train_manifest")) run.train_manifest = resolve(doc["train_manifest"], base_dir, "train_manifest");
  if (doc.contains("val_manifest")) run.val_manifest = resolve(doc["val_manifest"], base_dir, "val_manifest");
  if (doc.contains("test_manifest")) run.test_manifest = resolve(doc["test_manifest"], base_dir, "test_manifest");
  if (doc.contains("out")) run.out = resolve(doc["out"], {}, "out");
  if (run.synthetic && !run.train_manifest.empty()) {
    throw ConfigError("config: give either 'synthetic' or manifests, not both");
  }
  if (!run.synthetic && run.train_manifest.empty()) {
    throw ConfigError("config: no data source ('synthetic' or 'train_manifest')");
  }
  if (run.synthetic && run.train.backbone == BackboneKind::Precomputed &&
      static_cast<std::size_t>(run.synthetic->patch_dim) != run.train.embed_dim) {
    throw ConfigError("config: precomputed backbone needs synthetic.patch_dim == D_s");
  }
  return run;
}

RunConfig load_run_config(const fs::path& path, const std::vector<Override>& overrides) {
  return parse_run_config(load_json(path), overrides, path.parent_path());
}

Dataset load_run_dataset(const RunConfig& run) {
  if (run.synthetic) return generate_synthetic(*run.synthetic);
  return dataset_from_manifests(run.train_manifest, run.val_manifest, run.test_manifest,
                                run.train.num_classes);
}

GridAxis parse_grid_axis(const std::string& text) {
  auto [key, list] = parse_override(text);
  GridAxis axis{key, {}};
  std::stringstream ss(list);
  std::string v;
  while (std::getline(ss, v, ',')) {
    if (v.empty()) throw ConfigError("grid '" + text + "' has an empty value");
    axis.values.push_back(v);
  }
  if (axis.values.empty()) throw ConfigError("grid '" + text + "' lists no values");
  return axis;
}

std::vector<std::vector<Override>> expand_grid(const std::vector<GridAxis>& axes) {
  std::vector<std::vector<Override>> cells{{}};
  for (const auto& axis : axes) {
    std::vector<std::vector<Override>> next;
    for (const auto& cell : cells) {
      for (const auto& v : axis.values) {
        auto c = cell;
        c.emplace_back(axis.key, v);
        next.push_back(std::move(c));
      }
    }
    cells = std::move(next);
  }
  return cells;
}

std::vector<SweepRow> run_sweep(const json& doc, const std::vector<Override>& base,
                                const std::vector<GridAxis>& axes, const fs::path& base_dir,
                                const fs::path& out, unsigned jobs) {
  for (const auto& axis : axes) {
    if (axis.key == "seed") throw ConfigError("grid over 'seed' is not supported");
  }
  const RunConfig base_run = parse_run_config(doc, base, base_dir);
  const auto cells = expand_grid(axes);
  std::vector<RunConfig> runs;
  std::vector<std::string> labels;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    auto overrides = base;
    overrides.insert(overrides.end(), cells[i].begin(), cells[i].end());
    RunConfig run = parse_run_config(doc, overrides, base_dir);
    // The data stay fixed across cells; only the training seed varies.
    if (run.synthetic && base_run.synthetic) run.synthetic->seed = base_run.synthetic->seed;
    run.train.seed = mix_seed(base_run.train.seed, i);
    run.train.validate();
    std::string label;
    for (const auto& [k, v] : cells[i]) label += (label.empty() ? "" : ";") + k + "=" + v;
    runs.push_back(std::move(run));
    labels.push_back(label);
  }

  std::vector<SweepRow> rows(runs.size());
  std::vector<std::string> failures(runs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < runs.size(); i = next++) {
      try {
        const Dataset ds = load_run_dataset(runs[i]);
        if (ds.test.empty()) throw InputError("sweep cell has an empty test split");
        const Checkpoint ckpt = train(runs[i].train, ds);
        const auto test = split_bags(ds, ds.test);
        rows[i] = {i, labels[i], runs[i].train.seed, evaluate(ckpt, test)};
        char name[32];
        std::snprintf(name, sizeof name, "cell_%03zu", i);
        const fs::path dir = out / name;
        fs::create_directories(dir);
        write_text(dir / "metrics.json",
                   eval_report_to_json(rows[i].report, runs[i].train.hash()).dump(2) + "\n");
        write_text(dir / "train_log.tsv", format_log(ckpt.log));
      } catch (const std::exception& e) {
        failures[i] = e.what();
      }
    }
  };
  fs::create_directories(out);
  jobs = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(runs.size())));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < jobs; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (std::size_t i = 0; i < failures.size(); ++i) {
    if (!failures[i].empty()) {
      throw TrainingError("sweep cell " + std::to_string(i) + " (" + labels[i] +
                          ") failed: " + failures[i]);
    }
  }
  std::string tsv =
      "cell\tgrid\tseed\taccuracy\tmacro_f1\tmacro_auc\tgraph_accuracy\tmil_accuracy\n";
  for (const auto& r : rows) {
    tsv += std::to_string(r.cell) + "\t" + r.grid + "\t" + std::to_string(r.seed) + "\t" +
           fmt(r.report.final.accuracy) + "\t" + fmt(r.report.final.macro_f1) + "\t" +
           fmt_auc(r.report.final.macro_auc) + "\t" + fmt(r.report.graph.accuracy) + "\t" +
           fmt(r.report.mil.accuracy) + "\n";
  }
  write_text(out / "sweep.tsv", tsv);
  return rows;
}

namespace {

struct Options {
  std::string config;
  std::string out;
  std::string checkpoint;
  std::string manifest;
  std::string conv;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> sets;
  std::vector<std::string> grids;
  unsigned jobs = 1;
};

std::vector<Override> collect_overrides(const Options& o) {
  std::vector<Override> v;
  for (const auto& s : o.sets) v.push_back(parse_override(s));
  if (o.seed) v.emplace_back("seed", std::to_string(*o.seed));
  if (!o.out.empty()) v.emplace_back("out", o.out);
  return v;
}

InferOptions infer_options(const Options& o) {
  InferOptions io;
  if (!o.conv.empty()) io.conv = parse_conv_variant(o.conv);
  return io;
}

int cmd_train(const Options& o, std::ostream& out) {
  const RunConfig run = load_run_config(o.config, collect_overrides(o));
  if (run.out.empty()) throw ConfigError("train: no output directory (--out or 'out')");
  const Dataset ds = load_run_dataset(run);
  if (ds.test.empty()) throw InputError("train: the test split is empty; metrics need one");

  const Checkpoint ckpt = train(run.train, ds);
  const EvalReport report = evaluate(ckpt, split_bags(ds, ds.test));
  fs::create_directories(run.out);
  save_checkpoint(ckpt, run.out / "checkpoint.sgck");
  write_text(run.out / "train_log.tsv", format_log(ckpt.log));
  write_text(run.out / "metrics.json",
             eval_report_to_json(report, run.train.hash()).dump(2) + "\n");
  out << "accuracy " << fmt(report.final.accuracy) << "  macro_f1 " << fmt(report.final.macro_f1)
      << "  macro_auc " << fmt_auc(report.final.macro_auc) << "  (graph "
      << fmt(report.graph.accuracy) << ", mil " << fmt(report.mil.accuracy) << ")\n"
      << "wrote " << run.out.string() << "\n";
  return 0;
}

int cmd_eval(const Options& o, std::ostream& out) {
  if (o.manifest.empty() == o.config.empty()) {
    throw ConfigError("eval: give exactly one of --manifest or --config");
  }
  const InferOptions io = infer_options(o);
  const Checkpoint ckpt = load_checkpoint(o.checkpoint);
  std::vector<PatchBag> bags;
  if (!o.manifest.empty()) {
    bags = load_manifest_bags(o.manifest);
  } else {
    const RunConfig run = load_run_config(o.config, collect_overrides(o));
    const Dataset ds = load_run_dataset(run);
    bags = split_bags(ds, ds.test);
  }
  const json metrics =
      eval_report_to_json(evaluate(ckpt, bags, io), ckpt.model.config.hash());
  if (!o.out.empty()) {
    fs::create_directories(o.out);
    write_text(fs::path(o.out) / "metrics.json", metrics.dump(2) + "\n");
  }
  out << metrics.dump(2) << "\n";
  return 0;
}

int cmd_infer(const Options& o, std::ostream& out) {
  const InferOptions io = infer_options(o);
  const Checkpoint ckpt = load_checkpoint(o.checkpoint);
  for (const auto& bag : load_manifest_bags(o.manifest)) {
    const Prediction p = infer(ckpt, bag, io);
    json neighbors = json::array();
    for (const auto& n : p.neighbors) {
      neighbors.push_back({{"node", n.node}, {"source", n.source}, {"label", n.label}});
    }
    out << json{{"slide_id", bag.slide_id},
                {"predicted", p.predicted},
                {"probabilities", p.probabilities},
                {"graph_probabilities", p.graph_probabilities},
                {"mil_probabilities", p.mil_probabilities},
                {"neighbors", neighbors}}
               .dump()
        << "\n";
  }
  return 0;
}

int cmd_sweep(const Options& o, std::ostream& out) {
  std::vector<GridAxis> axes;
  for (const auto& g : o.grids) axes.push_back(parse_grid_axis(g));
  const fs::path cfg = o.config;
  const json doc = load_json(cfg);
  const auto overrides = collect_overrides(o);
  const RunConfig base = parse_run_config(doc, overrides, cfg.parent_path());
  if (base.out.empty()) throw ConfigError("sweep: no output directory (--out or 'out')");
  const auto rows = run_sweep(doc, overrides, axes, cfg.parent_path(), base.out, o.jobs);
  for (const auto& r : rows) {
    out << r.cell << "\t" << r.grid << "\taccuracy " << fmt(r.report.final.accuracy)
        << "\tmacro_auc " << fmt_auc(r.report.final.macro_auc) << "\n";
  }
  out << "wrote " << (base.out / "sweep.tsv").string() << "\n";
  return 0;
}

int cmd_export_graph(const Options& o, std::ostream& out) {
  const Checkpoint ckpt = load_checkpoint(o.checkpoint);
  std::vector<PatchBag> queries;
  if (!o.manifest.empty()) queries = load_manifest_bags(o.manifest);
  const GraphDump dump = export_graph(ckpt, queries);
  write_graph_tsv(dump, o.out);
  out << "wrote " << dump.graph.num_nodes << " nodes and " << dump.graph.hyperedges.size()
      << " hyperedges to " << o.out << "\n";
  return 0;
}

int cmd_generate(const Options& o, std::ostream& out) {
  const RunConfig run = load_run_config(o.config, collect_overrides(o));
  if (!run.synthetic) throw ConfigError("generate: config has no 'synthetic' section");
  if (run.out.empty()) throw ConfigError("generate: no output directory (--out or 'out')");
  const Dataset ds = generate_synthetic(*run.synthetic);
  fs::create_directories(run.out / "bags");
  auto dump = [&](const std::vector<std::size_t>& idx, const char* name) {
    std::vector<ManifestRecord> records;
    for (std::size_t i : idx) {
      const PatchBag& b = ds.bags[i];
      const std::string rel = "bags/" + b.slide_id + ".sgcd";
      write_bag_file(b, run.out / rel);
      records.push_back({b.slide_id, rel, b.label});
    }
    write_manifest(records, run.out / name);
  };
  dump(ds.train, "train.tsv");
  dump(ds.val, "val.tsv");
  dump(ds.test, "test.tsv");
  out << "wrote " << ds.bags.size() << " bags to " << run.out.string() << "\n";
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Graph-collaborative slide classification: train, evaluate, sweep, export."};
  app.name("slidegcd");
  app.require_subcommand(1, 1);
  Options o;

  auto add_config = [&](CLI::App* c, bool required) {
    auto* opt = c->add_option("--config", o.config, "Run configuration (JSON)");
    if (required) opt->required();
  };
  auto add_overrides = [&](CLI::App* c) {
    c->add_option("--seed", o.seed, "Override the config seed");
    c->add_option("--set", o.sets, "Override a config key (key=value), repeatable")
        ->allow_extra_args(false);
  };

  auto* train_cmd = app.add_subcommand("train", "Train a model and write checkpoint, log, metrics");
  add_config(train_cmd, true);
  add_overrides(train_cmd);
  train_cmd->add_option("--out", o.out, "Output directory");

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval_cmd->add_option("--checkpoint", o.checkpoint, "Checkpoint file")->required();
  eval_cmd->add_option("--manifest", o.manifest, "Labelled bags to evaluate");
  add_config(eval_cmd, false);
  add_overrides(eval_cmd);
  eval_cmd->add_option("--out", o.out, "Directory for metrics.json");
  eval_cmd->add_option("--conv", o.conv, "Expected conv variant (hyper|gcn)");

  auto* infer_cmd = app.add_subcommand("infer", "Predict bags and report graph neighbours");
  infer_cmd->add_option("--checkpoint", o.checkpoint, "Checkpoint file")->required();
  infer_cmd->add_option("--manifest", o.manifest, "Bags to predict")->required();
  infer_cmd->add_option("--conv", o.conv, "Expected conv variant (hyper|gcn)");

  auto* sweep_cmd = app.add_subcommand("sweep", "Grid of training runs, one metrics row per cell");
  add_config(sweep_cmd, true);
  add_overrides(sweep_cmd);
  sweep_cmd->add_option("--grid", o.grids, "key=v1,v2,... (repeatable; cartesian product)")
      ->allow_extra_args(false);
  sweep_cmd->add_option("--out", o.out, "Output directory");
  sweep_cmd->add_option("--jobs", o.jobs, "Cells run in parallel")->check(CLI::PositiveNumber);

  auto* export_cmd = app.add_subcommand("export-graph", "Write nodes.tsv / edges.tsv");
  export_cmd->add_option("--checkpoint", o.checkpoint, "Checkpoint file")->required();
  export_cmd->add_option("--out", o.out, "Output directory")->required();
  export_cmd->add_option("--manifest", o.manifest, "Optional query bags");

  auto* gen_cmd = app.add_subcommand("generate", "Write the synthetic dataset as bag files");
  add_config(gen_cmd, true);
  add_overrides(gen_cmd);
  gen_cmd->add_option("--out", o.out, "Output directory");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  CLI::App* chosen = app.get_subcommands().front();
  try {
    const std::string name = chosen->get_name();
    if (name == "train") return cmd_train(o, out);
    if (name == "eval") return cmd_eval(o, out);
    if (name == "infer") return cmd_infer(o, out);
    if (name == "sweep") return cmd_sweep(o, out);
    if (name == "export-graph") return cmd_export_graph(o, out);
    return cmd_generate(o, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n\n" << chosen->help();
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace slidegcd
