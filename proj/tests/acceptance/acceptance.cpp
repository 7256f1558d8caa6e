// End-to-end acceptance run: one PASS/FAIL line per criterion, nonzero exit on any failure.
// Usage: acceptance [work_dir]   (artifacts are kept when a work_dir is given)

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "slidegcd/cli.hpp"
#include "slidegcd/pipeline.hpp"

using namespace slidegcd;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s.precision(precision);
  s << v;
  return s.str();
}

MatrixD random_matrix(Rng& rng, std::size_t r, std::size_t c, double scale = 1.0) {
  MatrixD m(r, c);
  for (auto& v : m.storage()) v = scale * rng.normal();
  return m;
}

Var<double> probe(Var<double> y, const MatrixD& w) {
  return ops::sum(ops::hadamard(y, y.tape->constant(w)));
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int cli(const std::vector<std::string>& args, std::string* err_text = nullptr) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  if (err_text) *err_text = err.str();
  return code;
}

nlohmann::json read_json(const fs::path& p) { return nlohmann::json::parse(read_bytes(p)); }

// ---------------------------------------------------------------------------
// 1. Gradient oracles

Outcome gradient_oracles() {
  const auto t0 = Clock::now();
  Rng rng(101);
  constexpr int kInstances = 20;
  struct Family {
    std::string name;
    double tol;
    std::function<GradCheckResult()> run;
  };
  std::vector<Family> families;

  families.push_back({"linear", 1e-4, [&] {
                        const MatrixD r = random_matrix(rng, 4, 3);
                        return grad_check(
                            [&](Tape<double>&, std::span<const Var<double>> v) {
                              return probe(ops::linear(v[0], v[1], v[2]), r);
                            },
                            {random_matrix(rng, 4, 5), random_matrix(rng, 5, 3),
                             random_matrix(rng, 1, 3)});
                      }});
  families.push_back({"softmax", 1e-4, [&] {
                        const MatrixD r = random_matrix(rng, 3, 4);
                        const double t = rng.uniform(0.5, 2.0);
                        return grad_check(
                            [&](Tape<double>&, std::span<const Var<double>> v) {
                              return probe(ops::softmax_rows(v[0], t), r);
                            },
                            {random_matrix(rng, 3, 4, 2.0)});
                      }});
  families.push_back({"cross-entropy", 1e-4, [&] {
                        std::vector<int> y(4);
                        for (auto& v : y) v = static_cast<int>(rng.below(3));
                        return grad_check(
                            [&](Tape<double>&, std::span<const Var<double>> v) {
                              return cross_entropy(v[0], y);
                            },
                            {random_matrix(rng, 4, 3, 2.0)});
                      }});
  for (ConvVariant variant : {ConvVariant::Hyper, ConvVariant::Gcn}) {
    families.push_back({variant == ConvVariant::Hyper ? "hypergraph conv" : "gcn conv", 1e-4, [&, variant] {
                          const MatrixD x = random_matrix(rng, 7, 4);
                          const SlideGraph g = build_graph(x, MatrixD::identity(4), 3);
                          const auto prop = propagation_for<double>(g, variant);
                          const MatrixD r = random_matrix(rng, 7, 4);
                          return grad_check(
                              [&](Tape<double>&, std::span<const Var<double>> v) {
                                return probe(graph_conv(v[0], prop, v[1], 0.01), r);
                              },
                              {x, random_matrix(rng, 4, 4)});
                        }});
  }
  families.push_back({"centering attention", 1e-4, [&] {
                        const MatrixD r = random_matrix(rng, 5, 6);
                        return grad_check(
                            [&](Tape<double>&, std::span<const Var<double>> v) {
                              return probe(centering_attention(v[0], v[1], v[2]).weighted, r);
                            },
                            {random_matrix(rng, 5, 6), random_matrix(rng, 6, 4),
                             random_matrix(rng, 4, 6)});
                      }});
  families.push_back({"kd_js", 1e-4, [&] {
                        const double t = rng.uniform(0.5, 3.0);
                        return grad_check(
                            [&](Tape<double>&, std::span<const Var<double>> v) {
                              return kd_js(v[0], v[1], t);
                            },
                            {random_matrix(rng, 3, 4, 2.0), random_matrix(rng, 3, 4, 2.0)});
                      }});
  families.push_back({"kd_kl", 1e-4, [&] {
                        const double t = rng.uniform(0.5, 3.0);
                        const MatrixD teacher = random_matrix(rng, 3, 4, 2.0);
                        return grad_check(
                            [&](Tape<double>& tape, std::span<const Var<double>> v) {
                              return kd_kl(v[0], tape.constant(teacher), t);
                            },
                            {random_matrix(rng, 3, 4, 2.0)});
                      }});
  families.push_back({"buffer update loss", 1e-4, [&] {
                        const ClassCenters centers{random_matrix(rng, 3, 5)};
                        std::vector<int> y(4);
                        for (auto& v : y) v = static_cast<int>(rng.below(3));
                        const double tau = rng.uniform(0.2, 1.0);
                        return grad_check(
                            [&](Tape<double>&, std::span<const Var<double>> v) {
                              return buffer_update_loss(v[0], y, centers, tau);
                            },
                            {random_matrix(rng, 4, 5)});
                      }});
  families.push_back({"gated attention MIL", 1e-4, [&] {
                        auto bb = BackboneParams<double>::init(6, 8, 4, rng);
                        auto head = MilHeadParams<double>::init(4, 3, rng);
                        const MatrixD x = random_matrix(rng, 5, 6);
                        const int label[] = {static_cast<int>(rng.below(3))};
                        return grad_check(
                            [&](Tape<double>& tape, std::span<const Var<double>> v) {
                              BackboneVars<double> b{v[0], v[1], v[2], v[3], v[4]};
                              MilHeadVars<double> h{v[5], v[6]};
                              return cross_entropy(
                                  mil_head(backbone_embed(tape.constant(x), b).embedding, h), label);
                            },
                            {bb.attn_v, bb.attn_u, bb.attn_w, bb.proj_w, bb.proj_b, head.weight,
                             head.bias});
                      }});
  families.push_back({"SlideGNN composite", 1e-3, [&] {
                        auto p = GnnParams<double>::init(4, 5, false, 3, rng);
                        const MatrixD x = random_matrix(rng, 8, 4);
                        const SlideGraph g = build_graph(x, p.projection, 3);
                        const auto prop = hypergraph_propagation<double>(8, g.hyperedges);
                        const std::size_t mask[] = {5, 6, 7};
                        const int y[] = {0, 2, 1};
                        return grad_check(
                            [&](Tape<double>&, std::span<const Var<double>> v) {
                              GnnVars<double> vars{v[1], v[2], v[3], v[4], v[5], v[6]};
                              return cross_entropy(
                                  slide_gnn_forward(v[0], prop, vars, mask, 0.01).logits, y);
                            },
                            {x, p.theta1, p.theta2, p.w0, p.w1, p.cls_w, p.cls_b});
                      }});

  bool pass = true;
  std::string worst_name;
  double worst_ratio = 0.0, worst_err = 0.0;
  for (const auto& f : families) {
    for (int i = 0; i < kInstances; ++i) {
      const double err = f.run().max_rel_error;
      if (err > f.tol) pass = false;
      if (err / f.tol > worst_ratio) {
        worst_ratio = err / f.tol;
        worst_err = err;
        worst_name = f.name;
      }
    }
  }
  const double elapsed = seconds_since(t0);
  pass = pass && elapsed < 60.0;
  return {pass, std::to_string(families.size()) + " op families x " + std::to_string(kInstances) +
                    " instances; worst " + worst_name + " rel err " + fmt(worst_err, 3) + "; " +
                    fmt(elapsed, 3) + " s (limit 60 s)"};
}

// ---------------------------------------------------------------------------
// 2. Buffer invariants against a reference model

double euclid(std::span<const float> a, std::span<const double> c) {
  double s = 0.0;
  for (std::size_t j = 0; j < c.size(); ++j) {
    const double d = static_cast<double>(a[j]) - c[j];
    s += d * d;
  }
  return std::sqrt(s);
}

Outcome buffer_invariants() {
  const auto t0 = Clock::now();
  Rng rng(202);
  constexpr std::size_t kDim = 4;
  std::size_t updates = 0, accepted = 0, violations = 0;
  std::string first_violation;
  auto violate = [&](const std::string& what) {
    if (violations++ == 0) first_violation = what;
  };
  const std::pair<int, std::size_t> settings[] = {{2, 8}, {2, 64}, {4, 8}, {4, 64}};
  for (auto [c, l] : settings) {
    const std::size_t per_class = l / static_cast<std::size_t>(c);
    std::size_t config_updates = 0;
    while (config_updates < 2500) {
      NodeBuffer buffer(l, c, kDim);
      std::vector<std::vector<std::vector<float>>> model(c);  // reference FIFO per class
      // Warmup until every class is full, plus a random number of extra pushes.
      std::size_t extra = rng.below(2 * l);
      auto full = [&] {
        for (const auto& q : model)
          if (q.size() < per_class) return false;
        return true;
      };
      while (!full() || extra-- > 0) {
        const std::size_t n = 1 + rng.below(6);
        std::vector<int> y(n);
        MatrixF u(n, kDim);
        for (std::size_t i = 0; i < n; ++i) {
          y[i] = static_cast<int>(rng.below(static_cast<std::uint64_t>(c)));
          for (std::size_t j = 0; j < kDim; ++j) u(i, j) = static_cast<float>(rng.normal() + y[i]);
          auto& q = model[static_cast<std::size_t>(y[i])];
          if (q.size() == per_class) q.erase(q.begin());
          q.emplace_back(u.row(i).begin(), u.row(i).end());
        }
        buffer.warmup_push(u, y);
        ++updates;
        ++config_updates;
        for (int k = 0; k < c; ++k) {
          const auto& q = buffer.sub_queue(k);
          if (q.size() != model[k].size()) violate("warmup size mismatch");
          for (std::size_t e = 0; e < q.size(); ++e) {
            if (q[e].embedding != model[k][e]) violate("warmup FIFO order differs from reference");
            if (q[e].label != k) violate("class purity");
            if (e > 0 && q[e].counter <= q[e - 1].counter) violate("warmup counters not increasing");
          }
          if (q.size() > per_class) violate("capacity cap");
        }
      }
      // Formal stage.
      const std::size_t formal_steps = 20 + rng.below(60);
      for (std::size_t step = 0; step < formal_steps; ++step) {
        const std::size_t n = 1 + rng.below(8);
        std::vector<int> y(n);
        MatrixF u(n, kDim);
        for (std::size_t i = 0; i < n; ++i) {
          y[i] = static_cast<int>(rng.below(static_cast<std::uint64_t>(c)));
          for (std::size_t j = 0; j < kDim; ++j)
            u(i, j) = static_cast<float>(rng.normal() * rng.uniform(0.2, 2.0) + y[i]);
        }
        const ClassCenters centers = buffer.compute_centers();
        std::vector<bool> expected(n, false);
        for (std::size_t i = 0; i < n; ++i) {
          auto& q = model[static_cast<std::size_t>(y[i])];
          const auto center = centers.centers.row(static_cast<std::size_t>(y[i]));
          std::size_t far = 0;
          for (std::size_t e = 1; e < q.size(); ++e)
            if (euclid(q[e], center) > euclid(q[far], center)) far = e;
          if (euclid(u.row(i), center) < euclid(q[far], center)) {
            q[far].assign(u.row(i).begin(), u.row(i).end());
            expected[i] = true;
          }
        }
        std::vector<std::vector<BufferEntry>> before(c);
        for (int k = 0; k < c; ++k) before[k] = buffer.sub_queue(k);
        const std::vector<bool> acc = buffer.formal_update(u, y, centers);
        ++updates;
        ++config_updates;
        if (acc != expected) violate("accepted flags differ from reference");
        for (int k = 0; k < c; ++k) {
          const auto& q = buffer.sub_queue(k);
          const auto center = centers.centers.row(static_cast<std::size_t>(k));
          if (q.size() != per_class) violate("formal stage changed sub-queue size");
          for (std::size_t e = 0; e < q.size(); ++e) {
            if (q[e].label != k) violate("class purity");
            if (q[e].embedding != model[k][e]) violate("formal state differs from reference");
            if (q[e].embedding != before[k][e].embedding &&
                !(euclid(q[e].embedding, center) < euclid(before[k][e].embedding, center))) {
              violate("replacement did not strictly reduce distance to center");
            }
          }
        }
        for (bool a : acc) accepted += a;
        try {
          buffer.check_invariants();
        } catch (const Error& e) {
          violate(e.what());
        }
      }
    }
  }
  const double elapsed = seconds_since(t0);
  const bool pass = violations == 0 && updates >= 10000 && elapsed < 30.0;
  std::string detail = std::to_string(updates) + " updates over C in {2,4}, L in {8,64}; " +
                       std::to_string(accepted) + " accepted replacements; " +
                       std::to_string(violations) + " violations";
  if (violations) detail += " (first: " + first_violation + ")";
  return {pass, detail + "; " + fmt(elapsed, 3) + " s (limit 30 s)"};
}

// ---------------------------------------------------------------------------
// 3. kNN against exhaustive search

Outcome knn_oracle() {
  Rng rng(303);
  std::size_t mismatches = 0, ties_seen = 0;
  for (int inst = 0; inst < 100; ++inst) {
    const std::size_t n = 2 + rng.below(199);
    const std::size_t k = 1 + rng.below(std::min<std::size_t>(16, n - 1));
    const std::size_t d = 1 + rng.below(8);
    MatrixD x(n, d), w;
    if (inst % 4 == 0) {
      // Small integer lattice with the identity projection: exact distance ties.
      for (auto& v : x.storage()) v = static_cast<double>(rng.below(4));
      w = MatrixD::identity(d);
    } else {
      x = random_matrix(rng, n, d);
      w = random_matrix(rng, d, 1 + rng.below(12));
    }
    MatrixD p(n, w.cols());
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < w.cols(); ++j)
        for (std::size_t c = 0; c < d; ++c) p(i, j) += x(i, c) * w(c, j);
    const SlideGraph g = build_graph(x, w, k);
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<std::pair<double, std::size_t>> all;
      for (std::size_t j = 0; j < n; ++j) {
        if (j == i) continue;
        double s = 0.0;
        for (std::size_t c = 0; c < p.cols(); ++c) s += (p(i, c) - p(j, c)) * (p(i, c) - p(j, c));
        all.emplace_back(s, j);
      }
      std::stable_sort(all.begin(), all.end(),
                       [](const auto& a, const auto& b) { return a.first < b.first; });
      std::vector<std::size_t> expected = {i};
      for (std::size_t r = 0; r < k; ++r) expected.push_back(all[r].second);
      if (k < all.size() && all[k - 1].first == all[k].first) ++ties_seen;
      if (g.hyperedges[i] != expected) ++mismatches;
    }
  }
  return {mismatches == 0, "100 instances (N <= 200, k <= 16); " + std::to_string(mismatches) +
                               " mismatched hyperedges; " + std::to_string(ties_seen) +
                               " boundary ties resolved"};
}

// ---------------------------------------------------------------------------
// 4. Loss identities

Outcome loss_identities() {
  Rng rng(404);
  const double ln2 = std::numbers::ln2;
  double worst_sym = 0.0, worst_zero = 0.0, worst_center = 0.0, worst_beta = 0.0,
         worst_shift = 0.0;
  bool range_ok = true, separation_ok = true;
  for (int inst = 0; inst < 1000; ++inst) {
    Tape<double> tape;
    const std::size_t rows = 1 + rng.below(4), cols = 2 + rng.below(5);
    const double t = rng.uniform(0.3, 4.0);
    const MatrixD a = random_matrix(rng, rows, cols, rng.uniform(0.1, 10.0));
    const MatrixD b = random_matrix(rng, rows, cols, rng.uniform(0.1, 10.0));
    auto va = tape.constant(a), vb = tape.constant(b);
    const double ab = kd_js(va, vb, t).value()(0, 0), ba = kd_js(vb, va, t).value()(0, 0);
    worst_sym = std::max(worst_sym, std::abs(ab - ba));
    range_ok = range_ok && ab >= 0.0 && ab <= 2 * ln2 + 1e-9;
    worst_zero = std::max(worst_zero, std::abs(kd_js(va, va, t).value()(0, 0)));
    const auto pa = ops::softmax_rows(va, t).value(), pb = ops::softmax_rows(vb, t).value();
    double max_diff = 0.0;
    for (std::size_t i = 0; i < pa.size(); ++i) max_diff = std::max(max_diff, std::abs(pa[i] - pb[i]));
    if (max_diff > 1e-3 && !(ab > 1e-6)) separation_ok = false;

    const MatrixD h = random_matrix(rng, 3 + rng.below(10), 3 * cols, 3.0);
    auto att = centering_attention(tape.constant(h), tape.constant(random_matrix(rng, 3 * cols, 4, 2.0)),
                                   tape.constant(random_matrix(rng, 4, 3 * cols, 2.0)));
    double s = 0.0;
    for (double v : att.centered.value().storage()) s += v;
    worst_center = std::max(worst_center, std::abs(s));

    const LossParts parts{rng.uniform(0, 3), rng.uniform(0, 3), rng.uniform(0, 1), rng.uniform(-1, 3)};
    const double beta = rng.uniform(0, 5);
    const double base = parts.ce_mil + parts.ce_main + parts.kd;
    const double once = total_loss(parts, beta, Strategy::DistillJs).total - base;
    const double twice = total_loss(parts, 2 * beta, Strategy::DistillJs).total - base;
    worst_beta = std::max(worst_beta, std::abs(twice - 2 * once));

    std::vector<int> y(rows);
    for (auto& v : y) v = static_cast<int>(rng.below(cols));
    MatrixD shifted = a;
    const double shift = rng.uniform(-100, 100);
    for (auto& v : shifted.storage()) v += shift;
    worst_shift = std::max(worst_shift, std::abs(cross_entropy(va, y).value()(0, 0) -
                                                 cross_entropy(tape.constant(shifted), y).value()(0, 0)));
  }
  const bool pass = worst_sym <= 1e-9 && range_ok && worst_zero <= 1e-9 && separation_ok &&
                    worst_center <= 1e-9 && worst_beta <= 1e-9 && worst_shift <= 1e-9;
  return {pass, "1000 instances; JS asym " + fmt(worst_sym, 2) + ", JS(a,a) " + fmt(worst_zero, 2) +
                    ", range " + (range_ok ? "ok" : "violated") + ", zero-iff-equal " +
                    (separation_ok ? "ok" : "violated") + ", centering sum " +
                    fmt(worst_center, 2) + ", beta nonlinearity " + fmt(worst_beta, 2) +
                    ", CE shift " + fmt(worst_shift, 2)};
}

// ---------------------------------------------------------------------------
// 5. End-to-end synthetic run

double median3(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[1];
}

Outcome end_to_end() {
  std::vector<double> acc, graph, mil, times;
  for (std::uint64_t seed : {0u, 1u, 2u}) {
    const auto t0 = Clock::now();
    SyntheticSpec spec;
    spec.seed = seed;
    TrainConfig config;
    config.seed = seed;
    const Dataset ds = generate_synthetic(spec);
    const Checkpoint ckpt = train(config, ds);
    const EvalReport r = evaluate(ckpt, split_bags(ds, ds.test));
    acc.push_back(r.final.accuracy);
    graph.push_back(r.graph.accuracy);
    mil.push_back(r.mil.accuracy);
    times.push_back(seconds_since(t0));
  }
  const double a = median3(acc), g = median3(graph), m = median3(mil);
  const double slowest = *std::max_element(times.begin(), times.end());
  const bool pass = a >= 0.95 && g >= m - 0.05 && slowest < 120.0;
  return {pass, "median over 3 seeds: accuracy " + fmt(a) + " (>= 0.95), graph " + fmt(g) +
                    " vs mil " + fmt(m) + " (graph >= mil - 0.05); slowest run " +
                    fmt(slowest, 3) + " s (limit 120 s)"};
}

// ---------------------------------------------------------------------------
// 6. Ablation harness

Outcome ablations(const fs::path& work) {
  const fs::path cfg = work / "reference.json";
  std::ofstream(cfg) << R"({"synthetic": {}})" << "\n";
  struct Cell {
    std::string strategy, conv;
  };
  const std::vector<Cell> cells = {{"distill-js", "hyper"}, {"distill-kl", "hyper"},
                                   {"logits-add", "hyper"}, {"feat-cat", "hyper"},
                                   {"feat-add", "hyper"},   {"distill-js", "gcn"}};
  std::vector<std::string> summary;
  bool pass = true;
  std::set<std::string> key_sets;
  for (const auto& c : cells) {
    const fs::path out = work / "ablation" / (c.strategy + "_" + c.conv);
    std::string err;
    const int code = cli({"train", "--config", cfg.string(), "--out", out.string(), "--set",
                          "strategy=" + c.strategy, "--set", "conv=" + c.conv},
                         &err);
    if (code != 0 || !fs::exists(out / "metrics.json")) {
      pass = false;
      summary.push_back(c.strategy + "/" + c.conv + " failed (" + err.substr(0, 80) + ")");
      continue;
    }
    const auto m = read_json(out / "metrics.json");
    std::string keys;
    for (const auto& [k, v] : m.items()) keys += k + ",";
    key_sets.insert(keys);
    summary.push_back(c.strategy + "/" + c.conv + " acc " + fmt(m["accuracy"].get<double>(), 3));
    if (c.strategy == "distill-js" && c.conv == "hyper") {
      const Checkpoint ck = load_checkpoint(out / "checkpoint.sgck");
      const auto& tc = ck.model.config;
      if (tc.kd_temperature != 1.5 || tc.beta != 1.75 || tc.tau != 0.5) {
        pass = false;
        summary.push_back("distill-js not at t=1.5, beta=1.75, tau=0.5");
      }
    }
  }
  if (key_sets.size() > 1) {
    pass = false;
    summary.push_back("metrics.json schemas differ");
  }
  std::string detail;
  for (const auto& s : summary) detail += (detail.empty() ? "" : "; ") + s;
  return {pass, detail};
}

// ---------------------------------------------------------------------------
// 7. Determinism

Outcome determinism(const fs::path& work) {
  const fs::path cfg = work / "reference.json";
  const fs::path a = work / "determinism" / "a", b = work / "determinism" / "b";
  if (cli({"train", "--config", cfg.string(), "--out", a.string()}) != 0 ||
      cli({"train", "--config", cfg.string(), "--out", b.string()}) != 0) {
    return {false, "train invocation failed"};
  }
  auto lines = [](const fs::path& p) {
    std::vector<LogRecord> v;
    std::istringstream in(read_bytes(p));
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line))
      if (!line.empty()) v.push_back(parse_log_record(line));
    return v;
  };
  const auto la = lines(a / "train_log.tsv"), lb = lines(b / "train_log.tsv");
  double worst = la.size() == lb.size() ? 0.0 : INFINITY;
  for (std::size_t i = 0; i < std::min(la.size(), lb.size()); ++i) {
    for (auto field : {&LogRecord::ce_mil, &LogRecord::ce_graph, &LogRecord::kd, &LogRecord::update,
                       &LogRecord::total, &LogRecord::lr}) {
      worst = std::max(worst, std::abs(la[i].*field - lb[i].*field));
    }
  }
  const bool metrics_equal = read_bytes(a / "metrics.json") == read_bytes(b / "metrics.json");
  return {worst <= 1e-12 && metrics_equal,
          std::to_string(la.size()) + " logged steps; max per-step loss difference " +
              fmt(worst, 3) + " (<= 1e-12); metrics.json " +
              (metrics_equal ? "identical" : "different")};
}

// ---------------------------------------------------------------------------
// 8. Inference immutability and round trip

Outcome immutability(const fs::path& work) {
  const fs::path ckpt_path = work / "determinism" / "a" / "checkpoint.sgck";
  if (!fs::exists(ckpt_path)) return {false, "no checkpoint from the determinism run"};
  const std::string bytes_before = read_bytes(ckpt_path);
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  const std::string memory_before = serialize_checkpoint(ckpt);
  const Dataset ds = generate_synthetic(SyntheticSpec{});
  const auto bags = split_bags(ds, ds.test);
  for (int i = 0; i < 100; ++i) infer(ckpt, bags[static_cast<std::size_t>(i) % bags.size()]);
  const bool unchanged =
      read_bytes(ckpt_path) == bytes_before && serialize_checkpoint(ckpt) == memory_before;

  const fs::path copy = work / "roundtrip.sgck";
  save_checkpoint(ckpt, copy);
  const Checkpoint loaded = load_checkpoint(copy);
  const EvalReport a = evaluate(ckpt, bags), b = evaluate(loaded, bags);
  double drift = std::max({std::abs(a.final.accuracy - b.final.accuracy),
                           std::abs(a.final.macro_f1 - b.final.macro_f1),
                           std::abs(a.final.macro_auc.value_or(0) - b.final.macro_auc.value_or(0)),
                           std::abs(a.graph.accuracy - b.graph.accuracy),
                           std::abs(a.mil.accuracy - b.mil.accuracy)});
  for (const auto& bag : bags) {
    const Prediction p = infer(ckpt, bag), q = infer(loaded, bag);
    for (std::size_t c = 0; c < p.probabilities.size(); ++c)
      drift = std::max(drift, std::abs(p.probabilities[c] - q.probabilities[c]));
  }
  return {unchanged && drift <= 1e-7,
          std::string("checkpoint bytes ") + (unchanged ? "unchanged" : "CHANGED") +
              " after 100 infer calls; save/load metric and probability drift " + fmt(drift, 3) +
              " (<= 1e-7)"};
}

// ---------------------------------------------------------------------------
// 9. Sensitivity to k

Outcome k_sweep(const fs::path& work) {
  const fs::path cfg = work / "reference.json";
  const fs::path out = work / "sweep_k";
  std::string err;
  if (cli({"sweep", "--config", cfg.string(), "--grid", "k=6,7,8,9,10,11,12,13,14,15,16", "--out",
           out.string()},
          &err) != 0) {
    return {false, "sweep failed: " + err.substr(0, 120)};
  }
  std::istringstream in(read_bytes(out / "sweep.tsv"));
  std::string line;
  std::getline(in, line);
  std::vector<double> aucs;
  bool logs = true;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, '\t')) cells.push_back(cell);
    if (cells.size() < 6 || cells[5] == "null") return {false, "cell without macro-AUC: " + line};
    aucs.push_back(std::stod(cells[5]));
    char name[16];
    std::snprintf(name, sizeof name, "cell_%03zu", aucs.size() - 1);
    logs = logs && fs::exists(out / name / "train_log.tsv") && fs::exists(out / name / "metrics.json");
  }
  if (aucs.empty()) return {false, "empty sweep"};
  const auto [lo, hi] = std::minmax_element(aucs.begin(), aucs.end());
  const double spread = *hi - *lo;
  return {aucs.size() == 11 && logs && spread < 0.05,
          std::to_string(aucs.size()) + " cells (k = 6..16), all logged: " + (logs ? "yes" : "no") +
              "; macro-AUC range [" + fmt(*lo) + ", " + fmt(*hi) + "], spread " + fmt(spread, 3) +
              " (< 0.05)"};
}

}  // namespace

int main(int argc, char** argv) {
  const bool keep = argc > 1;
  const fs::path work = keep ? fs::path(argv[1])
                             : fs::temp_directory_path() /
                                   ("slidegcd_acceptance_" + std::to_string(::getpid()));
  fs::create_directories(work);

  struct Criterion {
    int id;
    std::string name;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria = {
      {1, "gradient oracles", gradient_oracles},
      {2, "buffer invariants", buffer_invariants},
      {3, "kNN oracle equivalence", knn_oracle},
      {4, "loss identities", loss_identities},
      {5, "end-to-end synthetic run", end_to_end},
      {6, "ablation harness", [&] { return ablations(work); }},
      {7, "determinism", [&] { return determinism(work); }},
      {8, "inference immutability and round trip", [&] { return immutability(work); }},
      {9, "k sensitivity sweep", [&] { return k_sweep(work); }},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    Outcome o;
    const auto t0 = Clock::now();
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failed;
    std::cout << (o.pass ? "PASS" : "FAIL") << " [" << c.id << "] " << c.name << ": " << o.detail
              << " [" << fmt(seconds_since(t0), 3) << " s]" << std::endl;
  }
  std::cout << (failed == 0 ? "ALL PASS" : std::to_string(failed) + " FAILED") << " ("
            << criteria.size() << " criteria)" << std::endl;
  if (!keep) {
    std::error_code ec;
    fs::remove_all(work, ec);
  }
  return failed == 0 ? 0 : 1;
}
