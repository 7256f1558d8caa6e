#include "slidegcd/slidegraph.hpp"

#include <algorithm>
#include <set>

namespace slidegcd {

ConvVariant parse_conv_variant(std::string_view name) {
  if (name == "hyper") return ConvVariant::Hyper;
  if (name == "gcn") return ConvVariant::Gcn;
  throw ConfigError("unknown conv variant '" + std::string(name) + "' (expected hyper|gcn)");
}

std::string to_string(ConvVariant v) { return v == ConvVariant::Hyper ? "hyper" : "gcn"; }

SlideGraph knn_hypergraph(MatrixD projected, std::size_t k) {
  const std::size_t n = projected.rows();
  if (k >= n) {
    throw ParameterError("build_graph: k = " + std::to_string(k) + " must be < N = " +
                         std::to_string(n));
  }
  SlideGraph g;
  g.num_nodes = n;
  g.k = k;
  g.hyperedges.reserve(n);
  std::vector<std::pair<double, std::size_t>> cand;
  cand.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    cand.clear();
    const auto a = projected.row(i);
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const auto b = projected.row(j);
      double d = 0.0;
      for (std::size_t c = 0; c < a.size(); ++c) {
        const double diff = a[c] - b[c];
        d += diff * diff;
      }
      cand.emplace_back(d, j);
    }
    // Pair ordering gives (distance, index) lexicographic: ties go to the smaller index.
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end());
    std::vector<std::size_t> edge{i};
    for (std::size_t r = 0; r < k; ++r) edge.push_back(cand[r].second);
    g.hyperedges.push_back(std::move(edge));
  }
  g.projected = std::move(projected);
  return g;
}

std::vector<std::pair<std::size_t, std::size_t>> star_expand(const SlideGraph& graph) {
  std::set<std::pair<std::size_t, std::size_t>> edges;
  for (std::size_t v = 0; v < graph.num_nodes; ++v) edges.insert({v, v});
  for (const auto& e : graph.hyperedges) {
    const std::size_t anchor = e.front();
    for (std::size_t m : e) edges.insert(std::minmax(anchor, m));
  }
  return {edges.begin(), edges.end()};
}

}  // namespace slidegcd
