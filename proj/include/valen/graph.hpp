#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <vector>

#include "valen/matrix.hpp"

namespace valen {

enum class GraphMetric { Euclidean, Cosine };

// k-NN affinity graph over feature rows, with the symmetric normalization
// D^{-1/2} A D^{-1/2} used by the GCN. Adjacency is directed as built
// (a_ij = 1 iff row i is among the k nearest neighbors of row j) plus a
// unit diagonal; symmetrize ORs in the transpose.
struct AffinityGraph {
  Matrix adjacency;   // n x n, entries {0,1}
  Matrix normalized;  // n x n
  int k = 0;
};

namespace detail {

inline double row_dist(const Matrix& f, int a, int b, GraphMetric metric) {
  const double* x = f.row(a);
  const double* y = f.row(b);
  if (metric == GraphMetric::Euclidean) {
    double d = 0.0;
    for (int j = 0; j < f.cols; ++j) {
      double t = x[j] - y[j];
      d += t * t;
    }
    return d;
  }
  double dot = 0.0, nx = 0.0, ny = 0.0;
  for (int j = 0; j < f.cols; ++j) {
    dot += x[j] * y[j];
    nx += x[j] * x[j];
    ny += y[j] * y[j];
  }
  double denom = std::sqrt(nx) * std::sqrt(ny);
  return denom > 0.0 ? 1.0 - dot / denom : 1.0;
}

}  // namespace detail

inline Matrix symmetric_normalize(const Matrix& adjacency) {
  int n = adjacency.rows;
  std::vector<double> inv_sqrt_deg(n);
  for (int i = 0; i < n; ++i) {
    double deg = 0.0;
    for (int j = 0; j < n; ++j) deg += adjacency(i, j);
    if (deg <= 0.0) throw std::runtime_error("symmetric_normalize: zero degree row");
    inv_sqrt_deg[i] = 1.0 / std::sqrt(deg);
  }
  Matrix norm(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      norm(i, j) = inv_sqrt_deg[i] * adjacency(i, j) * inv_sqrt_deg[j];
  return norm;
}

inline AffinityGraph build_knn_graph(const Matrix& features, int k,
                                     GraphMetric metric = GraphMetric::Euclidean,
                                     bool symmetrize = false) {
  const int n = features.rows;
  if (n < 1) throw std::invalid_argument("build_knn_graph: empty features");
  if (n > 1 && (k < 1 || k >= n))
    throw std::invalid_argument("build_knn_graph: need 1 <= k < n");
  if (!features.all_finite())
    throw std::invalid_argument("build_knn_graph: non-finite features");

  Matrix adj(n, n);
  for (int i = 0; i < n; ++i) adj(i, i) = 1.0;

  std::vector<std::pair<double, int>> cand;
  for (int j = 0; j < n; ++j) {
    cand.clear();
    for (int i = 0; i < n; ++i) {
      if (i == j) continue;
      cand.emplace_back(detail::row_dist(features, i, j, metric), i);
    }
    // ties broken by lower index
    std::stable_sort(cand.begin(), cand.end(), [](const auto& a, const auto& b) {
      return a.first < b.first;
    });
    int kk = std::min<int>(k, static_cast<int>(cand.size()));
    for (int t = 0; t < kk; ++t) adj(cand[t].second, j) = 1.0;
  }

  if (symmetrize)
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        if (adj(i, j) > 0.0 || adj(j, i) > 0.0) adj(i, j) = adj(j, i) = 1.0;

  AffinityGraph g;
  g.k = k;
  g.normalized = symmetric_normalize(adj);
  g.adjacency = std::move(adj);
  return g;
}

// edge-list dump for debugging: "i j" per directed edge, diagonal included
inline void dump_edge_list(const AffinityGraph& g, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("dump_edge_list: cannot open " + path);
  for (int i = 0; i < g.adjacency.rows; ++i)
    for (int j = 0; j < g.adjacency.cols; ++j)
      if (g.adjacency(i, j) > 0.0) out << i << " " << j << "\n";
}

}  // namespace valen
