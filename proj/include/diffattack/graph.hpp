#pragma once

#include "diffattack/common.hpp"

#include <cmath>
#include <deque>
#include <limits>
#include <numeric>
#include <optional>
#include <utility>

namespace diffattack {

/// Binary road-sensor graph. Adjacency entries are exactly 0 or 1; self-loops
/// are never stored (they are added when normalizing).
class Graph {
 public:
  Graph() = default;

  /// Validating constructor from a dense 0/1 matrix.
  static Graph from_adjacency(Matrix adjacency, bool undirected = true) {
    if (adjacency.rows() == 0 || adjacency.rows() != adjacency.cols()) {
      throw ShapeError("adjacency must be a non-empty square matrix");
    }
    const auto n = static_cast<std::size_t>(adjacency.rows());
    for (Eigen::Index i = 0; i < adjacency.rows(); ++i) {
      for (Eigen::Index j = 0; j < adjacency.cols(); ++j) {
        const double a = adjacency(i, j);
        if (a != 0.0 && a != 1.0) {
          throw Error("adjacency entries must be 0 or 1 (row " +
                      std::to_string(i) + ", col " + std::to_string(j) + ")");
        }
      }
    }
    adjacency.diagonal().setZero();
    if (undirected && !(adjacency.array() == adjacency.transpose().array()).all()) {
      throw Error("undirected graph requires a symmetric adjacency matrix");
    }
    Graph g;
    g.n_ = n;
    g.undirected_ = undirected;
    g.adjacency_ = std::move(adjacency);
    g.rebuild_lists();
    return g;
  }

  std::size_t size() const noexcept { return n_; }
  bool undirected() const noexcept { return undirected_; }
  const Matrix& adjacency() const noexcept { return adjacency_; }

  /// Out-neighbours (j with A_ij = 1), ascending.
  const std::vector<NodeId>& neighbors(NodeId i) const { return out_.at(i); }

  std::size_t degree(NodeId i) const { return out_.at(i).size(); }

  std::size_t edge_count() const noexcept {
    std::size_t m = 0;
    for (const auto& l : out_) m += l.size();
    return undirected_ ? m / 2 : m;
  }

  const std::optional<Matrix>& positions() const noexcept {
    return positions_;
  }

  Graph& set_positions(Matrix positions) {
    if (static_cast<std::size_t>(positions.rows()) != n_ ||
        positions.cols() != 2) {
      throw ShapeError("node positions must be N x 2");
    }
    positions_ = std::move(positions);
    return *this;
  }

  /// Stable 64-bit fingerprint of (N, directedness, adjacency). Positions do
  /// not participate: they never change what a model computes.
  std::uint64_t hash() const {
    std::uint64_t h = detail::fnv1a("graph");
    auto mix = [&h](std::uint64_t v) {
      for (int b = 0; b < 8; ++b) {
        h ^= (v >> (8 * b)) & 0xffU;
        h *= 0x100000001b3ULL;
      }
    };
    mix(n_);
    mix(undirected_ ? 1 : 0);
    for (std::size_t i = 0; i < n_; ++i) {
      for (NodeId j : out_[i]) {
        mix(i);
        mix(j);
      }
    }
    return h;
  }

 private:
  void rebuild_lists() {
    out_.assign(n_, {});
    for (std::size_t i = 0; i < n_; ++i) {
      for (std::size_t j = 0; j < n_; ++j) {
        if (adjacency_(static_cast<Eigen::Index>(i),
                       static_cast<Eigen::Index>(j)) != 0.0) {
          out_[i].push_back(j);
        }
      }
    }
  }

  std::size_t n_ = 0;
  bool undirected_ = true;
  Matrix adjacency_;
  std::vector<std::vector<NodeId>> out_;
  std::optional<Matrix> positions_;
};

/// Build a graph from an edge list. Duplicate edges collapse; self-loops are
/// dropped.
inline Graph build_graph(const std::vector<std::pair<NodeId, NodeId>>& edges,
                         std::size_t n_nodes, bool undirected = true) {
  if (n_nodes == 0) throw Error("graph needs at least one node");
  const auto n = static_cast<Eigen::Index>(n_nodes);
  Matrix a = Matrix::Zero(n, n);
  for (const auto& [u, v] : edges) {
    if (u >= n_nodes || v >= n_nodes) {
      throw Error("edge (" + std::to_string(u) + "," + std::to_string(v) +
                  ") out of range for " + std::to_string(n_nodes) + " nodes");
    }
    if (u == v) continue;
    a(static_cast<Eigen::Index>(u), static_cast<Eigen::Index>(v)) = 1.0;
    if (undirected) {
      a(static_cast<Eigen::Index>(v), static_cast<Eigen::Index>(u)) = 1.0;
    }
  }
  return Graph::from_adjacency(std::move(a), undirected);
}

/// D^{-1/2} (A + I) D^{-1/2} with D_ii the row sums of A + I. Rows/columns of
/// nodes flagged inactive are zeroed and excluded from every degree.
inline Matrix normalize_with_self_loops(const Matrix& adjacency,
                                        const std::vector<bool>* active = nullptr) {
  const Eigen::Index n = adjacency.rows();
  Matrix tilde = adjacency;
  tilde.diagonal().array() += 1.0;
  if (active != nullptr) {
    for (Eigen::Index i = 0; i < n; ++i) {
      if (!(*active)[static_cast<std::size_t>(i)]) {
        tilde.row(i).setZero();
        tilde.col(i).setZero();
      }
    }
  }
  Vector inv_sqrt(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double d = tilde.row(i).sum();
    inv_sqrt(i) = d > 0.0 ? 1.0 / std::sqrt(d) : 0.0;
  }
  return inv_sqrt.asDiagonal() * tilde * inv_sqrt.asDiagonal();
}

/// Normalized adjacency with self-loops. `matrix` is immutable after
/// construction; `power` computes Â^k on demand from eagerly cached powers
/// when available, so concurrent readers never race.
struct NormalizedAdjacency {
  Matrix matrix;
  std::vector<Matrix> cached_powers;  // cached_powers[k] = Â^k

  std::size_t size() const noexcept {
    return static_cast<std::size_t>(matrix.rows());
  }

  NormalizedAdjacency& precompute_powers(std::size_t max_k) {
    cached_powers.clear();
    cached_powers.push_back(Matrix::Identity(matrix.rows(), matrix.cols()));
    for (std::size_t k = 1; k <= max_k; ++k) {
      cached_powers.push_back(cached_powers.back() * matrix);
    }
    return *this;
  }

  Matrix power(std::size_t k) const {
    if (k < cached_powers.size()) return cached_powers[k];
    Matrix p = Matrix::Identity(matrix.rows(), matrix.cols());
    for (std::size_t i = 0; i < k; ++i) p = p * matrix;
    return p;
  }
};

inline NormalizedAdjacency normalized_adjacency(const Graph& g) {
  return NormalizedAdjacency{normalize_with_self_loops(g.adjacency()), {}};
}

inline constexpr std::size_t kUnreachable =
    std::numeric_limits<std::size_t>::max();

/// Breadth-first hop counts from `source` along out-edges.
inline std::vector<std::size_t> hop_distances(const Graph& g, NodeId source) {
  if (source >= g.size()) throw Error("node index out of range");
  std::vector<std::size_t> dist(g.size(), kUnreachable);
  std::deque<NodeId> queue{source};
  dist[source] = 0;
  while (!queue.empty()) {
    const NodeId u = queue.front();
    queue.pop_front();
    for (NodeId v : g.neighbors(u)) {
      if (dist[v] == kUnreachable) {
        dist[v] = dist[u] + 1;
        queue.push_back(v);
      }
    }
  }
  return dist;
}

/// Nodes within k hops of i, including i.
inline NodeSet k_hop_neighbors(const Graph& g, NodeId i, std::size_t k) {
  const auto dist = hop_distances(g, i);
  NodeSet out;
  for (NodeId h = 0; h < dist.size(); ++h) {
    if (dist[h] != kUnreachable && dist[h] <= k) out.push_back(h);
  }
  return out;
}

class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, double residual)
      : Error(what + " (residual " + std::to_string(residual) + ")"),
        residual_(residual) {}
  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

struct PagerankOptions {
  double damping = 0.85;
  double tol = 1e-10;
  std::size_t max_iter = 10'000;
};

/// Power iteration for S(i) = (1-a)/N + a * sum_{j -> i} S(j)/outdeg(j).
/// Mass held by dangling nodes is spread uniformly.
inline Vector pagerank(const Graph& g, const PagerankOptions& opt = {}) {
  if (!(opt.damping > 0.0 && opt.damping < 1.0)) {
    throw Error("pagerank damping must lie in (0, 1)");
  }
  const std::size_t n = g.size();
  const double nd = static_cast<double>(n);
  Vector s = Vector::Constant(static_cast<Eigen::Index>(n), 1.0 / nd);
  Vector next(static_cast<Eigen::Index>(n));
  double residual = std::numeric_limits<double>::infinity();
  for (std::size_t it = 0; it < opt.max_iter; ++it) {
    double dangling = 0.0;
    next.setZero();
    for (NodeId j = 0; j < n; ++j) {
      const auto& out = g.neighbors(j);
      const double sj = s(static_cast<Eigen::Index>(j));
      if (out.empty()) {
        dangling += sj;
        continue;
      }
      const double share = sj / static_cast<double>(out.size());
      for (NodeId i : out) next(static_cast<Eigen::Index>(i)) += share;
    }
    next = (opt.damping * (next.array() + dangling / nd) +
            (1.0 - opt.damping) / nd)
               .matrix();
    residual = (next - s).lpNorm<1>();
    s.swap(next);
    if (residual < opt.tol) return s / s.sum();
  }
  throw ConvergenceError("pagerank did not converge", residual);
}

/// Brandes betweenness on the unweighted graph. Undirected graphs count each
/// unordered endpoint pair once; directed graphs count ordered pairs.
/// Endpoints never credit themselves.
inline Vector betweenness(const Graph& g) {
  const std::size_t n = g.size();
  Vector score = Vector::Zero(static_cast<Eigen::Index>(n));
  std::vector<std::vector<NodeId>> preds(n);
  std::vector<double> sigma(n), delta(n);
  std::vector<long> dist(n);
  std::vector<NodeId> order;
  order.reserve(n);
  for (NodeId s = 0; s < n; ++s) {
    for (auto& p : preds) p.clear();
    std::fill(sigma.begin(), sigma.end(), 0.0);
    std::fill(delta.begin(), delta.end(), 0.0);
    std::fill(dist.begin(), dist.end(), -1L);
    order.clear();
    sigma[s] = 1.0;
    dist[s] = 0;
    std::deque<NodeId> queue{s};
    while (!queue.empty()) {
      const NodeId v = queue.front();
      queue.pop_front();
      order.push_back(v);
      for (NodeId w : g.neighbors(v)) {
        if (dist[w] < 0) {
          dist[w] = dist[v] + 1;
          queue.push_back(w);
        }
        if (dist[w] == dist[v] + 1) {
          sigma[w] += sigma[v];
          preds[w].push_back(v);
        }
      }
    }
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      const NodeId w = *it;
      for (NodeId v : preds[w]) {
        delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w]);
      }
      if (w != s) score(static_cast<Eigen::Index>(w)) += delta[w];
    }
  }
  if (g.undirected()) score /= 2.0;
  return score;
}

struct KMedoidsResult {
  NodeSet medoids;                  // sorted
  std::vector<std::size_t> assignment;  // index into medoids, per point
  double cost = 0.0;                // total distance to nearest medoid
  std::vector<double> cost_history; // after initialisation and each swap
};

namespace detail {

inline double medoid_cost(const Matrix& dist, const std::vector<NodeId>& medoids) {
  double total = 0.0;
  for (Eigen::Index p = 0; p < dist.rows(); ++p) {
    double best = std::numeric_limits<double>::infinity();
    for (NodeId m : medoids) best = std::min(best, dist(p, static_cast<Eigen::Index>(m)));
    total += best;
  }
  return total;
}

}  // namespace detail

/// Partition around medoids on Euclidean distance: seeded random initial
/// medoids, then best-improvement swaps until no swap lowers the cost.
inline KMedoidsResult k_medoids(const Matrix& positions, std::size_t k,
                                std::uint64_t seed) {
  const auto n = static_cast<std::size_t>(positions.rows());
  if (k == 0 || k > n) {
    throw Error("k_medoids needs 1 <= k <= N (k=" + std::to_string(k) +
                ", N=" + std::to_string(n) + ")");
  }
  const auto ni = static_cast<Eigen::Index>(n);
  Matrix dist(ni, ni);
  for (Eigen::Index i = 0; i < ni; ++i) {
    for (Eigen::Index j = 0; j < ni; ++j) {
      dist(i, j) = (positions.row(i) - positions.row(j)).norm();
    }
  }

  std::vector<NodeId> all(n);
  std::iota(all.begin(), all.end(), NodeId{0});
  Rng rng = substream(seed, "k_medoids");
  std::shuffle(all.begin(), all.end(), rng);
  std::vector<NodeId> medoids(all.begin(), all.begin() + static_cast<long>(k));
  std::vector<bool> is_medoid(n, false);
  for (NodeId m : medoids) is_medoid[m] = true;

  KMedoidsResult result;
  double cost = detail::medoid_cost(dist, medoids);
  result.cost_history.push_back(cost);
  for (;;) {
    double best_cost = cost;
    std::size_t best_slot = k;
    NodeId best_candidate = 0;
    for (std::size_t slot = 0; slot < k; ++slot) {
      const NodeId old = medoids[slot];
      for (NodeId cand = 0; cand < n; ++cand) {
        if (is_medoid[cand]) continue;
        medoids[slot] = cand;
        const double c = detail::medoid_cost(dist, medoids);
        if (c < best_cost - 1e-12) {
          best_cost = c;
          best_slot = slot;
          best_candidate = cand;
        }
      }
      medoids[slot] = old;
    }
    if (best_slot == k) break;
    is_medoid[medoids[best_slot]] = false;
    is_medoid[best_candidate] = true;
    medoids[best_slot] = best_candidate;
    cost = best_cost;
    result.cost_history.push_back(cost);
  }

  std::sort(medoids.begin(), medoids.end());
  result.medoids = medoids;
  result.cost = cost;
  result.assignment.resize(n);
  for (std::size_t p = 0; p < n; ++p) {
    std::size_t best = 0;
    for (std::size_t m = 1; m < k; ++m) {
      if (dist(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(medoids[m])) <
          dist(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(medoids[best]))) {
        best = m;
      }
    }
    result.assignment[p] = best;
  }
  return result;
}

}  // namespace diffattack
