#pragma once

#include "diffattack/attack.hpp"
#include "diffattack/graph.hpp"

#include <array>
#include <cctype>
#include <numeric>
#include <optional>

namespace diffattack {

enum class Strategy {
  degree,
  random,
  k_medoids,
  pagerank,
  betweenness,
  spsa,
  kg_pagerank,
  kg_betweenness,
  kg_spsa,
};

inline constexpr std::array<Strategy, 9> kAllStrategies = {
    Strategy::degree,      Strategy::random,      Strategy::k_medoids,
    Strategy::pagerank,    Strategy::betweenness, Strategy::spsa,
    Strategy::kg_pagerank, Strategy::kg_betweenness, Strategy::kg_spsa,
};

inline std::string_view strategy_name(Strategy s) {
  switch (s) {
    case Strategy::degree: return "Degree";
    case Strategy::random: return "Random";
    case Strategy::k_medoids: return "K-Medoids";
    case Strategy::pagerank: return "Pagerank";
    case Strategy::betweenness: return "Betweenness";
    case Strategy::spsa: return "Spsa";
    case Strategy::kg_pagerank: return "Kg-Pagerank";
    case Strategy::kg_betweenness: return "Kg-Betweenness";
    case Strategy::kg_spsa: return "Kg-Spsa";
  }
  return "?";
}

/// Accepts the display names plus snake/kebab variants, case-insensitive.
inline Strategy parse_strategy(std::string_view text) {
  std::string key;
  for (char ch : text) {
    if (ch == '-' || ch == '_' || ch == ' ') continue;
    key.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
  }
  for (Strategy s : kAllStrategies) {
    std::string name;
    for (char ch : strategy_name(s)) {
      if (ch != '-') name.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    }
    if (name == key) return s;
  }
  throw Error("unknown strategy '" + std::string(text) + "'");
}

inline bool is_knapsack_strategy(Strategy s) {
  return s == Strategy::kg_pagerank || s == Strategy::kg_betweenness ||
         s == Strategy::kg_spsa;
}

/// Total budget B and per-node attack costs b_i.
struct BudgetSpec {
  double total = 0.0;
  Vector costs;

  /// b_i = max(degree(i), 1).
  static BudgetSpec degree_costs(const Graph& g, double total) {
    BudgetSpec b{total, Vector(static_cast<Eigen::Index>(g.size()))};
    for (NodeId i = 0; i < g.size(); ++i) {
      b.costs(static_cast<Eigen::Index>(i)) =
          static_cast<double>(std::max<std::size_t>(g.degree(i), 1));
    }
    return b;
  }

  double total_cost() const { return costs.sum(); }

  void validate() const {
    if (!(total >= 0.0)) throw Error("budget must be non-negative");
    if (costs.size() == 0 || !(costs.array() > 0.0).all()) {
      throw Error("node costs must all be positive");
    }
  }
};

enum class UtilitySource { spsa_probe, pagerank, betweenness, degree, random, geo_cluster };

struct UtilityEstimate {
  Vector values;
  UtilitySource provenance = UtilitySource::spsa_probe;
};

/// Selected attack set plus the order nodes were added in.
struct Selection {
  NodeSet nodes;               // sorted
  std::vector<NodeId> order;   // insertion order
  Vector scores;               // the score each node was ranked by
  double cost = 0.0;
};

namespace detail {

/// Scan `ranked` once, keeping every node that still fits. Because the
/// remaining budget only shrinks, a node that does not fit now never will,
/// so one pass is the same as repeatedly picking the best affordable node.
inline Selection take_while_affordable(const std::vector<NodeId>& ranked,
                                       const BudgetSpec& budget, Vector scores) {
  Selection s;
  s.scores = std::move(scores);
  for (NodeId i : ranked) {
    const double b = budget.costs(static_cast<Eigen::Index>(i));
    if (s.cost + b <= budget.total) {
      s.cost += b;
      s.order.push_back(i);
    }
  }
  s.nodes = normalize_node_set(s.order);
  return s;
}

/// Indices sorted by key descending; ties go to the lower index.
inline std::vector<NodeId> rank_descending(const Vector& key) {
  std::vector<NodeId> idx(static_cast<std::size_t>(key.size()));
  std::iota(idx.begin(), idx.end(), NodeId{0});
  std::stable_sort(idx.begin(), idx.end(), [&key](NodeId a, NodeId b) {
    return key(static_cast<Eigen::Index>(a)) > key(static_cast<Eigen::Index>(b));
  });
  return idx;
}

}  // namespace detail

/// Greedy 0-1 knapsack on utility/cost ratio.
inline Selection knapsack_greedy(const Vector& utilities, const BudgetSpec& budget) {
  budget.validate();
  if (utilities.size() != budget.costs.size()) throw ShapeError("utilities/costs length mismatch");
  if (!utilities.allFinite()) throw Error("utilities must be finite");
  const Vector ratio = utilities.cwiseQuotient(budget.costs);
  Selection s = detail::take_while_affordable(detail::rank_descending(ratio), budget, utilities);
  // A single high-utility node that the ratio pass crowded out can be worth
  // more than the whole greedy set; taking the better of the two keeps the
  // result within half of the optimum.
  double greedy_value = 0.0;
  for (NodeId i : s.nodes) greedy_value += utilities(static_cast<Eigen::Index>(i));
  std::optional<NodeId> single;
  for (Eigen::Index i = 0; i < utilities.size(); ++i) {
    if (budget.costs(i) > budget.total) continue;
    if (!single || utilities(i) > utilities(static_cast<Eigen::Index>(*single))) single = static_cast<NodeId>(i);
  }
  if (single && utilities(static_cast<Eigen::Index>(*single)) > greedy_value) {
    s.nodes = {*single};
    s.order = {*single};
    s.cost = budget.costs(static_cast<Eigen::Index>(*single));
  }
  return s;
}

/// Highest score first, skipping nodes that no longer fit.
inline Selection top_score_select(const Vector& scores, const BudgetSpec& budget) {
  budget.validate();
  if (scores.size() != budget.costs.size()) throw ShapeError("scores/costs length mismatch");
  return detail::take_while_affordable(detail::rank_descending(scores), budget, scores);
}

inline Selection random_select(const BudgetSpec& budget, Rng& rng) {
  budget.validate();
  std::vector<NodeId> perm(static_cast<std::size_t>(budget.costs.size()));
  std::iota(perm.begin(), perm.end(), NodeId{0});
  std::shuffle(perm.begin(), perm.end(), rng);
  return detail::take_while_affordable(perm, budget, Vector::Zero(budget.costs.size()));
}

/// Medoids of the geo-coordinates for k = 1, 2, ... until the medoid set no
/// longer fits the budget; returns the last affordable set.
inline Selection kmedoids_select(const Graph& g, const BudgetSpec& budget,
                                 std::uint64_t seed) {
  budget.validate();
  if (!g.positions()) throw Error("K-Medoids selection needs node positions");
  Selection best;
  best.scores = Vector::Zero(static_cast<Eigen::Index>(g.size()));
  for (std::size_t k = 1; k <= g.size(); ++k) {
    const KMedoidsResult r = k_medoids(*g.positions(), k, seed);
    double cost = 0.0;
    for (NodeId m : r.medoids) cost += budget.costs(static_cast<Eigen::Index>(m));
    if (cost > budget.total) break;
    best.nodes = r.medoids;
    best.order = r.medoids;
    best.cost = cost;
  }
  for (NodeId m : best.nodes) best.scores(static_cast<Eigen::Index>(m)) = 1.0;
  return best;
}

/// φ̂_i = φ_i(U_V): a short SPSA attack on every node at once.
template <BlackBoxModel Model>
UtilityEstimate estimate_utilities_spsa(const Model& model, const Matrix& x,
                                        const AttackConfig& cfg,
                                        std::size_t stream_index = 0) {
  AttackConfig probe = cfg;
  probe.max_iter = cfg.probe_iter;
  NodeSet all(static_cast<std::size_t>(x.rows()));
  std::iota(all.begin(), all.end(), NodeId{0});
  AttackResult r = run_attack(model, x, std::move(all), probe, {}, stream_index, "spsa/probe");
  return {std::move(r.influence.phi), UtilitySource::spsa_probe};
}

inline Vector degree_scores(const Graph& g) {
  Vector d(static_cast<Eigen::Index>(g.size()));
  for (NodeId i = 0; i < g.size(); ++i) d(static_cast<Eigen::Index>(i)) = static_cast<double>(g.degree(i));
  return d;
}

/// Pick an attack set with the given strategy. Score-based strategies rank by
/// score; Kg-strategies rank by score/cost.
template <BlackBoxModel Model>
Selection select_nodes(Strategy strategy, const Graph& g, const Model& model,
                       const Matrix& x, const BudgetSpec& budget,
                       const AttackConfig& cfg, Rng& rng,
                       std::size_t stream_index = 0) {
  switch (strategy) {
    case Strategy::degree:
      return top_score_select(degree_scores(g), budget);
    case Strategy::random:
      return random_select(budget, rng);
    case Strategy::k_medoids:
      return kmedoids_select(g, budget, cfg.seed);
    case Strategy::pagerank:
      return top_score_select(pagerank(g), budget);
    case Strategy::betweenness:
      return top_score_select(betweenness(g), budget);
    case Strategy::spsa:
      return top_score_select(estimate_utilities_spsa(model, x, cfg, stream_index).values, budget);
    case Strategy::kg_pagerank:
      return knapsack_greedy(pagerank(g), budget);
    case Strategy::kg_betweenness:
      return knapsack_greedy(betweenness(g), budget);
    case Strategy::kg_spsa:
      return knapsack_greedy(estimate_utilities_spsa(model, x, cfg, stream_index).values, budget);
  }
  throw Error("unhandled strategy");
}

struct KgSpsaResult {
  UtilityEstimate utilities;
  Selection selection;
  AttackResult attack;
};

/// Probe utilities, pick nodes by knapsack greedy, then run the full attack
/// on the chosen set.
template <BlackBoxModel Model>
KgSpsaResult kg_spsa(const Model& model, const Matrix& x, const Graph& g,
                     const BudgetSpec& budget, const AttackConfig& cfg,
                     std::size_t stream_index = 0) {
  if (g.size() != static_cast<std::size_t>(x.rows())) throw ShapeError("graph/window size mismatch");
  KgSpsaResult r;
  r.utilities = estimate_utilities_spsa(model, x, cfg, stream_index);
  r.selection = knapsack_greedy(r.utilities.values, budget);
  r.attack = run_attack(model, x, r.selection.nodes, cfg, {}, stream_index);
  return r;
}

}  // namespace diffattack
